//! State obfuscation and recovery.
//!
//! Instead of uploading its charging profile `r` (length `T`), a
//! vehicle draws, fresh at every iteration, one set of `m` i.i.d.
//! normal variates per slot — `N(mu, sigma_sq)` under its key — and
//! uploads the slot-by-slot products `w[(t, k)] = r(t) * e[(t, k)]`
//! (length `T * m`). The operator sums the uploads of one bus
//! elementwise and divides each slot block's mean by `mu`, recovering
//! the bus aggregate with standard error `sigma / sqrt(m)` per unit
//! of load. Nothing else about the individual profiles survives the
//! aggregation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::ChargingProfile;

/// Obfuscation key: the first two moments of the masking distribution
/// and the set cardinality. Vehicles on one bus share the bus key so
/// their uploads aggregate coherently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationKey {
    /// Mean of the masking distribution; recovery divides by it.
    pub mu: f64,
    /// Variance of the masking distribution; zero disables hiding.
    pub sigma_sq: f64,
    /// Draws per slot; the block size recovery averages over.
    pub m: usize,
}

impl ObfuscationKey {
    pub fn new(mu: f64, sigma_sq: f64, m: usize) -> Result<Self> {
        if !(mu.is_finite() && mu != 0.0) {
            return Err(Error::Key(format!("mu must be finite and nonzero, got {mu}")));
        }
        if !(sigma_sq.is_finite() && sigma_sq >= 0.0) {
            return Err(Error::Key(format!(
                "sigma_sq must be finite and nonnegative, got {sigma_sq}"
            )));
        }
        if m == 0 {
            return Err(Error::Key("set cardinality m must be at least 1".into()));
        }
        Ok(Self { mu, sigma_sq, m })
    }

    /// Standard deviation of the masking distribution.
    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    /// Coefficient of variation `sigma / |mu|` — the designed spread
    /// of upload entries around the hidden value.
    pub fn designed_spread(&self) -> f64 {
        self.sigma() / self.mu.abs()
    }
}

/// `T` sets of `m` draws, stored row-major by slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSets {
    draws: Vec<f64>,
    slots: usize,
    m: usize,
}

impl RandomSets {
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    /// Draws of one slot's set.
    pub fn set(&self, t: usize) -> &[f64] {
        &self.draws[t * self.m..(t + 1) * self.m]
    }
}

/// Draws `slots` sets of `m` variates from the key's distribution.
/// `sigma_sq = 0` yields every draw exactly `mu`, which makes the
/// whole pipeline collapse to the plain protocol bit-for-bit.
pub fn draw_random_sets(
    key: &ObfuscationKey,
    slots: usize,
    rng: &mut impl Rng,
) -> Result<RandomSets> {
    ObfuscationKey::new(key.mu, key.sigma_sq, key.m)?;
    if slots == 0 {
        return Err(Error::Dimension("cannot draw sets for zero slots".into()));
    }
    let dist = rand_distr::Normal::new(key.mu, key.sigma())
        .map_err(|e| Error::Key(format!("masking distribution: {e}")))?;
    let draws = (0..slots * key.m).map(|_| rng.sample(dist)).collect();
    Ok(RandomSets {
        draws,
        slots,
        m: key.m,
    })
}

/// One vehicle's upload for one iteration: `slots * m` masked values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObfuscatedState {
    w: Vec<f64>,
    slots: usize,
    m: usize,
}

impl ObfuscatedState {
    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

/// Masks a charging profile against freshly drawn sets.
pub fn obfuscate(r: &ChargingProfile, sets: &RandomSets) -> Result<ObfuscatedState> {
    if r.len() != sets.slots() {
        return Err(Error::Dimension(format!(
            "profile has {} slots but the random sets cover {}",
            r.len(),
            sets.slots()
        )));
    }
    let m = sets.m();
    let mut w = Vec::with_capacity(r.len() * m);
    for (t, &rt) in r.kw.iter().enumerate() {
        for &e in sets.set(t) {
            w.push(rt * e);
        }
    }
    Ok(ObfuscatedState {
        w,
        slots: r.len(),
        m,
    })
}

/// Elementwise sum of the uploads arriving at one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BusAggregate {
    y: Vec<f64>,
    ev_count: usize,
}

impl BusAggregate {
    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn ev_count(&self) -> usize {
        self.ev_count
    }
}

/// Sums uploads elementwise in list order. `expected_len` pins the
/// payload shape (`slots * m`); an empty list aggregates to zeros.
pub fn aggregate(states: &[ObfuscatedState], expected_len: usize) -> Result<BusAggregate> {
    let mut y = vec![0.0; expected_len];
    for (k, state) in states.iter().enumerate() {
        if state.values().len() != expected_len {
            return Err(Error::Dimension(format!(
                "upload {k} has {} values, expected {expected_len}",
                state.values().len()
            )));
        }
        for (acc, &v) in y.iter_mut().zip(state.values()) {
            *acc += v;
        }
    }
    Ok(BusAggregate {
        y,
        ev_count: states.len(),
    })
}

/// Bus aggregate recovered from block means.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredLoad {
    /// Estimated bus load per slot, kW.
    pub p_bar_kw: Vec<f64>,
    /// Raw block means before dividing by `mu` (diagnostic support
    /// for accuracy estimates).
    pub block_means: Vec<f64>,
}

/// Recovers per-slot bus loads by dividing each block mean by `mu`.
///
/// Block means are computed anchored on the block's first element
/// (`y_0 + mean(y_k - y_0)`), which is algebraically the plain mean
/// but returns the shared value *exactly* when all entries of a block
/// coincide — the `sigma_sq = 0` case must reproduce the raw sums
/// bit-for-bit.
pub fn recover(agg: &BusAggregate, mu: f64, m: usize) -> Result<RecoveredLoad> {
    if !(mu.is_finite() && mu != 0.0) {
        return Err(Error::Key(format!("recovery needs nonzero mu, got {mu}")));
    }
    if m == 0 {
        return Err(Error::Key("recovery needs set cardinality m >= 1".into()));
    }
    if agg.values().len() % m != 0 {
        return Err(Error::Dimension(format!(
            "aggregate length {} is not a multiple of m = {m}",
            agg.values().len()
        )));
    }
    let slots = agg.values().len() / m;
    let mut block_means = Vec::with_capacity(slots);
    let mut p_bar_kw = Vec::with_capacity(slots);
    for t in 0..slots {
        let block = &agg.values()[t * m..(t + 1) * m];
        let anchor = block[0];
        let correction: f64 = block.iter().map(|&y| y - anchor).sum::<f64>() / m as f64;
        let mean = anchor + correction;
        block_means.push(mean);
        p_bar_kw.push(mean / mu);
    }
    Ok(RecoveredLoad {
        p_bar_kw,
        block_means,
    })
}

/// Standard error of a recovered unit load: `sigma / sqrt(m)`.
pub fn sem(sigma: f64, m: usize) -> f64 {
    debug_assert!(m >= 1, "set cardinality must be at least 1");
    sigma / (m as f64).sqrt()
}

/// Empirical spread of an upload around the hidden profile: the
/// coefficient of variation of the ratios `w / r(t)` over all slots
/// with nonzero charging. `None` when every slot is zero — an
/// all-idle profile exposes nothing to measure.
pub fn spread_metric(state: &ObfuscatedState, r: &ChargingProfile) -> Option<f64> {
    if r.len() != state.slots() {
        return None;
    }
    let m = state.m();
    let mut ratios = Vec::new();
    for (t, &rt) in r.kw.iter().enumerate() {
        if rt == 0.0 {
            continue;
        }
        for &w in &state.values()[t * m..(t + 1) * m] {
            ratios.push(w / rt);
        }
    }
    if ratios.is_empty() {
        return None;
    }
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = if ratios.len() < 2 {
        0.0
    } else {
        ratios.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    };
    Some(var.sqrt() / mean.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn key(mu: f64, sigma_sq: f64, m: usize) -> ObfuscationKey {
        ObfuscationKey::new(mu, sigma_sq, m).unwrap()
    }

    fn sets_from(values: &[f64], slots: usize, m: usize) -> RandomSets {
        assert_eq!(values.len(), slots * m);
        RandomSets {
            draws: values.to_vec(),
            slots,
            m,
        }
    }

    #[test]
    fn zero_variance_draws_equal_mu_exactly() {
        let k = key(1.0, 0.0, 40);
        let mut rng = rng::obfuscation_stream(1, 0, 0);
        let sets = draw_random_sets(&k, 48, &mut rng).unwrap();
        assert!(sets.draws().iter().all(|&e| e == 1.0));
    }

    #[test]
    fn draw_mean_approaches_mu() {
        let k = key(1.0, 0.2, 40);
        let mut rng = rng::obfuscation_stream(7, 3, 0);
        // 25_000 slots x 40 draws = one million variates.
        let sets = draw_random_sets(&k, 25_000, &mut rng).unwrap();
        let mean = sets.draws().iter().sum::<f64>() / sets.draws().len() as f64;
        assert!((mean - 1.0).abs() < 2e-3, "sample mean {mean}");
        let var = sets
            .draws()
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (sets.draws().len() - 1) as f64;
        assert!((var - 0.2).abs() < 2e-3, "sample variance {var}");
    }

    #[test]
    fn same_stream_same_sets() {
        let k = key(1.0, 0.2, 8);
        let a = draw_random_sets(&k, 4, &mut rng::obfuscation_stream(5, 2, 9)).unwrap();
        let b = draw_random_sets(&k, 4, &mut rng::obfuscation_stream(5, 2, 9)).unwrap();
        let c = draw_random_sets(&k, 4, &mut rng::obfuscation_stream(5, 2, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn obfuscate_zero_profile_is_all_zero() {
        let k = key(1.0, 0.2, 5);
        let sets =
            draw_random_sets(&k, 3, &mut rng::obfuscation_stream(1, 1, 1)).unwrap();
        let w = obfuscate(&ChargingProfile::zeros(3), &sets).unwrap();
        assert!(w.values().iter().all(|&x| x == 0.0));
        assert_eq!(w.values().len(), 15);
    }

    #[test]
    fn obfuscate_multiplies_slotwise() {
        let sets = sets_from(&[0.9, 1.1, 1.0, 1.2], 2, 2);
        let r = ChargingProfile { kw: vec![2.0, 3.0] };
        let w = obfuscate(&r, &sets).unwrap();
        assert_eq!(w.values(), &[1.8, 2.2, 3.0, 3.6]);
    }

    #[test]
    fn obfuscate_rejects_slot_mismatch() {
        let sets = sets_from(&[1.0, 1.0], 1, 2);
        let r = ChargingProfile { kw: vec![1.0, 2.0] };
        assert!(matches!(
            obfuscate(&r, &sets),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn aggregate_sums_elementwise() {
        let a = ObfuscatedState {
            w: vec![1.0, 2.0],
            slots: 1,
            m: 2,
        };
        let b = ObfuscatedState {
            w: vec![0.5, -1.0],
            slots: 1,
            m: 2,
        };
        let agg = aggregate(&[a, b], 2).unwrap();
        assert_eq!(agg.values(), &[1.5, 1.0]);
        assert_eq!(agg.ev_count(), 2);
    }

    #[test]
    fn aggregate_of_empty_bus_is_zero() {
        let agg = aggregate(&[], 6).unwrap();
        assert_eq!(agg.values(), &[0.0; 6]);
        assert_eq!(agg.ev_count(), 0);
    }

    #[test]
    fn aggregate_rejects_ragged_uploads() {
        let a = ObfuscatedState {
            w: vec![1.0, 2.0],
            slots: 1,
            m: 2,
        };
        assert!(matches!(aggregate(&[a], 4), Err(Error::Dimension(_))));
    }

    #[test]
    fn recover_hand_example() {
        // Two vehicles, one slot, m = 2: r_a = 2 against draws
        // [0.9, 1.1], r_b = 3 against [1.0, 1.0]. Y = [4.8, 5.2],
        // block mean 5.0, and with mu = 1 the bus load is 5.0 kW.
        let agg = BusAggregate {
            y: vec![4.8, 5.2],
            ev_count: 2,
        };
        let rec = recover(&agg, 1.0, 2).unwrap();
        assert_abs_diff_eq!(rec.p_bar_kw[0], 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rec.block_means[0], 5.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_variance_round_trip_is_exact() {
        let k = key(1.0, 0.0, 40);
        let r = ChargingProfile {
            kw: vec![0.0, 1.7, 6.6, 3.3333333333333335],
        };
        let sets =
            draw_random_sets(&k, 4, &mut rng::obfuscation_stream(1, 2, 3)).unwrap();
        let w = obfuscate(&r, &sets).unwrap();
        let agg = aggregate(&[w], 4 * 40).unwrap();
        let rec = recover(&agg, 1.0, 40).unwrap();
        assert_eq!(rec.p_bar_kw, r.kw);
    }

    #[test]
    fn zero_variance_round_trip_exact_for_power_of_two_mu() {
        let k = key(0.5, 0.0, 16);
        let r = ChargingProfile {
            kw: vec![1.1, 2.2, 0.0],
        };
        let sets =
            draw_random_sets(&k, 3, &mut rng::obfuscation_stream(1, 2, 3)).unwrap();
        let w = obfuscate(&r, &sets).unwrap();
        let agg = aggregate(&[w], 3 * 16).unwrap();
        let rec = recover(&agg, 0.5, 16).unwrap();
        assert_eq!(rec.p_bar_kw, r.kw);
    }

    #[test]
    fn recover_scales_inversely_with_mu() {
        let agg = BusAggregate {
            y: vec![4.8, 5.2, 6.0, 6.4],
            ev_count: 2,
        };
        let base = recover(&agg, 1.0, 2).unwrap();
        let doubled = recover(&agg, 2.0, 2).unwrap();
        for (b, d) in base.p_bar_kw.iter().zip(&doubled.p_bar_kw) {
            assert_abs_diff_eq!(d * 2.0, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn recover_rejects_misaligned_length() {
        let agg = BusAggregate {
            y: vec![1.0, 2.0, 3.0],
            ev_count: 1,
        };
        assert!(matches!(recover(&agg, 1.0, 2), Err(Error::Dimension(_))));
        assert!(matches!(recover(&agg, 0.0, 3), Err(Error::Key(_))));
    }

    #[test]
    fn sem_values() {
        assert_abs_diff_eq!(sem(0.2f64.sqrt(), 40), 0.07071067811865475, epsilon = 1e-15);
        assert_eq!(sem(0.0, 40), 0.0);
        // Quadrupling the set size halves the standard error.
        assert_abs_diff_eq!(sem(0.4, 64), sem(0.4, 16) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn spread_of_zero_variance_upload_is_zero() {
        let k = key(1.0, 0.0, 8);
        let r = ChargingProfile { kw: vec![2.0, 3.0] };
        let sets =
            draw_random_sets(&k, 2, &mut rng::obfuscation_stream(1, 0, 0)).unwrap();
        let w = obfuscate(&r, &sets).unwrap();
        assert_eq!(spread_metric(&w, &r), Some(0.0));
    }

    #[test]
    fn spread_tracks_designed_value() {
        let k = key(1.0, 0.2, 40);
        // 200 active slots x 40 draws = 8000 ratios.
        let r = ChargingProfile {
            kw: (0..200).map(|t| 1.0 + (t % 5) as f64).collect(),
        };
        let sets =
            draw_random_sets(&k, 200, &mut rng::obfuscation_stream(1, 0, 1)).unwrap();
        let w = obfuscate(&r, &sets).unwrap();
        let spread = spread_metric(&w, &r).unwrap();
        assert!(
            (spread - k.designed_spread()).abs() < 0.02,
            "spread {spread} vs designed {}",
            k.designed_spread()
        );
    }

    #[test]
    fn spread_is_invariant_to_profile_scale() {
        let k = key(1.0, 0.2, 16);
        let sets =
            draw_random_sets(&k, 6, &mut rng::obfuscation_stream(2, 0, 1)).unwrap();
        let r1 = ChargingProfile {
            kw: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let r2 = ChargingProfile {
            kw: r1.kw.iter().map(|x| x * 7.0).collect(),
        };
        let s1 = spread_metric(&obfuscate(&r1, &sets).unwrap(), &r1).unwrap();
        let s2 = spread_metric(&obfuscate(&r2, &sets).unwrap(), &r2).unwrap();
        assert_abs_diff_eq!(s1, s2, epsilon = 1e-9);
    }

    #[test]
    fn spread_of_idle_profile_is_undefined() {
        let k = key(1.0, 0.2, 8);
        let r = ChargingProfile::zeros(3);
        let sets =
            draw_random_sets(&k, 3, &mut rng::obfuscation_stream(3, 0, 1)).unwrap();
        let w = obfuscate(&r, &sets).unwrap();
        assert_eq!(spread_metric(&w, &r), None);
    }

    #[test]
    fn key_rejects_degenerate_parameters() {
        assert!(ObfuscationKey::new(0.0, 0.2, 40).is_err());
        assert!(ObfuscationKey::new(1.0, -0.1, 40).is_err());
        assert!(ObfuscationKey::new(1.0, 0.2, 0).is_err());
        assert!(ObfuscationKey::new(f64::NAN, 0.2, 4).is_err());
    }

    /// Block means of aggregated uploads follow the predicted normal
    /// law: mean `mu * sum r`, variance `sigma_sq * sum r^2 / m`.
    /// Checked with a Kolmogorov-Smirnov statistic on standardized
    /// samples (5% critical value, fixed stream).
    #[test]
    fn block_means_are_normal_with_predicted_moments() {
        let k = key(1.0, 0.2, 40);
        let profiles = [
            ChargingProfile { kw: vec![2.0] },
            ChargingProfile { kw: vec![3.5] },
            ChargingProfile { kw: vec![1.25] },
        ];
        let sum_r: f64 = profiles.iter().map(|p| p.kw[0]).sum();
        let sum_r_sq: f64 = profiles.iter().map(|p| p.kw[0] * p.kw[0]).sum();
        let theory_mean = k.mu * sum_r;
        let theory_sd = (k.sigma_sq * sum_r_sq / k.m as f64).sqrt();

        let n = 10_000;
        let mut samples = Vec::with_capacity(n);
        for trial in 0..n {
            let states: Vec<ObfuscatedState> = profiles
                .iter()
                .enumerate()
                .map(|(ev, p)| {
                    let mut rng = rng::obfuscation_stream(99, ev as u64, trial as u64);
                    obfuscate(p, &draw_random_sets(&k, 1, &mut rng).unwrap()).unwrap()
                })
                .collect();
            let agg = aggregate(&states, k.m).unwrap();
            let rec = recover(&agg, k.mu, k.m).unwrap();
            samples.push((rec.block_means[0] - theory_mean) / theory_sd);
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());

        use statrs::distribution::{ContinuousCDF, Normal};
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let mut d = 0.0f64;
        for (i, &x) in samples.iter().enumerate() {
            let cdf = std_normal.cdf(x);
            let upper = (i + 1) as f64 / n as f64 - cdf;
            let lower = cdf - i as f64 / n as f64;
            d = d.max(upper.max(lower));
        }
        let critical = 1.358 / (n as f64).sqrt(); // 5% level
        assert!(d < critical, "KS statistic {d} exceeds {critical}");
    }
}
