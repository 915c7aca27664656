//! Vehicles and their feasible charging sets.
//!
//! A vehicle charges over `T` slots of width `delta_t` hours at rate
//! `0 <= r(t) <= r_max` kW, and must bank exactly `demand` kWh of
//! battery energy: `delta_t * eta * sum_t r(t) = demand`, with `eta`
//! the charge efficiency. [`project_feasible`] is the Euclidean
//! projection onto that set — a continuous knapsack solved by
//! bisection on the equality multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Shared discretization of the scheduling horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    slots: usize,
    delta_t_hours: f64,
}

impl TimeGrid {
    pub fn new(slots: usize, delta_t_hours: f64) -> Result<Self> {
        if slots == 0 {
            return Err(Error::Dimension("time grid needs at least one slot".into()));
        }
        if !(delta_t_hours.is_finite() && delta_t_hours > 0.0) {
            return Err(Error::Dimension(format!(
                "slot width must be positive, got {delta_t_hours}"
            )));
        }
        Ok(Self {
            slots,
            delta_t_hours,
        })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn delta_t_hours(&self) -> f64 {
        self.delta_t_hours
    }

    pub fn horizon_hours(&self) -> f64 {
        self.slots as f64 * self.delta_t_hours
    }
}

/// One vehicle's charging requirement and local step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvSpec {
    pub id: usize,
    /// Downstream bus (1-based) the charger hangs off.
    pub bus: usize,
    /// Charger rating, kW.
    pub r_max_kw: f64,
    /// Battery energy to deliver over the horizon, kWh.
    pub demand_kwh: f64,
    /// Charge efficiency in (0, 1].
    pub eta: f64,
    /// Primal step size for this vehicle's gradient updates.
    pub gamma: f64,
}

impl EvSpec {
    /// Energy banked per unit charging power per slot, kWh/kW.
    pub fn energy_coeff(&self, grid: &TimeGrid) -> f64 {
        grid.delta_t_hours() * self.eta
    }

    /// Largest demand the feasible set can deliver, kWh.
    pub fn max_energy_kwh(&self, grid: &TimeGrid) -> f64 {
        self.energy_coeff(grid) * self.r_max_kw * grid.slots() as f64
    }

    /// Validates rating, efficiency, step size, and that the demand
    /// fits the horizon.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if !(self.r_max_kw.is_finite() && self.r_max_kw > 0.0) {
            return Err(Error::Infeasible(format!(
                "ev {}: charger rating must be positive, got {} kW",
                self.id, self.r_max_kw
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Infeasible(format!(
                "ev {}: efficiency must lie in (0, 1], got {}",
                self.id, self.eta
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Infeasible(format!(
                "ev {}: step size must be nonnegative, got {}",
                self.id, self.gamma
            )));
        }
        if !(self.demand_kwh.is_finite() && self.demand_kwh >= 0.0) {
            return Err(Error::Infeasible(format!(
                "ev {}: demand must be nonnegative, got {} kWh",
                self.id, self.demand_kwh
            )));
        }
        let cap = self.max_energy_kwh(grid);
        if self.demand_kwh > cap + FEASIBILITY_TOL_KWH {
            return Err(Error::Infeasible(format!(
                "ev {}: demand {} kWh exceeds the {:.4} kWh deliverable over \
                 {} slots at {} kW",
                self.id,
                self.demand_kwh,
                cap,
                grid.slots(),
                self.r_max_kw
            )));
        }
        Ok(())
    }
}

/// Charging power per slot, kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingProfile {
    pub kw: Vec<f64>,
}

impl ChargingProfile {
    pub fn zeros(slots: usize) -> Self {
        Self {
            kw: vec![0.0; slots],
        }
    }

    pub fn len(&self) -> usize {
        self.kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kw.is_empty()
    }

    /// Largest absolute slot-wise difference, kW.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.kw
            .iter()
            .zip(&other.kw)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Equality-feasibility slack accepted by the projection, kWh.
const FEASIBILITY_TOL_KWH: f64 = 1e-9;
const BISECTION_MAX_STEPS: usize = 200;

/// Euclidean projection of `v` onto the vehicle's feasible set.
///
/// The minimizer has the water-filling form
/// `r(t) = clamp(v(t) - theta * delta_t * eta, 0, r_max)` with the
/// multiplier `theta` chosen so the banked energy meets the demand;
/// bisection takes at most 200 steps and stops once the residual is
/// below 1e-9 kWh. Demands outside `[0, max_energy]` are rejected.
pub fn project_feasible(v: &[f64], spec: &EvSpec, grid: &TimeGrid) -> Result<ChargingProfile> {
    if v.len() != grid.slots() {
        return Err(Error::Dimension(format!(
            "ev {}: candidate profile has {} slots, grid has {}",
            spec.id,
            v.len(),
            grid.slots()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Infeasible(format!(
            "ev {}: candidate profile contains a non-finite entry",
            spec.id
        )));
    }
    spec.validate(grid)?;

    let coeff = spec.energy_coeff(grid); // kWh per kW per slot
    let cap = spec.r_max_kw;
    let banked = |r: &[f64]| -> f64 { coeff * r.iter().sum::<f64>() };

    // Already feasible: return unchanged (the projection fixes every
    // feasible point, and callers lean on that bit-exactness).
    if v.iter().all(|&x| (0.0..=cap).contains(&x))
        && (banked(v) - spec.demand_kwh).abs() <= FEASIBILITY_TOL_KWH
    {
        return Ok(ChargingProfile { kw: v.to_vec() });
    }

    let clip = |x: f64| -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= cap {
            cap
        } else {
            x
        }
    };
    let banked_at = |theta: f64| -> f64 {
        coeff * v.iter().map(|&x| clip(x - theta * coeff)).sum::<f64>()
    };

    // banked_at is non-increasing in theta; bracket both extremes.
    let v_min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let v_max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = (v_min - cap) / coeff - 1.0; // everything saturates at r_max
    let mut hi = v_max / coeff + 1.0; // everything clips to zero
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..BISECTION_MAX_STEPS {
        theta = 0.5 * (lo + hi);
        let b = banked_at(theta);
        if (b - spec.demand_kwh).abs() <= FEASIBILITY_TOL_KWH {
            break;
        }
        if b > spec.demand_kwh {
            lo = theta;
        } else {
            hi = theta;
        }
    }

    let kw: Vec<f64> = v.iter().map(|&x| clip(x - theta * coeff)).collect();
    debug_assert!(
        (banked(&kw) - spec.demand_kwh).abs() <= 1e-6,
        "projection residual out of tolerance"
    );
    Ok(ChargingProfile { kw })
}

/// Signed deviation of banked energy from the demand, kWh.
pub fn demand_residual(r: &ChargingProfile, spec: &EvSpec, grid: &TimeGrid) -> f64 {
    spec.energy_coeff(grid) * r.kw.iter().sum::<f64>() - spec.demand_kwh
}

/// Synthesizes a fleet of `buses * evs_per_bus` vehicles, cycling bus
/// assignments so each downstream bus hosts exactly `evs_per_bus`
/// chargers, with demands drawn uniformly from `demand_range_kwh`.
/// Draws are deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn generate_fleet(
    buses: usize,
    evs_per_bus: usize,
    demand_range_kwh: (f64, f64),
    r_max_kw: f64,
    eta: f64,
    gamma: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Vec<EvSpec>> {
    let (lo, hi) = demand_range_kwh;
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
        return Err(Error::Infeasible(format!(
            "demand range [{lo}, {hi}] kWh is not a valid interval"
        )));
    }
    if buses == 0 || evs_per_bus == 0 {
        return Ok(Vec::new());
    }
    // Validate the worst case once so every draw is feasible.
    let probe = EvSpec {
        id: 0,
        bus: 1,
        r_max_kw,
        demand_kwh: hi,
        eta,
        gamma,
    };
    probe.validate(grid)?;

    use rand::Rng;
    let mut rng = rng::fleet_stream(seed);
    let mut fleet = Vec::with_capacity(buses * evs_per_bus);
    for id in 0..buses * evs_per_bus {
        let demand_kwh = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        fleet.push(EvSpec {
            id,
            bus: id % buses + 1,
            r_max_kw,
            demand_kwh,
            eta,
            gamma,
        });
    }
    Ok(fleet)
}
