//! Valley-filling objective, subgradients, and update rules.
//!
//! The fleet minimizes `J = 0.5 * || p_base + sum_i r_i ||^2` over the
//! per-vehicle feasible sets, with the nodal lower voltage limits
//! `v_lower_sq <= V_i(t)` relaxed into the Lagrangian through
//! multipliers `lambda_i(t) >= 0`. The iteration alternates projected
//! primal descent on the vehicles with projected dual ascent at the
//! operator.
//!
//! Unit convention: loads stay in kW throughout, impedances in
//! per-unit, voltages in squared per-unit. The kW-space primal
//! gradient is the per-unit gradient rescaled by the base power, so
//! the voltage coupling term carries an explicit `s_base` factor:
//!
//! ```text
//! g_r(t)      = p_base(t) + sum_i p_i(t) - 2 s_base sum_i R_{i,k} lambda_i(t)
//! g_lambda(t) = (v_lower_sq - v0_sq) + (2 / s_base) sum_j R_{i,j} p_j(t)
//! ```
//!
//! With `s_base = 1` (loads already per-unit) both collapse to the
//! textbook formulas. Step sizes tuned for one base power transfer
//! unchanged to the kW iteration.

use crate::error::{Error, Result};
use crate::fleet::{project_feasible, ChargingProfile, EvSpec, TimeGrid};
use crate::network::NetworkModel;

/// Dual multipliers for the relaxed lower voltage limits, one
/// trajectory per downstream bus, plus the per-bus ascent steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    lambda: Vec<Vec<f64>>,
    beta: Vec<f64>,
}

impl DualState {
    /// Zero-initialized multipliers with per-bus steps.
    pub fn new(bus_count: usize, slots: usize, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != bus_count {
            return Err(Error::Dimension(format!(
                "expected {bus_count} dual steps, got {}",
                beta.len()
            )));
        }
        if let Some(b) = beta.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Dimension(format!(
                "dual steps must be nonnegative and finite, got {b}"
            )));
        }
        Ok(Self {
            lambda: vec![vec![0.0; slots]; bus_count],
            beta,
        })
    }

    /// Zero-initialized multipliers with one shared ascent step.
    pub fn uniform(bus_count: usize, slots: usize, beta: f64) -> Result<Self> {
        Self::new(bus_count, slots, vec![beta; bus_count])
    }

    /// Multipliers, `[bus-1][slot]`.
    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn beta(&self, bus: usize) -> f64 {
        self.beta[bus - 1]
    }

    /// Applies one projected ascent step at a bus.
    pub fn ascend(&mut self, bus: usize, grad: &[f64]) {
        let beta = self.beta[bus - 1];
        let row = &mut self.lambda[bus - 1];
        debug_assert_eq!(row.len(), grad.len());
        for (l, &g) in row.iter_mut().zip(grad) {
            *l = dual_step(*l, g, beta);
        }
    }

    /// Largest multiplier across buses and slots.
    pub fn max_lambda(&self) -> f64 {
        self.lambda.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.lambda.iter().flatten().all(|&l| l >= 0.0)
    }
}

/// Everything the operator needs to evaluate one iteration's
/// subgradients: the baseline, the nodal loads it believes in (exact
/// sums in the plain protocol, recovered estimates in the private
/// one), and the constant voltage headroom.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientContext {
    /// Aggregated baseline load per slot, kW.
    pub p_base_kw: Vec<f64>,
    /// Nodal active loads per downstream bus and slot, kW.
    pub p_bus_kw: Vec<Vec<f64>>,
    /// Constant headroom `v_lower_sq - v0_sq`, squared per-unit.
    pub v_tilde_sq: f64,
}

impl SubgradientContext {
    pub fn new(p_base_kw: Vec<f64>, p_bus_kw: Vec<Vec<f64>>, net: &NetworkModel) -> Result<Self> {
        if p_bus_kw.len() != net.bus_count() {
            return Err(Error::Dimension(format!(
                "expected nodal loads for {} buses, got {}",
                net.bus_count(),
                p_bus_kw.len()
            )));
        }
        let slots = p_base_kw.len();
        for (i, row) in p_bus_kw.iter().enumerate() {
            if row.len() != slots {
                return Err(Error::Dimension(format!(
                    "bus {} loads cover {} slots, baseline covers {slots}",
                    i + 1,
                    row.len()
                )));
            }
        }
        Ok(Self {
            p_base_kw,
            p_bus_kw,
            v_tilde_sq: net.v_tilde_sq(),
        })
    }

    pub fn slots(&self) -> usize {
        self.p_base_kw.len()
    }
}

/// Voltage coupling term of the primal gradient for a vehicle at
/// `bus`, in kW: `2 * s_base * sum_i R_{i,bus} lambda_i(t)`.
pub fn price_correction_kw(lambda: &DualState, bus: usize, net: &NetworkModel) -> Vec<f64> {
    let slots = lambda.lambda().first().map_or(0, Vec::len);
    let mut s_hat = vec![0.0; slots];
    let scale = 2.0 * net.s_base_kw();
    for (i, row) in lambda.lambda().iter().enumerate() {
        let r_ik = net.r()[i][bus - 1];
        for (t, &l) in row.iter().enumerate() {
            s_hat[t] += scale * r_ik * l;
        }
    }
    s_hat
}

/// Primal subgradient broadcast to every vehicle at `bus`:
/// `p_base + sum_i p_i - price_correction`.
pub fn primal_subgradient(
    ctx: &SubgradientContext,
    lambda: &DualState,
    bus: usize,
    net: &NetworkModel,
) -> Result<Vec<f64>> {
    if bus == 0 || bus > net.bus_count() {
        return Err(Error::Dimension(format!(
            "bus {bus} outside 1..={}",
            net.bus_count()
        )));
    }
    let s_hat = price_correction_kw(lambda, bus, net);
    let mut g = Vec::with_capacity(ctx.slots());
    for t in 0..ctx.slots() {
        let mut total = ctx.p_base_kw[t];
        for row in &ctx.p_bus_kw {
            total += row[t];
        }
        g.push(total - s_hat[t]);
    }
    Ok(g)
}

/// Dual subgradient at `bus`: the (negated-constraint) violation
/// `v_tilde + (2 / s_base) sum_j R_ij p_j(t)`, which equals
/// `v_lower_sq - V_bus(t)` under the linearized voltage equation with
/// zero reactive load.
pub fn dual_subgradient(ctx: &SubgradientContext, bus: usize, net: &NetworkModel) -> Vec<f64> {
    let r_row = &net.r()[bus - 1];
    let scale = 2.0 / net.s_base_kw();
    (0..ctx.slots())
        .map(|t| {
            let mut drop = 0.0;
            for (j, row) in ctx.p_bus_kw.iter().enumerate() {
                drop += r_row[j] * row[t];
            }
            ctx.v_tilde_sq + scale * drop
        })
        .collect()
}

/// One projected primal step: descend along the subgradient, then
/// project back onto the vehicle's feasible set.
pub fn primal_update(
    r: &ChargingProfile,
    grad: &[f64],
    spec: &EvSpec,
    grid: &TimeGrid,
) -> Result<ChargingProfile> {
    if grad.len() != r.len() {
        return Err(Error::Dimension(format!(
            "ev {}: gradient has {} slots, profile has {}",
            spec.id,
            grad.len(),
            r.len()
        )));
    }
    let candidate: Vec<f64> = r
        .kw
        .iter()
        .zip(grad)
        .map(|(&rt, &g)| rt - spec.gamma * g)
        .collect();
    project_feasible(&candidate, spec, grid)
}

/// One projected dual ascent step on a single entry:
/// `max(0, lambda + beta * grad)`.
pub fn dual_step(lambda: f64, grad: f64, beta: f64) -> f64 {
    let stepped = lambda + beta * grad;
    if stepped > 0.0 {
        stepped
    } else {
        0.0
    }
}

/// Valley-filling objective `0.5 * sum_t (p_base(t) + sum_i r_i(t))^2`.
pub fn objective(p_base_kw: &[f64], profiles: &[ChargingProfile]) -> f64 {
    let mut j = 0.0;
    for t in 0..p_base_kw.len() {
        let mut total = p_base_kw[t];
        for r in profiles {
            total += r.kw[t];
        }
        j += total * total;
    }
    0.5 * j
}

pub mod oracle {
    //! Centralized reference solver.
    //!
    //! Runs the same projected primal-dual recursion with full
    //! information — exact bus sums, no messages, no obfuscation — to
    //! a much tighter stationarity tolerance. Intended for small
    //! instances where it can serve as ground truth for the
    //! decentralized protocol; ~500 vehicle-slots is a practical
    //! ceiling for the exact regime.

    use super::*;
    use crate::scenario::Scenario;

    #[derive(Debug, Clone, Copy)]
    pub struct OracleOptions {
        /// Stop once the largest slot-wise primal change falls below
        /// this many kW.
        pub primal_tol_kw: f64,
        pub max_iterations: u64,
    }

    impl Default for OracleOptions {
        fn default() -> Self {
            Self {
                primal_tol_kw: 1e-8,
                max_iterations: 2_000_000,
            }
        }
    }

    #[derive(Debug, Clone)]
    pub struct OracleSolution {
        pub profiles: Vec<ChargingProfile>,
        pub lambda: Vec<Vec<f64>>,
        pub objective: f64,
        pub iterations: u64,
    }

    /// Practical ceiling (vehicle-slots) below which the reference
    /// solver is trustworthy as ground truth.
    pub const EXACT_REGIME_LIMIT: usize = 500;

    /// Solves the aggregate problem by full-information projected
    /// primal-dual iteration. Deterministic: no randomness enters.
    pub fn solve_centralized(scenario: &Scenario, opts: OracleOptions) -> Result<OracleSolution> {
        let net = &scenario.network;
        let grid = &scenario.grid;
        let slots = grid.slots();
        let n = net.bus_count();

        let mut profiles: Vec<ChargingProfile> = scenario
            .fleet
            .iter()
            .map(|_| ChargingProfile::zeros(slots))
            .collect();
        let mut duals = DualState::uniform(n, slots, scenario.beta)?;

        let mut iterations = 0;
        loop {
            // Exact nodal sums, including any baseline share.
            let p_bus = scenario.nodal_loads_kw(&profiles);
            let ctx = SubgradientContext::new(scenario.baseline_kw.clone(), p_bus, net)?;

            let grads: Vec<Vec<f64>> = (1..=n)
                .map(|bus| primal_subgradient(&ctx, &duals, bus, net))
                .collect::<Result<_>>()?;

            let mut max_change = 0.0f64;
            let mut next = Vec::with_capacity(profiles.len());
            for (r, spec) in profiles.iter().zip(&scenario.fleet) {
                let updated = primal_update(r, &grads[spec.bus - 1], spec, grid)?;
                max_change = max_change.max(updated.max_abs_diff(r));
                next.push(updated);
            }
            for bus in 1..=n {
                let g = dual_subgradient(&ctx, bus, net);
                duals.ascend(bus, &g);
            }
            profiles = next;
            iterations += 1;

            if max_change <= opts.primal_tol_kw {
                break;
            }
            if iterations >= opts.max_iterations {
                let p_bus = scenario.nodal_loads_kw(&profiles);
                let ctx = SubgradientContext::new(scenario.baseline_kw.clone(), p_bus, net)?;
                let violation = (1..=n)
                    .flat_map(|bus| dual_subgradient(&ctx, bus, net))
                    .fold(0.0f64, |acc, g| acc.max(g));
                return Err(Error::OracleNonConvergence {
                    iterations,
                    primal_residual: max_change,
                    constraint_violation: violation.max(0.0),
                });
            }
        }

        let objective = objective(&scenario.baseline_kw, &profiles);
        Ok(OracleSolution {
            profiles,
            lambda: duals.lambda().to_vec(),
            objective,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{voltage_profile, LineSegment};
    use approx::assert_abs_diff_eq;

    fn line(from: usize, to: usize, r: f64, x: f64) -> LineSegment {
        LineSegment {
            from_bus: from,
            to_bus: to,
            resistance: r,
            reactance: x,
        }
    }

    fn single_bus_net() -> NetworkModel {
        NetworkModel::new(vec![line(0, 1, 0.1, 0.05)], 1, 1.0, 0.95, 1.05, 1.0).unwrap()
    }

    #[test]
    fn primal_subgradient_single_bus_hand_value() {
        // p_base = 1, p_1 = 0.5, lambda_1 = 2, R_11 = 0.1, s_base = 1:
        // g = 1 + 0.5 - 2*0.1*2 = 1.1.
        let net = single_bus_net();
        let ctx = SubgradientContext::new(vec![1.0], vec![vec![0.5]], &net).unwrap();
        let mut duals = DualState::uniform(1, 1, 1.0).unwrap();
        duals.ascend(1, &[2.0]); // lambda = max(0, 0 + 1*2) = 2
        let g = primal_subgradient(&ctx, &duals, 1, &net).unwrap();
        assert_abs_diff_eq!(g[0], 1.1, epsilon = 1e-15);
    }

    #[test]
    fn primal_subgradient_is_identical_for_same_bus() {
        let net = two_bus_net();
        let ctx = SubgradientContext::new(
            vec![3.0, 1.0],
            vec![vec![1.0, 0.5], vec![2.0, 0.0]],
            &net,
        )
        .unwrap();
        let mut duals = DualState::uniform(2, 2, 0.5).unwrap();
        duals.ascend(1, &[1.0, 2.0]);
        duals.ascend(2, &[0.5, 0.0]);
        let a = primal_subgradient(&ctx, &duals, 2, &net).unwrap();
        let b = primal_subgradient(&ctx, &duals, 2, &net).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_lambda_makes_gradient_the_total_load() {
        let net = two_bus_net();
        let ctx = SubgradientContext::new(
            vec![3.0, 1.0],
            vec![vec![1.0, 0.5], vec![2.0, 0.0]],
            &net,
        )
        .unwrap();
        let duals = DualState::uniform(2, 2, 0.5).unwrap();
        let g = primal_subgradient(&ctx, &duals, 1, &net).unwrap();
        assert_eq!(g, vec![6.0, 1.5]);
    }

    #[test]
    fn dual_subgradient_zero_load_is_constant_headroom() {
        // v_lower^2 - v0^2 = 0.9025 - 1 = -0.0975 in every slot.
        let net = single_bus_net();
        let ctx = SubgradientContext::new(vec![0.0, 0.0], vec![vec![0.0, 0.0]], &net).unwrap();
        let g = dual_subgradient(&ctx, 1, &net);
        for &v in &g {
            assert_abs_diff_eq!(v, -0.0975, epsilon = 1e-15);
        }
    }

    #[test]
    fn dual_subgradient_matches_voltage_equation() {
        let net = two_bus_net();
        let p = vec![vec![12.0, 3.0, 0.0], vec![5.0, 8.0, 1.0]];
        let q = vec![vec![0.0; 3]; 2];
        let ctx = SubgradientContext::new(vec![0.0; 3], p.clone(), &net).unwrap();
        let v = voltage_profile(&net, &p, &q).unwrap();
        for bus in 1..=2 {
            let g = dual_subgradient(&ctx, bus, &net);
            for t in 0..3 {
                let direct = net.v_lower_sq() - v.v_sq()[bus - 1][t];
                assert_abs_diff_eq!(g[t], direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dual_step_clamps_at_zero() {
        // Negative drift stays pinned at zero...
        assert_eq!(dual_step(0.0, -0.0975, 2e-3), 0.0);
        // ...while violations accumulate.
        assert_abs_diff_eq!(dual_step(0.1, 0.05, 2e-3), 0.1001, epsilon = 1e-15);
    }

    #[test]
    fn objective_hand_value() {
        // p_base = [3, 4] with no charging: J = 0.5*(9+16) = 12.5.
        assert_abs_diff_eq!(objective(&[3.0, 4.0], &[]), 12.5, epsilon = 1e-15);
    }

    #[test]
    fn objective_includes_charging() {
        let r = ChargingProfile { kw: vec![1.0, 0.0] };
        assert_abs_diff_eq!(objective(&[3.0, 4.0], &[r]), 16.0, epsilon = 1e-15);
    }

    #[test]
    fn primal_update_fixed_point_on_zero_gradient() {
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let spec = EvSpec {
            id: 0,
            bus: 1,
            r_max_kw: 1.0,
            demand_kwh: 1.0,
            eta: 1.0,
            gamma: 0.5,
        };
        let r = ChargingProfile { kw: vec![0.5, 0.5] };
        let updated = primal_update(&r, &[0.0, 0.0], &spec, &grid).unwrap();
        assert_eq!(updated.kw, r.kw);
    }

    fn two_bus_net() -> NetworkModel {
        NetworkModel::new(
            vec![line(0, 1, 0.10, 0.08), line(1, 2, 0.05, 0.04)],
            2,
            1.0,
            0.95,
            1.05,
            1.0,
        )
        .unwrap()
    }
}
