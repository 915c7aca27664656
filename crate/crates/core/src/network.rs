//! Radial feeder model.
//!
//! The feeder is a tree rooted at the slack bus (index 0) with `n`
//! downstream buses indexed `1..=n`. Voltages follow the linearized
//! branch-flow approximation in squared per-unit magnitudes:
//!
//! ```text
//! V_i(t) = V_0 - 2 * sum_j R_ij p_j(t) - 2 * sum_j X_ij q_j(t)
//! ```
//!
//! where `R_ij` (`X_ij`) is the total resistance (reactance) of the
//! edges shared by the root paths of buses `i` and `j`, `p_j`/`q_j`
//! are nodal injections in units of the network's base power, and
//! `V` values are squared voltage magnitudes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One distribution line. Orientation is irrelevant; the tree is
/// re-rooted at the slack bus during validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Per-unit resistance on the network base.
    pub resistance: f64,
    /// Per-unit reactance on the network base.
    pub reactance: f64,
}

/// Validated feeder with precomputed shared-path impedance matrices.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    bus_count: usize,
    lines: Vec<LineSegment>,
    /// `r[i][j]` = shared-path resistance of downstream buses `i+1`, `j+1`.
    r: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    v0_sq: f64,
    v_lower_sq: f64,
    v_upper_sq: f64,
    s_base_kw: f64,
}

impl NetworkModel {
    /// Builds the model from a line list and per-unit voltage limits
    /// (plain magnitudes; they are squared internally).
    pub fn new(
        lines: Vec<LineSegment>,
        bus_count: usize,
        v0_pu: f64,
        v_lower_pu: f64,
        v_upper_pu: f64,
        s_base_kw: f64,
    ) -> Result<Self> {
        if !(s_base_kw.is_finite() && s_base_kw > 0.0) {
            return Err(Error::Dimension(format!(
                "base power must be positive and finite, got {s_base_kw}"
            )));
        }
        for (name, v) in [("slack", v0_pu), ("lower", v_lower_pu), ("upper", v_upper_pu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Dimension(format!(
                    "{name} voltage must be positive and finite, got {v}"
                )));
            }
        }
        if v_lower_pu > v0_pu || v0_pu > v_upper_pu {
            return Err(Error::Dimension(format!(
                "voltage limits must satisfy lower <= slack <= upper, \
                 got {v_lower_pu} / {v0_pu} / {v_upper_pu}"
            )));
        }
        let (r, x) = build_adjacency(&lines, bus_count)?;
        Ok(Self {
            bus_count,
            lines,
            r,
            x,
            v0_sq: v0_pu * v0_pu,
            v_lower_sq: v_lower_pu * v_lower_pu,
            v_upper_sq: v_upper_pu * v_upper_pu,
            s_base_kw,
        })
    }

    /// Number of downstream buses (slack excluded).
    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    pub fn lines(&self) -> &[LineSegment] {
        &self.lines
    }

    /// Shared-path resistance matrix over downstream buses.
    pub fn r(&self) -> &[Vec<f64>] {
        &self.r
    }

    /// Shared-path reactance matrix over downstream buses.
    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Squared slack-bus voltage.
    pub fn v0_sq(&self) -> f64 {
        self.v0_sq
    }

    /// Squared lower voltage limit.
    pub fn v_lower_sq(&self) -> f64 {
        self.v_lower_sq
    }

    /// Squared upper voltage limit.
    pub fn v_upper_sq(&self) -> f64 {
        self.v_upper_sq
    }

    /// Base power that converts kW injections to per-unit.
    pub fn s_base_kw(&self) -> f64 {
        self.s_base_kw
    }

    /// Constant headroom term `v_lower_sq - v0_sq` (negative when the
    /// limit sits below the slack voltage).
    pub fn v_tilde_sq(&self) -> f64 {
        self.v_lower_sq - self.v0_sq
    }
}

/// Builds the shared-path `(R, X)` matrices for a line list describing
/// a tree over buses `0..=bus_count` rooted at the slack bus 0.
///
/// Entry `(i, j)` sums the per-unit impedance of every edge lying on
/// both root paths. Rejects cycles, disconnected buses, conflicting
/// parents, and out-of-range endpoints, naming the offending bus.
pub fn build_adjacency(
    lines: &[LineSegment],
    bus_count: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if bus_count == 0 {
        return Err(Error::Topology(
            "feeder needs at least one downstream bus".into(),
        ));
    }
    for (k, line) in lines.iter().enumerate() {
        if line.from_bus > bus_count || line.to_bus > bus_count {
            return Err(Error::Topology(format!(
                "line {k} touches bus {} but the feeder has buses 0..={bus_count}",
                line.from_bus.max(line.to_bus)
            )));
        }
        if line.from_bus == line.to_bus {
            return Err(Error::Topology(format!(
                "line {k} is a self-loop at bus {}",
                line.from_bus
            )));
        }
        if !(line.resistance.is_finite() && line.resistance >= 0.0)
            || !(line.reactance.is_finite() && line.reactance >= 0.0)
        {
            return Err(Error::Topology(format!(
                "line {k} has invalid impedance ({}, {})",
                line.resistance, line.reactance
            )));
        }
    }
    if lines.len() != bus_count {
        return Err(Error::Topology(format!(
            "a radial feeder over {bus_count} downstream buses needs exactly \
             {bus_count} lines, got {}",
            lines.len()
        )));
    }

    // Orient the tree away from the slack bus with a breadth-first
    // sweep; a bus reached twice sits on a cycle or has two parents.
    let mut neighbors: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); bus_count + 1];
    for line in lines {
        neighbors[line.from_bus].push((line.to_bus, line.resistance, line.reactance));
        neighbors[line.to_bus].push((line.from_bus, line.resistance, line.reactance));
    }
    // parent[i] = (parent bus, r, x) of the edge above bus i.
    let mut parent: Vec<Option<(usize, f64, f64)>> = vec![None; bus_count + 1];
    let mut seen = vec![false; bus_count + 1];
    seen[0] = true;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(bus) = queue.pop_front() {
        for &(next, r, x) in &neighbors[bus] {
            if next == bus {
                continue;
            }
            if seen[next] {
                // Ignore the edge back to the parent we arrived by;
                // any other revisit means a cycle / duplicate parent.
                if parent[bus].map(|(p, _, _)| p) == Some(next) {
                    continue;
                }
                return Err(Error::Topology(format!(
                    "bus {next} is reachable along two paths (cycle or duplicate parent)"
                )));
            }
            seen[next] = true;
            parent[next] = Some((bus, r, x));
            queue.push_back(next);
        }
    }
    if let Some(unreached) = seen.iter().position(|&s| !s) {
        return Err(Error::Topology(format!(
            "bus {unreached} is not connected to the slack bus"
        )));
    }

    // ancestors[i][c] marks that the edge above bus c+1 lies on the
    // root path of bus i+1 (edges are identified by their child bus).
    let mut ancestors = vec![vec![false; bus_count]; bus_count];
    let mut edge_r = vec![0.0; bus_count];
    let mut edge_x = vec![0.0; bus_count];
    for bus in 1..=bus_count {
        let (_, r, x) = parent[bus].expect("connected non-slack bus has a parent");
        edge_r[bus - 1] = r;
        edge_x[bus - 1] = x;
        let mut cursor = bus;
        while cursor != 0 {
            ancestors[bus - 1][cursor - 1] = true;
            cursor = parent[cursor].expect("walk ends at slack").0;
        }
    }

    let mut r_mat = vec![vec![0.0; bus_count]; bus_count];
    let mut x_mat = vec![vec![0.0; bus_count]; bus_count];
    for i in 0..bus_count {
        for j in i..bus_count {
            let mut r_sum = 0.0;
            let mut x_sum = 0.0;
            for c in 0..bus_count {
                if ancestors[i][c] && ancestors[j][c] {
                    r_sum += edge_r[c];
                    x_sum += edge_x[c];
                }
            }
            r_mat[i][j] = r_sum;
            r_mat[j][i] = r_sum;
            x_mat[i][j] = x_sum;
            x_mat[j][i] = x_sum;
        }
    }
    Ok((r_mat, x_mat))
}

/// Squared voltage magnitudes per bus and slot.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageProfile {
    v_sq: Vec<Vec<f64>>,
}

impl VoltageProfile {
    /// Squared magnitudes, `[bus-1][slot]`.
    pub fn v_sq(&self) -> &[Vec<f64>] {
        &self.v_sq
    }

    /// Smallest squared magnitude across buses and slots.
    pub fn min_v_sq(&self) -> f64 {
        self.v_sq
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest voltage magnitude in plain per-unit. Collapsed (non
    /// physical, negative squared) values report as zero.
    pub fn min_magnitude_pu(&self) -> f64 {
        self.min_v_sq().max(0.0).sqrt()
    }
}

/// Evaluates the linearized voltage equation for nodal active loads
/// `p_kw` and reactive loads `q_kvar`, both `[bus-1][slot]` in kW/kvar
/// (converted internally by the network base power).
pub fn voltage_profile(
    net: &NetworkModel,
    p_kw: &[Vec<f64>],
    q_kvar: &[Vec<f64>],
) -> Result<VoltageProfile> {
    let n = net.bus_count();
    if p_kw.len() != n || q_kvar.len() != n {
        return Err(Error::Dimension(format!(
            "expected loads for {n} buses, got {} active / {} reactive",
            p_kw.len(),
            q_kvar.len()
        )));
    }
    let slots = p_kw.first().map_or(0, Vec::len);
    for (i, (p, q)) in p_kw.iter().zip(q_kvar).enumerate() {
        if p.len() != slots || q.len() != slots {
            return Err(Error::Dimension(format!(
                "bus {} loads have {} active / {} reactive slots, expected {slots}",
                i + 1,
                p.len(),
                q.len()
            )));
        }
    }

    let scale = 2.0 / net.s_base_kw();
    let mut v_sq = vec![vec![0.0; slots]; n];
    for i in 0..n {
        let r_row = &net.r()[i];
        let x_row = &net.x()[i];
        for t in 0..slots {
            let mut drop = 0.0;
            for j in 0..n {
                drop += r_row[j] * p_kw[j][t] + x_row[j] * q_kvar[j][t];
            }
            v_sq[i][t] = net.v0_sq() - scale * drop;
        }
    }
    Ok(VoltageProfile { v_sq })
}

/// Worst-case limit violations per bus, in squared per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    /// `max_t max(0, v_lower_sq - V_i(t))` per downstream bus.
    pub lower: Vec<f64>,
    /// `max_t max(0, V_i(t) - v_upper_sq)` per downstream bus. The
    /// upper side is monitored only; charging-only load never lifts
    /// voltages above the slack value.
    pub upper: Vec<f64>,
}

impl BoundCheck {
    /// Largest lower-limit violation across buses.
    pub fn worst_lower(&self) -> f64 {
        self.lower.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.worst_lower() == 0.0 && self.upper.iter().all(|&u| u == 0.0)
    }
}

/// Checks a voltage profile against the network's limits.
pub fn check_voltage_bounds(v: &VoltageProfile, net: &NetworkModel) -> BoundCheck {
    let lower = v
        .v_sq()
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| (net.v_lower_sq() - v).max(0.0))
                .fold(0.0, f64::max)
        })
        .collect();
    let upper = v
        .v_sq()
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| (v - net.v_upper_sq()).max(0.0))
                .fold(0.0, f64::max)
        })
        .collect();
    BoundCheck { lower, upper }
}
