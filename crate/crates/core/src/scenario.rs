//! Scenario documents.
//!
//! A scenario is one JSON file describing the feeder, the time grid,
//! the baseline load, the fleet, step sizes, the obfuscation key
//! material, and run control. [`ScenarioDocument`] is the on-disk
//! shape; [`ScenarioDocument::build`] validates every field (errors
//! name the offending field) and produces the runtime [`Scenario`]
//! consumed by the solver and the protocol.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{generate_fleet, ChargingProfile, EvSpec, TimeGrid};
use crate::network::{LineSegment, NetworkModel};
use crate::obfuscation::ObfuscationKey;
use crate::protocol::{Mode, RecordPolicy};

fn invalid(path: &str, reason: impl Into<String>) -> Error {
    Error::Scenario {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// On-disk scenario (see the crate README for a worked example).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub network: NetworkDoc,
    pub time: TimeDoc,
    pub baseline: BaselineDoc,
    pub fleet: FleetDoc,
    pub steps: StepsDoc,
    pub obfuscation: ObfuscationDoc,
    pub control: ControlDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    /// Downstream bus count; buses are numbered 1..=buses, slack is 0.
    pub buses: usize,
    /// Base power converting kW loads to per-unit.
    pub s_base_kw: f64,
    pub v0_pu: f64,
    pub v_lower_pu: f64,
    pub v_upper_pu: f64,
    pub lines: Vec<LineDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDoc {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeDoc {
    pub slots: usize,
    pub delta_t_hours: f64,
    /// Cosmetic label for the first slot (e.g. "19:00").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineDoc {
    #[serde(flatten)]
    pub source: BaselineSource,
    /// Optional split of the baseline onto buses for the voltage
    /// model. Omitted (the default) means nodal loads are vehicle
    /// charging only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus_fractions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSource {
    /// Literal per-slot kW values.
    Inline(Vec<f64>),
    /// CSV file with a `baseline_kw` column, resolved relative to the
    /// scenario file.
    Csv { path: String },
    /// Smooth overnight valley curve, high at the first slot.
    Synthetic(SyntheticBaseline),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBaseline {
    pub peak_kw: f64,
    /// Valley floor as a fraction of the peak.
    #[serde(default = "default_trough_fraction")]
    pub trough_fraction: f64,
    /// Final-slot level as a fraction of the peak.
    #[serde(default = "default_end_fraction")]
    pub end_fraction: f64,
    /// Slot of the valley floor; defaults to mid-horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trough_slot: Option<usize>,
}

fn default_trough_fraction() -> f64 {
    0.55
}

fn default_end_fraction() -> f64 {
    0.85
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FleetDoc {
    /// Vehicles listed one by one; ids are list positions.
    Explicit(Vec<EvDoc>),
    /// Synthesized fleet, `evs_per_bus` chargers on every bus.
    Generate(FleetGenDoc),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvDoc {
    pub bus: usize,
    pub r_max_kw: f64,
    pub demand_kwh: f64,
    pub eta: f64,
    /// Falls back to `steps.gamma` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetGenDoc {
    pub evs_per_bus: usize,
    pub demand_range_kwh: (f64, f64),
    pub r_max_kw: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsDoc {
    /// Primal (vehicle) step size.
    pub gamma: f64,
    /// Dual (operator) ascent step size.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObfuscationDoc {
    /// Masking mean: one shared value or one per bus.
    pub mu: MuSpec,
    pub sigma_sq: f64,
    /// Draws per slot (the recovery block size).
    pub m: usize,
    /// Per-vehicle masking means. Only allowed when every bus hosts
    /// at most one vehicle — mixed keys on one bus would not
    /// aggregate coherently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_ev_mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuSpec {
    Uniform(f64),
    PerBus(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlDoc {
    /// Per-vehicle convergence threshold on the slot-wise profile
    /// change, kW.
    pub epsilon_0: f64,
    /// Iteration cap.
    pub ell_max: u64,
    pub seed: u64,
    pub mode: Mode,
    /// Which iterations the transcript records.
    #[serde(default)]
    pub transcript: RecordPolicy,
}

/// Upper bound on `slots * m` so a misconfigured scenario cannot
/// demand gigabyte uploads.
pub const MAX_UPLOAD_LEN: usize = 1_000_000;

/// Validated, runtime-ready scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: NetworkModel,
    pub grid: TimeGrid,
    pub fleet: Vec<EvSpec>,
    pub baseline_kw: Vec<f64>,
    pub baseline_bus_fractions: Option<Vec<f64>>,
    /// Dual ascent step shared by all buses.
    pub beta: f64,
    /// Obfuscation key per downstream bus.
    pub keys: Vec<ObfuscationKey>,
    pub epsilon_0: f64,
    pub ell_max: u64,
    pub seed: u64,
    pub mode: Mode,
    pub record: RecordPolicy,
    bus_members: Vec<Vec<usize>>,
}

impl Scenario {
    /// Fleet indices hosted at each downstream bus (`[bus-1]`).
    pub fn bus_members(&self) -> &[Vec<usize>] {
        &self.bus_members
    }

    /// Per-bus sums of vehicle charging, kW, folded in fleet-list
    /// order (the same order the protocol aggregates uploads in).
    pub fn ev_loads_kw(&self, profiles: &[ChargingProfile]) -> Vec<Vec<f64>> {
        let slots = self.grid.slots();
        let mut loads = vec![vec![0.0; slots]; self.network.bus_count()];
        for (bus_idx, members) in self.bus_members.iter().enumerate() {
            for &idx in members {
                for (acc, &r) in loads[bus_idx].iter_mut().zip(&profiles[idx].kw) {
                    *acc += r;
                }
            }
        }
        loads
    }

    /// Adds each bus's share of the baseline to nodal loads, when a
    /// split is configured.
    pub fn apply_baseline_share(&self, loads: &mut [Vec<f64>]) {
        if let Some(fractions) = &self.baseline_bus_fractions {
            for (row, &f) in loads.iter_mut().zip(fractions) {
                for (acc, &b) in row.iter_mut().zip(&self.baseline_kw) {
                    *acc += f * b;
                }
            }
        }
    }

    /// Nodal active loads for the voltage model: vehicle charging
    /// plus any configured baseline share.
    pub fn nodal_loads_kw(&self, profiles: &[ChargingProfile]) -> Vec<Vec<f64>> {
        let mut loads = self.ev_loads_kw(profiles);
        self.apply_baseline_share(&mut loads);
        loads
    }
}

impl ScenarioDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("reading scenario {}: {e}", path.display()),
            ))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario documents always serialize")
    }

    /// Applies command-line overrides before building.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        mode: Option<Mode>,
        sigma_sq: Option<f64>,
        m: Option<usize>,
    ) {
        if let Some(s) = seed {
            self.control.seed = s;
        }
        if let Some(md) = mode {
            self.control.mode = md;
        }
        if let Some(s2) = sigma_sq {
            self.obfuscation.sigma_sq = s2;
        }
        if let Some(mm) = m {
            self.obfuscation.m = mm;
        }
    }

    /// Validates the document and assembles the runtime scenario.
    /// `base_dir` anchors relative CSV paths (usually the scenario
    /// file's directory).
    pub fn build(&self, base_dir: Option<&Path>) -> Result<Scenario> {
        let n = self.network.buses;
        if n == 0 {
            return Err(invalid("network.buses", "need at least one downstream bus"));
        }

        let lines: Vec<LineSegment> = self
            .network
            .lines
            .iter()
            .map(|l| LineSegment {
                from_bus: l.from,
                to_bus: l.to,
                resistance: l.r_pu,
                reactance: l.x_pu,
            })
            .collect();
        let network = NetworkModel::new(
            lines,
            n,
            self.network.v0_pu,
            self.network.v_lower_pu,
            self.network.v_upper_pu,
            self.network.s_base_kw,
        )
        .map_err(|e| invalid("network", e.to_string()))?;

        let grid = TimeGrid::new(self.time.slots, self.time.delta_t_hours)
            .map_err(|e| invalid("time", e.to_string()))?;
        let slots = grid.slots();

        let baseline_kw = match &self.baseline.source {
            BaselineSource::Inline(values) => {
                if values.len() != slots {
                    return Err(invalid(
                        "baseline.inline",
                        format!("length {} != time.slots {slots}", values.len()),
                    ));
                }
                if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(invalid(
                        "baseline.inline",
                        format!("entries must be finite and nonnegative, found {bad}"),
                    ));
                }
                values.clone()
            }
            BaselineSource::Csv { path } => {
                let resolved = match base_dir {
                    Some(dir) => dir.join(path),
                    None => Path::new(path).to_path_buf(),
                };
                let values = read_baseline_csv(&resolved)?;
                if values.len() != slots {
                    return Err(invalid(
                        "baseline.csv",
                        format!(
                            "{} has {} rows, time.slots is {slots}",
                            resolved.display(),
                            values.len()
                        ),
                    ));
                }
                values
            }
            BaselineSource::Synthetic(params) => synthetic_baseline(slots, params)?,
        };

        if let Some(fractions) = &self.baseline.bus_fractions {
            if fractions.len() != n {
                return Err(invalid(
                    "baseline.bus_fractions",
                    format!("length {} != network.buses {n}", fractions.len()),
                ));
            }
            if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
                return Err(invalid(
                    "baseline.bus_fractions",
                    "fractions must be finite and nonnegative",
                ));
            }
            let total: f64 = fractions.iter().sum();
            if total > 1.0 + 1e-9 {
                return Err(invalid(
                    "baseline.bus_fractions",
                    format!("fractions sum to {total}, must not exceed 1"),
                ));
            }
        }

        if !(self.steps.gamma.is_finite() && self.steps.gamma >= 0.0) {
            return Err(invalid("steps.gamma", "must be nonnegative and finite"));
        }
        if !(self.steps.beta.is_finite() && self.steps.beta >= 0.0) {
            return Err(invalid("steps.beta", "must be nonnegative and finite"));
        }

        let fleet: Vec<EvSpec> = match &self.fleet {
            FleetDoc::Explicit(evs) => {
                let mut out = Vec::with_capacity(evs.len());
                for (i, ev) in evs.iter().enumerate() {
                    if ev.bus == 0 || ev.bus > n {
                        return Err(invalid(
                            &format!("fleet.explicit[{i}].bus"),
                            format!("bus {} outside 1..={n}", ev.bus),
                        ));
                    }
                    let spec = EvSpec {
                        id: i,
                        bus: ev.bus,
                        r_max_kw: ev.r_max_kw,
                        demand_kwh: ev.demand_kwh,
                        eta: ev.eta,
                        gamma: ev.gamma.unwrap_or(self.steps.gamma),
                    };
                    spec.validate(&grid)
                        .map_err(|e| invalid(&format!("fleet.explicit[{i}]"), e.to_string()))?;
                    out.push(spec);
                }
                out
            }
            FleetDoc::Generate(gen) => generate_fleet(
                n,
                gen.evs_per_bus,
                gen.demand_range_kwh,
                gen.r_max_kw,
                gen.eta,
                self.steps.gamma,
                &grid,
                self.control.seed,
            )
            .map_err(|e| invalid("fleet.generate", e.to_string()))?,
        };

        // Obfuscation keys, one per bus.
        if self.obfuscation.m == 0 {
            return Err(invalid("obfuscation.m", "set cardinality must be at least 1"));
        }
        if slots.saturating_mul(self.obfuscation.m) > MAX_UPLOAD_LEN {
            return Err(invalid(
                "obfuscation.m",
                format!(
                    "upload length slots*m = {} exceeds the {MAX_UPLOAD_LEN} cap",
                    slots * self.obfuscation.m
                ),
            ));
        }
        let mus: Vec<f64> = match (&self.obfuscation.mu, &self.obfuscation.per_ev_mu) {
            (_, Some(per_ev)) => {
                if per_ev.len() != fleet.len() {
                    return Err(invalid(
                        "obfuscation.per_ev_mu",
                        format!("length {} != fleet size {}", per_ev.len(), fleet.len()),
                    ));
                }
                let mut counts = vec![0usize; n];
                for ev in &fleet {
                    counts[ev.bus - 1] += 1;
                }
                if let Some(bus) = counts.iter().position(|&c| c > 1) {
                    return Err(invalid(
                        "obfuscation.per_ev_mu",
                        format!(
                            "bus {} hosts {} vehicles; per-vehicle keys require at \
                             most one vehicle per bus",
                            bus + 1,
                            counts[bus]
                        ),
                    ));
                }
                let fallback = match &self.obfuscation.mu {
                    MuSpec::Uniform(mu) => *mu,
                    MuSpec::PerBus(_) => {
                        return Err(invalid(
                            "obfuscation.mu",
                            "per-bus mu and per_ev_mu cannot be combined",
                        ))
                    }
                };
                let mut mus = vec![fallback; n];
                for (ev, &mu) in fleet.iter().zip(per_ev) {
                    mus[ev.bus - 1] = mu;
                }
                mus
            }
            (MuSpec::Uniform(mu), None) => vec![*mu; n],
            (MuSpec::PerBus(per_bus), None) => {
                if per_bus.len() != n {
                    return Err(invalid(
                        "obfuscation.mu",
                        format!("per-bus list has {} entries, network.buses is {n}", per_bus.len()),
                    ));
                }
                per_bus.clone()
            }
        };
        let keys = mus
            .into_iter()
            .map(|mu| ObfuscationKey::new(mu, self.obfuscation.sigma_sq, self.obfuscation.m))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| invalid("obfuscation", e.to_string()))?;

        if !(self.control.epsilon_0.is_finite() && self.control.epsilon_0 > 0.0) {
            return Err(invalid("control.epsilon_0", "must be positive and finite"));
        }
        if self.control.ell_max == 0 {
            return Err(invalid("control.ell_max", "need at least one iteration"));
        }
        if let RecordPolicy::Stride(0) = self.control.transcript {
            return Err(invalid("control.transcript.stride", "stride must be >= 1"));
        }

        let mut bus_members = vec![Vec::new(); n];
        for (idx, ev) in fleet.iter().enumerate() {
            bus_members[ev.bus - 1].push(idx);
        }

        Ok(Scenario {
            network,
            grid,
            fleet,
            baseline_kw,
            baseline_bus_fractions: self.baseline.bus_fractions.clone(),
            beta: self.steps.beta,
            keys,
            epsilon_0: self.control.epsilon_0,
            ell_max: self.control.ell_max,
            seed: self.control.seed,
            mode: self.control.mode,
            record: self.control.transcript.clone(),
            bus_members,
        })
    }
}

/// Reads a `baseline_kw` column (header required) from a CSV file.
fn read_baseline_csv(path: &Path) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        baseline_kw: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid("baseline.csv", format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| invalid("baseline.csv", e.to_string()))?;
        if !(row.baseline_kw.is_finite() && row.baseline_kw >= 0.0) {
            return Err(invalid(
                "baseline.csv",
                format!("baseline values must be finite and nonnegative, found {}", row.baseline_kw),
            ));
        }
        values.push(row.baseline_kw);
    }
    Ok(values)
}

/// Smooth overnight valley: a half-cosine descent from the peak at
/// slot 0 to the trough, then a half-cosine rise to the final level.
pub fn synthetic_baseline(slots: usize, params: &SyntheticBaseline) -> Result<Vec<f64>> {
    if slots < 3 {
        return Err(invalid(
            "baseline.synthetic",
            "synthetic curve needs at least 3 slots",
        ));
    }
    if !(params.peak_kw.is_finite() && params.peak_kw > 0.0) {
        return Err(invalid(
            "baseline.synthetic.peak_kw",
            "peak must be positive",
        ));
    }
    let tf = params.trough_fraction;
    let ef = params.end_fraction;
    if !(tf > 0.0 && tf < 1.0) {
        return Err(invalid(
            "baseline.synthetic.trough_fraction",
            format!("must lie in (0, 1), got {tf}"),
        ));
    }
    if !(ef >= tf && ef <= 1.0) {
        return Err(invalid(
            "baseline.synthetic.end_fraction",
            format!("must lie in [trough_fraction, 1], got {ef}"),
        ));
    }
    let trough_slot = params.trough_slot.unwrap_or(slots / 2);
    if trough_slot == 0 || trough_slot >= slots - 1 {
        return Err(invalid(
            "baseline.synthetic.trough_slot",
            format!("must be interior (1..{}), got {trough_slot}", slots - 1),
        ));
    }

    let peak = params.peak_kw;
    let trough = tf * peak;
    let end = ef * peak;
    let mut curve = Vec::with_capacity(slots);
    for t in 0..slots {
        let v = if t <= trough_slot {
            let phase = std::f64::consts::PI * t as f64 / trough_slot as f64;
            trough + (peak - trough) * 0.5 * (1.0 + phase.cos())
        } else {
            let span = (slots - 1 - trough_slot) as f64;
            let phase = std::f64::consts::PI * (t - trough_slot) as f64 / span;
            trough + (end - trough) * 0.5 * (1.0 - phase.cos())
        };
        curve.push(v);
    }
    Ok(curve)
}

/// Knobs for the bundled 13-bus overnight study case. Defaults
/// reproduce the reference configuration: 12 downstream buses, 7
/// vehicles per bus, 48 quarter-hour slots starting 19:00, demands
/// uniform in [10, 40] kWh, 6.6 kW chargers at 85% efficiency,
/// gamma 4e-4 / beta 2e-3, masking N(1, 0.2) with 40 draws per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCaseParams {
    pub seed: u64,
    pub evs_per_bus: usize,
    pub demand_range_kwh: (f64, f64),
    pub r_max_kw: f64,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma_sq: f64,
    pub m: usize,
    pub peak_kw: f64,
    pub epsilon_0: f64,
    pub ell_max: u64,
    pub mode: Mode,
    pub transcript: RecordPolicy,
}

impl Default for StudyCaseParams {
    fn default() -> Self {
        Self {
            seed: 1,
            evs_per_bus: 7,
            demand_range_kwh: (10.0, 40.0),
            r_max_kw: 6.6,
            eta: 0.85,
            gamma: 4e-4,
            beta: 2e-3,
            mu: 1.0,
            sigma_sq: 0.2,
            m: 40,
            peak_kw: 2000.0,
            epsilon_0: 1e-3,
            ell_max: 5000,
            mode: Mode::Private,
            transcript: RecordPolicy::Stride(25),
        }
    }
}

/// The bundled 13-bus feeder (slack plus 12 downstream buses, three
/// laterals) with an overnight valley baseline.
pub fn study_case(params: &StudyCaseParams) -> ScenarioDocument {
    let lines = vec![
        (0, 1, 0.036, 0.026),
        (1, 2, 0.022, 0.014),
        (2, 3, 0.018, 0.012),
        (1, 4, 0.024, 0.017),
        (4, 5, 0.019, 0.013),
        (1, 6, 0.042, 0.030),
        (6, 7, 0.034, 0.023),
        (7, 8, 0.026, 0.018),
        (7, 9, 0.022, 0.014),
        (6, 10, 0.024, 0.016),
        (6, 11, 0.031, 0.021),
        (11, 12, 0.029, 0.019),
    ]
    .into_iter()
    .map(|(from, to, r_pu, x_pu)| LineDoc {
        from,
        to,
        r_pu,
        x_pu,
    })
    .collect();

    ScenarioDocument {
        network: NetworkDoc {
            buses: 12,
            s_base_kw: 1000.0,
            v0_pu: 1.0,
            v_lower_pu: 0.95,
            v_upper_pu: 1.05,
            lines,
        },
        time: TimeDoc {
            slots: 48,
            delta_t_hours: 0.25,
            start_label: Some("19:00".to_string()),
        },
        baseline: BaselineDoc {
            source: BaselineSource::Synthetic(SyntheticBaseline {
                peak_kw: params.peak_kw,
                trough_fraction: 0.55,
                end_fraction: 0.85,
                trough_slot: Some(24),
            }),
            bus_fractions: None,
        },
        fleet: FleetDoc::Generate(FleetGenDoc {
            evs_per_bus: params.evs_per_bus,
            demand_range_kwh: params.demand_range_kwh,
            r_max_kw: params.r_max_kw,
            eta: params.eta,
        }),
        steps: StepsDoc {
            gamma: params.gamma,
            beta: params.beta,
        },
        obfuscation: ObfuscationDoc {
            mu: MuSpec::Uniform(params.mu),
            sigma_sq: params.sigma_sq,
            m: params.m,
            per_ev_mu: None,
        },
        control: ControlDoc {
            epsilon_0: params.epsilon_0,
            ell_max: params.ell_max,
            seed: params.seed,
            mode: params.mode,
            transcript: params.transcript.clone(),
        },
    }
}
