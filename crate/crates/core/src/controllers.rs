//! Junction controllers: measured queues in, one signal program out.
//!
//! Controllers are pure functions of a [`Measurement`], the static
//! [`Junction`] description and their [`ControllerConfig`]. GPA variants see
//! only the junction's own lanes; MaxPressure additionally sees the lanes one
//! hop downstream.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::gpa::{self, Allocation, GpaError, GpaParams};
use crate::signal::{Junction, JunctionId, LaneId, PhaseRef, RoutingMatrix, SignalError, SignalProgram};

/// `ν_i` above this counts as an activated phase in the shorted-cycle variant.
pub const ACTIVE_PHASE_THRESHOLD: f64 = 1e-9;

/// Idle hold emitted by the shorted-cycle variant when nothing is queued.
pub const IDLE_HOLD_SECONDS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Gpa(#[from] GpaError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("no routing row for lane {0}")]
    MissingRouting(LaneId),
    #[error("no downstream measurement for lane {0}")]
    MissingDownstream(LaneId),
    #[error("measurement has {got} lanes, junction has {expected}")]
    MeasurementShape { expected: usize, got: usize },
}

/// Which routing matrix a MaxPressure controller uses for its pressures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutingSource {
    /// The scenario's controller-side (possibly wrong) turning ratios.
    #[default]
    Believed,
    /// The true turning ratios used by the simulator.
    True,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerConfig {
    /// GPA with every clearance phase in each cycle.
    GpaFull { gpa: GpaParams, min_green: f64 },
    /// GPA that only activates phases with `ν_i > 0`.
    GpaShorted { gpa: GpaParams, min_green: f64 },
    MaxPressure { duration: f64, routing: RoutingSource },
    FixedTime { durations: Vec<f64> },
    /// `κ = 0` allocation over a fixed cycle length.
    PropFair { cycle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControllerKind {
    GpaFull,
    GpaShorted,
    MaxPressure,
    FixedTime,
    PropFair,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::GpaFull,
        ControllerKind::GpaShorted,
        ControllerKind::MaxPressure,
        ControllerKind::FixedTime,
        ControllerKind::PropFair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::GpaFull => "gpa-full",
            ControllerKind::GpaShorted => "gpa-shorted",
            ControllerKind::MaxPressure => "max-pressure",
            ControllerKind::FixedTime => "fixed-time",
            ControllerKind::PropFair => "prop-fair",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ControllerConfig {
    pub fn gpa_full(kappa: f64, w_bar: f64) -> Result<Self, ControlError> {
        Ok(Self::GpaFull { gpa: GpaParams::new(kappa, w_bar)?, min_green: 0.0 })
    }

    pub fn gpa_shorted(kappa: f64, w_bar: f64) -> Result<Self, ControlError> {
        Ok(Self::GpaShorted { gpa: GpaParams::new(kappa, w_bar)?, min_green: 0.0 })
    }

    pub fn max_pressure(duration: f64) -> Self {
        Self::MaxPressure { duration, routing: RoutingSource::Believed }
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            ControllerConfig::GpaFull { .. } => ControllerKind::GpaFull,
            ControllerConfig::GpaShorted { .. } => ControllerKind::GpaShorted,
            ControllerConfig::MaxPressure { .. } => ControllerKind::MaxPressure,
            ControllerConfig::FixedTime { .. } => ControllerKind::FixedTime,
            ControllerConfig::PropFair { .. } => ControllerKind::PropFair,
        }
    }

    pub fn needs_downstream(&self) -> bool {
        matches!(self, ControllerConfig::MaxPressure { .. })
    }

    /// Compact `key=value` description, stable across runs.
    pub fn params_label(&self) -> String {
        match self {
            ControllerConfig::GpaFull { gpa, min_green } | ControllerConfig::GpaShorted { gpa, min_green } => {
                let mut s = format!("kappa={};w_bar={}", gpa.kappa, gpa.w_bar);
                if *min_green > 0.0 {
                    s.push_str(&format!(";min_green={min_green}"));
                }
                s
            }
            ControllerConfig::MaxPressure { duration, routing } => match routing {
                RoutingSource::Believed => format!("d={duration}"),
                RoutingSource::True => format!("d={duration};routing=true"),
            },
            ControllerConfig::FixedTime { durations } => format!(
                "durations={}",
                durations.iter().map(f64::to_string).collect::<Vec<_>>().join("/")
            ),
            ControllerConfig::PropFair { cycle } => format!("cycle={cycle}"),
        }
    }

    /// Check the configuration against the junction it will drive.
    pub fn validate_for(&self, junction: &Junction) -> Result<(), ControlError> {
        let n_p = junction.n_phases();
        match self {
            ControllerConfig::GpaFull { gpa, min_green } | ControllerConfig::GpaShorted { gpa, min_green } => {
                gpa.validate()?;
                if !(*min_green >= 0.0) {
                    return Err(ControlError::Config(format!("min_green must be >= 0, got {min_green}")));
                }
            }
            ControllerConfig::MaxPressure { duration, .. } => {
                if !(*duration > 0.0 && duration.is_finite()) {
                    return Err(ControlError::Config(format!("phase duration d must be > 0, got {duration}")));
                }
            }
            ControllerConfig::FixedTime { durations } => {
                if durations.len() != n_p {
                    return Err(ControlError::Config(format!(
                        "junction {}: {} fixed-time durations for {} phases",
                        junction.id,
                        durations.len(),
                        n_p
                    )));
                }
                if durations.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
                    return Err(ControlError::Config("fixed-time durations must be >= 0".into()));
                }
            }
            ControllerConfig::PropFair { cycle } => {
                let floor = n_p as f64 * junction.clearance;
                if !(*cycle > floor && cycle.is_finite()) {
                    return Err(ControlError::Config(format!(
                        "junction {}: prop-fair cycle {cycle} must exceed n_p*T_w = {floor}",
                        junction.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Compute the next program. `believed` and `truth` are the controller-side
    /// and simulator routing matrices; only MaxPressure reads either.
    pub fn program(
        &self,
        measurement: &Measurement,
        junction: &Junction,
        believed: &RoutingMatrix,
        truth: &RoutingMatrix,
    ) -> Result<SignalProgram, ControlError> {
        match self {
            ControllerConfig::GpaFull { gpa, min_green } => {
                gpa_full_program(measurement, junction, gpa, *min_green)
            }
            ControllerConfig::GpaShorted { gpa, min_green } => {
                gpa_shorted_program(measurement, junction, gpa, *min_green)
            }
            ControllerConfig::MaxPressure { duration, routing } => {
                let r = match routing {
                    RoutingSource::Believed => believed,
                    RoutingSource::True => truth,
                };
                maxpressure_program(measurement, junction, *duration, r)
            }
            ControllerConfig::FixedTime { durations } => {
                fixed_time_program(measurement.t, junction, durations)
            }
            ControllerConfig::PropFair { cycle } => prop_fair_program(measurement, junction, *cycle),
        }
    }
}

/// What a controller is allowed to see at decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub junction: JunctionId,
    pub t: f64,
    /// Sensor-saturated queue per local lane, in junction lane order.
    pub x_hat: Vec<f64>,
    /// Sensor-saturated queues of lanes one hop downstream (MaxPressure only).
    pub downstream: BTreeMap<LaneId, f64>,
}

impl Measurement {
    pub fn local(junction: JunctionId, t: f64, x_hat: Vec<f64>) -> Self {
        Self { junction, t, x_hat, downstream: BTreeMap::new() }
    }

    fn check(&self, junction: &Junction) -> Result<(), ControlError> {
        if self.x_hat.len() != junction.lanes.len() {
            return Err(ControlError::MeasurementShape {
                expected: junction.lanes.len(),
                got: self.x_hat.len(),
            });
        }
        Ok(())
    }
}

/// Green phase followed by its clearance, in the given order.
fn lay_out(
    start: f64,
    greens: impl IntoIterator<Item = (usize, f64)>,
    clearance: f64,
) -> Result<SignalProgram, ControlError> {
    let mut t = start;
    let mut entries = Vec::new();
    for (phase, green) in greens {
        t += green;
        entries.push((PhaseRef::Green(phase), t));
        t += clearance;
        entries.push((PhaseRef::Clearance(phase), t));
    }
    Ok(SignalProgram::new(start, entries)?)
}

fn allocate(
    measurement: &Measurement,
    junction: &Junction,
    gpa: &GpaParams,
) -> Result<Allocation, ControlError> {
    measurement.check(junction)?;
    Ok(gpa::solve_gpa(&measurement.x_hat, &junction.phases, gpa)?)
}

/// GPA with full clearance cycles: every phase `i` runs for `ν_i·T_cyc`
/// followed by its clearance, with `T_cyc = n_p·T_w/w`.
pub fn gpa_full_program(
    measurement: &Measurement,
    junction: &Junction,
    gpa: &GpaParams,
    min_green: f64,
) -> Result<SignalProgram, ControlError> {
    let alloc = allocate(measurement, junction, gpa)?;
    let cycle = gpa::cycle_length(&alloc, junction.n_phases(), junction.clearance)?;
    let greens = alloc.nu.iter().enumerate().map(|(i, &nu)| {
        let g = nu * cycle;
        (i, if nu > ACTIVE_PHASE_THRESHOLD { g.max(min_green) } else { g })
    });
    lay_out(measurement.t, greens, junction.clearance)
}

/// GPA with shorted cycles: only phases with `ν_i > 0` run, and the cycle is
/// `n′_p·T_w/w`. An empty junction holds the first clearance phase for one
/// second.
pub fn gpa_shorted_program(
    measurement: &Measurement,
    junction: &Junction,
    gpa: &GpaParams,
    min_green: f64,
) -> Result<SignalProgram, ControlError> {
    let alloc = allocate(measurement, junction, gpa)?;
    let active = alloc.active_phases(ACTIVE_PHASE_THRESHOLD);
    if active == 0 {
        let t = measurement.t;
        return Ok(SignalProgram::new(t, vec![(PhaseRef::Clearance(0), t + IDLE_HOLD_SECONDS)])?);
    }
    let cycle = gpa::cycle_length(&alloc, active, junction.clearance)?;
    let greens = alloc
        .nu
        .iter()
        .enumerate()
        .filter(|(_, &nu)| nu > ACTIVE_PHASE_THRESHOLD)
        .map(|(i, &nu)| (i, (nu * cycle).max(min_green)));
    lay_out(measurement.t, greens, junction.clearance)
}

/// Signed pressure `Σ_{l∈phase} (x_l − Σ_k R_lk x_k)` of one phase, using
/// measured local and downstream queues. Flow leaving the network (row
/// deficit) carries no downstream term.
pub fn pressure(
    junction: &Junction,
    phase: usize,
    measurement: &Measurement,
    routing: &RoutingMatrix,
) -> Result<f64, ControlError> {
    let mut total = 0.0;
    for local in junction.phases.lanes_of(phase) {
        let lane = junction.lanes[local];
        let row = routing.row(lane).ok_or(ControlError::MissingRouting(lane))?;
        let mut downstream = 0.0;
        for &(k, r) in row {
            let xk = measurement
                .downstream
                .get(&k)
                .ok_or(ControlError::MissingDownstream(k))?;
            downstream += r * xk;
        }
        total += measurement.x_hat[local] - downstream;
    }
    Ok(total)
}

/// MaxPressure: hold the highest-pressure phase for `duration` seconds, then
/// its clearance. Ties go to the lowest phase index.
pub fn maxpressure_program(
    measurement: &Measurement,
    junction: &Junction,
    duration: f64,
    routing: &RoutingMatrix,
) -> Result<SignalProgram, ControlError> {
    measurement.check(junction)?;
    let mut best = (0, f64::NEG_INFINITY);
    for phase in 0..junction.n_phases() {
        let p = pressure(junction, phase, measurement, routing)?;
        if p > best.1 {
            best = (phase, p);
        }
    }
    lay_out(measurement.t, [(best.0, duration)], junction.clearance)
}

/// Fixed-time plan: every phase for its configured green, ignoring queues.
pub fn fixed_time_program(t: f64, junction: &Junction, durations: &[f64]) -> Result<SignalProgram, ControlError> {
    if durations.len() != junction.n_phases() {
        return Err(ControlError::Config(format!(
            "{} durations for {} phases",
            durations.len(),
            junction.n_phases()
        )));
    }
    lay_out(t, durations.iter().copied().enumerate(), junction.clearance)
}

/// Green durations of the proportional-fair baseline: the budget
/// `cycle − n_p·T_w` is split by the `κ = 0` allocation, or equally when
/// nothing is queued.
pub fn prop_fair_greens(
    measurement: &Measurement,
    junction: &Junction,
    cycle: f64,
) -> Result<Vec<f64>, ControlError> {
    measurement.check(junction)?;
    let n_p = junction.n_phases();
    let budget = cycle - n_p as f64 * junction.clearance;
    if !(budget > 0.0) {
        return Err(ControlError::Config(format!(
            "prop-fair cycle {cycle} leaves no green time"
        )));
    }
    let split = gpa::proportional_share(&measurement.x_hat, &junction.phases)?;
    if split.mu.iter().all(|&m| m == 0.0) {
        return Ok(vec![budget / n_p as f64; n_p]);
    }
    Ok(split.mu.iter().map(|&m| m * budget).collect())
}

pub fn prop_fair_program(
    measurement: &Measurement,
    junction: &Junction,
    cycle: f64,
) -> Result<SignalProgram, ControlError> {
    let greens = prop_fair_greens(measurement, junction, cycle)?;
    lay_out(measurement.t, greens.into_iter().enumerate(), junction.clearance)
}
