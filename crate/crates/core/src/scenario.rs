//! Reproducible experiments: builders, turning-ratio compilation and the
//! scenario file format.
//!
//! A scenario file is TOML preceded by a version header line:
//!
//! ```text
//! # signal-lab scenario v1
//! name = "example"
//! mode = "fluid"
//! horizon = 3600.0
//! step = 1.0
//!
//! [demand]
//! rate = 0.05
//! generation_horizon = 3600.0
//!
//! [service]
//! saturation_rate = 1.0
//! vehicle_length = 7.5
//!
//! [controller]
//! variant = "gpa-shorted"
//! kappa = 10.0
//! w_bar = 0.0
//!
//! [[lanes]]
//! id = 0
//! junction = 0
//! arrival_weight = 1.0
//!
//! [[junctions]]
//! id = 0
//! lanes = [0]
//! phases = [[1]]
//! clearance = 5.0
//!
//! [[routing]]
//! from = 0
//! to = [1]
//! p = [0.5]
//! ```
//!
//! Unknown keys are rejected. `[[controller_override]]` tables (same keys as
//! `[controller]` plus `junction`) replace the controller of one junction, and
//! `[[controller_routing]]` rows, when present, give the turning ratios
//! MaxPressure believes in place of the true `[[routing]]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controllers::{ControllerConfig, ControllerKind, RoutingSource};
use crate::gpa::GpaParams;
use crate::signal::{validate_network, Junction, JunctionId, Lane, LaneId, Network, PhaseMatrix, RoutingMatrix};
use crate::sim::{DemandModel, ServiceDiscipline, ServiceModel, SimMode};

pub const FORMAT_HEADER: &str = "# signal-lab scenario v1";

/// Sensor reach on every Manhattan approach, in meters.
pub const SENSOR_RANGE_M: f64 = 50.0;

/// Clearance time used by the Manhattan generator.
pub const MANHATTAN_CLEARANCE: f64 = 5.0;

/// Fixed-time greens for {NS through+right, NS left, EW through+right, EW left}.
pub const MANHATTAN_FIXED_TIME: [f64; 4] = [30.0, 15.0, 30.0, 15.0];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line 1: expected header `{FORMAT_HEADER}`, found `{found}`")]
    Header { found: String },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{0}")]
    Build(String),
}

/// Turning probabilities at a junction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnSpec {
    pub p_left: f64,
    pub p_straight: f64,
    pub p_right: f64,
}

impl Default for TurnSpec {
    fn default() -> Self {
        Self { p_left: 0.2, p_straight: 0.6, p_right: 0.2 }
    }
}

impl TurnSpec {
    pub fn new(p_left: f64, p_straight: f64, p_right: f64) -> Result<Self, ScenarioError> {
        let spec = Self { p_left, p_straight, p_right };
        let ps = [p_left, p_straight, p_right];
        if ps.iter().any(|p| !(*p >= 0.0)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ScenarioError::Build(format!(
                "turn probabilities must be >= 0 and sum to 1, got {p_left}/{p_straight}/{p_right}"
            )));
        }
        Ok(spec)
    }

    /// The deliberately wrong belief used in robustness runs.
    pub fn wrong() -> Self {
        Self { p_left: 0.1, p_straight: 0.3, p_right: 0.6 }
    }

    /// Shares of an approach's entering flow that queue in the left pocket,
    /// the straight-only lane (two-lane roads) and the shared straight+right
    /// lane. Straight traffic picks between its two lanes so as to equalize
    /// their loads where the split allows it.
    pub fn lane_split(&self, road_lanes: usize) -> [f64; 3] {
        if road_lanes < 2 {
            return [self.p_left, 0.0, self.p_straight + self.p_right];
        }
        let straight_only = ((self.p_straight + self.p_right) / 2.0).min(self.p_straight);
        [self.p_left, straight_only, self.p_straight - straight_only + self.p_right]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    North,
    East,
    South,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::North, Side::East, Side::South, Side::West];

    /// Travel direction of vehicles entering from this side, as `(dr, dc)`.
    fn heading(self) -> (i64, i64) {
        match self {
            Side::North => (1, 0),
            Side::East => (0, -1),
            Side::South => (-1, 0),
            Side::West => (0, 1),
        }
    }

    fn from_heading(h: (i64, i64)) -> Side {
        match h {
            (1, 0) => Side::North,
            (0, -1) => Side::East,
            (-1, 0) => Side::South,
            _ => Side::West,
        }
    }

    fn is_north_south(self) -> bool {
        matches!(self, Side::North | Side::South)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Movement {
    Left,
    Straight,
    Right,
}

/// One incoming approach of a grid junction.
#[derive(Debug, Clone, PartialEq)]
pub struct Approach {
    pub junction: JunctionId,
    pub side: Side,
    /// Lanes per direction on the street this approach belongs to.
    pub road_lanes: usize,
    pub left: LaneId,
    pub straight: Option<LaneId>,
    pub shared: LaneId,
    /// `true` when the approach is fed from outside the grid.
    pub boundary: bool,
}

impl Approach {
    fn lanes(&self) -> [Option<LaneId>; 3] {
        [Some(self.left), self.straight, Some(self.shared)]
    }
}

/// Grid topology kept alongside the network so that routing can be compiled
/// for any turning-ratio assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    /// Indexed by `junction * 4 + side`.
    pub approaches: Vec<Approach>,
    pub n_lanes: usize,
}

/// Lanes per direction of the street with 0-based index `i`.
pub fn street_lanes(i: usize) -> usize {
    if i % 2 == 0 {
        1
    } else {
        2
    }
}

impl GridLayout {
    pub fn new(rows: usize, cols: usize) -> Result<Self, ScenarioError> {
        if rows < 2 || cols < 2 {
            return Err(ScenarioError::Build(format!("grid must be at least 2x2, got {rows}x{cols}")));
        }
        let mut approaches = Vec::with_capacity(rows * cols * 4);
        let mut next = 0;
        for r in 0..rows {
            for c in 0..cols {
                for side in Side::ALL {
                    let road_lanes = if side.is_north_south() { street_lanes(c) } else { street_lanes(r) };
                    let left = next;
                    let straight = (road_lanes == 2).then_some(left + 1);
                    let shared = left + road_lanes;
                    next = shared + 1;
                    let (dr, dc) = side.heading();
                    let up_r = r as i64 - dr;
                    let up_c = c as i64 - dc;
                    let boundary = up_r < 0 || up_c < 0 || up_r >= rows as i64 || up_c >= cols as i64;
                    approaches.push(Approach {
                        junction: r * cols + c,
                        side,
                        road_lanes,
                        left,
                        straight,
                        shared,
                        boundary,
                    });
                }
            }
        }
        Ok(Self { rows, cols, approaches, n_lanes: next })
    }

    pub fn approach(&self, junction: JunctionId, side: Side) -> &Approach {
        &self.approaches[junction * 4 + side as usize]
    }

    /// Approach joined by a vehicle making `movement` from `from`, or `None`
    /// when it leaves the grid.
    pub fn target(&self, from: &Approach, movement: Movement) -> Option<&Approach> {
        let (dr, dc) = from.side.heading();
        let h = match movement {
            Movement::Straight => (dr, dc),
            Movement::Left => (-dc, dr),
            Movement::Right => (dc, -dr),
        };
        let r = (from.junction / self.cols) as i64 + h.0;
        let c = (from.junction % self.cols) as i64 + h.1;
        if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 {
            return None;
        }
        Some(self.approach(r as usize * self.cols + c as usize, Side::from_heading(h)))
    }

    /// The network: four orthogonal phases per junction in the order
    /// NS through+right, NS left, EW through+right, EW left.
    pub fn network(&self, service: &ServiceModel) -> Network {
        let cap = service.sensor_cap(SENSOR_RANGE_M);
        let n_j = self.rows * self.cols;
        let lanes = (0..self.n_lanes)
            .map(|id| Lane { sensor_cap: Some(cap), ..Lane::new(id, None) })
            .collect::<Vec<_>>();
        let mut net = Network { lanes, junctions: Vec::with_capacity(n_j) };
        for j in 0..n_j {
            let mut local = Vec::new();
            let mut sets: [Vec<usize>; 4] = Default::default();
            for side in Side::ALL {
                let a = self.approach(j, side);
                let base = if side.is_north_south() { 0 } else { 2 };
                for (slot, lane) in a.lanes().into_iter().enumerate() {
                    let Some(lane) = lane else { continue };
                    let phase = if slot == 0 { base + 1 } else { base };
                    sets[phase].push(local.len());
                    local.push(lane);
                    net.lanes[lane].junction = Some(j);
                }
            }
            let set_refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
            let phases = PhaseMatrix::from_sets(local.len(), &set_refs).expect("grid phase sets are in range");
            net.junctions.push(Junction { id: j, lanes: local, phases, clearance: MANHATTAN_CLEARANCE });
        }
        net
    }

    /// Per-lane arrival weights: each road lane entering the grid feeds one
    /// unit of the base rate, spread over the approach's lanes by lane choice.
    pub fn arrival_weights(&self, turns: &TurnSpec) -> Vec<f64> {
        let mut w = vec![0.0; self.n_lanes];
        for a in self.approaches.iter().filter(|a| a.boundary) {
            let split = turns.lane_split(a.road_lanes);
            for (lane, share) in a.lanes().into_iter().zip(split) {
                if let Some(lane) = lane {
                    w[lane] += a.road_lanes as f64 * share;
                }
            }
        }
        w
    }
}

/// Compile turning probabilities into a lane-to-lane routing matrix over the
/// grid. Rows leaving the grid keep the exiting mass as their deficit.
pub fn derive_routing(layout: &GridLayout, turns: &TurnSpec) -> RoutingMatrix {
    let mut rows = vec![Vec::new(); layout.n_lanes];
    for a in &layout.approaches {
        let split = turns.lane_split(a.road_lanes);
        let shared_straight = split[2] - turns.p_right;
        let shared_total = split[2];
        let shared_mix = if shared_total > 0.0 {
            vec![(Movement::Straight, shared_straight / shared_total), (Movement::Right, turns.p_right / shared_total)]
        } else {
            vec![(Movement::Straight, 1.0)]
        };
        let mut lane_moves = vec![(a.left, vec![(Movement::Left, 1.0)]), (a.shared, shared_mix)];
        if let Some(s) = a.straight {
            lane_moves.push((s, vec![(Movement::Straight, 1.0)]));
        }
        for (lane, moves) in lane_moves {
            let mut acc: BTreeMap<LaneId, f64> = BTreeMap::new();
            for (m, pm) in moves {
                let Some(t) = layout.target(a, m) else { continue };
                let tsplit = turns.lane_split(t.road_lanes);
                for (k, share) in t.lanes().into_iter().zip(tsplit) {
                    if let Some(k) = k {
                        *acc.entry(k).or_insert(0.0) += pm * share;
                    }
                }
            }
            rows[lane] = acc.into_iter().collect();
        }
    }
    RoutingMatrix::from_rows(rows)
}

/// Build options for [`build_manhattan_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanOptions {
    pub rows: usize,
    pub cols: usize,
    pub delta: f64,
    pub turns: TurnSpec,
    /// Turning ratios the controllers believe; defaults to `turns`.
    pub believed_turns: Option<TurnSpec>,
    pub mode: SimMode,
    pub generation_horizon: f64,
    pub controller: ControllerConfig,
}

impl Default for ManhattanOptions {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            delta: 0.05,
            turns: TurnSpec::default(),
            believed_turns: None,
            mode: SimMode::Stochastic,
            generation_horizon: 3600.0,
            controller: ControllerConfig::GpaShorted {
                gpa: GpaParams { kappa: 10.0, w_bar: 0.0 },
                min_green: 0.0,
            },
        }
    }
}

/// Manhattan grid with default options apart from size, demand and turns.
pub fn build_manhattan(rows: usize, cols: usize, delta: f64, turns: TurnSpec) -> Result<Scenario, ScenarioError> {
    build_manhattan_with(&ManhattanOptions { rows, cols, delta, turns, ..Default::default() })
}

pub fn build_manhattan_with(opts: &ManhattanOptions) -> Result<Scenario, ScenarioError> {
    let layout = GridLayout::new(opts.rows, opts.cols)?;
    let service = ServiceModel::default();
    let mut network = layout.network(&service);
    for (lane, w) in network.lanes.iter_mut().zip(layout.arrival_weights(&opts.turns)) {
        lane.arrival_weight = w;
    }
    let routing = derive_routing(&layout, &opts.turns);
    let controller_routing = match &opts.believed_turns {
        Some(b) => derive_routing(&layout, b),
        None => routing.clone(),
    };
    let n = network.lanes.len();
    let scenario = Scenario {
        name: format!("manhattan-{}x{}", opts.rows, opts.cols),
        mode: opts.mode,
        network,
        routing,
        controller_routing,
        demand: DemandModel { rate: opts.delta, generation_horizon: opts.generation_horizon },
        service,
        controller: opts.controller.clone(),
        overrides: BTreeMap::new(),
        initial_queue: vec![0.0; n],
        horizon: opts.generation_horizon,
        hard_cap: None,
        step: 1.0,
    };
    scenario.check()?;
    Ok(scenario)
}

/// Two lanes, two single-lane phases, fluid arrivals `lambda` on each lane,
/// initial queue `(a, 0)`, driven by shorted-cycle GPA. Service follows the
/// cycle-averaged discipline.
pub fn build_isolated_junction(
    lambda: f64,
    kappa: f64,
    clearance: f64,
    w_bar: f64,
    a: f64,
) -> Result<Scenario, ScenarioError> {
    let controller = ControllerConfig::GpaShorted {
        gpa: GpaParams { kappa, w_bar },
        min_green: 0.0,
    };
    let lanes = (0..2)
        .map(|id| Lane { arrival_weight: 1.0, ..Lane::new(id, Some(0)) })
        .collect();
    let network = Network {
        lanes,
        junctions: vec![Junction { id: 0, lanes: vec![0, 1], phases: PhaseMatrix::identity(2), clearance }],
    };
    let scenario = Scenario {
        name: "isolated-junction".into(),
        mode: SimMode::Fluid,
        network,
        routing: RoutingMatrix::empty(2),
        controller_routing: RoutingMatrix::empty(2),
        demand: DemandModel { rate: lambda, generation_horizon: f64::INFINITY },
        service: ServiceModel { discipline: ServiceDiscipline::Averaged, ..ServiceModel::default() },
        controller,
        overrides: BTreeMap::new(),
        initial_queue: vec![a, 0.0],
        horizon: 1000.0,
        hard_cap: None,
        step: 1.0,
    };
    scenario.check()?;
    Ok(scenario)
}

/// A complete, reproducible experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub mode: SimMode,
    pub network: Network,
    /// True turning ratios used by the simulator.
    pub routing: RoutingMatrix,
    /// Turning ratios MaxPressure believes.
    pub controller_routing: RoutingMatrix,
    pub demand: DemandModel,
    pub service: ServiceModel,
    /// Controller used by every junction without an override.
    pub controller: ControllerConfig,
    pub overrides: BTreeMap<JunctionId, ControllerConfig>,
    pub initial_queue: Vec<f64>,
    /// Reference horizon; the hard cap defaults to ten times this.
    pub horizon: f64,
    pub hard_cap: Option<f64>,
    pub step: f64,
}

impl Scenario {
    pub fn controller_for(&self, junction: JunctionId) -> &ControllerConfig {
        self.overrides.get(&junction).unwrap_or(&self.controller)
    }

    pub fn hard_cap(&self) -> f64 {
        self.hard_cap.unwrap_or(10.0 * self.horizon)
    }

    /// Replace every junction's controller.
    pub fn with_controller(&self, controller: ControllerConfig) -> Self {
        Self { controller, overrides: BTreeMap::new(), ..self.clone() }
    }

    /// Human-readable list of every problem; empty when the scenario is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut report: Vec<String> = validate_network(&self.network, Some(&self.routing))
            .into_iter()
            .map(|v| v.to_string())
            .collect();
        let n = self.network.lanes.len();
        if self.controller_routing.n_lanes() != n {
            report.push(format!(
                "controller routing has {} rows for {n} lanes",
                self.controller_routing.n_lanes()
            ));
        } else {
            report.extend(
                validate_network(&self.network, Some(&self.controller_routing))
                    .into_iter()
                    .filter(|v| matches!(v, crate::signal::Violation::RoutingEntry { .. } | crate::signal::Violation::RowSumAboveOne { .. }))
                    .map(|v| format!("controller routing: {v}")),
            );
        }
        let d = &self.demand;
        if !(d.rate >= 0.0 && d.rate.is_finite()) {
            report.push(format!("demand rate must be finite and >= 0, got {}", d.rate));
        }
        if !(d.generation_horizon >= 0.0) {
            report.push(format!("generation horizon must be >= 0, got {}", d.generation_horizon));
        }
        if !(self.service.saturation_rate > 0.0 && self.service.saturation_rate.is_finite()) {
            report.push(format!("saturation rate must be > 0, got {}", self.service.saturation_rate));
        }
        if !(self.service.vehicle_length > 0.0) {
            report.push(format!("vehicle length must be > 0, got {}", self.service.vehicle_length));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            report.push(format!("horizon must be finite and > 0, got {}", self.horizon));
        }
        if let Some(cap) = self.hard_cap {
            if !(cap > 0.0 && cap.is_finite()) {
                report.push(format!("hard cap must be finite and > 0, got {cap}"));
            }
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            report.push(format!("step must be > 0, got {}", self.step));
        }
        if self.initial_queue.len() != n {
            report.push(format!("initial queue has {} entries for {n} lanes", self.initial_queue.len()));
        }
        for (l, &q) in self.initial_queue.iter().enumerate() {
            if !(q >= 0.0 && q.is_finite()) {
                report.push(format!("lane {l}: initial queue must be >= 0, got {q}"));
            } else if self.mode == SimMode::Stochastic && q.fract() != 0.0 {
                report.push(format!("lane {l}: stochastic mode needs an integer initial queue, got {q}"));
            }
        }
        if self.mode == SimMode::Stochastic {
            for lane in &self.network.lanes {
                let p = lane.arrival_weight * d.rate * self.step;
                if p > 1.0 {
                    report.push(format!("lane {}: arrival probability {p} per step exceeds 1", lane.id));
                }
            }
        }
        for j in &self.network.junctions {
            if let Err(e) = self.controller_for(j.id).validate_for(j) {
                report.push(format!("junction {}: {e}", j.id));
            }
        }
        for &j in self.overrides.keys() {
            if j >= self.network.junctions.len() {
                report.push(format!("controller override for unknown junction {j}"));
            }
        }
        report
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(report))
        }
    }

    /// Serialize to the scenario file format.
    pub fn to_text(&self) -> String {
        let file = ScenarioFile::from(self);
        let body = toml::to_string(&file).expect("scenario DTO is always serializable");
        format!("{FORMAT_HEADER}\n{body}")
    }

    /// SHA-256 of the serialized scenario, lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut s = String::with_capacity(64);
        for b in digest {
            write!(s, "{b:02x}").unwrap();
        }
        s
    }
}

/// Parse and validate a scenario file.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let first = text.lines().next().unwrap_or("").trim_end();
    if first != FORMAT_HEADER {
        return Err(ScenarioError::Header { found: first.to_string() });
    }
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ScenarioError::Parse { line, column, message: e.message().to_string() }
    })?;
    let scenario = file.into_scenario()?;
    scenario.check()?;
    Ok(scenario)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parse a compact controller spec such as `gpa-shorted:kappa=10` or
/// `fixed-time:durations=30/15/30/15`.
pub fn parse_controller_spec(spec: &str) -> Result<ControllerConfig, ScenarioError> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut dto = ControllerDto { variant: name.trim().to_string(), ..Default::default() };
    let bad = |msg: String| ScenarioError::Build(format!("controller spec `{spec}`: {msg}"));
    for kv in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{kv}`")))?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad(format!("`{k}` is not a number: `{v}`")));
        match k.trim() {
            "kappa" => dto.kappa = Some(num(v)?),
            "w_bar" => dto.w_bar = Some(num(v)?),
            "min_green" => dto.min_green = Some(num(v)?),
            "d" => dto.d = Some(num(v)?),
            "cycle" => dto.cycle = Some(num(v)?),
            "routing" => dto.routing = Some(v.trim().to_string()),
            "durations" => dto.durations = Some(v.split('/').map(num).collect::<Result<_, _>>()?),
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    dto.to_config().map_err(bad)
}

// ---- file DTOs ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerDto {
    variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    junction: Option<JunctionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_green: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    routing: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    durations: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cycle: Option<f64>,
}

impl ControllerDto {
    fn from_config(c: &ControllerConfig, junction: Option<JunctionId>) -> Self {
        let mut dto = Self { variant: c.kind().name().to_string(), junction, ..Default::default() };
        match c {
            ControllerConfig::GpaFull { gpa, min_green } | ControllerConfig::GpaShorted { gpa, min_green } => {
                dto.kappa = Some(gpa.kappa);
                dto.w_bar = Some(gpa.w_bar);
                dto.min_green = (*min_green != 0.0).then_some(*min_green);
            }
            ControllerConfig::MaxPressure { duration, routing } => {
                dto.d = Some(*duration);
                if *routing == RoutingSource::True {
                    dto.routing = Some("true".into());
                }
            }
            ControllerConfig::FixedTime { durations } => dto.durations = Some(durations.clone()),
            ControllerConfig::PropFair { cycle } => dto.cycle = Some(*cycle),
        }
        dto
    }

    fn to_config(&self) -> Result<ControllerConfig, String> {
        let kind = ControllerKind::from_name(&self.variant).ok_or_else(|| {
            let names: Vec<_> = ControllerKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown controller `{}` (expected one of {})", self.variant, names.join(", "))
        })?;
        let allowed: &[&str] = match kind {
            ControllerKind::GpaFull | ControllerKind::GpaShorted => &["kappa", "w_bar", "min_green"],
            ControllerKind::MaxPressure => &["d", "routing"],
            ControllerKind::FixedTime => &["durations"],
            ControllerKind::PropFair => &["cycle"],
        };
        let present = [
            ("kappa", self.kappa.is_some()),
            ("w_bar", self.w_bar.is_some()),
            ("min_green", self.min_green.is_some()),
            ("d", self.d.is_some()),
            ("routing", self.routing.is_some()),
            ("durations", self.durations.is_some()),
            ("cycle", self.cycle.is_some()),
        ];
        if let Some((k, _)) = present.iter().find(|(k, p)| *p && !allowed.contains(k)) {
            return Err(format!("`{k}` does not apply to {}", kind.name()));
        }
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| format!("{} requires `{k}`", kind.name()));
        Ok(match kind {
            ControllerKind::GpaFull | ControllerKind::GpaShorted => {
                let gpa = GpaParams { kappa: need(self.kappa, "kappa")?, w_bar: self.w_bar.unwrap_or(0.0) };
                let min_green = self.min_green.unwrap_or(0.0);
                if kind == ControllerKind::GpaFull {
                    ControllerConfig::GpaFull { gpa, min_green }
                } else {
                    ControllerConfig::GpaShorted { gpa, min_green }
                }
            }
            ControllerKind::MaxPressure => ControllerConfig::MaxPressure {
                duration: need(self.d, "d")?,
                routing: match self.routing.as_deref() {
                    None | Some("believed") => RoutingSource::Believed,
                    Some("true") => RoutingSource::True,
                    Some(other) => return Err(format!("routing must be `believed` or `true`, got `{other}`")),
                },
            },
            ControllerKind::FixedTime => ControllerConfig::FixedTime {
                durations: self.durations.clone().ok_or("fixed-time requires `durations`")?,
            },
            ControllerKind::PropFair => ControllerConfig::PropFair { cycle: need(self.cycle, "cycle")? },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneDto {
    id: LaneId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    junction: Option<JunctionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensor_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    arrival_weight: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    initial_queue: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0 && v.is_sign_positive()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JunctionDto {
    id: JunctionId,
    lanes: Vec<LaneId>,
    phases: Vec<Vec<u8>>,
    clearance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoutingRowDto {
    from: LaneId,
    to: Vec<LaneId>,
    p: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    mode: SimMode,
    horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hard_cap: Option<f64>,
    step: f64,
    demand: DemandModel,
    service: ServiceModel,
    controller: ControllerDto,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    controller_override: Vec<ControllerDto>,
    lanes: Vec<LaneDto>,
    junctions: Vec<JunctionDto>,
    #[serde(default)]
    routing: Vec<RoutingRowDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    controller_routing: Option<Vec<RoutingRowDto>>,
}

fn routing_rows(r: &RoutingMatrix) -> Vec<RoutingRowDto> {
    r.rows()
        .iter()
        .enumerate()
        .filter(|(_, row)| !row.is_empty())
        .map(|(from, row)| RoutingRowDto {
            from,
            to: row.iter().map(|&(k, _)| k).collect(),
            p: row.iter().map(|&(_, p)| p).collect(),
        })
        .collect()
}

fn routing_matrix(rows: &[RoutingRowDto], n: usize, what: &str) -> Result<RoutingMatrix, Vec<String>> {
    let mut m = RoutingMatrix::empty(n);
    let mut errs = Vec::new();
    let mut seen = vec![false; n];
    for row in rows {
        if row.from >= n {
            errs.push(format!("{what} row from unknown lane {}", row.from));
            continue;
        }
        if seen[row.from] {
            errs.push(format!("{what}: duplicate row for lane {}", row.from));
        }
        seen[row.from] = true;
        if row.to.len() != row.p.len() {
            errs.push(format!("{what} row for lane {}: {} targets but {} probabilities", row.from, row.to.len(), row.p.len()));
            continue;
        }
        if let Some(k) = row.to.iter().find(|&&k| k >= n) {
            errs.push(format!("{what} row for lane {}: unknown target lane {k}", row.from));
            continue;
        }
        m.set_row(row.from, row.to.iter().copied().zip(row.p.iter().copied()).collect());
    }
    if errs.is_empty() {
        Ok(m)
    } else {
        Err(errs)
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        Self {
            name: s.name.clone(),
            mode: s.mode,
            horizon: s.horizon,
            hard_cap: s.hard_cap,
            step: s.step,
            demand: s.demand,
            service: s.service,
            controller: ControllerDto::from_config(&s.controller, None),
            controller_override: s
                .overrides
                .iter()
                .map(|(&j, c)| ControllerDto::from_config(c, Some(j)))
                .collect(),
            lanes: s
                .network
                .lanes
                .iter()
                .map(|l| LaneDto {
                    id: l.id,
                    junction: l.junction,
                    sensor_cap: l.sensor_cap,
                    capacity: l.capacity,
                    arrival_weight: l.arrival_weight,
                    initial_queue: s.initial_queue.get(l.id).copied().unwrap_or(0.0),
                })
                .collect(),
            junctions: s
                .network
                .junctions
                .iter()
                .map(|j| JunctionDto {
                    id: j.id,
                    lanes: j.lanes.clone(),
                    phases: j.phases.clone().into(),
                    clearance: j.clearance,
                })
                .collect(),
            routing: routing_rows(&s.routing),
            controller_routing: (s.controller_routing != s.routing).then(|| routing_rows(&s.controller_routing)),
        }
    }
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let mut errs = Vec::new();
        let n_j = self.junctions.len();
        let all: Vec<JunctionId> = (0..n_j).collect();
        let controller = match (self.controller.junction, self.controller.to_config()) {
            (Some(_), _) => {
                errs.push("[controller] applies to every junction; use [[controller_override]] for one".into());
                None
            }
            (None, Ok(c)) => Some(c),
            (None, Err(e)) => {
                errs.push(format!("controller for {}: {e}", junction_list(&all)));
                None
            }
        };
        let mut overrides = BTreeMap::new();
        for dto in &self.controller_override {
            let Some(j) = dto.junction else {
                errs.push("[[controller_override]] needs `junction`".into());
                continue;
            };
            match dto.to_config() {
                Ok(c) => {
                    if overrides.insert(j, c).is_some() {
                        errs.push(format!("junction {j}: duplicate controller override"));
                    }
                }
                Err(e) => errs.push(format!("controller for junction {j}: {e}")),
            }
        }
        let n = self.lanes.len();
        let mut lanes = Vec::with_capacity(n);
        let mut initial_queue = Vec::with_capacity(n);
        for l in self.lanes {
            initial_queue.push(l.initial_queue);
            lanes.push(Lane {
                id: l.id,
                junction: l.junction,
                sensor_cap: l.sensor_cap,
                capacity: l.capacity,
                arrival_weight: l.arrival_weight,
            });
        }
        let mut junctions = Vec::with_capacity(n_j);
        for j in self.junctions {
            match PhaseMatrix::try_from(j.phases) {
                Ok(phases) => junctions.push(Junction { id: j.id, lanes: j.lanes, phases, clearance: j.clearance }),
                Err(e) => errs.push(format!("junction {}: {e}", j.id)),
            }
        }
        let routing = routing_matrix(&self.routing, n, "routing").map_err(|e| errs.extend(e)).ok();
        let controller_routing = match &self.controller_routing {
            Some(rows) => routing_matrix(rows, n, "controller_routing").map_err(|e| errs.extend(e)).ok(),
            None => routing.clone(),
        };
        if !errs.is_empty() {
            return Err(ScenarioError::Invalid(errs));
        }
        Ok(Scenario {
            name: self.name,
            mode: self.mode,
            network: Network { lanes, junctions },
            routing: routing.unwrap(),
            controller_routing: controller_routing.unwrap(),
            demand: self.demand,
            service: self.service,
            controller: controller.unwrap(),
            overrides,
            initial_queue,
            horizon: self.horizon,
            hard_cap: self.hard_cap,
            step: self.step,
        })
    }
}

fn junction_list(ids: &[JunctionId]) -> String {
    match ids {
        [] => "no junctions".into(),
        [j] => format!("junction {j}"),
        _ => format!(
            "junctions {}",
            ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        ),
    }
}
