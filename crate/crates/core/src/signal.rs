//! Static plant description: lanes, junctions, phase matrices, routing, and
//! the signal programs controllers hand to the simulator.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense lane index within one network.
pub type LaneId = usize;
/// Dense junction index within one network.
pub type JunctionId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("signal program expired at t={t} (ends at {end})")]
    ProgramExpired { t: f64, end: f64 },
    #[error("signal program is empty")]
    EmptyProgram,
    #[error("signal program entries out of order at index {index}")]
    OutOfOrder { index: usize },
    #[error("phase matrix rows have inconsistent lengths")]
    RaggedPhaseMatrix,
}

/// An incoming lane on which vehicles queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    /// Owning junction, `None` for unsignalized stubs.
    pub junction: Option<JunctionId>,
    /// Largest queue the sensor can report; `None` means unbounded.
    pub sensor_cap: Option<f64>,
    /// Physical storage in vehicles; `None` means unbounded.
    pub capacity: Option<f64>,
    /// Exogenous demand in units of the scenario's base rate. The lane's
    /// arrival rate in vehicles/second is `arrival_weight * demand.rate`.
    pub arrival_weight: f64,
}

impl Lane {
    pub fn new(id: LaneId, junction: Option<JunctionId>) -> Self {
        Self {
            id,
            junction,
            sensor_cap: None,
            capacity: None,
            arrival_weight: 0.0,
        }
    }

    /// Saturating sensor reading of a true queue length.
    pub fn sense(&self, queue: f64) -> f64 {
        match self.sensor_cap {
            Some(cap) => queue.min(cap),
            None => queue,
        }
    }
}

/// Binary phase matrix: rows are phases, columns are the junction's lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct PhaseMatrix {
    rows: Vec<Vec<bool>>,
    n_lanes: usize,
}

impl PhaseMatrix {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self, SignalError> {
        let n_lanes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_lanes) {
            return Err(SignalError::RaggedPhaseMatrix);
        }
        Ok(Self { rows, n_lanes })
    }

    pub fn from_sets(n_lanes: usize, phases: &[&[usize]]) -> Result<Self, SignalError> {
        let rows = phases
            .iter()
            .map(|set| (0..n_lanes).map(|l| set.contains(&l)).collect())
            .collect();
        Self::new(rows)
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n).map(|i| (0..n).map(|l| l == i).collect()).collect();
        Self { rows, n_lanes: n }
    }

    pub fn n_phases(&self) -> usize {
        self.rows.len()
    }

    pub fn n_lanes(&self) -> usize {
        self.n_lanes
    }

    pub fn contains(&self, phase: usize, lane: usize) -> bool {
        self.rows[phase][lane]
    }

    pub fn row(&self, phase: usize) -> &[bool] {
        &self.rows[phase]
    }

    /// Local lane indices belonging to `phase`.
    pub fn lanes_of(&self, phase: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[phase]
            .iter()
            .enumerate()
            .filter_map(|(l, &on)| on.then_some(l))
    }

    /// Number of phases covering each lane.
    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.n_lanes];
        for row in &self.rows {
            for (s, &on) in sums.iter_mut().zip(row) {
                *s += usize::from(on);
            }
        }
        sums
    }

    /// Every lane belongs to exactly one phase.
    pub fn is_orthogonal(&self) -> bool {
        self.column_sums().iter().all(|&s| s == 1)
    }

    /// `P x`: per-phase sum of lane values.
    pub fn phase_sums(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().zip(x).filter(|(&on, _)| on).map(|(_, v)| v).sum())
            .collect()
    }

    /// `Pᵀ ν`: per-lane service share.
    pub fn lane_shares(&self, nu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_lanes];
        for (row, &n) in self.rows.iter().zip(nu) {
            for (o, &on) in out.iter_mut().zip(row) {
                if on {
                    *o += n;
                }
            }
        }
        out
    }

    /// Same matrix with rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        Self {
            rows: perm.iter().map(|&i| self.rows[i].clone()).collect(),
            n_lanes: self.n_lanes,
        }
    }
}

impl TryFrom<Vec<Vec<u8>>> for PhaseMatrix {
    type Error = SignalError;

    fn try_from(value: Vec<Vec<u8>>) -> Result<Self, Self::Error> {
        Self::new(
            value
                .into_iter()
                .map(|r| r.into_iter().map(|b| b != 0).collect())
                .collect(),
        )
    }
}

impl From<PhaseMatrix> for Vec<Vec<u8>> {
    fn from(value: PhaseMatrix) -> Self {
        value
            .rows
            .into_iter()
            .map(|r| r.into_iter().map(u8::from).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: JunctionId,
    /// Incoming lanes, in phase-matrix column order.
    pub lanes: Vec<LaneId>,
    pub phases: PhaseMatrix,
    /// Clearance duration `T_w` in seconds, shared by every phase.
    pub clearance: f64,
}

impl Junction {
    pub fn n_phases(&self) -> usize {
        self.phases.n_phases()
    }

    /// Network lane ids served by `phase`.
    pub fn phase_lanes(&self, phase: usize) -> impl Iterator<Item = LaneId> + '_ {
        self.phases.lanes_of(phase).map(|l| self.lanes[l])
    }
}

/// Sparse nonnegative routing matrix over all lanes. `R[l][k]` is the share of
/// lane `l`'s discharge that joins lane `k`; the row deficit leaves the network.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingMatrix {
    rows: Vec<Vec<(LaneId, f64)>>,
}

impl RoutingMatrix {
    pub fn empty(n_lanes: usize) -> Self {
        Self {
            rows: vec![Vec::new(); n_lanes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<(LaneId, f64)>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.retain(|&(_, p)| p != 0.0);
                r.sort_by_key(|&(k, _)| k);
                r
            })
            .collect();
        Self { rows }
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        Self::from_rows(
            dense
                .iter()
                .map(|r| r.iter().copied().enumerate().collect())
                .collect(),
        )
    }

    pub fn n_lanes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, lane: LaneId) -> Option<&[(LaneId, f64)]> {
        self.rows.get(lane).map(Vec::as_slice)
    }

    pub fn rows(&self) -> &[Vec<(LaneId, f64)>] {
        &self.rows
    }

    pub fn get(&self, from: LaneId, to: LaneId) -> f64 {
        self.rows
            .get(from)
            .and_then(|r| r.iter().find(|&&(k, _)| k == to))
            .map_or(0.0, |&(_, p)| p)
    }

    pub fn row_sum(&self, lane: LaneId) -> f64 {
        self.rows
            .get(lane)
            .map_or(0.0, |r| r.iter().map(|&(_, p)| p).sum())
    }

    pub fn set_row(&mut self, lane: LaneId, row: Vec<(LaneId, f64)>) {
        let mut row = row;
        row.retain(|&(_, p)| p != 0.0);
        row.sort_by_key(|&(k, _)| k);
        self.rows[lane] = row;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Network {
    pub lanes: Vec<Lane>,
    pub junctions: Vec<Junction>,
}

/// One broken invariant found by [`validate_network`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LaneIdMismatch { index: usize, id: LaneId },
    JunctionIdMismatch { index: usize, id: JunctionId },
    UnknownLane { junction: JunctionId, lane: LaneId },
    LaneOwnership { lane: LaneId, owner: Option<JunctionId>, listed_by: JunctionId },
    LaneInManyJunctions { lane: LaneId },
    PhaseColumns { junction: JunctionId, columns: usize, lanes: usize },
    LaneInNoPhase { junction: JunctionId, lane: LaneId },
    EmptyPhase { junction: JunctionId, phase: usize },
    NoPhases { junction: JunctionId },
    Clearance { junction: JunctionId, value: f64 },
    SensorAboveCapacity { lane: LaneId },
    NegativeValue { lane: LaneId, field: &'static str },
    RoutingShape { rows: usize, lanes: usize },
    RoutingEntry { from: LaneId, to: LaneId, value: f64 },
    RowSumAboveOne { lane: LaneId, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LaneIdMismatch { index, id } => {
                write!(f, "lane at index {index} has id {id}")
            }
            Violation::JunctionIdMismatch { index, id } => {
                write!(f, "junction at index {index} has id {id}")
            }
            Violation::UnknownLane { junction, lane } => {
                write!(f, "junction {junction}: unknown lane {lane}")
            }
            Violation::LaneOwnership { lane, owner, listed_by } => write!(
                f,
                "lane {lane} listed by junction {listed_by} but owned by {owner:?}"
            ),
            Violation::LaneInManyJunctions { lane } => {
                write!(f, "lane {lane} belongs to more than one junction")
            }
            Violation::PhaseColumns { junction, columns, lanes } => write!(
                f,
                "junction {junction}: phase matrix has {columns} columns for {lanes} lanes"
            ),
            Violation::LaneInNoPhase { junction, lane } => {
                write!(f, "junction {junction}: lane in no phase (lane {lane})")
            }
            Violation::EmptyPhase { junction, phase } => {
                write!(f, "junction {junction}: phase {phase} has no lanes")
            }
            Violation::NoPhases { junction } => write!(f, "junction {junction}: no phases"),
            Violation::Clearance { junction, value } => {
                write!(f, "junction {junction}: clearance time {value} must be > 0")
            }
            Violation::SensorAboveCapacity { lane } => {
                write!(f, "lane {lane}: sensor cap exceeds capacity")
            }
            Violation::NegativeValue { lane, field } => {
                write!(f, "lane {lane}: {field} must be >= 0")
            }
            Violation::RoutingShape { rows, lanes } => {
                write!(f, "routing matrix has {rows} rows for {lanes} lanes")
            }
            Violation::RoutingEntry { from, to, value } => {
                write!(f, "routing entry ({from},{to}) = {value} outside [0,1]")
            }
            Violation::RowSumAboveOne { lane, sum } => {
                write!(f, "routing row sum > 1 for lane {lane} ({sum})")
            }
        }
    }
}

const ROW_SUM_SLACK: f64 = 1e-9;

/// Report every invariant violation of the network and, when given, its
/// routing matrix. An empty report means the plant is well formed.
pub fn validate_network(network: &Network, routing: Option<&RoutingMatrix>) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = network.lanes.len();

    for (index, lane) in network.lanes.iter().enumerate() {
        if lane.id != index {
            out.push(Violation::LaneIdMismatch { index, id: lane.id });
        }
        for (field, v) in [
            ("sensor_cap", lane.sensor_cap),
            ("capacity", lane.capacity),
            ("arrival_weight", Some(lane.arrival_weight)),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    out.push(Violation::NegativeValue { lane: lane.id, field });
                }
            }
        }
        if let (Some(s), Some(c)) = (lane.sensor_cap, lane.capacity) {
            if s > c {
                out.push(Violation::SensorAboveCapacity { lane: lane.id });
            }
        }
    }

    let mut listed = vec![0usize; n];
    for (index, j) in network.junctions.iter().enumerate() {
        if j.id != index {
            out.push(Violation::JunctionIdMismatch { index, id: j.id });
        }
        if !(j.clearance > 0.0) {
            out.push(Violation::Clearance { junction: j.id, value: j.clearance });
        }
        for &l in &j.lanes {
            match network.lanes.get(l) {
                None => out.push(Violation::UnknownLane { junction: j.id, lane: l }),
                Some(lane) => {
                    listed[l] += 1;
                    if lane.junction != Some(j.id) {
                        out.push(Violation::LaneOwnership {
                            lane: l,
                            owner: lane.junction,
                            listed_by: j.id,
                        });
                    }
                }
            }
        }
        if j.phases.n_phases() == 0 {
            out.push(Violation::NoPhases { junction: j.id });
            continue;
        }
        if j.phases.n_lanes() != j.lanes.len() {
            out.push(Violation::PhaseColumns {
                junction: j.id,
                columns: j.phases.n_lanes(),
                lanes: j.lanes.len(),
            });
            continue;
        }
        for (col, &s) in j.phases.column_sums().iter().enumerate() {
            if s == 0 {
                out.push(Violation::LaneInNoPhase { junction: j.id, lane: j.lanes[col] });
            }
        }
        for phase in 0..j.phases.n_phases() {
            if j.phases.lanes_of(phase).next().is_none() {
                out.push(Violation::EmptyPhase { junction: j.id, phase });
            }
        }
    }
    for (lane, &count) in listed.iter().enumerate() {
        if count > 1 {
            out.push(Violation::LaneInManyJunctions { lane });
        }
    }

    if let Some(r) = routing {
        if r.n_lanes() != n {
            out.push(Violation::RoutingShape { rows: r.n_lanes(), lanes: n });
        }
        for (from, row) in r.rows().iter().enumerate() {
            for &(to, value) in row {
                if !(0.0..=1.0).contains(&value) || to >= n {
                    out.push(Violation::RoutingEntry { from, to, value });
                }
            }
            let sum = r.row_sum(from);
            if sum > 1.0 + ROW_SUM_SLACK {
                out.push(Violation::RowSumAboveOne { lane: from, sum });
            }
        }
    }
    out
}

/// A green phase `i` or its clearance phase `i′`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseRef {
    Green(usize),
    Clearance(usize),
}

impl PhaseRef {
    pub fn index(self) -> usize {
        match self {
            PhaseRef::Green(i) | PhaseRef::Clearance(i) => i,
        }
    }

    pub fn is_green(self) -> bool {
        matches!(self, PhaseRef::Green(_))
    }
}

impl fmt::Display for PhaseRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseRef::Green(i) => write!(f, "p{}", i + 1),
            PhaseRef::Clearance(i) => write!(f, "p{}'", i + 1),
        }
    }
}

/// Ordered `(phase, t_end)` schedule for one junction, starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalProgram {
    start: f64,
    entries: Vec<(PhaseRef, f64)>,
}

/// Structural defect of a program with respect to clearance pairing.
#[derive(Debug, Clone, PartialEq)]
pub enum ProgramViolation {
    MissingClearance { index: usize },
    ClearanceMismatch { index: usize },
    ClearanceDuration { index: usize, duration: f64 },
}

impl SignalProgram {
    /// Builds a program; end times must be non-decreasing from `start`, and
    /// only green entries may have zero duration.
    pub fn new(start: f64, entries: Vec<(PhaseRef, f64)>) -> Result<Self, SignalError> {
        let mut prev = start;
        for (index, &(phase, t_end)) in entries.iter().enumerate() {
            let ok = if phase.is_green() { t_end >= prev } else { t_end > prev };
            if !ok || !t_end.is_finite() {
                return Err(SignalError::OutOfOrder { index });
            }
            prev = t_end;
        }
        Ok(Self { start, entries })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn entries(&self) -> &[(PhaseRef, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Duration of each entry, in order.
    pub fn durations(&self) -> impl Iterator<Item = (PhaseRef, f64)> + '_ {
        let mut prev = self.start;
        self.entries.iter().map(move |&(p, t)| {
            let d = t - prev;
            prev = t;
            (p, d)
        })
    }

    /// The entry with the smallest end time strictly greater than `t`.
    pub fn active_phase(&self, t: f64) -> Result<PhaseRef, SignalError> {
        let end = self.end()?;
        // Entries are sorted, so the first end time beyond t is the minimal one.
        self.entries
            .iter()
            .find(|&&(_, t_end)| t_end > t)
            .map(|&(p, _)| p)
            .ok_or(SignalError::ProgramExpired { t, end })
    }

    /// First entry boundary strictly after `t`, if any.
    pub fn next_boundary(&self, t: f64) -> Option<f64> {
        self.entries.iter().map(|&(_, e)| e).find(|&e| e > t)
    }

    /// `T^(j)`: when the program runs out.
    pub fn end(&self) -> Result<f64, SignalError> {
        self.entries
            .last()
            .map(|&(_, t)| t)
            .ok_or(SignalError::EmptyProgram)
    }

    pub fn span(&self) -> f64 {
        self.end().map_or(0.0, |e| e - self.start)
    }

    /// Total green time given to `phase`.
    pub fn green_time(&self, phase: usize) -> f64 {
        self.durations()
            .filter(|&(p, _)| p == PhaseRef::Green(phase))
            .map(|(_, d)| d)
            .sum()
    }

    /// Clearance pairing check: each green entry `i` is immediately followed
    /// by `i′` lasting `clearance` seconds. A program consisting of a single
    /// clearance entry (an idle hold) is accepted with any duration.
    pub fn check_structure(&self, clearance: f64, tol: f64) -> Vec<ProgramViolation> {
        let mut out = Vec::new();
        if let [(PhaseRef::Clearance(_), _)] = self.entries.as_slice() {
            return out;
        }
        let durations: Vec<_> = self.durations().collect();
        let mut i = 0;
        while i < durations.len() {
            match durations[i].0 {
                PhaseRef::Green(p) => match durations.get(i + 1) {
                    Some(&(PhaseRef::Clearance(q), d)) => {
                        if q != p {
                            out.push(ProgramViolation::ClearanceMismatch { index: i + 1 });
                        }
                        if (d - clearance).abs() > tol {
                            out.push(ProgramViolation::ClearanceDuration { index: i + 1, duration: d });
                        }
                        i += 2;
                    }
                    _ => {
                        out.push(ProgramViolation::MissingClearance { index: i });
                        i += 1;
                    }
                },
                PhaseRef::Clearance(_) => {
                    out.push(ProgramViolation::MissingClearance { index: i });
                    i += 1;
                }
            }
        }
        out
    }
}

/// Free-function form of [`SignalProgram::active_phase`].
pub fn active_phase(program: &SignalProgram, t: f64) -> Result<PhaseRef, SignalError> {
    program.active_phase(t)
}

/// Free-function form of [`SignalProgram::end`].
pub fn program_end(program: &SignalProgram) -> Result<f64, SignalError> {
    program.end()
}
