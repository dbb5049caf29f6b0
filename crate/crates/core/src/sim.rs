//! Point-queue network simulator.
//!
//! Time advances in fixed steps (1 s by default). Inside a step the clock is
//! split at every program boundary, so controllers fire exactly when their
//! program runs out and non-integer phase durations are honored.
//!
//! Fluid mode integrates constant-rate arrivals and discharge exactly on each
//! sub-interval. Stochastic mode keeps integer queues: each lane draws one
//! Bernoulli arrival per step and discharges whole vehicles against a service
//! credit that survives red periods until the lane empties, sampling each
//! vehicle's next lane from the routing row.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{ControlError, ControllerConfig, Measurement};
use crate::scenario::Scenario;
use crate::signal::{JunctionId, LaneId, PhaseRef, SignalProgram};

/// A fluid network counts as empty below this many vehicles.
pub const EMPTY_TOL: f64 = 1e-9;

/// Default averaging window for queue series.
pub const DEFAULT_WINDOW: f64 = 300.0;

const ROUTING_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// Deterministic real-valued queues.
    #[default]
    Fluid,
    /// Integer queues with Bernoulli demand and per-vehicle routing.
    Stochastic,
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMode::Fluid => "fluid",
            SimMode::Stochastic => "stochastic",
        })
    }
}

/// How green time turns into service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceDiscipline {
    /// A lane discharges at the saturation rate while one of its phases is
    /// green and not at all otherwise.
    #[default]
    Phased,
    /// Over a program a lane discharges at the saturation rate times its
    /// green share of the program span (the cycle-averaged model).
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceModel {
    /// Vehicles per second per lane under green.
    pub saturation_rate: f64,
    /// Meters of road per queued vehicle.
    pub vehicle_length: f64,
    #[serde(default)]
    pub discipline: ServiceDiscipline,
}

impl Default for ServiceModel {
    fn default() -> Self {
        Self {
            saturation_rate: 1.0,
            vehicle_length: 7.5,
            discipline: ServiceDiscipline::Phased,
        }
    }
}

impl ServiceModel {
    /// Vehicles visible to a sensor covering `range_m` meters.
    pub fn sensor_cap(&self, range_m: f64) -> f64 {
        (range_m / self.vehicle_length).floor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandModel {
    /// Base rate (δ or λ) in vehicles/second, scaled per lane by its weight.
    pub rate: f64,
    /// No exogenous arrivals at or after this time. May be infinite.
    pub generation_horizon: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("junction {junction} at t={t}: {source}")]
    Controller {
        junction: JunctionId,
        t: f64,
        #[source]
        source: ControlError,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: Vec<f64>,
    pub programs: Vec<Option<SignalProgram>>,
    pub cum_vehicle_seconds: f64,
    pub generated: f64,
    pub exited: f64,
    pub blocked_events: u64,
}

impl SimState {
    pub fn in_network(&self) -> f64 {
        let mut acc = Compensated::default();
        for &v in &self.x {
            acc.add(v);
        }
        acc.value()
    }

    /// `generated − exited − in_network`; zero up to rounding.
    pub fn imbalance(&self) -> f64 {
        self.generated - self.exited - self.in_network()
    }
}

/// Neumaier-compensated running sum, so that long fluid runs keep the
/// conservation identity at rounding level.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// One program issued to a junction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub start: f64,
    pub length: f64,
    /// Largest true queue among the junction's lanes when the program was issued.
    pub peak_queue: f64,
    /// Green entries in the program (0 for an idle clearance hold).
    pub greens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub scenario_hash: String,
    /// `(t, vehicles in network at t)`, one sample per step.
    pub queue_series: Vec<(f64, f64)>,
    /// Total travel time in hours; infinite when the run hit the hard cap.
    pub ttt_hours: f64,
    /// Travel time accumulated up to the end of the run, finite even when capped.
    pub accumulated_ttt_hours: f64,
    pub infinite: bool,
    pub blocked_events: u64,
    pub cycles: Vec<Vec<CycleRecord>>,
    pub generated: f64,
    pub exited: f64,
    pub final_queue: f64,
    pub end_time: f64,
    /// Largest |generated − exited − in_network| seen at any step.
    pub max_imbalance: f64,
}

impl RunResult {
    pub fn mean_cycle_per_junction(&self) -> Vec<f64> {
        self.cycles
            .iter()
            .map(|c| {
                if c.is_empty() {
                    0.0
                } else {
                    c.iter().map(|r| r.length).sum::<f64>() / c.len() as f64
                }
            })
            .collect()
    }

    /// Mean length over every program issued in the run.
    pub fn mean_cycle(&self) -> f64 {
        let n: usize = self.cycles.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.cycles.iter().flatten().map(|r| r.length).sum::<f64>() / n as f64
    }
}

/// Stepwise simulator over one scenario.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    controllers: Vec<ControllerConfig>,
    downstream: Vec<Vec<LaneId>>,
    state: SimState,
    demand_rng: Vec<ChaCha8Rng>,
    routing_rng: Vec<ChaCha8Rng>,
    /// Per-lane discharge rate under the averaged discipline.
    averaged_rate: Vec<f64>,
    credit: Vec<f64>,
    cycles: Vec<Vec<CycleRecord>>,
    series: Vec<(f64, f64)>,
    max_imbalance: f64,
    generated: Compensated,
    exited: Compensated,
    vehicle_seconds: Compensated,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, seed: u64) -> Result<Self, SimError> {
        let report = scenario.validate();
        if !report.is_empty() {
            return Err(SimError::Invalid(report.join("; ")));
        }
        let net = &scenario.network;
        let controllers: Vec<_> = (0..net.junctions.len())
            .map(|j| scenario.controller_for(j).clone())
            .collect();
        let downstream = net
            .junctions
            .iter()
            .map(|j| {
                let mut ks: Vec<LaneId> = j
                    .lanes
                    .iter()
                    .flat_map(|&l| {
                        let a = scenario.routing.row(l).unwrap_or(&[]);
                        let b = scenario.controller_routing.row(l).unwrap_or(&[]);
                        a.iter().chain(b).map(|&(k, _)| k)
                    })
                    .collect();
                ks.sort_unstable();
                ks.dedup();
                ks
            })
            .collect();
        let n = net.lanes.len();
        let mut generated = Compensated::default();
        for &q in &scenario.initial_queue {
            generated.add(q);
        }
        let state = SimState {
            t: 0.0,
            x: scenario.initial_queue.clone(),
            programs: vec![None; net.junctions.len()],
            cum_vehicle_seconds: 0.0,
            generated: generated.value(),
            exited: 0.0,
            blocked_events: 0,
        };
        Ok(Self {
            scenario,
            controllers,
            downstream,
            state,
            demand_rng: (0..n as u64).map(|l| stream(seed, l)).collect(),
            routing_rng: (0..net.junctions.len() as u64)
                .map(|j| stream(seed, ROUTING_STREAM_BASE + j))
                .collect(),
            averaged_rate: vec![0.0; n],
            credit: vec![0.0; n],
            cycles: vec![Vec::new(); net.junctions.len()],
            series: Vec::new(),
            max_imbalance: 0.0,
            generated,
            exited: Compensated::default(),
            vehicle_seconds: Compensated::default(),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn cycles(&self) -> &[Vec<CycleRecord>] {
        &self.cycles
    }

    pub fn series(&self) -> &[(f64, f64)] {
        &self.series
    }

    fn arrival_rate(&self, lane: LaneId) -> f64 {
        self.scenario.network.lanes[lane].arrival_weight * self.scenario.demand.rate
    }

    pub fn demand_exhausted(&self) -> bool {
        self.state.t >= self.scenario.demand.generation_horizon
            || self.scenario.network.lanes.iter().all(|l| l.arrival_weight == 0.0)
            || self.scenario.demand.rate == 0.0
    }

    pub fn network_empty(&self) -> bool {
        match self.scenario.mode {
            SimMode::Fluid => self.state.in_network() <= EMPTY_TOL,
            SimMode::Stochastic => self.state.in_network() == 0.0,
        }
    }

    /// Sensor view of junction `j` at the current state.
    pub fn measure(&self, junction: JunctionId) -> Measurement {
        let net = &self.scenario.network;
        let j = &net.junctions[junction];
        let sense = |l: LaneId| net.lanes[l].sense(self.state.x[l]);
        let mut m = Measurement::local(junction, self.state.t, j.lanes.iter().map(|&l| sense(l)).collect());
        if self.controllers[junction].needs_downstream() {
            m.downstream = self.downstream[junction].iter().map(|&k| (k, sense(k))).collect();
        }
        m
    }

    fn refresh_programs(&mut self) -> Result<(), SimError> {
        let t = self.state.t;
        for jid in 0..self.scenario.network.junctions.len() {
            let expired = match &self.state.programs[jid] {
                None => true,
                Some(p) => p.end().map_or(true, |end| end <= t),
            };
            if !expired {
                continue;
            }
            let junction = &self.scenario.network.junctions[jid];
            let m = self.measure(jid);
            let program = self.controllers[jid]
                .program(&m, junction, &self.scenario.controller_routing, &self.scenario.routing)
                .map_err(|source| SimError::Controller { junction: jid, t, source })?;
            let peak = junction.lanes.iter().map(|&l| self.state.x[l]).fold(0.0, f64::max);
            let greens = program.entries().iter().filter(|(p, _)| p.is_green()).count();
            self.cycles[jid].push(CycleRecord { start: t, length: program.span(), peak_queue: peak, greens });
            if self.scenario.service.discipline == ServiceDiscipline::Averaged {
                let span = program.span();
                for &l in &junction.lanes {
                    self.averaged_rate[l] = 0.0;
                }
                if span > 0.0 {
                    for phase in 0..junction.n_phases() {
                        let share = program.green_time(phase) / span;
                        for l in junction.phase_lanes(phase) {
                            self.averaged_rate[l] += share * self.scenario.service.saturation_rate;
                        }
                    }
                }
            }
            self.state.programs[jid] = Some(program);
        }
        Ok(())
    }

    /// Discharge rate of every lane on an interval starting at `t`.
    fn service_rates(&self, t: f64) -> Vec<f64> {
        let net = &self.scenario.network;
        match self.scenario.service.discipline {
            ServiceDiscipline::Averaged => self.averaged_rate.clone(),
            ServiceDiscipline::Phased => {
                let mut rates = vec![0.0; net.lanes.len()];
                for (jid, junction) in net.junctions.iter().enumerate() {
                    let Some(program) = &self.state.programs[jid] else { continue };
                    if let Ok(PhaseRef::Green(i)) = program.active_phase(t) {
                        for l in junction.phase_lanes(i) {
                            rates[l] = self.scenario.service.saturation_rate;
                        }
                    }
                }
                rates
            }
        }
    }

    /// Advance by `dt` seconds: controllers fire on expiry, lanes discharge
    /// under green, then exogenous demand arrives.
    pub fn step(&mut self, dt: f64) -> Result<(), SimError> {
        let start = self.state.t;
        let end = start + dt;
        let present = self.state.in_network();
        self.series.push((start, present));
        self.vehicle_seconds.add(present * dt);
        self.state.cum_vehicle_seconds = self.vehicle_seconds.value();
        let horizon = self.scenario.demand.generation_horizon;
        let mut t = start;
        while end - t > 1e-12 {
            self.state.t = t;
            self.refresh_programs()?;
            let mut next = end;
            for p in self.state.programs.iter().flatten() {
                if let Some(b) = p.next_boundary(t) {
                    next = next.min(b);
                }
            }
            if self.scenario.mode == SimMode::Fluid && t < horizon && horizon < next {
                next = horizon;
            }
            self.advance(t, next);
            t = next;
        }
        self.state.t = end;
        if self.scenario.mode == SimMode::Stochastic && start < horizon {
            self.bernoulli_arrivals(dt);
        }
        self.state.generated = self.generated.value();
        self.state.exited = self.exited.value();
        self.max_imbalance = self.max_imbalance.max(self.state.imbalance().abs());
        Ok(())
    }

    fn advance(&mut self, a: f64, b: f64) {
        let dt = b - a;
        if dt <= 0.0 {
            return;
        }
        let rates = self.service_rates(a);
        match self.scenario.mode {
            SimMode::Fluid => self.advance_fluid(a, dt, &rates),
            SimMode::Stochastic => self.advance_stochastic(dt, &rates),
        }
    }

    fn advance_fluid(&mut self, a: f64, dt: f64, rates: &[f64]) {
        let n = self.state.x.len();
        let arriving = a < self.scenario.demand.generation_horizon;
        let mut served = vec![0.0; n];
        for l in 0..n {
            let arrival = if arriving { self.arrival_rate(l) } else { 0.0 };
            let x = self.state.x[l];
            let next = (x + (arrival - rates[l]) * dt).max(0.0);
            served[l] = (x + arrival * dt - next).max(0.0);
            self.generated.add(arrival * dt);
            self.state.x[l] = next;
        }

        let routing = &self.scenario.routing;
        let lanes = &self.scenario.network.lanes;
        let mut inflow = vec![0.0; n];
        for l in 0..n {
            if served[l] > 0.0 {
                for &(k, p) in routing.row(l).unwrap_or(&[]) {
                    inflow[k] += served[l] * p;
                }
            }
        }
        // Downstream storage limits: scale back blocked flow and return it.
        let mut admit = vec![1.0; n];
        for k in 0..n {
            if let Some(cap) = lanes[k].capacity {
                let room = (cap - self.state.x[k]).max(0.0);
                if inflow[k] > room {
                    admit[k] = room / inflow[k];
                }
            }
        }
        for l in 0..n {
            if served[l] == 0.0 {
                continue;
            }
            let mut sent = 0.0;
            for &(k, p) in routing.row(l).unwrap_or(&[]) {
                let want = served[l] * p;
                let moved = want * admit[k];
                if moved < want {
                    self.state.blocked_events += 1;
                }
                self.state.x[k] += moved;
                sent += want;
                self.state.x[l] += want - moved;
            }
            self.exited.add(served[l] - sent);
        }
    }

    fn advance_stochastic(&mut self, dt: f64, rates: &[f64]) {
        let n = self.state.x.len();
        let lanes = &self.scenario.network.lanes;
        let routing = &self.scenario.routing;
        let mut incoming = vec![0.0; n];
        for l in 0..n {
            if rates[l] == 0.0 {
                continue;
            }
            self.credit[l] += rates[l] * dt;
            let row = routing.row(l).unwrap_or(&[]);
            let rng_id = lanes[l].junction.unwrap_or(0);
            while self.state.x[l] >= 1.0 && self.credit[l] >= 1.0 - 1e-9 {
                let u: f64 = self.routing_rng[rng_id].random();
                let mut acc = 0.0;
                let mut dest = None;
                for &(k, p) in row {
                    acc += p;
                    if u < acc {
                        dest = Some(k);
                        break;
                    }
                }
                if let Some(k) = dest {
                    if let Some(cap) = lanes[k].capacity {
                        if self.state.x[k] + incoming[k] + 1.0 > cap {
                            self.state.blocked_events += 1;
                            self.credit[l] = 0.0;
                            break;
                        }
                    }
                    incoming[k] += 1.0;
                } else {
                    self.exited.add(1.0);
                }
                self.state.x[l] -= 1.0;
                self.credit[l] -= 1.0;
            }
            if self.state.x[l] == 0.0 {
                self.credit[l] = 0.0;
            }
        }
        for (x, inc) in self.state.x.iter_mut().zip(incoming) {
            *x += inc;
        }
    }

    fn bernoulli_arrivals(&mut self, dt: f64) {
        for l in 0..self.state.x.len() {
            let p = self.arrival_rate(l) * dt;
            if p <= 0.0 {
                continue;
            }
            let u: f64 = self.demand_rng[l].random();
            if u < p {
                self.state.x[l] += 1.0;
                self.generated.add(1.0);
            }
        }
    }

    pub fn into_result(self, seed: u64, infinite: bool) -> RunResult {
        let step = self.scenario.step;
        let accumulated = total_travel_time(&self.series, step);
        RunResult {
            seed,
            scenario_hash: self.scenario.hash(),
            ttt_hours: if infinite { f64::INFINITY } else { accumulated },
            accumulated_ttt_hours: accumulated,
            infinite,
            blocked_events: self.state.blocked_events,
            generated: self.state.generated,
            exited: self.state.exited,
            final_queue: self.state.in_network(),
            end_time: self.state.t,
            max_imbalance: self.max_imbalance,
            queue_series: self.series,
            cycles: self.cycles,
        }
    }
}

/// Run a scenario until demand has stopped and the network is empty, or until
/// the hard cap (reported as infinite travel time). Identical `(scenario,
/// seed)` pairs give identical results.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunResult, SimError> {
    let mut sim = Simulation::new(scenario, seed)?;
    let cap = scenario.hard_cap();
    loop {
        if sim.demand_exhausted() && sim.network_empty() {
            return Ok(sim.into_result(seed, false));
        }
        if sim.state.t >= cap {
            return Ok(sim.into_result(seed, true));
        }
        sim.step(scenario.step)?;
    }
}

/// `Σ N(t)·Δ / 3600` over a per-step series.
pub fn total_travel_time(series: &[(f64, f64)], step: f64) -> f64 {
    series.iter().fold(0.0, |acc, &(_, n)| acc + n * step) / 3600.0
}

/// Means over consecutive non-overlapping windows, stamped at window start.
pub fn aggregate_queue(series: &[(f64, f64)], window: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for &(t, v) in series {
        let bucket = (t / window + 1e-9).floor() * window;
        match out.last_mut() {
            Some(last) if last.0 == bucket => {
                last.1 += v;
                last.2 += 1;
            }
            _ => out.push((bucket, v, 1)),
        }
    }
    out.into_iter().map(|(t, s, c)| (t, s / c as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn travel_time_values() {
        let ones: Vec<_> = (0..3600).map(|t| (t as f64, 1.0)).collect();
        assert!((total_travel_time(&ones, 1.0) - 1.0).abs() < 1e-12);
        let zeros: Vec<_> = (0..100).map(|t| (t as f64, 0.0)).collect();
        assert_eq!(total_travel_time(&zeros, 1.0), 0.0);
        let two: Vec<_> = (0..1800).map(|t| (t as f64, 2.0)).collect();
        assert!((total_travel_time(&two, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_values() {
        let c: Vec<_> = (0..900).map(|t| (t as f64, 3.5)).collect();
        assert_eq!(aggregate_queue(&c, 300.0), vec![(0.0, 3.5), (300.0, 3.5), (600.0, 3.5)]);
        let step: Vec<_> = (0..600).map(|t| (t as f64, if t < 300 { 0.0 } else { 10.0 })).collect();
        assert_eq!(aggregate_queue(&step, 300.0), vec![(0.0, 0.0), (300.0, 10.0)]);
        let ramp: Vec<_> = (0..300).map(|t| (t as f64, t as f64)).collect();
        assert_eq!(aggregate_queue(&ramp, 300.0), vec![(0.0, 149.5)]);
    }

    #[test]
    fn sensor_cap_from_range() {
        assert_eq!(ServiceModel::default().sensor_cap(50.0), 6.0);
    }
}
