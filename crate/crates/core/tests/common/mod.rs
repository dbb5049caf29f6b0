//! Property checks shared by the property suite and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use signal_lab::controllers::{ControllerConfig, Measurement, RoutingSource};
use signal_lab::gpa::{self, brute_force_oracle, objective, solve_gpa, solve_orthogonal, Allocation, GpaParams};
use signal_lab::scenario::{
    build_manhattan_with, derive_routing, parse_scenario, GridLayout, ManhattanOptions, Movement, Scenario, Side,
    TurnSpec, MANHATTAN_FIXED_TIME,
};
use signal_lab::signal::{validate_network, Junction, Lane, Network, PhaseMatrix, PhaseRef, RoutingMatrix, SignalProgram};
use signal_lab::sim::{run, DemandModel, ServiceModel, SimMode, Simulation};

pub type Check = Result<(), TestCaseError>;

#[derive(Debug, Clone)]
pub struct Instance {
    pub x: Vec<f64>,
    pub phases: PhaseMatrix,
    pub kappa: f64,
    pub w_bar: f64,
}

impl Instance {
    pub fn params(&self) -> GpaParams {
        GpaParams { kappa: self.kappa, w_bar: self.w_bar }
    }
}

fn queue() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 5 => 0.0..100.0f64]
}

fn w_bar() -> impl Strategy<Value = f64> {
    (0..=5u32).prop_map(|k| k as f64 / 10.0)
}

/// Orthogonal phases: every lane in exactly one phase, no empty phase.
pub fn orthogonal_instance(max_phases: usize) -> impl Strategy<Value = Instance> {
    (1..=max_phases)
        .prop_flat_map(|n_p| (Just(n_p), prop::collection::vec(0..n_p, 0..=n_p), 0.1..50.0f64, w_bar()))
        .prop_flat_map(|(n_p, extra, kappa, w_bar)| {
            let mut owner: Vec<usize> = (0..n_p).collect();
            owner.extend(extra);
            let n = owner.len();
            (Just(owner), prop::collection::vec(queue(), n), Just(kappa), Just(w_bar))
        })
        .prop_map(|(owner, x, kappa, w_bar)| {
            let n_p = owner.iter().max().unwrap() + 1;
            let rows = (0..n_p).map(|i| owner.iter().map(|&o| o == i).collect()).collect();
            Instance { x, phases: PhaseMatrix::new(rows).unwrap(), kappa, w_bar }
        })
}

/// Two or three phases over a chain of lanes where exactly one lane sits in
/// two neighboring phases.
pub fn shared_instance() -> impl Strategy<Value = Instance> {
    (2..=3usize, 0.1..50.0f64, w_bar())
        .prop_flat_map(|(n_p, kappa, w_bar)| {
            let n = n_p + 1;
            (Just(n_p), prop::collection::vec(queue(), n), 0..(n_p - 1), Just(kappa), Just(w_bar))
        })
        .prop_map(|(n_p, x, shared, kappa, w_bar)| {
            // lanes 0..n_p each own phase i; lane n_p joins phases `shared` and `shared + 1`
            let n = n_p + 1;
            let rows = (0..n_p)
                .map(|i| (0..n).map(|l| l == i || (l == n_p && (i == shared || i == shared + 1))).collect())
                .collect();
            Instance { x, phases: PhaseMatrix::new(rows).unwrap(), kappa, w_bar }
        })
}

pub fn any_instance() -> impl Strategy<Value = Instance> {
    prop_oneof![orthogonal_instance(6), shared_instance()]
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

pub fn feasibility(inst: &Instance) -> Check {
    let a = solve_gpa(&inst.x, &inst.phases, &inst.params()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let sum: f64 = a.nu.iter().sum::<f64>() + a.w;
    prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
    prop_assert!(a.nu.iter().all(|&v| v >= 0.0));
    prop_assert!(a.w >= inst.w_bar);
    Ok(())
}

pub fn joint_scaling(inst: &Instance, alpha: f64) -> Check {
    let a = solve_gpa(&inst.x, &inst.phases, &inst.params()).unwrap();
    let xs: Vec<f64> = inst.x.iter().map(|v| v * alpha).collect();
    let b = solve_gpa(&xs, &inst.phases, &GpaParams { kappa: inst.kappa * alpha, w_bar: inst.w_bar }).unwrap();
    prop_assert!(close(&a.nu, &b.nu, 1e-8) && (a.w - b.w).abs() <= 1e-8, "{a:?} vs {b:?}");
    Ok(())
}

/// Scaling `(x, κ)` scales the objective at every point, so the maximizer is
/// unchanged and the optimal value scales too.
pub fn argmax_invariance(inst: &Instance, alpha: f64) -> Check {
    let a = solve_gpa(&inst.x, &inst.phases, &inst.params()).unwrap();
    let xs: Vec<f64> = inst.x.iter().map(|v| v * alpha).collect();
    let f = objective(&inst.x, &inst.phases, inst.kappa, &a).unwrap();
    let g = objective(&xs, &inst.phases, inst.kappa * alpha, &a).unwrap();
    prop_assert!((g - alpha * f).abs() <= 1e-9 * (1.0 + g.abs()), "{g} vs {}", alpha * f);
    Ok(())
}

pub fn permutation_equivariance(inst: &Instance, seed: u64) -> Check {
    let n_p = inst.phases.n_phases();
    let mut perm: Vec<usize> = (0..n_p).collect();
    // deterministic shuffle from the seed
    let mut s = seed;
    for i in (1..n_p).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        perm.swap(i, (s >> 33) as usize % (i + 1));
    }
    let a = solve_gpa(&inst.x, &inst.phases, &inst.params()).unwrap();
    let b = solve_gpa(&inst.x, &inst.phases.permute_rows(&perm), &inst.params()).unwrap();
    let permuted: Vec<f64> = perm.iter().map(|&i| a.nu[i]).collect();
    prop_assert!(close(&permuted, &b.nu, 1e-7), "{permuted:?} vs {:?}", b.nu);
    Ok(())
}

pub fn proportionality(inst: &Instance) -> Check {
    let a = solve_gpa(&inst.x, &inst.phases, &GpaParams { kappa: inst.kappa, w_bar: 0.0 }).unwrap();
    let loads = inst.phases.phase_sums(&inst.x);
    for i in 0..loads.len() {
        for j in 0..loads.len() {
            if loads[i] > 0.0 && loads[j] > 0.0 {
                let lhs = a.nu[i] / a.nu[j];
                let rhs = loads[i] / loads[j];
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
            }
        }
    }
    Ok(())
}

pub fn monotone_cycle(inst: &Instance, extra: f64, lane: usize) -> Check {
    let n_p = inst.phases.n_phases();
    let t = |x: &[f64]| {
        let a = solve_gpa(x, &inst.phases, &GpaParams { kappa: inst.kappa, w_bar: 0.0 }).unwrap();
        gpa::cycle_length(&a, n_p, 5.0).unwrap()
    };
    let mut more = inst.x.clone();
    let i = lane % more.len();
    more[i] += extra;
    prop_assert!(t(&more) > t(&inst.x));
    Ok(())
}

pub fn oracle_dominance(inst: &Instance, step: f64, tol: f64) -> Check {
    let a = solve_gpa(&inst.x, &inst.phases, &inst.params()).unwrap();
    let o = brute_force_oracle(&inst.x, &inst.phases, inst.kappa, inst.w_bar, step).unwrap();
    let fa = objective(&inst.x, &inst.phases, inst.kappa, &a).unwrap();
    let fo = objective(&inst.x, &inst.phases, inst.kappa, &o).unwrap();
    prop_assert!(fa >= fo - tol, "solver {fa} < oracle {fo}");
    Ok(())
}

pub fn bound_activation(inst: &Instance, w_bar2: f64) -> Check {
    let free = solve_gpa(&inst.x, &inst.phases, &GpaParams { kappa: inst.kappa, w_bar: 0.0 }).unwrap();
    if free.w < w_bar2 {
        let bound = solve_gpa(&inst.x, &inst.phases, &GpaParams { kappa: inst.kappa, w_bar: w_bar2 }).unwrap();
        prop_assert_eq!(bound.w, w_bar2);
    }
    Ok(())
}

pub fn orthogonal_agreement(inst: &Instance) -> Check {
    let loads = inst.phases.phase_sums(&inst.x);
    let closed = solve_orthogonal(&loads, inst.kappa, inst.w_bar).unwrap();
    for a in [
        solve_gpa(&inst.x, &inst.phases, &inst.params()).unwrap(),
        gpa::solve_iterative(&inst.x, &inst.phases, &inst.params()).unwrap(),
    ] {
        prop_assert!(close(&a.nu, &closed.nu, 1e-6) && (a.w - closed.w).abs() <= 1e-6, "{a:?} vs {closed:?}");
    }
    Ok(())
}

// ---- controllers and programs ----

pub fn junction_of(phases: &PhaseMatrix, clearance: f64) -> Junction {
    Junction { id: 0, lanes: (0..phases.n_lanes()).collect(), phases: phases.clone(), clearance }
}

fn check_program(p: &SignalProgram, t: f64, clearance: f64) -> Check {
    prop_assert!(p.check_structure(clearance, 1e-9).is_empty(), "{p:?}");
    prop_assert_eq!(p.start(), t);
    let ends: Vec<f64> = p.entries().iter().map(|e| e.1).collect();
    prop_assert!(ends.windows(2).all(|w| w[0] <= w[1]));
    prop_assert!(ends[0] >= t);
    Ok(())
}

/// Every controller emits phase/clearance pairs with clearance exactly `T_w`,
/// starting at the decision time; GPA spans match the cycle formula.
pub fn program_validity(inst: &Instance, t: f64, clearance: f64) -> Check {
    let j = junction_of(&inst.phases, clearance);
    let n_p = j.n_phases();
    let n = inst.x.len();
    let routing = RoutingMatrix::from_rows((0..n).map(|l| vec![((l + 1) % n, 0.5)]).collect());
    let mut m = Measurement::local(0, t, inst.x.clone());
    m.downstream = (0..n).map(|k| (k, inst.x[k])).collect::<BTreeMap<_, _>>();
    let configs = [
        ControllerConfig::GpaFull { gpa: inst.params(), min_green: 0.0 },
        ControllerConfig::GpaShorted { gpa: inst.params(), min_green: 0.0 },
        ControllerConfig::MaxPressure { duration: 10.0, routing: RoutingSource::Believed },
        ControllerConfig::FixedTime { durations: vec![12.0; n_p] },
        ControllerConfig::PropFair { cycle: n_p as f64 * clearance + 60.0 },
    ];
    for c in &configs {
        let p = c.program(&m, &j, &routing, &routing).map_err(|e| TestCaseError::fail(e.to_string()))?;
        check_program(&p, t, clearance)?;
        if let ControllerConfig::GpaFull { gpa, .. } = c {
            let a = solve_gpa(&inst.x, &inst.phases, gpa).unwrap();
            let expected = n_p as f64 * clearance / a.w;
            prop_assert!((p.span() - expected).abs() <= 1e-9 * expected);
        }
        if let ControllerConfig::PropFair { cycle } = c {
            prop_assert!((p.span() - cycle).abs() <= 1e-9 * cycle);
        }
    }
    Ok(())
}

/// `active_phase` is the entry with the smallest end strictly after `t`.
pub fn active_phase_definition(durations: &[f64], t_frac: f64) -> Check {
    let mut t = 3.0;
    let mut entries = Vec::new();
    for (i, &d) in durations.iter().enumerate() {
        t += d;
        entries.push((PhaseRef::Green(i), t));
        t += 2.0;
        entries.push((PhaseRef::Clearance(i), t));
    }
    let p = SignalProgram::new(3.0, entries.clone()).unwrap();
    let q = 3.0 + t_frac * (p.end().unwrap() - 3.0);
    let expected = entries.iter().find(|e| e.1 > q).map(|e| e.0);
    match expected {
        Some(e) => prop_assert_eq!(p.active_phase(q).unwrap(), e),
        None => prop_assert!(p.active_phase(q).is_err()),
    }
    Ok(())
}

pub fn measurement_saturation(x: f64, cap: Option<f64>) -> Check {
    let lane = Lane { sensor_cap: cap, ..Lane::new(0, Some(0)) };
    let v = lane.sense(x);
    prop_assert!(v >= 0.0);
    match cap {
        Some(c) => prop_assert!(v <= c && v == x.min(c)),
        None => prop_assert_eq!(v, x),
    }
    Ok(())
}

// ---- scenarios ----

pub fn turn_spec() -> impl Strategy<Value = TurnSpec> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b)| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        TurnSpec { p_left: lo, p_straight: hi - lo, p_right: 1.0 - hi }
    })
}

pub fn routing_rows(rows: usize, cols: usize, turns: &TurnSpec) -> Check {
    let layout = GridLayout::new(rows, cols).unwrap();
    let r = derive_routing(&layout, turns);
    for a in &layout.approaches {
        let split = turns.lane_split(a.road_lanes);
        let shared_total = split[2];
        let reach = |m| if layout.target(a, m).is_some() { 1.0 } else { 0.0 };
        let mut expected = vec![(a.left, reach(Movement::Left))];
        if let Some(s) = a.straight {
            expected.push((s, reach(Movement::Straight)));
        }
        let shared = if shared_total > 0.0 {
            ((split[2] - turns.p_right) * reach(Movement::Straight) + turns.p_right * reach(Movement::Right))
                / shared_total
        } else {
            reach(Movement::Straight)
        };
        expected.push((a.shared, shared));
        for (lane, want) in expected {
            let row = r.row(lane).unwrap();
            prop_assert!(row.iter().all(|&(_, p)| (0.0..=1.0 + 1e-12).contains(&p)));
            prop_assert!((r.row_sum(lane) - want).abs() <= 1e-12, "lane {lane}: {} vs {want}", r.row_sum(lane));
        }
    }
    Ok(())
}

pub fn manhattan(rows: usize, cols: usize, delta: f64, mode: SimMode, controller: ControllerConfig) -> Scenario {
    build_manhattan_with(&ManhattanOptions { rows, cols, delta, mode, controller, ..Default::default() }).unwrap()
}

pub fn fixed_time() -> ControllerConfig {
    ControllerConfig::FixedTime { durations: MANHATTAN_FIXED_TIME.to_vec() }
}

pub fn manhattan_valid(rows: usize, cols: usize, turns: &TurnSpec) -> Check {
    let s = build_manhattan_with(&ManhattanOptions { rows, cols, turns: *turns, ..Default::default() }).unwrap();
    prop_assert!(validate_network(&s.network, Some(&s.routing)).is_empty());
    prop_assert!(s.validate().is_empty());
    Ok(())
}

pub fn round_trip(s: &Scenario) -> Check {
    let back = parse_scenario(&s.to_text()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&back, s);
    prop_assert_eq!(back.to_text(), s.to_text());
    Ok(())
}

fn rotate_side(side: Side) -> Side {
    match side {
        Side::North => Side::East,
        Side::East => Side::South,
        Side::South => Side::West,
        Side::West => Side::North,
    }
}

/// Quarter-turn relabeling of an odd `n × n` grid maps lanes, phases,
/// routing and demand onto themselves.
pub fn rotation_symmetry(n: usize, delta: f64, turns: &TurnSpec) -> Check {
    let layout = GridLayout::new(n, n).unwrap();
    let s = build_manhattan_with(&ManhattanOptions { rows: n, cols: n, delta, turns: *turns, ..Default::default() })
        .unwrap();
    let mut map = vec![usize::MAX; layout.n_lanes];
    for a in &layout.approaches {
        let (r, c) = (a.junction / n, a.junction % n);
        let b = layout.approach(c * n + (n - 1 - r), rotate_side(a.side));
        prop_assert_eq!(a.road_lanes, b.road_lanes);
        map[a.left] = b.left;
        map[a.shared] = b.shared;
        if let (Some(x), Some(y)) = (a.straight, b.straight) {
            map[x] = y;
        }
    }
    for l in 0..layout.n_lanes {
        let m = map[l];
        prop_assert_eq!(s.network.lanes[l].arrival_weight, s.network.lanes[m].arrival_weight);
        prop_assert_eq!(s.network.lanes[l].sensor_cap, s.network.lanes[m].sensor_cap);
        let row: Vec<(usize, f64)> = s.routing.row(l).unwrap().iter().map(|&(k, p)| (map[k], p)).collect();
        for (k, p) in row {
            prop_assert!((s.routing.get(m, k) - p).abs() <= 1e-15);
        }
        prop_assert!((s.routing.row_sum(l) - s.routing.row_sum(m)).abs() <= 1e-12);
    }
    for j in &s.network.junctions {
        let (r, c) = (j.id / n, j.id % n);
        let k = &s.network.junctions[c * n + (n - 1 - r)];
        let mut mine: Vec<Vec<usize>> = (0..j.n_phases())
            .map(|p| {
                let mut v: Vec<usize> = j.phase_lanes(p).map(|l| map[l]).collect();
                v.sort();
                v
            })
            .collect();
        let mut theirs: Vec<Vec<usize>> = (0..k.n_phases()).map(|p| k.phase_lanes(p).collect()).collect();
        mine.sort();
        theirs.sort();
        prop_assert_eq!(mine, theirs);
    }
    Ok(())
}

// ---- simulator ----

/// A small random network: a few single-junction stages in series with
/// random routing, fixed-time or GPA control.
pub fn small_network(seed: u64, mode: SimMode, delta: f64, controller: ControllerConfig) -> Scenario {
    let mut s = manhattan(2, 3, delta, mode, controller);
    s.demand.generation_horizon = 400.0;
    s.horizon = 400.0;
    if seed % 3 == 0 {
        for lane in s.network.lanes.iter_mut().step_by(4) {
            lane.capacity = Some(8.0);
            lane.sensor_cap = Some(6.0);
        }
    }
    s
}

pub fn conservation(s: &Scenario, seed: u64) -> Check {
    let mut sim = Simulation::new(s, seed).unwrap();
    let stochastic = s.mode == SimMode::Stochastic;
    for _ in 0..1500 {
        let before = sim.state().x.clone();
        let frozen: Vec<bool> = red_lanes(&sim, s);
        sim.step(s.step).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let st = sim.state();
        prop_assert!(st.x.iter().all(|&v| v >= 0.0));
        if stochastic {
            prop_assert!(st.x.iter().all(|v| v.fract() == 0.0));
            prop_assert_eq!(st.generated, st.exited + st.in_network());
        } else {
            prop_assert!(st.imbalance().abs() <= 1e-9, "imbalance {}", st.imbalance());
        }
        for l in 0..before.len() {
            if frozen[l] {
                prop_assert!(st.x[l] >= before[l], "red lane {l} lost vehicles");
            }
        }
    }
    Ok(())
}

/// Lanes that stay red for the whole next step.
fn red_lanes(sim: &Simulation<'_>, s: &Scenario) -> Vec<bool> {
    let t = sim.state().t;
    let mut red = vec![false; s.network.lanes.len()];
    for (jid, j) in s.network.junctions.iter().enumerate() {
        let Some(p) = &sim.state().programs[jid] else { continue };
        let Ok(end) = p.end() else { continue };
        if end < t + s.step {
            continue;
        }
        let mut green = vec![false; j.lanes.len()];
        let mut q = t;
        while q < t + s.step {
            if let Ok(PhaseRef::Green(i)) = p.active_phase(q) {
                for l in j.phases.lanes_of(i) {
                    green[l] = true;
                }
            }
            q = p.next_boundary(q).unwrap_or(f64::INFINITY);
        }
        for (local, &lane) in j.lanes.iter().enumerate() {
            red[lane] = !green[local];
        }
    }
    red
}

pub fn determinism(s: &Scenario, seed: u64) -> Check {
    let a = run(s, seed).unwrap();
    let b = run(s, seed).unwrap();
    prop_assert_eq!(a, b);
    Ok(())
}

pub fn demand_monotone(d1: f64, d2: f64) -> Check {
    let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
    let mk = |d| {
        let mut s = manhattan(2, 2, d, SimMode::Fluid, fixed_time());
        s.demand.generation_horizon = 600.0;
        s.horizon = 600.0;
        s
    };
    let a = run(&mk(lo), 0).unwrap();
    let b = run(&mk(hi), 0).unwrap();
    prop_assert!(!a.infinite && !b.infinite);
    prop_assert!(b.ttt_hours >= a.ttt_hours - 1e-9, "{} < {}", b.ttt_hours, a.ttt_hours);
    Ok(())
}

pub fn single_lane(x0: f64, saturation: f64, step: f64) -> Scenario {
    Scenario {
        name: "single".into(),
        mode: SimMode::Fluid,
        network: Network {
            lanes: vec![Lane::new(0, Some(0))],
            junctions: vec![Junction { id: 0, lanes: vec![0], phases: PhaseMatrix::identity(1), clearance: 1.0 }],
        },
        routing: RoutingMatrix::empty(1),
        controller_routing: RoutingMatrix::empty(1),
        demand: DemandModel { rate: 0.0, generation_horizon: 0.0 },
        service: ServiceModel { saturation_rate: saturation, ..ServiceModel::default() },
        controller: ControllerConfig::FixedTime { durations: vec![1000.0] },
        overrides: BTreeMap::new(),
        initial_queue: vec![x0],
        horizon: 1000.0,
        hard_cap: None,
        step,
    }
}

// ---- running property groups outside the proptest macro ----

/// Run `check` on `cases` generated values with a fixed-seed runner.
pub fn run_property<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Check,
) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, check).map_err(|e| e.to_string())
}

pub fn allocation_sum(a: &Allocation) -> f64 {
    a.nu.iter().sum::<f64>() + a.w
}
