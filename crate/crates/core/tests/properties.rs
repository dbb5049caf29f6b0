mod common;

use common::*;
use proptest::prelude::*;
use signal_lab::controllers::ControllerConfig;
use signal_lab::scenario::{build_isolated_junction, TurnSpec};
use signal_lab::sim::SimMode;

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn allocation_is_feasible(inst in any_instance()) {
        feasibility(&inst)?;
    }

    #[test]
    fn joint_scaling_invariance(inst in any_instance(), alpha in 0.01..100.0f64) {
        joint_scaling(&inst, alpha)?;
    }

    #[test]
    fn argmax_is_scale_invariant(inst in any_instance(), alpha in 0.01..100.0f64) {
        argmax_invariance(&inst, alpha)?;
    }

    #[test]
    fn phase_permutation_equivariance(inst in any_instance(), seed in any::<u64>()) {
        permutation_equivariance(&inst, seed)?;
    }

    #[test]
    fn orthogonal_split_is_proportional(inst in orthogonal_instance(6)) {
        proportionality(&inst)?;
    }

    #[test]
    fn cycle_grows_with_total_queue(inst in orthogonal_instance(6), extra in 0.01..50.0f64, lane in 0..64usize) {
        monotone_cycle(&inst, extra, lane)?;
    }

    #[test]
    fn numeric_route_matches_closed_form(inst in orthogonal_instance(6)) {
        orthogonal_agreement(&inst)?;
    }

    #[test]
    fn solver_dominates_coarse_oracle(inst in shared_instance()) {
        oracle_dominance(&inst, 0.01, 1e-6)?;
    }

    #[test]
    fn clearance_bound_activates(inst in any_instance(), w in 0.05..0.95f64) {
        bound_activation(&inst, w)?;
    }

    #[test]
    fn programs_are_well_formed(inst in any_instance(), t in 0.0..1e4f64, clearance in 0.5..10.0f64) {
        program_validity(&inst, t, clearance)?;
    }

    #[test]
    fn active_phase_follows_definition(
        durations in prop::collection::vec(prop_oneof![Just(0.0), 0.0..40.0f64], 1..5),
        frac in 0.0..1.2f64,
    ) {
        active_phase_definition(&durations, frac)?;
    }

    #[test]
    fn sensors_saturate(x in 0.0..100.0f64, cap in prop::option::of(0.0..20.0f64)) {
        measurement_saturation(x, cap)?;
    }

    #[test]
    fn routing_rows_match_exit_deficits(rows in 2..6usize, cols in 2..6usize, turns in turn_spec()) {
        routing_rows(rows, cols, &turns)?;
    }

    #[test]
    fn manhattan_always_validates(rows in 2..7usize, cols in 2..7usize, turns in turn_spec()) {
        manhattan_valid(rows, cols, &turns)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scenario_round_trip(rows in 2..5usize, cols in 2..5usize, delta in 0.0..0.3f64, wrong in any::<bool>()) {
        let mut s = manhattan(rows, cols, delta, SimMode::Stochastic, fixed_time());
        if wrong {
            s.controller_routing = signal_lab::scenario::derive_routing(
                &signal_lab::scenario::GridLayout::new(rows, cols).unwrap(),
                &TurnSpec::wrong(),
            );
        }
        round_trip(&s)?;
        round_trip(&build_isolated_junction(delta, 0.1 + delta, 1.0, delta / 2.0, 1.0).unwrap())?;
    }

    #[test]
    fn odd_grids_are_rotation_symmetric(k in 1..4usize, delta in 0.0..0.2f64, turns in turn_spec()) {
        rotation_symmetry(2 * k + 1, delta, &turns)?;
    }

    #[test]
    fn fluid_runs_conserve_vehicles(seed in any::<u64>(), delta in 0.0..0.3f64, gpa in any::<bool>()) {
        let c = if gpa { ControllerConfig::gpa_full(10.0, 0.0).unwrap() } else { fixed_time() };
        conservation(&small_network(seed, SimMode::Fluid, delta, c), seed)?;
    }

    #[test]
    fn stochastic_runs_conserve_vehicles(seed in any::<u64>(), delta in 0.0..0.3f64, mp in any::<bool>()) {
        let c = if mp { ControllerConfig::max_pressure(10.0) } else { ControllerConfig::gpa_shorted(10.0, 0.0).unwrap() };
        conservation(&small_network(seed, SimMode::Stochastic, delta, c), seed)?;
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), delta in 0.0..0.2f64) {
        determinism(&small_network(seed, SimMode::Stochastic, delta, ControllerConfig::max_pressure(10.0)), seed)?;
    }

    #[test]
    fn more_demand_never_lowers_travel_time(d1 in 0.0..0.2f64, d2 in 0.0..0.2f64) {
        demand_monotone(d1, d2)?;
    }
}
