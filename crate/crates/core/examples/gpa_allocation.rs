//! Green-time allocation for a few junction layouts, checked against the
//! grid-search oracle.

use signal_lab::gpa::{brute_force_oracle, cycle_length, objective, solve_gpa, GpaParams};
use signal_lab::signal::PhaseMatrix;

fn show(label: &str, x: &[f64], phases: &PhaseMatrix, params: GpaParams) {
    let a = solve_gpa(x, phases, &params).unwrap();
    let oracle = brute_force_oracle(x, phases, params.kappa, params.w_bar, 1e-3).unwrap();
    let f = objective(x, phases, params.kappa, &a).unwrap();
    let f_oracle = objective(x, phases, params.kappa, &oracle).unwrap();
    let cycle = cycle_length(&a, a.active_phases(1e-9), 5.0).unwrap();
    println!("{label}");
    println!("  nu = {:.4?}, w = {:.4}", a.nu, a.w);
    println!("  objective {f:.6} (oracle {f_oracle:.6}), shorted cycle {cycle:.2} s with T_w = 5");
}

fn main() {
    show("two orthogonal phases, x = (4, 6), kappa = 10", &[4.0, 6.0], &PhaseMatrix::identity(2), GpaParams::new(10.0, 0.0).unwrap());
    show(
        "same queues, clearance floor w_bar = 0.6",
        &[4.0, 6.0],
        &PhaseMatrix::identity(2),
        GpaParams::new(10.0, 0.6).unwrap(),
    );
    let shared = PhaseMatrix::from_sets(3, &[&[0, 1], &[1, 2]]).unwrap();
    show("middle lane served by both phases, x = (2, 3, 1), kappa = 5", &[2.0, 3.0, 1.0], &shared, GpaParams::new(5.0, 0.0).unwrap());
}
