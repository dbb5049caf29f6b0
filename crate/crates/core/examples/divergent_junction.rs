//! An isolated two-lane junction whose shorted GPA cycles grow without bound,
//! and the same junction stabilized by a lower bound on the clearance share.

use signal_lab::scenario::build_isolated_junction;
use signal_lab::sim::Simulation;

fn trace(w_bar: f64, horizon: f64) {
    let s = build_isolated_junction(0.1, 0.1, 1.0, w_bar, 1.0).unwrap();
    let mut sim = Simulation::new(&s, 0).unwrap();
    while sim.state().t < horizon {
        sim.step(s.step).unwrap();
    }
    let cycles = &sim.cycles()[0];
    println!("w_bar = {w_bar}: {} cycles in {horizon} s", cycles.len());
    for (n, c) in cycles.iter().enumerate().filter(|(n, _)| n % 10 == 0).take(8) {
        println!("  cycle {n:>3}: length {:>7.3} s, peak queue {:.3}", c.length, c.peak_queue);
    }
}

fn main() {
    trace(0.0, 5000.0);
    trace(0.2, 5000.0);
}
