//! Paired comparison of GPA, fixed-time and proportional-fair control on the
//! 4x4 grid at low demand.

use signal_lab::controllers::ControllerConfig;
use signal_lab::harness::{compare, ranking};
use signal_lab::scenario::{build_manhattan_with, ManhattanOptions};

fn main() {
    let base = build_manhattan_with(&ManhattanOptions { delta: 0.05, ..Default::default() }).unwrap();
    let controllers = [
        ControllerConfig::gpa_shorted(10.0, 0.0).unwrap(),
        ControllerConfig::FixedTime { durations: vec![30.0, 15.0, 30.0, 15.0] },
        ControllerConfig::PropFair { cycle: 110.0 },
    ];
    let seeds: Vec<u64> = (1..=5).collect();
    let entries = compare(&base, &controllers, &seeds).unwrap();
    for (rank, i) in ranking(&entries).into_iter().enumerate() {
        let e = &entries[i];
        let peak = e.queue_300s.iter().map(|p| p.1).fold(0.0, f64::max);
        println!(
            "{}. {:<12} {:<22} mean TTT {:>7.2} h, peak 300 s queue {:>6.1}",
            rank + 1,
            e.controller.kind().name(),
            e.controller.params_label(),
            e.mean_ttt(),
            peak
        );
    }
}
