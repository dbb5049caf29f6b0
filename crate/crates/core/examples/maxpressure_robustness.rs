//! MaxPressure with correct and deliberately wrong turning ratios, across
//! demand levels and phase durations.

use signal_lab::controllers::ControllerConfig;
use signal_lab::scenario::{build_manhattan_with, ManhattanOptions, TurnSpec};
use signal_lab::sim::run;

fn mean_ttt(opts: &ManhattanOptions) -> f64 {
    let s = build_manhattan_with(opts).unwrap();
    let seeds = 1..=5u64;
    let n = seeds.clone().count() as f64;
    seeds.map(|seed| run(&s, seed).unwrap().ttt_hours).sum::<f64>() / n
}

fn main() {
    println!("{:>6} {:>4} {:>12} {:>12} {:>8}", "delta", "d", "correct (h)", "wrong (h)", "change");
    for delta in [0.05, 0.10, 0.15] {
        for d in [10.0, 20.0, 30.0] {
            let opts = ManhattanOptions { delta, controller: ControllerConfig::max_pressure(d), ..Default::default() };
            let right = mean_ttt(&opts);
            let wrong = mean_ttt(&ManhattanOptions { believed_turns: Some(TurnSpec::wrong()), ..opts });
            println!("{delta:>6.2} {d:>4} {right:>12.2} {wrong:>12.2} {:>7.1}%", 100.0 * (wrong - right) / right);
        }
    }
}
