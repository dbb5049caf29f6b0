//! Generate a scenario, write it as text, read it back and check that the
//! content hash and the simulated outcome survive the round trip.

use signal_lab::scenario::{build_manhattan_with, parse_scenario, ManhattanOptions, TurnSpec};
use signal_lab::sim::run;

fn main() {
    let opts = ManhattanOptions {
        rows: 3,
        cols: 3,
        delta: 0.1,
        believed_turns: Some(TurnSpec::wrong()),
        ..Default::default()
    };
    let s = build_manhattan_with(&opts).unwrap();
    let text = s.to_text();
    println!("{}", text.lines().take(12).collect::<Vec<_>>().join("\n"));
    println!("... ({} lines)", text.lines().count());

    let back = parse_scenario(&text).unwrap();
    assert_eq!(back, s);
    println!("hash {} == {}", s.hash(), back.hash());
    let (a, b) = (run(&s, 7).unwrap(), run(&back, 7).unwrap());
    println!("TTT {:.3} h vs {:.3} h", a.ttt_hours, b.ttt_hours);

    let broken = text.replacen("saturation_rate", "saturation_rat", 1);
    if let Err(e) = parse_scenario(&broken) {
        println!("typo rejected: {e}");
    }
}
