//! Sweep of the GPA weight kappa against demand on a 4x4 grid.

use signal_lab::harness::{parse_param, summary_csv, sweep};
use signal_lab::scenario::{build_manhattan_with, ManhattanOptions};

fn main() {
    let base = build_manhattan_with(&ManhattanOptions::default()).unwrap();
    let axes = vec![parse_param("kappa=1,5,10,20,50").unwrap(), parse_param("delta=0.05,0.10,0.15").unwrap()];
    let rows = sweep(&base, &axes, &[1, 2]).unwrap();
    print!("{}", summary_csv(&rows));
}
