//! Signal programs each controller emits for one measured junction.

use signal_lab::controllers::{ControllerConfig, Measurement};
use signal_lab::signal::{Junction, PhaseMatrix, RoutingMatrix};

fn main() {
    let junction = Junction { id: 0, lanes: vec![0, 1], phases: PhaseMatrix::identity(2), clearance: 5.0 };
    let m = Measurement::local(0, 0.0, vec![4.0, 6.0]);
    let routing = RoutingMatrix::empty(2);
    let controllers = [
        ControllerConfig::gpa_full(10.0, 0.0).unwrap(),
        ControllerConfig::gpa_shorted(10.0, 0.0).unwrap(),
        ControllerConfig::max_pressure(10.0),
        ControllerConfig::FixedTime { durations: vec![25.0, 25.0] },
        ControllerConfig::PropFair { cycle: 110.0 },
    ];
    for c in &controllers {
        let p = c.program(&m, &junction, &routing, &routing).unwrap();
        let entries: Vec<String> = p.entries().iter().map(|(ph, end)| format!("({ph}, {end:.1})")).collect();
        println!("{:<12} span {:>6.1} s  {}", c.kind().name(), p.span(), entries.join(" "));
    }
}
