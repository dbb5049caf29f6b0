//! Decentralized traffic-signal control on point-queue networks.
//!
//! * [`signal`]: lanes, junctions, phase matrices, routing and signal programs.
//! * [`gpa`]: the proportional-allocation solver behind the GPA controllers.
//! * [`controllers`]: GPA (full and shorted cycles), MaxPressure, fixed-time
//!   and proportional-fair controllers.
//! * [`sim`]: the fluid / stochastic point-queue simulator.
//! * [`scenario`]: Manhattan-grid and isolated-junction builders plus the
//!   scenario file format.
//! * [`harness`]: the `run`, `sweep`, `compare` and `generate` experiment verbs.

pub mod controllers;
pub mod gpa;
pub mod harness;
pub mod scenario;
pub mod signal;
pub mod sim;

pub use controllers::{ControllerConfig, ControllerKind, Measurement, RoutingSource};
pub use gpa::{solve_gpa, Allocation, GpaParams};
pub use scenario::{build_isolated_junction, build_manhattan, parse_scenario, Scenario, TurnSpec};
pub use signal::{Junction, Lane, Network, PhaseMatrix, PhaseRef, RoutingMatrix, SignalProgram};
pub use sim::{run, RunResult, SimMode};
