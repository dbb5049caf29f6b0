use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use signal_lab::controllers::ControllerConfig;
use signal_lab::harness::{self, GenerateSpec, HarnessError, EXIT_CONFIG, EXIT_GRIDLOCK, EXIT_OK};
use signal_lab::scenario::{parse_controller_spec, ManhattanOptions, TurnSpec};
use signal_lab::sim::SimMode;

/// Traffic-signal control laboratory.
///
/// Exit codes: 0 success, 2 usage/configuration/I-O error, 3 controller
/// failure during simulation, 4 `run` stopped at its hard cap (gridlock).
#[derive(Parser)]
#[command(name = "signal-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write queue.csv, queue_300s.csv, summary.csv.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Sweep scenario/controller parameters, e.g. `--param kappa=1,5,10 --param delta=0.05`.
    Sweep {
        scenario: PathBuf,
        /// name=v1,v2,... with name in kappa, w_bar, d, delta, pf_cycle, horizon.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Paired comparison, e.g. `--controller gpa-shorted:kappa=10 --controller max-pressure:d=10`.
    Compare {
        scenario: PathBuf,
        #[arg(long = "controller", required = true)]
        controllers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Emit a scenario file.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
        /// Output path; stdout when omitted.
        #[arg(long, short, global = true)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fluid,
    Stochastic,
}

#[derive(Subcommand)]
enum GenerateKind {
    /// Manhattan grid with alternating one- and two-lane streets.
    Manhattan {
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Turning probabilities left,straight,right.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.2, 0.6, 0.2])]
        turns: Vec<f64>,
        /// Turning probabilities MaxPressure believes, left,straight,right.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        believed_turns: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = Mode::Stochastic)]
        mode: Mode,
        #[arg(long, default_value_t = 3600.0)]
        generation_horizon: f64,
        #[arg(long, default_value = "gpa-shorted:kappa=10")]
        controller: String,
    },
    /// Two-lane isolated junction under shorted-cycle GPA.
    Isolated {
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 0.1)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        clearance: f64,
        #[arg(long, default_value_t = 0.0)]
        w_bar: f64,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
    },
}

fn turns(v: &[f64]) -> Result<TurnSpec, HarnessError> {
    Ok(TurnSpec::new(v[0], v[1], v[2])?)
}

fn controllers(specs: &[String]) -> Result<Vec<ControllerConfig>, HarnessError> {
    specs.iter().map(|s| Ok(parse_controller_spec(s)?)).collect()
}

fn execute(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Run { scenario, seed, out } => {
            let r = harness::cmd_run(&scenario, seed, &out)?;
            if r.infinite {
                println!("ttt_hours=inf (hard cap reached at t={} with {} vehicles)", r.end_time, r.final_queue);
                return Ok(EXIT_GRIDLOCK);
            }
            println!("ttt_hours={}", r.ttt_hours);
        }
        Command::Sweep { scenario, params, seeds, out } => {
            let axes = params.iter().map(|p| harness::parse_param(p)).collect::<Result<Vec<_>, _>>()?;
            let rows = harness::cmd_sweep(&scenario, &axes, &seeds, &out)?;
            for r in rows {
                println!("{} {} seed={} ttt_hours={}", r.controller, r.params, r.seed, r.ttt_hours);
            }
        }
        Command::Compare { scenario, controllers: specs, seeds, out } => {
            let entries = harness::cmd_compare(&scenario, &controllers(&specs)?, &seeds, &out)?;
            for i in harness::ranking(&entries) {
                let e = &entries[i];
                println!("{} {} mean_ttt_hours={}", e.controller.kind(), e.controller.params_label(), e.mean_ttt());
            }
        }
        Command::Generate { kind, out } => {
            let spec = match kind {
                GenerateKind::Manhattan {
                    rows,
                    cols,
                    delta,
                    turns: t,
                    believed_turns,
                    mode,
                    generation_horizon,
                    controller,
                } => GenerateSpec::Manhattan(ManhattanOptions {
                    rows,
                    cols,
                    delta,
                    turns: turns(&t)?,
                    believed_turns: believed_turns.as_deref().map(turns).transpose()?,
                    mode: match mode {
                        Mode::Fluid => SimMode::Fluid,
                        Mode::Stochastic => SimMode::Stochastic,
                    },
                    generation_horizon,
                    controller: parse_controller_spec(&controller)?,
                }),
                GenerateKind::Isolated { lambda, kappa, clearance, w_bar, a } => {
                    GenerateSpec::Isolated { lambda, kappa, clearance, w_bar, a }
                }
            };
            let text = harness::cmd_generate(&spec, out.as_deref())?;
            if out.is_none() {
                print!("{text}");
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
