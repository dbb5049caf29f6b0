//! Experiment verbs behind the command-line tool: `run`, `sweep`, `compare`
//! and `generate`. Every verb is deterministic in its inputs and seeds;
//! independent runs fan out over rayon and are sorted before writing.
//!
//! Exit codes: [`EXIT_OK`], [`EXIT_CONFIG`] (usage, parse, validation and I/O
//! errors), [`EXIT_RUNTIME`] (controller failure during simulation) and
//! [`EXIT_GRIDLOCK`] (a `run` hit its hard cap with vehicles left).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::controllers::ControllerConfig;
use crate::scenario::{
    build_isolated_junction, build_manhattan_with, parse_scenario, ManhattanOptions, Scenario, ScenarioError,
};
use crate::sim::{aggregate_queue, run, RunResult, SimError, DEFAULT_WINDOW};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_GRIDLOCK: i32 = 4;

/// Version token written as the first line of every summary.csv.
pub const SUMMARY_SCHEMA: &str = "#schema=summary/1";
pub const SUMMARY_HEADER: &str = "controller,params,seed,ttt_hours,infinite,blocked_events,mean_cycle_s";
pub const QUEUE_HEADER: &str = "t,total_queue_veh";

/// Parameters `sweep` knows how to vary.
pub const SWEEP_PARAMS: [&str; 6] = ["kappa", "w_bar", "d", "delta", "pf_cycle", "horizon"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        #[source]
        source: ScenarioError,
    },
    #[error(transparent)]
    Build(#[from] ScenarioError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Sim(SimError::Controller { .. }) => EXIT_RUNTIME,
            _ => EXIT_CONFIG,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text).map_err(|source| HarnessError::Scenario { path: path.to_path_buf(), source })
}

/// One line of summary.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub controller: String,
    pub params: String,
    pub seed: u64,
    pub ttt_hours: f64,
    pub infinite: bool,
    pub blocked_events: u64,
    pub mean_cycle_s: f64,
}

impl SummaryRow {
    pub fn new(controller: &ControllerConfig, params: String, r: &RunResult) -> Self {
        Self {
            controller: controller.kind().name().to_string(),
            params,
            seed: r.seed,
            ttt_hours: r.ttt_hours,
            infinite: r.infinite,
            blocked_events: r.blocked_events,
            mean_cycle_s: r.mean_cycle(),
        }
    }

    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.controller, self.params, self.seed, self.ttt_hours, self.infinite, self.blocked_events, self.mean_cycle_s
        )
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), HarnessError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{SUMMARY_SCHEMA}\n{SUMMARY_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

pub fn queue_csv(series: &[(f64, f64)]) -> String {
    let mut s = format!("{QUEUE_HEADER}\n");
    for (t, n) in series {
        s.push_str(&format!("{t},{n}\n"));
    }
    s
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Run one scenario file and write queue.csv, queue_300s.csv and summary.csv.
pub fn cmd_run(scenario_path: &Path, seed: u64, out_dir: &Path) -> Result<RunResult, HarnessError> {
    let scenario = load_scenario(scenario_path)?;
    let result = run(&scenario, seed)?;
    ensure_dir(out_dir)?;
    write_file(&out_dir.join("queue.csv"), &queue_csv(&result.queue_series))?;
    write_file(
        &out_dir.join("queue_300s.csv"),
        &queue_csv(&aggregate_queue(&result.queue_series, DEFAULT_WINDOW)),
    )?;
    let row = SummaryRow::new(&scenario.controller, scenario.controller.params_label(), &result);
    write_file(&out_dir.join("summary.csv"), &summary_csv(&[row]))?;
    Ok(result)
}

/// Parse `name=v1,v2,...` into a sweep axis.
pub fn parse_param(spec: &str) -> Result<(String, Vec<f64>), HarnessError> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Usage(format!("expected name=v1,v2,..., got `{spec}`")))?;
    let name = name.trim();
    if !SWEEP_PARAMS.contains(&name) {
        return Err(HarnessError::Usage(format!(
            "unknown sweep parameter `{name}` (expected one of {})",
            SWEEP_PARAMS.join(", ")
        )));
    }
    let values = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().map_err(|_| HarnessError::Usage(format!("`{name}`: `{v}` is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(HarnessError::Usage(format!("sweep parameter `{name}` has no values")));
    }
    Ok((name.to_string(), values))
}

fn set_controller_param(c: &mut ControllerConfig, name: &str, value: f64) -> bool {
    match (c, name) {
        (ControllerConfig::GpaFull { gpa, .. } | ControllerConfig::GpaShorted { gpa, .. }, "kappa") => gpa.kappa = value,
        (ControllerConfig::GpaFull { gpa, .. } | ControllerConfig::GpaShorted { gpa, .. }, "w_bar") => gpa.w_bar = value,
        (ControllerConfig::MaxPressure { duration, .. }, "d") => *duration = value,
        (ControllerConfig::PropFair { cycle }, "pf_cycle") => *cycle = value,
        _ => return false,
    }
    true
}

/// Apply one sweep coordinate to a scenario.
pub fn apply_param(s: &mut Scenario, name: &str, value: f64) -> Result<(), HarnessError> {
    match name {
        "delta" => s.demand.rate = value,
        "horizon" => {
            s.demand.generation_horizon = value;
            s.horizon = value;
        }
        _ => {
            let mut hit = set_controller_param(&mut s.controller, name, value);
            for c in s.overrides.values_mut() {
                hit |= set_controller_param(c, name, value);
            }
            if !hit {
                return Err(HarnessError::Usage(format!(
                    "sweep parameter `{name}` does not apply to controller {}",
                    s.controller.kind()
                )));
            }
        }
    }
    Ok(())
}

fn scenario_params(s: &Scenario, axes: &[(String, Vec<f64>)]) -> String {
    let mut label = s.controller.params_label();
    for (name, _) in axes {
        match name.as_str() {
            "delta" => label.push_str(&format!(";delta={}", s.demand.rate)),
            "horizon" => label.push_str(&format!(";horizon={}", s.demand.generation_horizon)),
            _ => {}
        }
    }
    label
}

/// Cartesian product of the axes, last axis fastest.
pub fn grid_points(axes: &[(String, Vec<f64>)]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, (_, values)| {
        acc.into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect()
    })
}

fn check_seeds(seeds: &[u64]) -> Result<(), HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Usage("at least one seed is required".into()));
    }
    Ok(())
}

/// Run every (grid point, seed) pair and write summary.csv. Rows come out in
/// grid order, seeds ascending within a point.
pub fn sweep(base: &Scenario, axes: &[(String, Vec<f64>)], seeds: &[u64]) -> Result<Vec<SummaryRow>, HarnessError> {
    if axes.is_empty() {
        return Err(HarnessError::Usage("empty parameter grid".into()));
    }
    check_seeds(seeds)?;
    let mut scenarios = Vec::new();
    for point in grid_points(axes) {
        let mut s = base.clone();
        for ((name, _), &v) in axes.iter().zip(&point) {
            apply_param(&mut s, name, v)?;
        }
        s.check()?;
        scenarios.push(s);
    }
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let mut results = jobs
        .par_iter()
        .map(|&(i, seed)| run(&scenarios[i], seed).map(|r| (i, seed, r)))
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|&(i, seed, _)| (i, seed));
    Ok(results
        .iter()
        .map(|(i, _, r)| {
            let s = &scenarios[*i];
            SummaryRow::new(&s.controller, scenario_params(s, axes), r)
        })
        .collect())
}

pub fn cmd_sweep(
    scenario_path: &Path,
    axes: &[(String, Vec<f64>)],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SummaryRow>, HarnessError> {
    let base = load_scenario(scenario_path)?;
    let rows = sweep(&base, axes, seeds)?;
    ensure_dir(out_dir)?;
    write_file(&out_dir.join("summary.csv"), &summary_csv(&rows))?;
    Ok(rows)
}

/// Seed-averaged results of one controller in a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub controller: ControllerConfig,
    pub rows: Vec<SummaryRow>,
    /// Window-averaged total queue, averaged again over seeds.
    pub queue_300s: Vec<(f64, f64)>,
}

impl ComparisonEntry {
    pub fn mean_ttt(&self) -> f64 {
        self.rows.iter().map(|r| r.ttt_hours).sum::<f64>() / self.rows.len() as f64
    }

    pub fn infinite_runs(&self) -> usize {
        self.rows.iter().filter(|r| r.infinite).count()
    }
}

fn mean_series(series: &[Vec<(f64, f64)>], window: f64) -> Vec<(f64, f64)> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let total: f64 = series.iter().map(|s| s.get(i).map_or(0.0, |p| p.1)).sum();
            (i as f64 * window, total / series.len() as f64)
        })
        .collect()
}

/// Paired runs: every controller sees the same seeds on the same scenario.
pub fn compare(
    base: &Scenario,
    controllers: &[ControllerConfig],
    seeds: &[u64],
) -> Result<Vec<ComparisonEntry>, HarnessError> {
    if controllers.len() < 2 {
        return Err(HarnessError::Usage("compare needs at least two controllers".into()));
    }
    check_seeds(seeds)?;
    let scenarios: Vec<Scenario> = controllers.iter().map(|c| base.with_controller(c.clone())).collect();
    for s in &scenarios {
        s.check()?;
    }
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let mut results = jobs
        .par_iter()
        .map(|&(i, seed)| run(&scenarios[i], seed).map(|r| (i, seed, r)))
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|&(i, seed, _)| (i, seed));
    Ok(controllers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let runs: Vec<&RunResult> = results.iter().filter(|(j, _, _)| *j == i).map(|(_, _, r)| r).collect();
            let aggregated: Vec<_> =
                runs.iter().map(|r| aggregate_queue(&r.queue_series, DEFAULT_WINDOW)).collect();
            ComparisonEntry {
                controller: c.clone(),
                rows: runs.iter().map(|r| SummaryRow::new(c, c.params_label(), r)).collect(),
                queue_300s: mean_series(&aggregated, DEFAULT_WINDOW),
            }
        })
        .collect())
}

/// Entries ordered by mean TTT (ties keep input order).
pub fn ranking(entries: &[ComparisonEntry]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by(|&a, &b| entries[a].mean_ttt().total_cmp(&entries[b].mean_ttt()).then(a.cmp(&b)));
    idx
}

pub fn ranking_csv(entries: &[ComparisonEntry]) -> String {
    let mut s = String::from("rank,controller,params,mean_ttt_hours,infinite_runs\n");
    for (rank, i) in ranking(entries).into_iter().enumerate() {
        let e = &entries[i];
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            rank + 1,
            e.controller.kind(),
            e.controller.params_label(),
            e.mean_ttt(),
            e.infinite_runs()
        ));
    }
    s
}

/// Write summary.csv, ranking.csv and one `queue_300s_<i>_<controller>.csv`
/// per controller.
pub fn cmd_compare(
    scenario_path: &Path,
    controllers: &[ControllerConfig],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<ComparisonEntry>, HarnessError> {
    if controllers.len() < 2 {
        return Err(HarnessError::Usage("compare needs at least two controllers".into()));
    }
    let base = load_scenario(scenario_path)?;
    let entries = compare(&base, controllers, seeds)?;
    ensure_dir(out_dir)?;
    let rows: Vec<SummaryRow> = entries.iter().flat_map(|e| e.rows.iter().cloned()).collect();
    write_file(&out_dir.join("summary.csv"), &summary_csv(&rows))?;
    write_file(&out_dir.join("ranking.csv"), &ranking_csv(&entries))?;
    for (i, e) in entries.iter().enumerate() {
        let name = format!("queue_300s_{i}_{}.csv", e.controller.kind());
        write_file(&out_dir.join(name), &queue_csv(&e.queue_300s))?;
    }
    Ok(entries)
}

/// What `generate` should emit.
#[derive(Debug, Clone, PartialEq)]
pub enum GenerateSpec {
    Manhattan(ManhattanOptions),
    Isolated { lambda: f64, kappa: f64, clearance: f64, w_bar: f64, a: f64 },
}

pub fn cmd_generate(spec: &GenerateSpec, out: Option<&Path>) -> Result<String, HarnessError> {
    let scenario = match spec {
        GenerateSpec::Manhattan(opts) => build_manhattan_with(opts)?,
        GenerateSpec::Isolated { lambda, kappa, clearance, w_bar, a } => {
            build_isolated_junction(*lambda, *kappa, *clearance, *w_bar, *a)?
        }
    };
    let text = scenario.to_text();
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        write_file(path, &text)?;
    }
    Ok(text)
}
