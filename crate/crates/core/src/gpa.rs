//! Generalized proportional allocation kernel.
//!
//! Maximizes `Σ_l x_l log((Pᵀν)_l) + κ log(w)` over `Σ ν + w = 1`, `ν ≥ 0`,
//! `w ≥ w̄`. Writing `ν = (1 − w) μ` with `μ` on the probability simplex
//! separates the problem: the clearance share has the closed form
//! `w = max(κ / (κ + Σx), w̄)` and `μ` maximizes `Σ_l x_l log((Pᵀμ)_l)`,
//! which is solved by entropic mirror ascent, finished with Newton steps on
//! the optimal face, unless the phases are
//! orthogonal, where `μ` is the normalized per-phase load.

use thiserror::Error;

use crate::signal::PhaseMatrix;

/// Feasibility tolerance on `Σ ν + w = 1`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const MAX_ITERATIONS: usize = 100_000;
const GAP_TOL: f64 = 1e-11;
const POLISH_GAP: f64 = 1e-5;
const ACCEPTABLE_GAP: f64 = 1e-7;
const MAX_ORACLE_POINTS: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpaError {
    #[error("kappa must be > 0 (got {0})")]
    InvalidKappa(f64),
    #[error("w_bar must lie in [0, 1) (got {0})")]
    InvalidWBar(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("queue lengths must be finite and >= 0")]
    NegativeQueue,
    #[error("clearance share w must be > 0 to define a cycle")]
    ZeroClearance,
    #[error("active phase count must be >= 1")]
    NoActivePhases,
    #[error("solver did not converge: relative gap {gap:e} after {iterations} iterations")]
    NotConverged {
        best: Allocation,
        gap: f64,
        iterations: usize,
    },
    #[error("oracle grid too large ({points:e} points)")]
    GridTooLarge { points: f64 },
    #[error("oracle supports at most 4 phases (got {0})")]
    TooManyPhases(usize),
    #[error("grid step must lie in (0, 1] (got {0})")]
    InvalidStep(f64),
}

/// Tuning parameters `κ` and `w̄`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GpaParams {
    pub kappa: f64,
    pub w_bar: f64,
}

impl GpaParams {
    pub fn new(kappa: f64, w_bar: f64) -> Result<Self, GpaError> {
        let p = Self { kappa, w_bar };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GpaError> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(GpaError::InvalidKappa(self.kappa));
        }
        if !(0.0..1.0).contains(&self.w_bar) {
            return Err(GpaError::InvalidWBar(self.w_bar));
        }
        Ok(())
    }
}

/// Phase fractions `ν` and clearance fraction `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub nu: Vec<f64>,
    pub w: f64,
}

impl Allocation {
    pub fn idle(n_phases: usize) -> Self {
        Self {
            nu: vec![0.0; n_phases],
            w: 1.0,
        }
    }

    pub fn is_feasible(&self, w_bar: f64) -> bool {
        let total: f64 = self.nu.iter().sum::<f64>() + self.w;
        (total - 1.0).abs() <= FEASIBILITY_TOL
            && self.nu.iter().all(|&v| v >= 0.0)
            && self.w >= w_bar
    }

    /// Phases with `ν_i > threshold`.
    pub fn active_phases(&self, threshold: f64) -> usize {
        self.nu.iter().filter(|&&v| v > threshold).count()
    }
}

fn check_queues(x: &[f64], phases: &PhaseMatrix) -> Result<(), GpaError> {
    if x.len() != phases.n_lanes() {
        return Err(GpaError::Dimension {
            expected: phases.n_lanes(),
            got: x.len(),
        });
    }
    if x.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(GpaError::NegativeQueue);
    }
    Ok(())
}

/// `x log(s)` with `0 log 0 = 0`.
fn xlogs(x: f64, s: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if s <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x * s.ln()
    }
}

/// The GPA objective at `allocation`; `-∞` when a loaded lane gets no service
/// or `w = 0`.
pub fn objective(
    x: &[f64],
    phases: &PhaseMatrix,
    kappa: f64,
    allocation: &Allocation,
) -> Result<f64, GpaError> {
    check_queues(x, phases)?;
    if allocation.nu.len() != phases.n_phases() {
        return Err(GpaError::Dimension {
            expected: phases.n_phases(),
            got: allocation.nu.len(),
        });
    }
    let shares = phases.lane_shares(&allocation.nu);
    let lanes: f64 = x.iter().zip(&shares).map(|(&xl, &s)| xlogs(xl, s)).sum();
    Ok(lanes + xlogs(kappa, allocation.w))
}

/// Closed form for orthogonal phases, from per-phase loads `Σ_l P_il x_l`.
/// When `κ / (κ + Σx)` falls below `w̄` the bound is active and the remaining
/// `1 − w̄` is split in proportion to the loads.
pub fn solve_orthogonal(phase_loads: &[f64], kappa: f64, w_bar: f64) -> Result<Allocation, GpaError> {
    GpaParams::new(kappa, w_bar)?;
    if phase_loads.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(GpaError::NegativeQueue);
    }
    let total: f64 = phase_loads.iter().sum();
    if total == 0.0 {
        return Ok(Allocation::idle(phase_loads.len()));
    }
    let free = kappa / (kappa + total);
    if free >= w_bar {
        Ok(Allocation {
            nu: phase_loads.iter().map(|&v| v / (kappa + total)).collect(),
            w: free,
        })
    } else {
        Ok(Allocation {
            nu: phase_loads.iter().map(|&v| (1.0 - w_bar) * v / total).collect(),
            w: w_bar,
        })
    }
}

/// Solve the allocation problem for any valid phase matrix. Orthogonal phase
/// sets use the closed form; others use [`solve_iterative`].
pub fn solve_gpa(x: &[f64], phases: &PhaseMatrix, params: &GpaParams) -> Result<Allocation, GpaError> {
    params.validate()?;
    check_queues(x, phases)?;
    if phases.is_orthogonal() {
        return solve_orthogonal(&phases.phase_sums(x), params.kappa, params.w_bar);
    }
    solve_iterative(x, phases, params)
}

/// Numeric route: closed-form clearance share plus mirror ascent for the
/// phase split. Never dispatches to the orthogonal formula.
pub fn solve_iterative(
    x: &[f64],
    phases: &PhaseMatrix,
    params: &GpaParams,
) -> Result<Allocation, GpaError> {
    params.validate()?;
    check_queues(x, phases)?;
    let total: f64 = x.iter().sum();
    if total == 0.0 {
        return Ok(Allocation::idle(phases.n_phases()));
    }
    let w = (params.kappa / (params.kappa + total)).max(params.w_bar);
    let scale = 1.0 - w;
    let finish = |mu: Vec<f64>| Allocation {
        nu: mu.into_iter().map(|m| scale * m).collect(),
        w,
    };
    match proportional_split(x, phases) {
        Ok(split) => Ok(finish(split.mu)),
        Err(SplitError::NotConverged { mu, gap, iterations }) => Err(GpaError::NotConverged {
            best: finish(mu),
            gap,
            iterations,
        }),
    }
}

/// Result of the `κ = 0` split problem `max Σ_l x_l log((Pᵀμ)_l)` on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalSplit {
    pub mu: Vec<f64>,
    /// Frank–Wolfe gap relative to `Σx`; an upper bound on suboptimality / `Σx`.
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug)]
enum SplitError {
    NotConverged { mu: Vec<f64>, gap: f64, iterations: usize },
}

/// Proportionally fair phase split of a unit budget. Returns all zeros when
/// every queue is empty.
pub fn proportional_share(x: &[f64], phases: &PhaseMatrix) -> Result<ProportionalSplit, GpaError> {
    check_queues(x, phases)?;
    if phases.is_orthogonal() {
        let loads = phases.phase_sums(x);
        let total: f64 = loads.iter().sum();
        let mu = if total > 0.0 {
            loads.iter().map(|&v| v / total).collect()
        } else {
            vec![0.0; loads.len()]
        };
        return Ok(ProportionalSplit { mu, gap: 0.0, iterations: 0 });
    }
    proportional_split(x, phases).map_err(|SplitError::NotConverged { mu, gap, iterations }| {
        GpaError::NotConverged {
            best: Allocation { nu: mu, w: 0.0 },
            gap,
            iterations,
        }
    })
}

/// Entropic mirror ascent with backtracking on the loaded phases.
fn proportional_split(x: &[f64], phases: &PhaseMatrix) -> Result<ProportionalSplit, SplitError> {
    let n_p = phases.n_phases();
    let total: f64 = x.iter().sum();
    let mut mu = vec![0.0; n_p];
    if total == 0.0 {
        return Ok(ProportionalSplit { mu, gap: 0.0, iterations: 0 });
    }
    // Phases without load get nothing at the optimum.
    let support: Vec<usize> = (0..n_p)
        .filter(|&i| phases.lanes_of(i).any(|l| x[l] > 0.0))
        .collect();
    if support.len() == 1 {
        mu[support[0]] = 1.0;
        return Ok(ProportionalSplit { mu, gap: 0.0, iterations: 0 });
    }
    for &i in &support {
        mu[i] = 1.0 / support.len() as f64;
    }

    let gradient = |shares: &[f64]| -> Vec<f64> {
        (0..n_p)
            .map(|i| {
                phases
                    .lanes_of(i)
                    .filter(|&l| x[l] > 0.0)
                    .map(|l| x[l] / shares[l])
                    .sum::<f64>()
                    / total
            })
            .collect()
    };
    // Objective change computed from the share increments, which stays
    // accurate long after the objective values themselves stop differing.
    let improvement = |shares: &[f64], mu: &[f64], candidate: &[f64]| -> f64 {
        let delta: Vec<f64> = mu.iter().zip(candidate).map(|(a, b)| b - a).collect();
        let ds = phases.lane_shares(&delta);
        x.iter()
            .zip(shares)
            .zip(&ds)
            .filter(|((&xl, _), _)| xl > 0.0)
            .map(|((&xl, &s), &d)| xl * (d / s).ln_1p())
            .sum::<f64>()
    };

    let mut step = 1.0;
    let mut shares = phases.lane_shares(&mu);
    let mut grad = gradient(&shares);
    let mut gap = f64::INFINITY;
    let mut candidate = vec![0.0; n_p];
    let mut next_polish = 0;
    let mut iterations = 0;
    for iteration in 0..MAX_ITERATIONS {
        iterations = iteration;
        // Σ μ_i g_i = 1 at every interior point, so the gap is max g − 1.
        let g_max = support.iter().map(|&i| grad[i]).fold(f64::MIN, f64::max);
        gap = (g_max - 1.0).max(0.0);
        if gap <= GAP_TOL {
            return Ok(ProportionalSplit { mu, gap, iterations: iteration });
        }
        if gap <= POLISH_GAP && iteration >= next_polish {
            // Candidate faces: phases still carrying weight, or phases whose
            // marginal value is close to the best.
            let by_weight: Vec<usize> = support.iter().copied().filter(|&i| mu[i] > 1e-9).collect();
            let by_gradient: Vec<usize> = support.iter().copied().filter(|&i| grad[i] >= 1.0 - 1e-3).collect();
            for face in [by_weight, by_gradient] {
                if let Some((polished, g)) = newton_polish(x, phases, total, &support, &face, &mu) {
                    return Ok(ProportionalSplit { mu: polished, gap: g, iterations: iteration });
                }
            }
            next_polish = iteration + 200;
        }
        let mut accepted = false;
        while step > 1e-16 {
            let mut z = 0.0;
            for &i in &support {
                candidate[i] = mu[i] * (step * (grad[i] - g_max)).exp();
                z += candidate[i];
            }
            for &i in &support {
                candidate[i] /= z;
            }
            let gain = improvement(&shares, &mu, &candidate);
            if gain > 0.0 {
                std::mem::swap(&mut mu, &mut candidate);
                shares = phases.lane_shares(&mu);
                grad = gradient(&shares);
                step = (step * 2.0).min(1e6);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if gap <= ACCEPTABLE_GAP {
        Ok(ProportionalSplit { mu, gap, iterations })
    } else {
        Err(SplitError::NotConverged { mu, gap, iterations })
    }
}

/// Newton's method on a face of the simplex, solving `g_i(μ) = 1` for the
/// phases in `face` with the others at zero. Returns `None` unless the
/// result is a certified optimum with gap at most `GAP_TOL`.
fn newton_polish(
    x: &[f64],
    phases: &PhaseMatrix,
    total: f64,
    support: &[usize],
    face: &[usize],
    mu: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let n_p = phases.n_phases();
    let loaded: Vec<usize> = (0..x.len()).filter(|&l| x[l] > 0.0).collect();
    let mut mu: Vec<f64> = (0..n_p).map(|i| if face.contains(&i) { mu[i] } else { 0.0 }).collect();
    let m = face.len();
    for _ in 0..50 {
        let shares = phases.lane_shares(&mu);
        if loaded.iter().any(|&l| shares[l] <= 0.0) {
            return None;
        }
        let mut residual = vec![0.0; m];
        let mut jac = vec![vec![0.0; m]; m];
        for (a, &i) in face.iter().enumerate() {
            residual[a] = 1.0;
            for &l in &loaded {
                if !phases.contains(i, l) {
                    continue;
                }
                residual[a] -= x[l] / shares[l] / total;
                for (b, &k) in face.iter().enumerate() {
                    if phases.contains(k, l) {
                        jac[a][b] -= x[l] / (shares[l] * shares[l]) / total;
                    }
                }
            }
        }
        if residual.iter().all(|r| r.abs() <= 1e-14) {
            break;
        }
        let delta = solve_dense(jac, residual)?;
        let mut alpha = 1.0;
        while face.iter().zip(&delta).any(|(&i, d)| mu[i] + alpha * d <= 0.0) {
            alpha *= 0.5;
            if alpha < 1e-12 {
                return None;
            }
        }
        for (&i, d) in face.iter().zip(&delta) {
            mu[i] += alpha * d;
        }
    }
    let sum: f64 = mu.iter().sum();
    for v in &mut mu {
        *v /= sum;
    }
    let shares = phases.lane_shares(&mu);
    if loaded.iter().any(|&l| shares[l] <= 0.0) {
        return None;
    }
    let g_max = support
        .iter()
        .map(|&i| phases.lanes_of(i).filter(|&l| x[l] > 0.0).map(|l| x[l] / shares[l]).sum::<f64>() / total)
        .fold(f64::MIN, f64::max);
    let gap = (g_max - 1.0).max(0.0);
    (gap <= GAP_TOL).then_some((mu, gap))
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut out = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * out[k]).sum();
        out[row] = (b[row] - s) / a[row][row];
    }
    Some(out)
}

/// Best point of the grid `{ν : ν_i ∈ step·ℤ, Σν + w = 1, w ≥ w̄}`.
///
/// The first `n_p − 1` coordinates are enumerated exhaustively. Along the
/// last coordinate the objective is concave, so its grid maximum is located
/// by bisection on the forward difference, which returns the same point as
/// scanning the line.
pub fn brute_force_oracle(
    x: &[f64],
    phases: &PhaseMatrix,
    kappa: f64,
    w_bar: f64,
    grid_step: f64,
) -> Result<Allocation, GpaError> {
    check_queues(x, phases)?;
    let n_p = phases.n_phases();
    if n_p > 4 {
        return Err(GpaError::TooManyPhases(n_p));
    }
    if n_p == 0 {
        return Err(GpaError::Dimension { expected: 1, got: 0 });
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(GpaError::InvalidStep(grid_step));
    }
    if !(0.0..1.0).contains(&w_bar) {
        return Err(GpaError::InvalidWBar(w_bar));
    }
    let budget = ((1.0 - w_bar) / grid_step + 1e-9).floor() as usize;
    // Number of prefixes (k_1..k_{n-1}) with Σk ≤ budget: C(budget + n − 1, n − 1).
    let mut points = 1.0;
    for i in 1..n_p {
        points *= (budget + i) as f64 / i as f64;
    }
    if points > MAX_ORACLE_POINTS {
        return Err(GpaError::GridTooLarge { points });
    }

    let last = n_p - 1;
    let last_lanes: Vec<usize> = phases.lanes_of(last).filter(|&l| x[l] > 0.0).collect();
    let mut best = (f64::NEG_INFINITY, vec![0usize; n_p]);
    let mut prefix = vec![0usize; n_p];

    // Objective along the line ν_last = step·k given the prefix coverage.
    let eval_line = |base: &[f64], constant: f64, used: usize, k: usize| -> f64 {
        let s = grid_step * k as f64;
        let mut v = constant;
        for &l in &last_lanes {
            v += xlogs(x[l], base[l] + s);
        }
        let w = 1.0 - grid_step * (used + k) as f64;
        v + xlogs(kappa, w.max(0.0))
    };

    let mut visit = |prefix: &[usize], used: usize| {
        let nu_prefix: Vec<f64> = (0..n_p)
            .map(|i| if i < last { grid_step * prefix[i] as f64 } else { 0.0 })
            .collect();
        let base = phases.lane_shares(&nu_prefix);
        let constant: f64 = (0..x.len())
            .filter(|l| !phases.contains(last, *l))
            .map(|l| xlogs(x[l], base[l]))
            .sum();
        let max_k = budget - used;
        let f = |k: usize| eval_line(&base, constant, used, k);
        let mut candidates = vec![0, max_k];
        if max_k >= 2 {
            // Interior values are all finite or all -inf; bisection finds the
            // first k where the sequence stops increasing.
            let (mut lo, mut hi) = (1usize, max_k - 1);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if f(mid + 1) > f(mid) {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            candidates.push(lo);
        }
        for k in candidates {
            let v = f(k);
            if v > best.0 {
                let mut point = prefix.to_vec();
                point[last] = k;
                best = (v, point);
            }
        }
    };

    enumerate_prefix(&mut prefix, 0, last, budget, 0, &mut visit);

    let point = best.1;
    let nu: Vec<f64> = point.iter().map(|&k| grid_step * k as f64).collect();
    let used: usize = point.iter().sum();
    Ok(Allocation {
        nu,
        w: 1.0 - grid_step * used as f64,
    })
}

fn enumerate_prefix(
    prefix: &mut Vec<usize>,
    depth: usize,
    last: usize,
    budget: usize,
    used: usize,
    visit: &mut impl FnMut(&[usize], usize),
) {
    if depth == last {
        visit(prefix, used);
        return;
    }
    for k in 0..=(budget - used) {
        prefix[depth] = k;
        enumerate_prefix(prefix, depth + 1, last, budget, used + k, visit);
    }
    prefix[depth] = 0;
}

/// Cycle length `n_active · T_w / w`.
pub fn cycle_length(allocation: &Allocation, n_active: usize, clearance: f64) -> Result<f64, GpaError> {
    if n_active == 0 {
        return Err(GpaError::NoActivePhases);
    }
    if !(allocation.w > 0.0) {
        return Err(GpaError::ZeroClearance);
    }
    Ok(n_active as f64 * clearance / allocation.w)
}
