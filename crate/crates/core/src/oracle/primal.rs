//! Direct solution of the constrained problem over per-prompt distributions.
//!
//! Nothing here uses the closed-form tilted policy, so the values computed
//! by this module are an independent check on the dual solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Constraints, Problem};
use crate::policy::PolicyTable;
use crate::scoring::NUM_CONSTRAINTS;

/// Constraints that some response violates. The others (`g_i >= 0` for
/// every response) hold for every policy and are dropped.
pub fn binding_constraints(problem: &Problem) -> Vec<usize> {
    (0..NUM_CONSTRAINTS)
        .filter(|&i| {
            (0..problem.num_prompts()).any(|x| {
                (0..problem.catalog_sizes()[x]).any(|y| problem.slack(x, y)[i] < 0.0)
            })
        })
        .collect()
}

/// A policy maximizing the worst constraint slack, found by Hedge over the
/// constraints against per-prompt best responses.
#[derive(Debug, Clone, PartialEq)]
pub struct SlaterPoint {
    pub policy: PolicyTable,
    /// Smallest slack `E[g_i]` at `policy` over binding constraints; a lower
    /// bound on the best achievable worst-case slack.
    pub margin: f64,
    /// An upper bound on the best worst-case slack. Negative means no policy
    /// satisfies every constraint.
    pub upper_bound: f64,
    pub iterations: usize,
}

impl SlaterPoint {
    pub fn strictly_feasible(&self) -> bool {
        self.margin > 0.0
    }
}

pub fn slater_point(problem: &Problem) -> SlaterPoint {
    let active = binding_constraints(problem);
    if active.is_empty() {
        return SlaterPoint {
            policy: problem.reference().as_table(),
            margin: f64::INFINITY,
            upper_bound: f64::INFINITY,
            iterations: 0,
        };
    }
    let m = active.len();
    let n = problem.num_prompts();
    let sizes = problem.catalog_sizes();
    let slacks: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|x| {
            (0..sizes[x])
                .map(|y| {
                    let g = problem.slack(x, y);
                    active.iter().map(|&i| g[i]).collect()
                })
                .collect()
        })
        .collect();
    let span = slacks
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |acc, g| acc.max(g.abs()))
        .max(1e-12);
    let mut theta = vec![1.0 / m as f64; m];
    let mut counts: Vec<Vec<f64>> = sizes.iter().map(|&k| vec![0.0; k]).collect();
    let mut upper = f64::INFINITY;
    let mut t = 0usize;
    let mut best = None;
    const ROUND: usize = 500;
    const MAX_ITER: usize = 64_000;

    while t < MAX_ITER {
        for _ in 0..ROUND {
            t += 1;
            let eta = (8.0 * (m.max(2) as f64).ln() / t as f64).sqrt() / (2.0 * span);
            let mut h = vec![0.0; m];
            let mut value = 0.0;
            for x in 0..n {
                let (y, v) = slacks[x]
                    .iter()
                    .map(|g| g.iter().zip(&theta).map(|(g, t)| g * t).sum::<f64>())
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (y, v)| if v > acc.1 { (y, v) } else { acc });
                let w = problem.weights()[x];
                value += w * v;
                counts[x][y] += 1.0;
                for (hj, gj) in h.iter_mut().zip(&slacks[x][y]) {
                    *hj += w * gj;
                }
            }
            upper = upper.min(value);
            let mut total = 0.0;
            for (th, hj) in theta.iter_mut().zip(&h) {
                *th *= (-eta * hj).exp();
                total += *th;
            }
            theta.iter_mut().for_each(|v| *v /= total);
        }
        let rows: Vec<Vec<f64>> = counts
            .iter()
            .map(|row| row.iter().map(|c| c / t as f64).collect())
            .collect();
        let policy = PolicyTable::from_rows_unchecked(rows);
        let h = problem.slack_expectations(&policy).expect("shape fixed by the problem");
        let margin = active.iter().map(|&i| h[i]).fold(f64::INFINITY, f64::min);
        let done = upper < 0.0 || (margin > 0.0 && upper - margin <= 0.05 * upper);
        best = Some(SlaterPoint {
            policy,
            margin,
            upper_bound: upper,
            iterations: t,
        });
        if done {
            break;
        }
    }
    best.expect("at least one round runs")
}

fn min_slack(problem: &Problem, policy: &PolicyTable) -> f64 {
    problem
        .slack_expectations(policy)
        .expect("shape fixed by the problem")
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimalConfig {
    /// Grid resolution per simplex coordinate; used only when the total
    /// simplex dimension is at most 4.
    pub grid: Option<f64>,
    /// Target suboptimality of the barrier method (`m / t` at exit).
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for PrimalConfig {
    fn default() -> Self {
        Self {
            grid: None,
            tol: 1e-11,
            max_newton: 2_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimalMethod {
    Grid,
    Barrier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    /// Objective `E[r] - β·KL` at the returned feasible policy.
    pub value: f64,
    pub policy: PolicyTable,
    /// Multiplier estimates `1 / (t·E[g_i])` (zero for the grid method).
    pub multipliers: Constraints,
    /// Worst constraint violation at `policy`; zero up to rounding.
    pub max_violation: f64,
    pub method: PrimalMethod,
    /// Newton steps or grid points visited.
    pub iterations: usize,
}

/// Sum over prompts of `(catalog size - 1)`.
pub fn simplex_dimension(problem: &Problem) -> usize {
    problem.catalog_sizes().iter().map(|n| n - 1).sum()
}

/// Maximizes `E[r] - β·KL` subject to `E[g_i] >= 0` over all per-prompt
/// distributions. Small instances may use an exhaustive grid; otherwise a
/// log-barrier interior point method with equality-constrained Newton steps.
pub fn primal_bruteforce(problem: &Problem, config: &PrimalConfig) -> Result<PrimalSolution> {
    let slater = slater_point(problem);
    if !slater.strictly_feasible() {
        return Err(Error::Infeasible {
            slack: slater.upper_bound,
        });
    }
    match config.grid {
        Some(resolution) if simplex_dimension(problem) <= 4 => grid_search(problem, resolution),
        Some(_) => Err(Error::config(format!(
            "grid mode needs simplex dimension <= 4, problem has {}",
            simplex_dimension(problem)
        ))),
        None => barrier(problem, config, &slater),
    }
}

fn compositions(parts: usize, total: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(parts - 1, total - first).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn grid_search(problem: &Problem, resolution: f64) -> Result<PrimalSolution> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::config(format!("grid resolution must lie in (0, 1], got {resolution}")));
    }
    let k = (1.0 / resolution).round() as usize;
    let points: Vec<Vec<Vec<f64>>> = problem
        .catalog_sizes()
        .iter()
        .map(|&n| {
            compositions(n, k)
                .into_iter()
                .map(|c| c.into_iter().map(|v| v as f64 / k as f64).collect())
                .collect()
        })
        .collect();
    let total: f64 = points.iter().map(|p| p.len() as f64).product();
    if total > 5e7 {
        return Err(Error::config(format!("grid has {total:.0} points; use a coarser resolution")));
    }

    let mut index = vec![0usize; points.len()];
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut visited = 0usize;
    loop {
        visited += 1;
        let rows: Vec<Vec<f64>> = index.iter().zip(&points).map(|(&i, p)| p[i].clone()).collect();
        let table = PolicyTable::from_rows_unchecked(rows);
        if min_slack(problem, &table) >= -1e-12 {
            let value = problem.objective(&table)?;
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, table.into_rows()));
            }
        }
        // Odometer increment over the per-prompt grids.
        let mut d = 0;
        while d < index.len() {
            index[d] += 1;
            if index[d] < points[d].len() {
                break;
            }
            index[d] = 0;
            d += 1;
        }
        if d == index.len() {
            break;
        }
    }
    let (value, rows) = best.ok_or(Error::Infeasible { slack: f64::NAN })?;
    Ok(PrimalSolution {
        value,
        policy: PolicyTable::from_rows_unchecked(rows),
        multipliers: [0.0; NUM_CONSTRAINTS],
        max_violation: 0.0,
        method: PrimalMethod::Grid,
        iterations: visited,
    })
}

/// Flattened view of the problem used by the barrier method.
struct Flat {
    /// Prompt of each flattened entry.
    prompt: Vec<usize>,
    weight: Vec<f64>,
    reward: Vec<f64>,
    log_q: Vec<f64>,
    /// `a_i[k] = w_x·g_i(x, y)` for each binding constraint.
    a: Vec<Vec<f64>>,
    active: Vec<usize>,
    beta: f64,
}

impl Flat {
    fn new(problem: &Problem, active: Vec<usize>) -> Self {
        let mut flat = Flat {
            prompt: vec![],
            weight: vec![],
            reward: vec![],
            log_q: vec![],
            a: vec![vec![]; active.len()],
            active,
            beta: problem.beta(),
        };
        for x in 0..problem.num_prompts() {
            let w = problem.weights()[x];
            for y in 0..problem.catalog_sizes()[x] {
                flat.prompt.push(x);
                flat.weight.push(w);
                flat.reward.push(problem.reward(x)[y]);
                flat.log_q.push(problem.reference().row(x)[y].ln());
                let g = problem.slack(x, y);
                for (j, &i) in flat.active.iter().enumerate() {
                    flat.a[j].push(w * g[i]);
                }
            }
        }
        flat
    }

    fn slacks(&self, p: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|a| a.iter().zip(p).map(|(a, p)| a * p).sum())
            .collect()
    }

    fn objective(&self, p: &[f64]) -> f64 {
        (0..p.len())
            .filter(|&k| p[k] > 0.0)
            .map(|k| self.weight[k] * p[k] * (self.reward[k] - self.beta * (p[k].ln() - self.log_q[k])))
            .sum()
    }

    /// `t·f(p) + Σ_i ln h_i(p)`, or `-inf` outside the domain.
    fn barrier_value(&self, p: &[f64], t: f64) -> f64 {
        if p.iter().any(|v| *v <= 0.0) {
            return f64::NEG_INFINITY;
        }
        let h = self.slacks(p);
        if h.iter().any(|v| *v <= 0.0) {
            return f64::NEG_INFINITY;
        }
        t * self.objective(p) + h.iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Newton direction for the barrier problem at `p` restricted to
    /// directions that keep every prompt row summing to one, and the Newton
    /// decrement `ΔᵀMΔ`.
    ///
    /// With `M = D + Σ_i a_i a_iᵀ / h_i²`, `D = diag(t·w·β / p)`, the step
    /// solves `MΔ = ∇ + Eᵀν`, `EΔ = 0`. Eliminating `Δ` through the diagonal
    /// `D` leaves a system in the constraint and prompt multipliers only.
    fn newton_step(&self, p: &[f64], t: f64, prompts: usize) -> Option<(Vec<f64>, f64)> {
        let n = p.len();
        let m = self.a.len();
        let h = self.slacks(p);
        let grad: Vec<f64> = (0..n)
            .map(|k| {
                let own = t * self.weight[k]
                    * (self.reward[k] - self.beta * (p[k].ln() - self.log_q[k] + 1.0));
                let barrier: f64 = (0..m).map(|i| self.a[i][k] / h[i]).sum();
                own + barrier
            })
            .collect();
        let d_inv: Vec<f64> = (0..n).map(|k| p[k] / (t * self.weight[k] * self.beta)).collect();
        // Scaled constraint columns u_i = a_i / h_i so that M = D + Σ u_i u_iᵀ.
        let u: Vec<Vec<f64>> = (0..m)
            .map(|i| self.a[i].iter().map(|a| a / h[i]).collect())
            .collect();

        let size = m + prompts;
        let mut lhs = DMatrix::<f64>::zeros(size, size);
        let mut rhs = DVector::<f64>::zeros(size);
        for i in 0..m {
            lhs[(i, i)] += 1.0;
            for j in 0..m {
                lhs[(i, j)] += (0..n).map(|k| u[i][k] * d_inv[k] * u[j][k]).sum::<f64>();
            }
            rhs[i] = (0..n).map(|k| u[i][k] * d_inv[k] * grad[k]).sum();
        }
        for k in 0..n {
            let x = m + self.prompt[k];
            for i in 0..m {
                lhs[(i, x)] -= u[i][k] * d_inv[k];
                lhs[(x, i)] -= u[i][k] * d_inv[k];
            }
            lhs[(x, x)] += d_inv[k];
            rhs[x] -= d_inv[k] * grad[k];
        }
        let sol = lhs.lu().solve(&rhs)?;
        let step: Vec<f64> = (0..n)
            .map(|k| {
                let ux: f64 = (0..m).map(|i| u[i][k] * sol[i]).sum();
                d_inv[k] * (grad[k] - ux + sol[m + self.prompt[k]])
            })
            .collect();
        let decrement = (0..n).map(|k| step[k] * step[k] / d_inv[k]).sum::<f64>()
            + (0..m)
                .map(|i| (0..n).map(|k| u[i][k] * step[k]).sum::<f64>().powi(2))
                .sum::<f64>();
        Some((step, decrement))
    }
}

fn barrier(problem: &Problem, config: &PrimalConfig, slater: &SlaterPoint) -> Result<PrimalSolution> {
    let active = binding_constraints(problem);
    let flat = Flat::new(problem, active);
    let prompts = problem.num_prompts();
    let m = flat.active.len();

    // Strictly positive, strictly feasible start: the Slater point with a
    // little reference mass mixed in.
    let span = 1.0 + flat.a.iter().flatten().fold(0.0f64, |acc, a| acc.max(a.abs()));
    let eps = if m == 0 { 1.0 } else { (slater.margin / (2.0 * (slater.margin + span))).min(0.5) };
    let mut p: Vec<f64> = slater
        .policy
        .mix(&problem.reference().as_table(), 1.0 - eps)
        .into_rows()
        .into_iter()
        .flatten()
        .collect();

    // Start where the barrier pull `|a_i| / (t·h_i)` on any entry is about
    // `β`; a smaller `t` drives some probabilities to underflow, from which
    // Newton steps in probability space recover only geometrically.
    let mut t = (span / (slater.margin.min(1.0) * flat.beta)).max(1.0);
    let mut steps = 0;
    loop {
        // Centering: damped Newton on t·f + Σ ln h.
        loop {
            if steps >= config.max_newton {
                return Err(Error::Convergence {
                    iterations: steps,
                    residual: m as f64 / t,
                });
            }
            let Some((dir, decrement)) = flat.newton_step(&p, t, prompts) else {
                return Err(Error::Convergence {
                    iterations: steps,
                    residual: f64::NAN,
                });
            };
            steps += 1;
            // `decrement / 2` bounds the centering error of `t·f + Σ ln h`.
            if decrement / 2.0 <= 1e-12 || decrement / (2.0 * t) <= 1e-3 * config.tol {
                break;
            }
            let current = flat.barrier_value(&p, t);
            let slope: f64 = decrement;
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = p.iter().zip(&dir).map(|(p, d)| p + s * d).collect();
                let value = flat.barrier_value(&trial, t);
                if value.is_finite() && value >= current + 0.25 * s * slope {
                    p = trial;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            renormalize(&mut p, &flat.prompt, prompts);
            if !accepted {
                // Rounding stalls the line search only next to the center.
                break;
            }
        }
        if m as f64 / t <= config.tol || m == 0 {
            break;
        }
        t *= 10.0;
    }

    let mut rows: Vec<Vec<f64>> = problem.catalog_sizes().iter().map(|&k| Vec::with_capacity(k)).collect();
    for (k, v) in p.iter().enumerate() {
        rows[flat.prompt[k]].push(*v);
    }
    let policy = PolicyTable::from_rows_unchecked(rows);
    let h = flat.slacks(&p);
    let mut multipliers = [0.0; NUM_CONSTRAINTS];
    for (j, &i) in flat.active.iter().enumerate() {
        multipliers[i] = 1.0 / (t * h[j]);
    }
    let max_violation = min_slack(problem, &policy).min(0.0).abs();
    Ok(PrimalSolution {
        value: problem.objective(&policy)?,
        policy,
        multipliers,
        max_violation,
        method: PrimalMethod::Barrier,
        iterations: steps,
    })
}

fn renormalize(p: &mut [f64], prompt: &[usize], prompts: usize) {
    let mut totals = vec![0.0; prompts];
    for (v, &x) in p.iter().zip(prompt) {
        totals[x] += v;
    }
    for (v, &x) in p.iter_mut().zip(prompt) {
        *v /= totals[x];
    }
}
