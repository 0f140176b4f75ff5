//! Tilted policies, the dual function and its minimization over `λ >= 0`.

use serde::{Deserialize, Serialize};

use super::primal::slater_point;
use crate::error::{Error, Result};
use crate::objective::{Constraints, MultiplierVector, Problem};
use crate::policy::{log_softmax, log_sum_exp, PolicyTable};

/// Per-prompt tilted logits `ln q + (r + λᵀg) / β`.
fn tilted_logits(problem: &Problem, x: usize, lambdas: &MultiplierVector) -> Vec<f64> {
    let beta = problem.beta();
    let q = problem.reference().row(x);
    problem
        .combined_scores(x, lambdas)
        .iter()
        .zip(q)
        .map(|(s, q)| q.ln() + s / beta)
        .collect()
}

/// The maximizer of `L(·, λ)`: `π_λ(y|x) ∝ π_ref(y|x)·exp((r + λᵀg)/β)`,
/// normalized in log space.
pub fn tilted_policy(problem: &Problem, lambdas: &MultiplierVector) -> PolicyTable {
    let rows = (0..problem.num_prompts())
        .map(|x| {
            let p: Vec<f64> = log_softmax(&tilted_logits(problem, x, lambdas))
                .iter()
                .map(|l| l.exp())
                .collect();
            let total: f64 = p.iter().sum();
            p.into_iter().map(|v| v / total).collect()
        })
        .collect();
    PolicyTable::from_rows_unchecked(rows)
}

/// `D(λ) = β·Σ_x w_x·ln Σ_y π_ref(y|x)·exp((r + λᵀg)/β)`.
pub fn dual_function(problem: &Problem, lambdas: &MultiplierVector) -> f64 {
    let beta = problem.beta();
    (0..problem.num_prompts())
        .map(|x| problem.weights()[x] * beta * log_sum_exp(&tilted_logits(problem, x, lambdas)))
        .sum()
}

/// `∇D(λ) = E_x E_{y∼π_λ}[g]`.
pub fn dual_gradient(problem: &Problem, lambdas: &MultiplierVector) -> Constraints {
    let pi = tilted_policy(problem, lambdas);
    problem
        .slack_expectations(&pi)
        .expect("tilted policy has the problem's shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualSolverConfig {
    /// Stop once `‖λ - [λ - ∇D(λ)]_+‖_∞` falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    /// `‖λ‖_1` beyond which the problem is declared infeasible.
    pub lambda_cap: f64,
}

impl Default for DualSolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 20_000,
            lambda_cap: 1e3,
        }
    }
}

impl DualSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.lambda_cap > 0.0) || self.max_iter == 0 {
            return Err(Error::config(
                "dual solver needs tol > 0, lambda_cap > 0 and max_iter >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda_star: MultiplierVector,
    pub dual_value: f64,
    pub gradient: Constraints,
    pub residual: f64,
    pub iterations: usize,
}

fn residual(lambdas: &MultiplierVector, grad: &Constraints) -> f64 {
    lambdas
        .values()
        .iter()
        .zip(grad)
        .map(|(l, g)| (l - (l - g).max(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Projected gradient descent on `D` over the nonnegative orthant with
/// Barzilai-Borwein trial steps and backtracking.
pub fn minimize_dual(problem: &Problem, config: &DualSolverConfig) -> Result<DualSolution> {
    config.validate()?;
    let mut lambdas = MultiplierVector::zeros();
    let mut value = dual_function(problem, &lambdas);
    let mut grad = dual_gradient(problem, &lambdas);
    let mut step = 1.0;
    let mut res = residual(&lambdas, &grad);

    for iteration in 0..config.max_iter {
        if res <= config.tol {
            return Ok(DualSolution {
                lambda_star: lambdas,
                dual_value: value,
                gradient: grad,
                residual: res,
                iterations: iteration,
            });
        }
        let (next, next_value) = loop {
            let trial = MultiplierVector::project(std::array::from_fn(|i| {
                lambdas.values()[i] - step * grad[i]
            }));
            let trial_value = dual_function(problem, &trial);
            let d: Constraints = std::array::from_fn(|i| trial.values()[i] - lambdas.values()[i]);
            let decrease: f64 = d.iter().zip(&grad).map(|(d, g)| d * g).sum();
            let dist2: f64 = d.iter().map(|d| d * d).sum();
            // Sufficient decrease for a projected step, plus rounding slack.
            let slack = 1e-15 * (1.0 + value.abs());
            if trial_value <= value + decrease + dist2 / (2.0 * step) + slack || step < 1e-14 {
                break (trial, trial_value);
            }
            step *= 0.5;
        };

        let next_grad = dual_gradient(problem, &next);
        let s: Constraints = std::array::from_fn(|i| next.values()[i] - lambdas.values()[i]);
        let y: Constraints = std::array::from_fn(|i| next_grad[i] - grad[i]);
        let sy: f64 = s.iter().zip(&y).map(|(s, y)| s * y).sum();
        let ss: f64 = s.iter().map(|s| s * s).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { (step * 2.0).min(1e10) };

        lambdas = next;
        value = next_value;
        grad = next_grad;
        res = residual(&lambdas, &grad);

        if lambdas.l1_norm() > config.lambda_cap {
            let slack = slater_point(problem).upper_bound;
            return Err(Error::Infeasible { slack });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                what: "dual function".into(),
            });
        }
    }
    if res <= config.tol {
        return Ok(DualSolution {
            lambda_star: lambdas,
            dual_value: value,
            gradient: grad,
            residual: res,
            iterations: config.max_iter,
        });
    }
    Err(Error::Convergence {
        iterations: config.max_iter,
        residual: res,
    })
}
