//! Exact convex machinery over the full tabular policy class: tilted
//! policies, the dual function and its minimizer, an independent primal
//! solver, the duality-gap bound and perturbation checks.
//!
//! For any `λ >= 0`, `L(·, λ)` is maximized per prompt by the tilted policy
//! `π_λ ∝ π_ref·exp((r + λᵀg)/β)`, which gives the dual in closed form:
//! `D(λ) = β·Σ_x w_x·ln Σ_y π_ref(y|x)·exp((r + λᵀg)/β)` with gradient
//! `E_{π_λ}[g]`. The primal side is solved without this formula, so the two
//! values certify each other.

mod dual;
mod lemma;
mod primal;

use serde::{Deserialize, Serialize};

pub use dual::{dual_function, dual_gradient, minimize_dual, tilted_policy, DualSolution, DualSolverConfig};
pub use lemma::{verify_lemma1, PerturbationReport};
pub use primal::{
    primal_bruteforce, simplex_dimension, slater_point, PrimalConfig, PrimalMethod, PrimalSolution,
    SlaterPoint,
};

use crate::error::{Error, Result};
use crate::objective::{Constraints, MultiplierVector, Problem, SIGNAL_BOUND};
use crate::policy::PolicyTable;
use crate::scoring::NUM_CONSTRAINTS;

/// `(β + B + B·‖λ‖₁)·ν`.
pub fn gap_bound(beta: f64, bound: f64, nu: f64, lambdas: &MultiplierVector) -> f64 {
    debug_assert!(beta > 0.0 && bound >= 0.0 && nu >= 0.0);
    (beta + bound + bound * lambdas.l1_norm()) * nu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub dual: DualSolverConfig,
    pub primal: PrimalConfig,
    /// Allowed excess of `D* - P*` over the bound.
    pub gap_tol: f64,
    /// Allowed amount by which `D* - P*` may fall below zero.
    pub weak_duality_tol: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            dual: DualSolverConfig::default(),
            primal: PrimalConfig::default(),
            gap_tol: 1e-4,
            weak_duality_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub lambda_star: MultiplierVector,
    pub dual_value: f64,
    pub primal_value: f64,
    /// Objective of `π_λ*` after mixing toward the Slater point until
    /// feasible; a second lower bound on the primal optimum.
    pub repaired_tilted_value: f64,
    pub gap: f64,
    /// `gap_bound(β, 1, ν, λ*)` with `ν = 0` for the tabular class.
    pub bound: f64,
    pub nu: f64,
    /// `Σ_i λ*_i·|E_{π_λ*}[g_i]|`.
    pub complementary_slackness_residual: f64,
    /// `E_{π_λ*}[g]`, the dual gradient at the solution.
    pub constraint_slack: Constraints,
    pub dual_residual: f64,
    pub dual_iterations: usize,
    pub primal_iterations: usize,
    pub primal_method: PrimalMethod,
    pub primal_max_violation: f64,
    pub passed: bool,
}

/// Value of the tilted policy at `λ`, mixed with the Slater point just enough
/// to be feasible. A lower bound on the primal optimum.
pub fn repaired_tilted_value(problem: &Problem, lambdas: &MultiplierVector) -> Result<(f64, PolicyTable)> {
    let pi = tilted_policy(problem, lambdas);
    let h = problem.slack_expectations(&pi)?;
    if h.iter().all(|h| *h >= 0.0) {
        return Ok((problem.objective(&pi)?, pi));
    }
    let slater = slater_point(problem);
    if !slater.strictly_feasible() {
        return Err(Error::Infeasible {
            slack: slater.upper_bound,
        });
    }
    let hs = problem.slack_expectations(&slater.policy)?;
    let t = (0..NUM_CONSTRAINTS)
        .filter(|&i| h[i] < 0.0)
        .map(|i| -h[i] / (hs[i] - h[i]))
        .fold(0.0, f64::max);
    let repaired = slater.policy.mix(&pi, t);
    Ok((problem.objective(&repaired)?, repaired))
}

/// Minimizes the dual, solves the primal independently and checks
/// `-weak_duality_tol <= D* - P* <= bound + gap_tol` with `ν = 0`.
pub fn certify_theorem(problem: &Problem, config: &CertifyConfig) -> Result<DualCertificate> {
    let dual = minimize_dual(problem, &config.dual)?;
    let primal = primal_bruteforce(problem, &config.primal)?;
    let (repaired, _) = repaired_tilted_value(problem, &dual.lambda_star)?;
    let nu = 0.0;
    let bound = gap_bound(problem.beta(), SIGNAL_BOUND, nu, &dual.lambda_star);
    let gap = dual.dual_value - primal.value;
    let slack = dual.gradient;
    let cs: f64 = dual
        .lambda_star
        .values()
        .iter()
        .zip(&slack)
        .map(|(l, g)| l * g.abs())
        .sum();
    Ok(DualCertificate {
        lambda_star: dual.lambda_star,
        dual_value: dual.dual_value,
        primal_value: primal.value,
        repaired_tilted_value: repaired,
        gap,
        bound,
        nu,
        complementary_slackness_residual: cs,
        constraint_slack: slack,
        dual_residual: dual.residual,
        dual_iterations: dual.iterations,
        primal_iterations: primal.iterations,
        primal_method: primal.method,
        primal_max_violation: primal.max_violation,
        passed: gap >= -config.weak_duality_tol && gap <= bound + config.gap_tol,
    })
}
