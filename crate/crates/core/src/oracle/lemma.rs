//! Randomized check that an L1 perturbation of radius `ν` per prompt moves
//! every expectation by at most `B·ν`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Problem, SIGNAL_BOUND};
use crate::policy::PolicyTable;
use crate::scoring::NUM_CONSTRAINTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub nu: f64,
    pub trials: usize,
    pub max_reward_deviation: f64,
    pub max_constraint_deviation: f64,
    /// `B·ν` with `B = 1`.
    pub bound: f64,
    /// Largest per-prompt L1 distance actually used.
    pub max_l1: f64,
    /// Trials where some deviation exceeded `bound + 1e-10`.
    pub violations: usize,
}

impl PerturbationReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Moves a row toward `target` by the largest fraction keeping the L1
/// distance at most `budget`.
fn toward(row: &[f64], target: &[f64], budget: f64) -> Vec<f64> {
    let dist: f64 = row.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
    if dist == 0.0 {
        return row.to_vec();
    }
    let t = (budget / dist).min(1.0);
    row.iter().zip(target).map(|(a, b)| a + t * (b - a)).collect()
}

/// Shifts up to `budget / 2` mass from the lowest-valued responses onto the
/// highest-valued one, the extremal move for a linear functional.
fn extremal_shift(row: &[f64], values: &[f64], budget: f64) -> Vec<f64> {
    let mut out = row.to_vec();
    let best = (0..values.len())
        .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut order: Vec<usize> = (0..values.len()).filter(|&y| y != best).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut remaining = budget / 2.0;
    for y in order {
        if remaining <= 0.0 {
            break;
        }
        let moved = out[y].min(remaining);
        out[y] -= moved;
        out[best] += moved;
        remaining -= moved;
    }
    out
}

fn dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // Normalized unit exponentials are uniform on the simplex.
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Perturbs every prompt row of `policy` within L1 radius `nu` for `trials`
/// rounds and records the largest change in `E[r]` and each `E[g_i]`.
/// Trials cycle through uniform-simplex targets, vertex targets and greedy
/// extremal shifts aimed at the reward or a constraint.
pub fn verify_lemma1<R: Rng + ?Sized>(
    problem: &Problem,
    policy: &PolicyTable,
    nu: f64,
    trials: usize,
    rng: &mut R,
) -> Result<PerturbationReport> {
    if !(0.0..=2.0).contains(&nu) {
        return Err(Error::config(format!("nu must lie in [0, 2], got {nu}")));
    }
    problem.check_table(policy)?;
    let base_r = problem.expected_reward(policy)?;
    let base_c = problem.constraint_expectations(policy)?;
    let bound = SIGNAL_BOUND * nu;
    let mut report = PerturbationReport {
        nu,
        trials,
        max_reward_deviation: 0.0,
        max_constraint_deviation: 0.0,
        bound,
        max_l1: 0.0,
        violations: 0,
    };

    for trial in 0..trials {
        // Signal targeted by extremal shifts: 0 is the reward, 1..=5 the
        // constraints; the sign picks the direction.
        let signal = rng.gen_range(0..=NUM_CONSTRAINTS);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let rows: Vec<Vec<f64>> = policy
            .rows()
            .iter()
            .enumerate()
            .map(|(x, row)| {
                let n = row.len();
                let budget = nu * rng.gen::<f64>().max(f64::MIN_POSITIVE);
                match trial % 3 {
                    0 => toward(row, &dirichlet(n, rng), budget),
                    1 => {
                        let mut vertex = vec![0.0; n];
                        vertex[rng.gen_range(0..n)] = 1.0;
                        toward(row, &vertex, budget)
                    }
                    _ => {
                        let values: Vec<f64> = (0..n)
                            .map(|y| {
                                let v = if signal == 0 {
                                    problem.reward(x)[y]
                                } else {
                                    problem.constraints(x)[y][signal - 1]
                                };
                                sign * v
                            })
                            .collect();
                        extremal_shift(row, &values, nu)
                    }
                }
            })
            .collect();
        for (a, b) in rows.iter().zip(policy.rows()) {
            let l1: f64 = a.iter().zip(b).map(|(a, b)| (a - b).abs()).sum();
            report.max_l1 = report.max_l1.max(l1);
        }
        let perturbed = PolicyTable::from_rows_unchecked(rows);
        let dr = (problem.expected_reward(&perturbed)? - base_r).abs();
        let c = problem.constraint_expectations(&perturbed)?;
        let dc = (0..NUM_CONSTRAINTS)
            .map(|i| (c[i] - base_c[i]).abs())
            .fold(0.0, f64::max);
        report.max_reward_deviation = report.max_reward_deviation.max(dr);
        report.max_constraint_deviation = report.max_constraint_deviation.max(dc);
        if dr > bound + 1e-10 || dc > bound + 1e-10 {
            report.violations += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremal_shift_moves_half_the_budget() {
        let out = extremal_shift(&[0.5, 0.5], &[1.0, 0.0], 0.1);
        assert!((out[0] - 0.55).abs() < 1e-15);
        assert!((out[1] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn toward_respects_budget() {
        let out = toward(&[0.2, 0.3, 0.5], &[1.0, 0.0, 0.0], 0.4);
        let l1: f64 = out.iter().zip([0.2, 0.3, 0.5]).map(|(a, b)| (a - b).abs()).sum();
        assert!((l1 - 0.4).abs() < 1e-12);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
