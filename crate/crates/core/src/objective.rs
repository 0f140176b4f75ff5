//! Exact expectations over finite catalogs: reward, constraint values, KL,
//! the Lagrangian and its gradient with respect to tabular logits.
//!
//! A [`Problem`] bundles everything these quantities depend on: prompt
//! weights, the per-response reward and constraint values, the reference
//! policy and the [`ObjectiveConfig`]. Policies are passed as probability
//! tables so that the same code evaluates softmax policies, tilted policies
//! and arbitrary mixtures.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{kl_rows, log_softmax, PolicyTable, PromptDistribution, ReferencePolicy, TabularPolicy};
use crate::scoring::{
    ScoringConfig, SignalVector, SqliteBackend, TaskJudge, CONSTRAINT_NAMES, DEFAULT_THRESHOLD,
    NUM_CONSTRAINTS,
};
use crate::tasks::TaskSuite;

/// Bound on `|r|` and every `|g_i|`.
pub const SIGNAL_BOUND: f64 = 1.0;

pub type Constraints = [f64; NUM_CONSTRAINTS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// KL regularization weight.
    pub beta: f64,
    pub thresholds: Constraints,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            thresholds: [DEFAULT_THRESHOLD; NUM_CONSTRAINTS],
        }
    }
}

impl ObjectiveConfig {
    pub fn new(beta: f64, thresholds: Constraints) -> Result<Self> {
        let config = Self { beta, thresholds };
        config.validate()?;
        Ok(config)
    }

    /// Thresholds outside `[0, 1]` are accepted: a threshold above 1 is a
    /// legitimate (infeasible) problem, reported as such by the solvers.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::config(format!("beta must be positive, got {}", self.beta)));
        }
        for (name, b) in CONSTRAINT_NAMES.iter().zip(self.thresholds) {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::config(format!(
                    "threshold for `{name}` must be finite and nonnegative, got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Nonnegative Lagrange multipliers, one per constraint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Constraints", into = "Constraints")]
pub struct MultiplierVector(Constraints);

impl MultiplierVector {
    pub fn new(values: Constraints) -> Result<Self> {
        if values.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::config(format!(
                "multipliers must be finite and nonnegative, got {values:?}"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros() -> Self {
        Self([0.0; NUM_CONSTRAINTS])
    }

    /// Componentwise `max(0, v)`.
    pub fn project(values: Constraints) -> Self {
        Self(values.map(|v| if v > 0.0 { v } else { 0.0 }))
    }

    pub fn values(&self) -> &Constraints {
        &self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn dot(&self, g: &Constraints) -> f64 {
        self.0.iter().zip(g).map(|(l, g)| l * g).sum()
    }
}

impl TryFrom<Constraints> for MultiplierVector {
    type Error = Error;

    fn try_from(values: Constraints) -> Result<Self> {
        Self::new(values)
    }
}

impl From<MultiplierVector> for Constraints {
    fn from(m: MultiplierVector) -> Self {
        m.0
    }
}

/// Cached scores for every (task, response) pair of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTable {
    task_ids: Vec<String>,
    signals: Vec<Vec<SignalVector>>,
}

impl SignalTable {
    /// Scores every response of every task. With `parallel`, tasks are scored
    /// on the rayon pool; the result is identical either way.
    pub fn build(suite: &TaskSuite, config: &ScoringConfig, parallel: bool) -> Result<Self> {
        suite.check_structure()?;
        let score_task = |task: &crate::tasks::Task| -> Result<Vec<SignalVector>> {
            let backend = SqliteBackend;
            let fixture = suite.fixture_for(task)?;
            let judge = TaskJudge::new(&backend, fixture, &task.task_id, &task.gt_sql, config)?;
            let row: Vec<SignalVector> = task.responses.iter().map(|r| judge.score(r)).collect();
            if !row.iter().any(|s| s.reward) {
                return Err(Error::Task {
                    task_id: task.task_id.clone(),
                    message: "no response earns reward 1".into(),
                });
            }
            Ok(row)
        };
        let signals = if parallel {
            suite.tasks.par_iter().map(score_task).collect::<Result<Vec<_>>>()?
        } else {
            suite.tasks.iter().map(score_task).collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            task_ids: suite.task_ids(),
            signals,
        })
    }

    pub fn from_signals(task_ids: Vec<String>, signals: Vec<Vec<SignalVector>>) -> Result<Self> {
        if task_ids.len() != signals.len() {
            return Err(Error::Shape(format!(
                "{} task ids for {} signal rows",
                task_ids.len(),
                signals.len()
            )));
        }
        Ok(Self { task_ids, signals })
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn signals(&self) -> &[Vec<SignalVector>] {
        &self.signals
    }

    pub fn get(&self, task: usize, response: usize) -> &SignalVector {
        &self.signals[task][response]
    }

    /// Audit export with one row per (task, response).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "task_id",
            "response_idx",
            "r",
            "c_format",
            "c_execution",
            "c_length",
            "c_answer",
            "c_sql",
        ])?;
        for (id, row) in self.task_ids.iter().zip(&self.signals) {
            for (j, s) in row.iter().enumerate() {
                let mut record = vec![id.clone(), j.to_string()];
                record.extend(s.bits().iter().map(u8::to_string));
                w.write_record(&record)?;
            }
        }
        w.flush().map_err(|e| Error::io("<signal table>", e))
    }
}

/// A finite constrained KL-regularized problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    prompts: Vec<String>,
    weights: Vec<f64>,
    reward: Vec<Vec<f64>>,
    constraints: Vec<Vec<Constraints>>,
    reference: ReferencePolicy,
    config: ObjectiveConfig,
}

impl Problem {
    /// Thresholds come from `config`; the ones stored in the signal vectors
    /// are ignored.
    pub fn new(
        suite: &TaskSuite,
        table: &SignalTable,
        reference: ReferencePolicy,
        config: ObjectiveConfig,
    ) -> Result<Self> {
        if table.task_ids() != suite.task_ids().as_slice() {
            return Err(Error::Shape("signal table and suite list different tasks".into()));
        }
        for (task, row) in suite.tasks.iter().zip(table.signals()) {
            if task.responses.len() != row.len() {
                return Err(Error::Shape(format!(
                    "task `{}` has {} responses but {} signal rows",
                    task.task_id,
                    task.responses.len(),
                    row.len()
                )));
            }
        }
        Self::from_signals(suite.prompt_dist.clone(), table, reference, config)
    }

    pub fn from_signals(
        weights: PromptDistribution,
        table: &SignalTable,
        reference: ReferencePolicy,
        config: ObjectiveConfig,
    ) -> Result<Self> {
        let reward = table
            .signals()
            .iter()
            .map(|row| row.iter().map(SignalVector::r).collect())
            .collect();
        let constraints = table
            .signals()
            .iter()
            .map(|row| row.iter().map(SignalVector::c).collect())
            .collect();
        Self::from_values(
            table.task_ids().to_vec(),
            weights,
            reward,
            constraints,
            reference,
            config,
        )
    }

    /// General constructor; values must satisfy `|r| <= 1` and `c` in `[0, 1]`.
    pub fn from_values(
        prompts: Vec<String>,
        weights: PromptDistribution,
        reward: Vec<Vec<f64>>,
        constraints: Vec<Vec<Constraints>>,
        reference: ReferencePolicy,
        config: ObjectiveConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = prompts.len();
        if weights.len() != n || reward.len() != n || constraints.len() != n {
            return Err(Error::Shape(format!(
                "{n} prompts, {} weights, {} reward rows, {} constraint rows",
                weights.len(),
                reward.len(),
                constraints.len()
            )));
        }
        if reference.prompts() != prompts.as_slice() {
            return Err(Error::Shape("reference policy covers different prompts".into()));
        }
        for x in 0..n {
            let size = reference.row(x).len();
            if reward[x].len() != size || constraints[x].len() != size {
                return Err(Error::Shape(format!(
                    "prompt `{}`: reference has {size} responses, signals have {} and {}",
                    prompts[x],
                    reward[x].len(),
                    constraints[x].len()
                )));
            }
            if reward[x].iter().any(|r| !(r.abs() <= SIGNAL_BOUND)) {
                return Err(Error::config(format!("prompt `{}`: reward outside [-1, 1]", prompts[x])));
            }
            if constraints[x].iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::config(format!(
                    "prompt `{}`: constraint value outside [0, 1]",
                    prompts[x]
                )));
            }
        }
        Ok(Self {
            prompts,
            weights: weights.weights().to_vec(),
            reward,
            constraints,
            reference,
            config,
        })
    }

    /// Same signals and reference under a different configuration.
    pub fn with_config(&self, config: ObjectiveConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            ..self.clone()
        })
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn catalog_sizes(&self) -> Vec<usize> {
        self.reward.iter().map(Vec::len).collect()
    }

    pub fn reward(&self, x: usize) -> &[f64] {
        &self.reward[x]
    }

    pub fn constraints(&self, x: usize) -> &[Constraints] {
        &self.constraints[x]
    }

    pub fn reference(&self) -> &ReferencePolicy {
        &self.reference
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    /// `g(x, y) = c(x, y) - b`.
    pub fn slack(&self, x: usize, y: usize) -> Constraints {
        let c = &self.constraints[x][y];
        std::array::from_fn(|i| c[i] - self.config.thresholds[i])
    }

    /// Combined score `r + λᵀg` of one response.
    pub fn combined_score(&self, x: usize, y: usize, lambdas: &MultiplierVector) -> f64 {
        self.reward[x][y] + lambdas.dot(&self.slack(x, y))
    }

    /// Combined scores of every response of prompt `x`.
    pub fn combined_scores(&self, x: usize, lambdas: &MultiplierVector) -> Vec<f64> {
        (0..self.reward[x].len())
            .map(|y| self.combined_score(x, y, lambdas))
            .collect()
    }

    pub fn check_table(&self, policy: &PolicyTable) -> Result<()> {
        if policy.rows().len() != self.num_prompts() {
            return Err(Error::Shape(format!(
                "policy has {} rows for {} prompts",
                policy.rows().len(),
                self.num_prompts()
            )));
        }
        for (x, row) in policy.rows().iter().enumerate() {
            if row.len() != self.reward[x].len() {
                return Err(Error::Shape(format!(
                    "prompt `{}`: policy row has {} entries, catalog has {}",
                    self.prompts[x],
                    row.len(),
                    self.reward[x].len()
                )));
            }
        }
        Ok(())
    }

    pub fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.prompts() != self.prompts.as_slice() {
            return Err(Error::Shape("policy covers different prompts".into()));
        }
        self.check_table(&policy.probabilities())
    }

    pub fn expected_reward(&self, policy: &PolicyTable) -> Result<f64> {
        self.check_table(policy)?;
        Ok(self.weighted_sum(policy, |x, y| self.reward[x][y]))
    }

    pub fn constraint_expectations(&self, policy: &PolicyTable) -> Result<Constraints> {
        self.check_table(policy)?;
        Ok(std::array::from_fn(|i| {
            self.weighted_sum(policy, |x, y| self.constraints[x][y][i])
        }))
    }

    /// `E[g_i] = E[c_i] - b_i`.
    pub fn slack_expectations(&self, policy: &PolicyTable) -> Result<Constraints> {
        let c = self.constraint_expectations(policy)?;
        Ok(std::array::from_fn(|i| c[i] - self.config.thresholds[i]))
    }

    /// Prompt-weighted KL divergence from the reference.
    pub fn mean_kl(&self, policy: &PolicyTable) -> Result<f64> {
        self.check_table(policy)?;
        Ok(policy
            .rows()
            .iter()
            .enumerate()
            .map(|(x, p)| self.weights[x] * kl_rows(p, self.reference.row(x)))
            .sum())
    }

    /// The regularized objective `E[r] - β·KL` without constraint terms.
    pub fn objective(&self, policy: &PolicyTable) -> Result<f64> {
        Ok(self.expected_reward(policy)? - self.beta() * self.mean_kl(policy)?)
    }

    /// `E_x[E_y[r + λᵀg] - β·KL]`.
    pub fn lagrangian_value(&self, policy: &PolicyTable, lambdas: &MultiplierVector) -> Result<f64> {
        self.check_table(policy)?;
        let beta = self.beta();
        Ok(policy
            .rows()
            .iter()
            .enumerate()
            .map(|(x, p)| {
                let linear: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(y, py)| py * self.combined_score(x, y, lambdas))
                    .sum();
                self.weights[x] * (linear - beta * kl_rows(p, self.reference.row(x)))
            })
            .sum())
    }

    /// Exact gradient of the Lagrangian with respect to the logits. For
    /// prompt `x` with `u_y = r + λᵀg - β·ln(p_y / q_y)`:
    /// `∂L/∂θ[x][y] = w_x · p_y · (u_y - Σ_k p_k u_k)`.
    pub fn exact_lagrangian_gradient(
        &self,
        policy: &TabularPolicy,
        lambdas: &MultiplierVector,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_policy(policy)?;
        let beta = self.beta();
        Ok(policy
            .logits()
            .iter()
            .enumerate()
            .map(|(x, z)| {
                let logp = log_softmax(z);
                let q = self.reference.row(x);
                let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                let u: Vec<f64> = (0..z.len())
                    .map(|y| self.combined_score(x, y, lambdas) - beta * (logp[y] - q[y].ln()))
                    .collect();
                let mean: f64 = p.iter().zip(&u).map(|(p, u)| p * u).sum();
                p.iter()
                    .zip(&u)
                    .map(|(p, u)| self.weights[x] * p * (u - mean))
                    .collect()
            })
            .collect())
    }

    fn weighted_sum(&self, policy: &PolicyTable, value: impl Fn(usize, usize) -> f64) -> f64 {
        policy
            .rows()
            .iter()
            .enumerate()
            .map(|(x, p)| {
                let inner: f64 = p.iter().enumerate().map(|(y, py)| py * value(x, y)).sum();
                self.weights[x] * inner
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sv(bits: [u8; 6]) -> SignalVector {
        SignalVector::from_bits(bits[0] == 1, std::array::from_fn(|i| bits[i + 1] == 1))
    }

    fn single(rows: Vec<SignalVector>) -> Problem {
        let n = rows.len();
        let table = SignalTable::from_signals(vec!["q".into()], vec![rows]).unwrap();
        let reference = ReferencePolicy::new(vec!["q".into()], vec![vec![1.0 / n as f64; n]]).unwrap();
        Problem::from_signals(PromptDistribution::uniform(1), &table, reference, ObjectiveConfig::default())
            .unwrap()
    }

    pub(crate) fn random_problem(rng: &mut ChaCha8Rng, prompts: usize) -> Problem {
        let ids: Vec<String> = (0..prompts).map(|i| format!("p{i}")).collect();
        let sizes: Vec<usize> = (0..prompts).map(|_| rng.gen_range(2..=6)).collect();
        let signals = sizes
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| sv(std::array::from_fn(|_| rng.gen_range(0..2))))
                    .collect()
            })
            .collect();
        let table = SignalTable::from_signals(ids.clone(), signals).unwrap();
        let probs = sizes
            .iter()
            .map(|&n| {
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let reference = ReferencePolicy::new(ids, probs).unwrap();
        let raw: Vec<f64> = (0..prompts).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights = PromptDistribution::new(raw.iter().map(|w| w / total).collect::<Vec<_>>());
        // Renormalization can leave the sum a few ulps off; fall back to uniform.
        let weights = weights.unwrap_or_else(|_| PromptDistribution::uniform(prompts));
        let config = ObjectiveConfig::new(rng.gen_range(0.02..0.5), [0.95; 5]).unwrap();
        Problem::from_signals(weights, &table, reference, config).unwrap()
    }

    fn random_policy(rng: &mut ChaCha8Rng, problem: &Problem) -> TabularPolicy {
        let logits = problem
            .catalog_sizes()
            .iter()
            .map(|&n| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        TabularPolicy::new(problem.prompts().to_vec(), logits).unwrap()
    }

    fn random_lambdas(rng: &mut ChaCha8Rng) -> MultiplierVector {
        MultiplierVector::new(std::array::from_fn(|_| rng.gen_range(0.0..3.0))).unwrap()
    }

    #[test]
    fn counting_examples() {
        let p = single(vec![sv([1; 6]), sv([0; 6]), sv([0; 6]), sv([0; 6])]);
        let uniform = p.reference().as_table();
        assert_abs_diff_eq!(p.expected_reward(&uniform).unwrap(), 0.25, epsilon = 1e-15);
        let point = PolicyTable::new(vec![vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p.expected_reward(&point).unwrap(), 1.0);
        assert_eq!(p.constraint_expectations(&point).unwrap(), [1.0; 5]);

        let half = single(vec![sv([1; 6]), sv([0, 0, 0, 1, 0, 0]), sv([1; 6]), sv([0, 0, 0, 1, 0, 0])]);
        let c = half.constraint_expectations(&half.reference().as_table()).unwrap();
        assert_abs_diff_eq!(c[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn lagrangian_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 3);
        let reference = p.reference().as_table();
        let zero = MultiplierVector::zeros();
        assert_eq!(
            p.lagrangian_value(&reference, &zero).unwrap(),
            p.expected_reward(&reference).unwrap()
        );

        let pi = random_policy(&mut rng, &p).probabilities();
        let lambdas = random_lambdas(&mut rng);
        let g = p.slack_expectations(&pi).unwrap();
        for i in 0..NUM_CONSTRAINTS {
            let mut bumped = *lambdas.values();
            bumped[i] += 0.7;
            let delta = p.lagrangian_value(&pi, &MultiplierVector::new(bumped).unwrap()).unwrap()
                - p.lagrangian_value(&pi, &lambdas).unwrap();
            assert_abs_diff_eq!(delta, 0.7 * g[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn lagrangian_matches_per_task_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 4);
            let pi = random_policy(&mut rng, &p);
            let lambdas = random_lambdas(&mut rng);
            // Second path: sum per-task terms from logits with the public KL helper.
            let mut total = 0.0;
            for (x, id) in p.prompts().iter().enumerate() {
                let probs = pi.distribution(id).unwrap();
                let linear: f64 = probs
                    .iter()
                    .enumerate()
                    .map(|(y, py)| {
                        let c = p.constraints(x)[y];
                        let g: f64 = (0..5).map(|i| lambdas.values()[i] * (c[i] - 0.95)).sum();
                        py * (p.reward(x)[y] + g)
                    })
                    .sum();
                let kl = crate::policy::kl_divergence(&pi, p.reference(), id).unwrap();
                total += p.weights()[x] * (linear - p.beta() * kl);
            }
            let value = p.lagrangian_value(&pi.probabilities(), &lambdas).unwrap();
            assert_abs_diff_eq!(value, total, epsilon = 1e-12);
        }
    }

    #[test]
    fn expectations_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 3);
            let pi = random_policy(&mut rng, &p).probabilities();
            let r = p.expected_reward(&pi).unwrap();
            assert!((0.0..=1.0).contains(&r));
            for c in p.constraint_expectations(&pi).unwrap() {
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn lagrangian_is_concave_along_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let p = random_problem(&mut rng, 3);
            let a = random_policy(&mut rng, &p).probabilities();
            let b = random_policy(&mut rng, &p).probabilities();
            let lambdas = random_lambdas(&mut rng);
            let t: f64 = rng.gen();
            let mid = p.lagrangian_value(&a.mix(&b, t), &lambdas).unwrap();
            let chord = t * p.lagrangian_value(&a, &lambdas).unwrap()
                + (1.0 - t) * p.lagrangian_value(&b, &lambdas).unwrap();
            assert!(mid >= chord - 1e-10, "{mid} < {chord}");
        }
    }

    #[test]
    fn lagrangian_upper_bounds_feasible_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..500 {
            let p = random_problem(&mut rng, 2);
            let p = p.with_config(ObjectiveConfig::new(p.beta(), [0.3; 5]).unwrap()).unwrap();
            let pi = random_policy(&mut rng, &p).probabilities();
            if p.slack_expectations(&pi).unwrap().iter().all(|g| *g >= 0.0) {
                checked += 1;
                let lambdas = random_lambdas(&mut rng);
                assert!(p.lagrangian_value(&pi, &lambdas).unwrap() >= p.objective(&pi).unwrap());
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn gradient_vanishes_on_uniform_signals_at_reference() {
        let p = single(vec![sv([1, 0, 1, 1, 0, 1]); 3]);
        let pi = TabularPolicy::from_reference(p.reference());
        let grad = p.exact_lagrangian_gradient(&pi, &MultiplierVector::new([1.0; 5]).unwrap()).unwrap();
        assert!(grad[0].iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn gradient_vanishes_at_tilted_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_problem(&mut rng, 3);
        let lambdas = random_lambdas(&mut rng);
        // Logits ln q + s/β give the closed-form maximizer of L(·, λ).
        let logits = (0..p.num_prompts())
            .map(|x| {
                (0..p.catalog_sizes()[x])
                    .map(|y| p.reference().row(x)[y].ln() + p.combined_score(x, y, &lambdas) / p.beta())
                    .collect()
            })
            .collect();
        let pi = TabularPolicy::new(p.prompts().to_vec(), logits).unwrap();
        let grad = p.exact_lagrangian_gradient(&pi, &lambdas).unwrap();
        let norm: f64 = grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm <= 1e-8, "{norm}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..30 {
            let p = random_problem(&mut rng, 3);
            let pi = random_policy(&mut rng, &p);
            let lambdas = random_lambdas(&mut rng);
            let grad = p.exact_lagrangian_gradient(&pi, &lambdas).unwrap();
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for x in 0..p.num_prompts() {
                for y in 0..p.catalog_sizes()[x] {
                    let eval = |d: f64| {
                        let mut q = pi.clone();
                        q.logits_mut()[x][y] += d;
                        p.lagrangian_value(&q.probabilities(), &lambdas).unwrap()
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    worst = worst.max((fd - grad[x][y]).abs());
                    scale = scale.max(fd.abs());
                }
            }
            assert!(worst / scale <= 1e-5, "relative error {}", worst / scale);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = single(vec![sv([1; 6]), sv([0; 6])]);
        let wrong = PolicyTable::new(vec![vec![0.2, 0.3, 0.5]]).unwrap();
        assert!(matches!(p.expected_reward(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ObjectiveConfig::new(0.0, [0.95; 5]).is_err());
        assert!(ObjectiveConfig::new(0.05, [-0.1; 5]).is_err());
        assert!(ObjectiveConfig::new(0.05, [1.01; 5]).is_ok());
        assert!(MultiplierVector::new([0.0, -1.0, 0.0, 0.0, 0.0]).is_err());
        let json = serde_json::to_string(&MultiplierVector::new([0.5; 5]).unwrap()).unwrap();
        assert_eq!(json, "[0.5,0.5,0.5,0.5,0.5]");
        assert!(serde_json::from_str::<MultiplierVector>("[0,0,-1,0,0]").is_err());
    }

    #[test]
    fn csv_export_has_one_row_per_pair() {
        let table = SignalTable::from_signals(
            vec!["a".into(), "b".into()],
            vec![vec![sv([1; 6]), sv([0; 6])], vec![sv([1, 0, 1, 0, 1, 0])]],
        )
        .unwrap();
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "task_id,response_idx,r,c_format,c_execution,c_length,c_answer,c_sql\n\
             a,0,1,1,1,1,1,1\na,1,0,0,0,0,0,0\nb,0,1,0,1,0,1,0\n"
        );
    }
}
