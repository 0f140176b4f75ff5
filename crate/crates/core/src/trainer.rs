//! Alternating primal ascent on the Lagrangian (GRPO) and projected dual
//! descent on the multipliers.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Constraints, MultiplierVector, Problem};
use crate::policy::{kl_rows, sample_index, TabularPolicy};
use crate::scoring::{CONSTRAINT_NAMES, NUM_CONSTRAINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub eta_theta: f64,
    pub eta_lambda: f64,
    /// Responses sampled per prompt (`G`).
    pub group_size: usize,
    pub prompts_per_step: usize,
    /// Number of primal-dual iterations (`K`).
    pub iterations: usize,
    pub clip_eps: f64,
    pub std_floor: f64,
    /// Replace the GRPO estimate by the exact Lagrangian gradient.
    pub use_exact_gradient: bool,
    /// Feed the dual step a Monte Carlo estimate of the constraint
    /// expectations instead of their exact values.
    pub sampled_constraints: bool,
    /// Sample groups on the rayon pool. Results do not depend on it.
    pub parallel: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            eta_theta: 1.0,
            eta_lambda: 0.1,
            group_size: 8,
            prompts_per_step: 4,
            iterations: 500,
            clip_eps: 0.2,
            std_floor: 1e-6,
            use_exact_gradient: false,
            sampled_constraints: false,
            parallel: false,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.eta_theta >= 0.0 && self.eta_theta.is_finite(), "eta_theta must be finite and >= 0"),
            (self.eta_lambda > 0.0 && self.eta_lambda.is_finite(), "eta_lambda must be finite and > 0"),
            (self.group_size >= 2, "group_size must be at least 2"),
            (self.prompts_per_step >= 1, "prompts_per_step must be at least 1"),
            (self.clip_eps > 0.0 && self.clip_eps < 1.0, "clip_eps must lie in (0, 1)"),
            (self.std_floor > 0.0 && self.std_floor.is_finite(), "std_floor must be > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::config(*msg)),
            None => Ok(()),
        }
    }
}

/// `A_j = (R_j - mean R) / (std R + std_floor)` with the population standard
/// deviation.
pub fn grpo_advantages(scores: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::config(format!(
            "a group needs at least 2 samples, got {}",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let scale = var.sqrt() + std_floor;
    Ok(scores.iter().map(|s| (s - mean) / scale).collect())
}

/// Derivative of `min(ρ·A, clip(ρ, 1 - ε, 1 + ε)·A)` with respect to `ρ`.
pub fn clipped_surrogate_slope(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = (advantage > 0.0 && ratio > 1.0 + clip_eps)
        || (advantage < 0.0 && ratio < 1.0 - clip_eps);
    if clipped {
        0.0
    } else {
        advantage
    }
}

/// One prompt's group of sampled responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub prompt: usize,
    pub responses: Vec<usize>,
    /// `R_j = r + λᵀg` of each sampled response.
    pub scores: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Generator for draw `slot` of `iteration`. Each slot has its own stream, so
/// the draws do not depend on the order in which slots are processed.
fn slot_rng(seed: u64, iteration: usize, slot: usize, slots: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 * slots as u64 + slot as u64);
    rng
}

/// Draws `prompts_per_step` prompts from the prompt distribution and a group
/// of `group_size` responses for each from the current policy.
pub fn sample_groups(
    policy: &TabularPolicy,
    lambdas: &MultiplierVector,
    problem: &Problem,
    config: &TrainerConfig,
    iteration: usize,
) -> Result<Vec<GroupSample>> {
    config.validate()?;
    problem.check_policy(policy)?;
    // Slot 0 picks prompts, slots 1..=B sample groups and B+1..=2B feed the
    // sampled constraint estimate.
    let slots = 2 * config.prompts_per_step + 1;
    let mut prompt_rng = slot_rng(config.seed, iteration, 0, slots);
    let prompts: Vec<usize> = (0..config.prompts_per_step)
        .map(|_| sample_index(problem.weights(), &mut prompt_rng))
        .collect();
    let draw = |(slot, &x): (usize, &usize)| -> Result<GroupSample> {
        let mut rng = slot_rng(config.seed, iteration, slot + 1, slots);
        let p = policy.distribution_at(x);
        let responses: Vec<usize> = (0..config.group_size).map(|_| sample_index(&p, &mut rng)).collect();
        let scores: Vec<f64> = responses
            .iter()
            .map(|&y| problem.combined_score(x, y, lambdas))
            .collect();
        let advantages = grpo_advantages(&scores, config.std_floor)?;
        Ok(GroupSample {
            prompt: x,
            responses,
            scores,
            advantages,
        })
    };
    if config.parallel {
        prompts.par_iter().enumerate().map(draw).collect()
    } else {
        prompts.iter().enumerate().map(draw).collect()
    }
}

/// Gradient of `-β·Σ_x w_x·KL(π_θ(·|x) ‖ π_ref(·|x))` with respect to the
/// logits: `-β·w_x·p_y·(ln(p_y / q_y) - KL_x)`.
pub fn kl_gradient(policy: &TabularPolicy, problem: &Problem) -> Vec<Vec<f64>> {
    let beta = problem.beta();
    (0..policy.num_prompts())
        .map(|x| {
            let logp = policy.log_distribution_at(x);
            let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let q = problem.reference().row(x);
            let kl = kl_rows(&p, q);
            let w = problem.weights()[x];
            (0..p.len())
                .map(|y| -beta * w * p[y] * (logp[y] - q[y].ln() - kl))
                .collect()
        })
        .collect()
}

/// GRPO estimate of the Lagrangian gradient: the clipped-ratio policy
/// gradient over the sampled groups plus the exact KL gradient.
///
/// The groups are sampled from the policy being updated, so every ratio is 1
/// and `∇ρ = ∇ ln π`.
pub fn grpo_gradient(
    policy: &TabularPolicy,
    problem: &Problem,
    groups: &[GroupSample],
    config: &TrainerConfig,
) -> Vec<Vec<f64>> {
    let mut grad = kl_gradient(policy, problem);
    let batch = groups.len() as f64;
    for group in groups {
        let x = group.prompt;
        let p = policy.distribution_at(x);
        let g = group.responses.len() as f64;
        for (&y, &a) in group.responses.iter().zip(&group.advantages) {
            let coef = clipped_surrogate_slope(1.0, a, config.clip_eps) / (g * batch);
            for (k, pk) in p.iter().enumerate() {
                let indicator = if k == y { 1.0 } else { 0.0 };
                grad[x][k] += coef * (indicator - pk);
            }
        }
    }
    grad
}

/// One ascent step of size `η_θ` on the logits.
pub fn primal_step(
    policy: &mut TabularPolicy,
    lambdas: &MultiplierVector,
    problem: &Problem,
    config: &TrainerConfig,
    iteration: usize,
) -> Result<()> {
    let grad = if config.use_exact_gradient {
        problem.exact_lagrangian_gradient(policy, lambdas)?
    } else {
        let groups = sample_groups(policy, lambdas, problem, config, iteration)?;
        grpo_gradient(policy, problem, &groups, config)
    };
    for (row, g) in policy.logits_mut().iter_mut().zip(&grad) {
        for (z, g) in row.iter_mut().zip(g) {
            *z += config.eta_theta * g;
        }
    }
    Ok(())
}

/// `λ' = [λ - η_λ·(c - b)]_+`.
pub fn dual_step(
    lambdas: &MultiplierVector,
    c: &Constraints,
    thresholds: &Constraints,
    eta_lambda: f64,
) -> MultiplierVector {
    MultiplierVector::project(std::array::from_fn(|i| {
        lambdas.values()[i] - eta_lambda * (c[i] - thresholds[i])
    }))
}

/// Constraint expectations estimated from fresh groups of the current policy.
fn sampled_constraint_estimate(
    policy: &TabularPolicy,
    problem: &Problem,
    config: &TrainerConfig,
    iteration: usize,
) -> Constraints {
    let slots = 2 * config.prompts_per_step + 1;
    let mut prompt_rng = slot_rng(config.seed ^ 0x5eed, iteration, 0, slots);
    let mut total = [0.0; NUM_CONSTRAINTS];
    let mut count = 0.0;
    for b in 0..config.prompts_per_step {
        let x = sample_index(problem.weights(), &mut prompt_rng);
        let mut rng = slot_rng(config.seed, iteration, config.prompts_per_step + 1 + b, slots);
        let p = policy.distribution_at(x);
        for _ in 0..config.group_size {
            let c = problem.constraints(x)[sample_index(&p, &mut rng)];
            for i in 0..NUM_CONSTRAINTS {
                total[i] += c[i];
            }
            count += 1.0;
        }
    }
    total.map(|t| t / count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub iter: usize,
    pub reward: f64,
    pub constraints: Constraints,
    pub lambdas: Constraints,
    pub kl: f64,
    pub lagrangian: f64,
    /// Seconds since training started; not written to the metrics CSV.
    pub wall_time: f64,
}

impl TrainingRecord {
    fn is_finite(&self) -> bool {
        [self.reward, self.kl, self.lagrangian]
            .iter()
            .chain(&self.constraints)
            .chain(&self.lambdas)
            .all(|v| v.is_finite())
    }
}

/// Record 0 holds the reference policy at `λ = 0`; record `k` the state after
/// iteration `k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<TrainingRecord>,
}

impl TrainingLog {
    pub fn header() -> Vec<String> {
        let mut cols = vec!["iter".to_string(), "reward".to_string()];
        cols.extend(CONSTRAINT_NAMES.iter().map(|n| format!("c_{n}")));
        cols.extend(CONSTRAINT_NAMES.iter().map(|n| format!("l_{n}")));
        cols.extend(["kl".to_string(), "lagrangian".to_string()]);
        cols
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(Self::header())?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string(), r.reward.to_string()];
            row.extend(r.constraints.iter().map(f64::to_string));
            row.extend(r.lambdas.iter().map(f64::to_string));
            row.extend([r.kl.to_string(), r.lagrangian.to_string()]);
            writer.write_record(row)?;
        }
        writer.flush().map_err(|e| Error::io("<metrics>", e))?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TrainingRecord> {
        self.records.last()
    }
}

/// Final policy and multipliers, serializable as a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub prompts: Vec<String>,
    pub logits: Vec<Vec<f64>>,
    pub lambdas: MultiplierVector,
}

impl Checkpoint {
    pub fn policy(&self) -> Result<TabularPolicy> {
        TabularPolicy::new(self.prompts.clone(), self.logits.clone())
    }

    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub policy: TabularPolicy,
    pub lambdas: MultiplierVector,
    pub log: TrainingLog,
}

impl TrainingOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.log.last().map_or(0, |r| r.iter),
            prompts: self.policy.prompts().to_vec(),
            logits: self.policy.logits().to_vec(),
            lambdas: self.lambdas,
        }
    }
}

fn evaluate(
    problem: &Problem,
    policy: &TabularPolicy,
    lambdas: &MultiplierVector,
    iter: usize,
    start: Instant,
) -> Result<TrainingRecord> {
    let table = policy.probabilities();
    Ok(TrainingRecord {
        iter,
        reward: problem.expected_reward(&table)?,
        constraints: problem.constraint_expectations(&table)?,
        lambdas: *lambdas.values(),
        kl: problem.mean_kl(&table)?,
        lagrangian: problem.lagrangian_value(&table, lambdas)?,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Starts from `π_θ⁰ = π_ref` and `λ⁰ = 0`, then alternates a primal step and
/// a dual step for `config.iterations` iterations.
pub fn train(problem: &Problem, config: &TrainerConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    let start = Instant::now();
    let mut policy = TabularPolicy::from_reference(problem.reference());
    let mut lambdas = MultiplierVector::zeros();
    let mut log = TrainingLog::default();
    log.records.push(evaluate(problem, &policy, &lambdas, 0, start)?);

    for k in 1..=config.iterations {
        primal_step(&mut policy, &lambdas, problem, config, k)?;
        if !policy.is_finite() {
            return Err(Error::NonFinite {
                iteration: k,
                what: "policy logits".into(),
            });
        }
        let c = if config.sampled_constraints {
            sampled_constraint_estimate(&policy, problem, config, k)
        } else {
            problem.constraint_expectations(&policy.probabilities())?
        };
        lambdas = dual_step(&lambdas, &c, &problem.config().thresholds, config.eta_lambda);
        let record = evaluate(problem, &policy, &lambdas, k, start)?;
        if !record.is_finite() {
            return Err(Error::NonFinite {
                iteration: k,
                what: "training metrics".into(),
            });
        }
        log.records.push(record);
    }
    Ok(TrainingOutcome {
        policy,
        lambdas,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ObjectiveConfig;
    use crate::policy::{PromptDistribution, ReferencePolicy};
    use crate::scoring::DEFAULT_THRESHOLD;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn problem(reward: Vec<Vec<f64>>, c: Vec<Vec<Constraints>>, q: Vec<Vec<f64>>, beta: f64) -> Problem {
        let prompts: Vec<String> = (0..reward.len()).map(|i| format!("p{i}")).collect();
        let weights = PromptDistribution::uniform(prompts.len());
        let reference = ReferencePolicy::new(prompts.clone(), q).unwrap();
        let config = ObjectiveConfig::new(beta, [DEFAULT_THRESHOLD; NUM_CONSTRAINTS]).unwrap();
        Problem::from_values(prompts, weights, reward, c, reference, config).unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> Problem {
        let n = rng.gen_range(1..4);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(2..6)).collect();
        let reward = sizes.iter().map(|&k| (0..k).map(|_| rng.gen_range(0..2) as f64).collect()).collect();
        let c = sizes
            .iter()
            .map(|&k| (0..k).map(|_| std::array::from_fn(|_| rng.gen_range(0..2) as f64)).collect())
            .collect();
        let q = sizes
            .iter()
            .map(|&k| {
                let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|v| v / t).collect()
            })
            .collect();
        problem(reward, c, q, rng.gen_range(0.02..0.5))
    }

    #[test]
    fn advantages_two_value_group() {
        let a = grpo_advantages(&[1.0, 0.0, 1.0, 0.0], 1e-6).unwrap();
        for (a, e) in a.iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn advantages_degenerate_group() {
        assert_eq!(grpo_advantages(&[1.0; 4], 1e-6).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn advantages_hand_computed() {
        // mean 0.5, population variance (4·0.04 + 2·0) / 6 = 0.08/3
        let s = [0.3, 0.7, 0.7, 0.3, 0.5, 0.5];
        let std = (0.08f64 / 3.0).sqrt();
        let a = grpo_advantages(&s, 1e-6).unwrap();
        for (a, s) in a.iter().zip(s) {
            assert!((a - (s - 0.5) / (std + 1e-6)).abs() < 1e-12);
        }
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn advantages_need_two_samples() {
        assert!(matches!(grpo_advantages(&[1.0], 1e-6), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn advantages_sum_to_zero(scores in proptest::collection::vec(-3.0f64..3.0, 2..32)) {
            let a = grpo_advantages(&scores, 1e-6).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() <= 1e-9 * scores.len() as f64);
        }
    }

    #[test]
    fn surrogate_slope_clips_outside_the_trust_region() {
        assert_eq!(clipped_surrogate_slope(1.0, 2.0, 0.2), 2.0);
        assert_eq!(clipped_surrogate_slope(1.3, 2.0, 0.2), 0.0);
        assert_eq!(clipped_surrogate_slope(1.3, -2.0, 0.2), -2.0);
        assert_eq!(clipped_surrogate_slope(0.7, -2.0, 0.2), 0.0);
        assert_eq!(clipped_surrogate_slope(0.7, 2.0, 0.2), 2.0);
    }

    #[test]
    fn dual_step_examples() {
        let l = MultiplierVector::new([0.5; 5]).unwrap();
        let mut c = [0.95; 5];
        c[0] = 0.90;
        let next = dual_step(&l, &c, &[0.95; 5], 0.1);
        assert!((next.values()[0] - 0.505).abs() < 1e-15);
        assert_eq!(next.values()[1..], [0.5; 4]);

        let zero = MultiplierVector::zeros();
        assert_eq!(dual_step(&zero, &[0.99; 5], &[0.95; 5], 0.1), zero);
    }

    proptest! {
        #[test]
        fn dual_step_is_projected_and_monotone(
            l in proptest::array::uniform5(0.0f64..5.0),
            c in proptest::array::uniform5(0.0f64..1.0),
            b in proptest::array::uniform5(0.0f64..1.0),
            eta in 1e-3f64..1.0,
        ) {
            let l = MultiplierVector::new(l).unwrap();
            let next = dual_step(&l, &c, &b, eta);
            for i in 0..5 {
                let (old, new) = (l.values()[i], next.values()[i]);
                prop_assert!(new >= 0.0);
                if c[i] < b[i] {
                    prop_assert!(new > old);
                } else if c[i] > b[i] {
                    prop_assert!(new < old || new == 0.0);
                } else {
                    prop_assert_eq!(new, old);
                }
            }
        }
    }

    #[test]
    fn exact_steps_raise_the_best_response() {
        let p = problem(
            vec![vec![1.0, 0.2, 0.0]],
            vec![vec![[1.0; 5]; 3]],
            vec![vec![0.2, 0.5, 0.3]],
            0.05,
        );
        let config = TrainerConfig { use_exact_gradient: true, eta_theta: 0.5, ..Default::default() };
        let lambdas = MultiplierVector::zeros();
        let mut policy = TabularPolicy::from_reference(p.reference());
        let mut last = policy.distribution_at(0)[0];
        for k in 1..=100 {
            primal_step(&mut policy, &lambdas, &p, &config, k).unwrap();
            let now = policy.distribution_at(0)[0];
            assert!(now > last, "step {k}: {now} <= {last}");
            last = now;
        }
    }

    #[test]
    fn zero_multipliers_give_the_reward_only_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng);
        // Same rewards, constraints all satisfied: only r and KL remain.
        let sizes = p.catalog_sizes();
        let reward_only = problem(
            (0..p.num_prompts()).map(|x| p.reward(x).to_vec()).collect(),
            sizes.iter().map(|&k| vec![[1.0; 5]; k]).collect(),
            (0..p.num_prompts()).map(|x| p.reference().row(x).to_vec()).collect(),
            p.beta(),
        );
        let config = TrainerConfig { seed: 9, ..Default::default() };
        let lambdas = MultiplierVector::zeros();
        let policy = TabularPolicy::from_reference(p.reference());
        let a = sample_groups(&policy, &lambdas, &p, &config, 1).unwrap();
        let b = sample_groups(&policy, &lambdas, &reward_only, &config, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(grpo_gradient(&policy, &p, &a, &config), grpo_gradient(&policy, &reward_only, &b, &config));
    }

    #[test]
    fn zero_step_leaves_the_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng);
        let lambdas = MultiplierVector::new([0.3; 5]).unwrap();
        for exact in [false, true] {
            let config = TrainerConfig { eta_theta: 0.0, use_exact_gradient: exact, ..Default::default() };
            let mut policy = TabularPolicy::from_reference(p.reference());
            let before = policy.clone();
            primal_step(&mut policy, &lambdas, &p, &config, 1).unwrap();
            assert_eq!(policy, before);
        }
    }

    #[test]
    fn small_exact_steps_do_not_decrease_the_lagrangian() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let p = random_problem(&mut rng);
            let lambdas = MultiplierVector::new(std::array::from_fn(|_| rng.gen_range(0.0..3.0))).unwrap();
            let config = TrainerConfig { eta_theta: 1e-2, use_exact_gradient: true, ..Default::default() };
            let mut policy = TabularPolicy::from_reference(p.reference());
            for row in policy.logits_mut() {
                row.iter_mut().for_each(|z| *z += rng.gen_range(-2.0..2.0));
            }
            for k in 1..=20 {
                let before = p.lagrangian_value(&policy.probabilities(), &lambdas).unwrap();
                primal_step(&mut policy, &lambdas, &p, &config, k).unwrap();
                let after = p.lagrangian_value(&policy.probabilities(), &lambdas).unwrap();
                assert!(after >= before - 1e-9, "{after} < {before}");
                for row in policy.probabilities().rows() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|v| *v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn satisfied_reference_is_a_fixed_point() {
        let p = problem(
            vec![vec![1.0; 3], vec![1.0; 4]],
            vec![vec![[1.0; 5]; 3], vec![[1.0; 5]; 4]],
            vec![vec![0.2, 0.5, 0.3], vec![0.1, 0.2, 0.3, 0.4]],
            0.05,
        );
        let out = train(&p, &TrainerConfig { iterations: 200, ..Default::default() }).unwrap();
        assert_eq!(out.log.records.len(), 201);
        for r in &out.log.records {
            assert_eq!(r.lambdas, [0.0; 5]);
            assert!(r.kl <= 1e-3);
        }
    }

    #[test]
    fn violated_constraint_raises_its_multiplier_until_satisfied() {
        // Response 0 earns the reward but breaks the first constraint.
        let mut c0 = [1.0; 5];
        c0[0] = 0.0;
        let p = problem(
            vec![vec![1.0, 1.0, 0.0]],
            vec![vec![c0, [1.0; 5], [1.0; 5]]],
            vec![vec![0.6, 0.2, 0.2]],
            0.05,
        );
        let start = p.constraint_expectations(&p.reference().as_table()).unwrap()[0];
        assert!(start < 0.95);
        let out = train(&p, &TrainerConfig::default()).unwrap();
        let recs = &out.log.records;
        assert!(recs[1].lambdas[0] > 0.0);
        let crossing = recs.iter().position(|r| r.constraints[0] >= 0.95).expect("constraint never met");
        assert!(recs[..crossing].iter().skip(1).all(|r| r.lambdas[0] > 0.0));
    }

    #[test]
    fn training_is_deterministic_and_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_problem(&mut rng);
        let config = TrainerConfig { iterations: 50, seed: 3, ..Default::default() };
        let csv = |config: &TrainerConfig| {
            let out = train(&p, config).unwrap();
            let mut buf = Vec::new();
            out.log.write_csv(&mut buf).unwrap();
            (buf, out.checkpoint().to_json().unwrap())
        };
        let a = csv(&config);
        assert_eq!(a, csv(&config));
        assert_eq!(a, csv(&TrainerConfig { parallel: true, ..config.clone() }));
        assert_ne!(a, csv(&TrainerConfig { seed: 4, ..config.clone() }));
    }

    #[test]
    fn csv_header_and_initial_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_problem(&mut rng);
        let out = train(&p, &TrainerConfig { iterations: 2, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        out.log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,reward,c_format,c_execution,c_length,c_answer,c_sql,\
             l_format,l_execution,l_length,l_answer,l_sql,kl,lagrangian"
        );
        assert!(lines.next().unwrap().starts_with("0,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn sampled_constraints_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_problem(&mut rng);
        let config = TrainerConfig { iterations: 20, sampled_constraints: true, ..Default::default() };
        let out = train(&p, &config).unwrap();
        assert_eq!(out.log.records.len(), 21);
    }

    #[test]
    fn non_finite_records_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_problem(&mut rng);
        let policy = TabularPolicy::from_reference(p.reference());
        let mut record = evaluate(&p, &policy, &MultiplierVector::zeros(), 0, Instant::now()).unwrap();
        assert!(record.is_finite());
        record.lambdas[3] = f64::NAN;
        assert!(!record.is_finite());
    }

    #[test]
    fn invalid_configs() {
        for config in [
            TrainerConfig { group_size: 1, ..Default::default() },
            TrainerConfig { eta_lambda: 0.0, ..Default::default() },
            TrainerConfig { std_floor: 0.0, ..Default::default() },
            TrainerConfig { eta_theta: -1.0, ..Default::default() },
        ] {
            assert!(matches!(config.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_problem(&mut rng);
        let out = train(&p, &TrainerConfig { iterations: 3, ..Default::default() }).unwrap();
        let ck = out.checkpoint();
        let back: Checkpoint = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.policy().unwrap(), out.policy);
        assert_eq!(back.iteration, 3);
    }
}
