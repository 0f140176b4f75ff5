//! Finite prompt/response spaces and tabular softmax policies.
//!
//! A policy is a table of per-prompt distributions over a finite response
//! catalog. [`TabularPolicy`] parameterizes each row by logits and covers the
//! whole simplex in closure, so it has no parameterization gap. The reference
//! policy is stored as explicit, strictly positive probabilities so that every
//! KL divergence against it is finite.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance used when validating that a probability vector sums to one.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Prompt identifiers and, for each prompt, its ordered response catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpace {
    prompts: Vec<String>,
    catalogs: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl PromptSpace {
    pub fn new(prompts: Vec<String>, catalogs: Vec<Vec<String>>) -> Result<Self> {
        if prompts.len() != catalogs.len() {
            return Err(Error::config(format!(
                "{} prompts but {} catalogs",
                prompts.len(),
                catalogs.len()
            )));
        }
        let index = build_index(&prompts)?;
        for (prompt, catalog) in prompts.iter().zip(&catalogs) {
            if catalog.len() < 2 {
                return Err(Error::config(format!(
                    "prompt `{prompt}` has {} responses; catalogs need at least 2",
                    catalog.len()
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for id in catalog {
                if !seen.insert(id) {
                    return Err(Error::config(format!(
                        "duplicate response id `{id}` in catalog of `{prompt}`"
                    )));
                }
            }
        }
        Ok(Self {
            prompts,
            catalogs,
            index,
        })
    }

    /// A space whose response ids are the catalog positions `0..n`.
    pub fn with_sizes(prompts: Vec<String>, sizes: &[usize]) -> Result<Self> {
        let catalogs = sizes
            .iter()
            .map(|&n| (0..n).map(|i| i.to_string()).collect())
            .collect();
        Self::new(prompts, catalogs)
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn catalog(&self, prompt: usize) -> &[String] {
        &self.catalogs[prompt]
    }

    pub fn catalog_sizes(&self) -> Vec<usize> {
        self.catalogs.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn position(&self, prompt: &str) -> Result<usize> {
        self.index
            .get(prompt)
            .copied()
            .ok_or_else(|| Error::UnknownPrompt(prompt.to_string()))
    }
}

/// Sampling weights over prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptDistribution {
    weights: Vec<f64>,
}

impl PromptDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("prompt weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !weights.is_empty() && (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::config(format!(
                "prompt weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.weights, rng)
    }
}

/// Per-prompt probability rows of an arbitrary (not necessarily softmax
/// parameterized) policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    rows: Vec<Vec<f64>>,
}

impl PolicyTable {
    /// Wraps rows that are already valid distributions.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            check_simplex(row).map_err(|m| Error::config(format!("row {i}: {m}")))?;
        }
        Ok(Self { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.rows[prompt]
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }

    /// Pointwise mixture `t * self + (1 - t) * other`.
    pub fn mix(&self, other: &PolicyTable, t: f64) -> PolicyTable {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect())
            .collect();
        PolicyTable { rows }
    }
}

/// Softmax policy with one logit per (prompt, response) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    prompts: Vec<String>,
    logits: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl TabularPolicy {
    pub fn new(prompts: Vec<String>, logits: Vec<Vec<f64>>) -> Result<Self> {
        if prompts.len() != logits.len() {
            return Err(Error::config("prompt and logit row counts differ"));
        }
        if logits.iter().flatten().any(|l| !l.is_finite()) {
            return Err(Error::config("logits must be finite"));
        }
        if let Some(row) = logits.iter().position(|r| r.len() < 2) {
            return Err(Error::config(format!(
                "prompt `{}` has fewer than 2 responses",
                prompts[row]
            )));
        }
        let index = build_index(&prompts)?;
        Ok(Self {
            prompts,
            logits,
            index,
        })
    }

    /// All-zero logits, i.e. the uniform policy on every catalog.
    pub fn uniform(space: &PromptSpace) -> Self {
        let logits = space.catalog_sizes().iter().map(|&n| vec![0.0; n]).collect();
        Self::new(space.prompts().to_vec(), logits).expect("space already validated")
    }

    /// Logits equal to the reference log-probabilities, so the induced
    /// distribution reproduces the reference exactly.
    pub fn from_reference(reference: &ReferencePolicy) -> Self {
        let logits = reference
            .probs
            .iter()
            .map(|row| row.iter().map(|p| p.ln()).collect())
            .collect();
        Self::new(reference.prompts.clone(), logits).expect("reference already validated")
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn position(&self, prompt: &str) -> Result<usize> {
        self.index
            .get(prompt)
            .copied()
            .ok_or_else(|| Error::UnknownPrompt(prompt.to_string()))
    }

    /// Softmax of the prompt's logit row.
    pub fn distribution(&self, prompt: &str) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits[self.position(prompt)?]))
    }

    pub fn distribution_at(&self, prompt: usize) -> Vec<f64> {
        softmax(&self.logits[prompt])
    }

    pub fn log_distribution_at(&self, prompt: usize) -> Vec<f64> {
        log_softmax(&self.logits[prompt])
    }

    pub fn probabilities(&self) -> PolicyTable {
        PolicyTable::from_rows_unchecked(self.logits.iter().map(|r| softmax(r)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().flatten().all(|l| l.is_finite())
    }
}

/// Explicit reference distribution; strictly positive on every catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy {
    prompts: Vec<String>,
    probs: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl ReferencePolicy {
    pub fn new(prompts: Vec<String>, probs: Vec<Vec<f64>>) -> Result<Self> {
        if prompts.len() != probs.len() {
            return Err(Error::config("prompt and probability row counts differ"));
        }
        for (prompt, row) in prompts.iter().zip(&probs) {
            if row.len() < 2 {
                return Err(Error::config(format!(
                    "prompt `{prompt}` has fewer than 2 responses"
                )));
            }
            if row.iter().any(|p| !(*p > 0.0)) {
                return Err(Error::config(format!(
                    "reference probabilities for `{prompt}` must be strictly positive"
                )));
            }
            check_simplex(row).map_err(|m| Error::config(format!("`{prompt}`: {m}")))?;
        }
        let index = build_index(&prompts)?;
        Ok(Self {
            prompts,
            probs,
            index,
        })
    }

    pub fn uniform(space: &PromptSpace) -> Self {
        let probs = space
            .catalog_sizes()
            .iter()
            .map(|&n| vec![1.0 / n as f64; n])
            .collect();
        Self::new(space.prompts().to_vec(), probs).expect("space already validated")
    }

    /// Normalizes positive per-response weights into a reference policy.
    pub fn from_weights(prompts: Vec<String>, weights: Vec<Vec<f64>>) -> Result<Self> {
        let probs = weights
            .into_iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                row.into_iter().map(|w| w / total).collect()
            })
            .collect();
        Self::new(prompts, probs)
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.probs[prompt]
    }

    pub fn position(&self, prompt: &str) -> Result<usize> {
        self.index
            .get(prompt)
            .copied()
            .ok_or_else(|| Error::UnknownPrompt(prompt.to_string()))
    }

    pub fn as_table(&self) -> PolicyTable {
        PolicyTable::from_rows_unchecked(self.probs.clone())
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `KL(p || q)` for one prompt; terms with `p = 0` contribute nothing.
pub fn kl_rows(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum();
    kl.max(0.0)
}

/// KL divergence of the policy from the reference on one prompt, computed from
/// log-probabilities.
pub fn kl_divergence(
    policy: &TabularPolicy,
    reference: &ReferencePolicy,
    prompt: &str,
) -> Result<f64> {
    let x = policy.position(prompt)?;
    let xr = reference.position(prompt)?;
    let logp = policy.log_distribution_at(x);
    let q = reference.row(xr);
    if logp.len() != q.len() {
        return Err(Error::Shape(format!(
            "catalog sizes differ for `{prompt}`: {} vs {}",
            logp.len(),
            q.len()
        )));
    }
    let kl: f64 = logp
        .iter()
        .zip(q)
        .map(|(lp, qi)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - qi.ln())
            }
        })
        .sum();
    Ok(kl.max(0.0))
}

/// Draws `group_size` i.i.d. responses for one prompt; returns catalog indices.
pub fn sample_group<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    prompt: &str,
    group_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if group_size < 2 {
        return Err(Error::config(format!(
            "group size {group_size} < 2 leaves the group baseline undefined"
        )));
    }
    let probs = policy.distribution(prompt)?;
    Ok((0..group_size).map(|_| sample_index(&probs, rng)).collect())
}

/// Inverse-CDF draw from an (assumed normalized) probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

fn check_simplex(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("probabilities must be finite and nonnegative".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("probabilities sum to {total}, expected 1"));
    }
    Ok(())
}

fn build_index(prompts: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(prompts.len());
    for (i, p) in prompts.iter().enumerate() {
        if index.insert(p.clone(), i).is_some() {
            return Err(Error::config(format!("duplicate prompt id `{p}`")));
        }
    }
    Ok(index)
}

#[derive(Serialize, Deserialize)]
struct LogitsRepr {
    prompts: Vec<String>,
    logits: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ProbsRepr {
    prompts: Vec<String>,
    probs: BTreeMap<String, Vec<f64>>,
}

fn rows_by_prompt<D: serde::de::Error>(
    prompts: &[String],
    mut map: BTreeMap<String, Vec<f64>>,
) -> std::result::Result<Vec<Vec<f64>>, D> {
    let rows = prompts
        .iter()
        .map(|p| {
            map.remove(p)
                .ok_or_else(|| D::custom(format!("missing row for prompt `{p}`")))
        })
        .collect::<std::result::Result<Vec<_>, D>>()?;
    if let Some(extra) = map.keys().next() {
        return Err(D::custom(format!("row for undeclared prompt `{extra}`")));
    }
    Ok(rows)
}

impl Serialize for TabularPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LogitsRepr {
            prompts: self.prompts.clone(),
            logits: self
                .prompts
                .iter()
                .cloned()
                .zip(self.logits.iter().cloned())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TabularPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = LogitsRepr::deserialize(d)?;
        let rows = rows_by_prompt::<D::Error>(&repr.prompts, repr.logits)?;
        TabularPolicy::new(repr.prompts, rows).map_err(serde::de::Error::custom)
    }
}

impl Serialize for ReferencePolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ProbsRepr {
            prompts: self.prompts.clone(),
            probs: self
                .prompts
                .iter()
                .cloned()
                .zip(self.probs.iter().cloned())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReferencePolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ProbsRepr::deserialize(d)?;
        let rows = rows_by_prompt::<D::Error>(&repr.prompts, repr.probs)?;
        ReferencePolicy::new(repr.prompts, rows).map_err(serde::de::Error::custom)
    }
}
