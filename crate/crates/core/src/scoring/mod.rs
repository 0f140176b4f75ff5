//! Reward and constraint indicators for a (prompt, response) pair.
//!
//! The reward is execution match against the ground truth. The five
//! constraints, in this fixed order, are: format, execution, length,
//! answer proportion and SQL proportion.

pub mod format;
pub mod sql;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use format::{parse_response, token_count, FormatFailure, ParsedResponse};
pub use sql::{DbFixture, ExecError, ResultSet, SqlBackend, SqlValue, SqliteBackend};

use crate::error::{Error, Result};

/// Number of constraint signals.
pub const NUM_CONSTRAINTS: usize = 5;

/// Short constraint names, in signal order.
pub const CONSTRAINT_NAMES: [&str; NUM_CONSTRAINTS] =
    ["format", "execution", "length", "answer", "sql"];

pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalVector {
    #[serde(with = "bit")]
    pub reward: bool,
    #[serde(with = "bit")]
    pub format: bool,
    #[serde(with = "bit")]
    pub execution: bool,
    #[serde(with = "bit")]
    pub length: bool,
    #[serde(with = "bit")]
    pub answer_prop: bool,
    #[serde(with = "bit")]
    pub sql_prop: bool,
    pub thresholds: [f64; NUM_CONSTRAINTS],
}

impl SignalVector {
    pub fn from_bits(reward: bool, constraints: [bool; NUM_CONSTRAINTS]) -> Self {
        let [format, execution, length, answer_prop, sql_prop] = constraints;
        Self {
            reward,
            format,
            execution,
            length,
            answer_prop,
            sql_prop,
            thresholds: [DEFAULT_THRESHOLD; NUM_CONSTRAINTS],
        }
    }

    pub fn all_zero(thresholds: [f64; NUM_CONSTRAINTS]) -> Self {
        Self {
            thresholds,
            ..Self::from_bits(false, [false; NUM_CONSTRAINTS])
        }
    }

    pub fn constraint_bits(&self) -> [bool; NUM_CONSTRAINTS] {
        [
            self.format,
            self.execution,
            self.length,
            self.answer_prop,
            self.sql_prop,
        ]
    }

    pub fn r(&self) -> f64 {
        f64::from(u8::from(self.reward))
    }

    pub fn c(&self) -> [f64; NUM_CONSTRAINTS] {
        self.constraint_bits().map(|b| f64::from(u8::from(b)))
    }

    /// Constraint slacks `g_i = c_i - b_i`.
    pub fn g(&self) -> [f64; NUM_CONSTRAINTS] {
        let c = self.c();
        std::array::from_fn(|i| c[i] - self.thresholds[i])
    }

    /// Reward followed by the five constraint bits, as 0/1 integers.
    pub fn bits(&self) -> [u8; 1 + NUM_CONSTRAINTS] {
        let c = self.constraint_bits();
        [
            u8::from(self.reward),
            u8::from(c[0]),
            u8::from(c[1]),
            u8::from(c[2]),
            u8::from(c[3]),
            u8::from(c[4]),
        ]
    }
}

mod bit {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("expected bit 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Responses strictly longer than this many tokens satisfy the length
    /// constraint.
    pub length_threshold: usize,
    /// Inclusive band for answer tokens / total tokens.
    pub answer_prop_band: [f64; 2],
    /// Minimum SQL tokens as a fraction of answer tokens.
    pub sql_prop_min: f64,
    pub thresholds: [f64; NUM_CONSTRAINTS],
    pub timeout_ms: u64,
    /// Compare result rows in order instead of as multisets.
    pub order_sensitive: bool,
    pub float_tolerance: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            length_threshold: 300,
            answer_prop_band: [0.25, 0.75],
            sql_prop_min: 0.25,
            thresholds: [DEFAULT_THRESHOLD; NUM_CONSTRAINTS],
            timeout_ms: 2_000,
            order_sensitive: false,
            float_tolerance: 1e-9,
        }
    }
}

impl ScoringConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.answer_prop_band;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::config(format!(
                "answer_prop_band [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        if !(self.sql_prop_min >= 0.0 && self.sql_prop_min.is_finite()) {
            return Err(Error::config("sql_prop_min must be finite and nonnegative"));
        }
        if self.timeout_ms == 0 {
            return Err(Error::config("timeout_ms must be positive"));
        }
        if !(self.float_tolerance >= 0.0) {
            return Err(Error::config("float_tolerance must be nonnegative"));
        }
        Ok(())
    }
}

/// Scores responses for one task against a private session on its fixture.
/// The ground-truth result set is computed once at construction.
pub struct TaskJudge<'a, B: SqlBackend = SqliteBackend> {
    backend: &'a B,
    session: B::Session,
    gt_result: ResultSet,
    config: &'a ScoringConfig,
}

impl<'a, B: SqlBackend> TaskJudge<'a, B> {
    pub fn new(
        backend: &'a B,
        fixture: &DbFixture,
        task_id: &str,
        gt_sql: &str,
        config: &'a ScoringConfig,
    ) -> Result<Self> {
        let session = backend.apply_script(fixture)?;
        let gt_result = backend
            .execute(&session, gt_sql, config.timeout())
            .map_err(|e| Error::Task {
                task_id: task_id.to_string(),
                message: format!("ground-truth query failed: {e}"),
            })?;
        Ok(Self {
            backend,
            session,
            gt_result,
            config,
        })
    }

    pub fn executes(&self, sql: &str) -> bool {
        self.backend
            .execute(&self.session, sql, self.config.timeout())
            .is_ok()
    }

    pub fn matches_ground_truth(&self, sql: &str) -> bool {
        match self.backend.execute(&self.session, sql, self.config.timeout()) {
            Ok(rs) => rs.matches(
                &self.gt_result,
                self.config.float_tolerance,
                self.config.order_sensitive,
            ),
            Err(_) => false,
        }
    }

    pub fn checksum(&self) -> Result<String> {
        self.backend.checksum(&self.session)
    }

    pub fn score(&self, response: &str) -> SignalVector {
        score_with(response, self.config, |sql| {
            match self.backend.execute(&self.session, sql, self.config.timeout()) {
                Ok(rs) => (
                    true,
                    rs.matches(
                        &self.gt_result,
                        self.config.float_tolerance,
                        self.config.order_sensitive,
                    ),
                ),
                Err(_) => (false, false),
            }
        })
    }
}

/// Composes the six signals given an executor returning
/// `(executes, matches_ground_truth)` for the extracted SQL.
fn score_with(
    response: &str,
    config: &ScoringConfig,
    run: impl FnOnce(&str) -> (bool, bool),
) -> SignalVector {
    let mut signals = SignalVector::all_zero(config.thresholds);
    signals.length = token_count(response) > config.length_threshold;
    let Ok(parsed) = parse_response(response) else {
        return signals;
    };
    signals.format = true;
    let sql = parsed.sql.as_deref().unwrap_or_default();
    let (executes, matches) = run(sql);
    signals.execution = executes;
    signals.reward = executes && matches;
    let [lo, hi] = config.answer_prop_band;
    if parsed.total_len > 0 {
        let prop = parsed.answer_len as f64 / parsed.total_len as f64;
        signals.answer_prop = (lo..=hi).contains(&prop);
    }
    signals.sql_prop = parsed.sql_len as f64 >= config.sql_prop_min * parsed.answer_len as f64;
    signals
}

/// 1 iff `sql` executes against a fresh read-only session on the fixture.
pub fn check_execution(sql: &str, fixture: &DbFixture, config: &ScoringConfig) -> Result<bool> {
    let backend = SqliteBackend;
    let session = backend.apply_script(fixture)?;
    Ok(backend.execute(&session, sql, config.timeout()).is_ok())
}

/// 1 iff both queries execute and return equal result sets.
pub fn check_result_match(
    sql: &str,
    gt_sql: &str,
    fixture: &DbFixture,
    config: &ScoringConfig,
) -> Result<bool> {
    let backend = SqliteBackend;
    let judge = TaskJudge::new(&backend, fixture, "<adhoc>", gt_sql, config)?;
    Ok(judge.matches_ground_truth(sql))
}

/// Scores one raw response for a task.
pub fn score(
    response: &str,
    gt_sql: &str,
    fixture: &DbFixture,
    config: &ScoringConfig,
) -> Result<SignalVector> {
    let backend = SqliteBackend;
    let judge = TaskJudge::new(&backend, fixture, "<adhoc>", gt_sql, config)?;
    Ok(judge.score(response))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> DbFixture {
        DbFixture::new("t", "CREATE TABLE t(a INTEGER); INSERT INTO t VALUES (1), (2);")
    }

    fn cfg() -> ScoringConfig {
        ScoringConfig::default()
    }

    #[test]
    fn execution_examples() {
        let f = fixture();
        assert!(check_execution("SELECT 1", &f, &cfg()).unwrap());
        assert!(!check_execution("SELEC 1", &f, &cfg()).unwrap());
        assert!(!check_execution("SELECT missing_col FROM t", &f, &cfg()).unwrap());
    }

    #[test]
    fn execution_fixture_error_is_distinct() {
        let bad = DbFixture::new("broken", "CREATE TABLE t(a INTEGER); INSERT INTO nope VALUES (1);");
        assert!(matches!(check_execution("SELECT 1", &bad, &cfg()), Err(Error::Fixture { .. })));
    }

    #[test]
    fn result_match_examples() {
        let f = fixture();
        let gt = "SELECT a FROM t WHERE a > 1";
        assert!(check_result_match(gt, gt, &f, &cfg()).unwrap());
        assert!(check_result_match("SELECT a FROM t WHERE a >= 2", gt, &f, &cfg()).unwrap());
        assert!(!check_result_match("SELECT a FROM t", gt, &f, &cfg()).unwrap());
        assert!(!check_result_match("SELEC a", gt, &f, &cfg()).unwrap());
    }

    #[test]
    fn broken_ground_truth_is_task_error() {
        let err = check_result_match("SELECT 1", "SELECT nope FROM t", &fixture(), &cfg()).unwrap_err();
        assert!(matches!(err, Error::Task { .. }));
    }

    #[test]
    fn order_sensitive_flag() {
        let f = fixture();
        let gt = "SELECT a FROM t ORDER BY a";
        let desc = "SELECT a FROM t ORDER BY a DESC";
        assert!(check_result_match(desc, gt, &f, &cfg()).unwrap());
        let ordered = ScoringConfig {
            order_sensitive: true,
            ..cfg()
        };
        assert!(!check_result_match(desc, gt, &f, &ordered).unwrap());
    }

    #[test]
    fn empty_response_scores_all_zero() {
        let s = score("", "SELECT a FROM t", &fixture(), &cfg()).unwrap();
        assert_eq!(s.bits(), [0; 6]);
        assert_eq!(s.thresholds, [0.95; 5]);
    }

    #[test]
    fn g_values_are_slacks() {
        let s = SignalVector::from_bits(true, [true, false, true, false, true]);
        let g = s.g();
        assert!((g[0] - 0.05).abs() < 1e-15);
        assert!((g[1] + 0.95).abs() < 1e-15);
    }

    #[test]
    fn signal_vector_json() {
        let s = SignalVector::from_bits(true, [true, true, false, true, false]);
        let v = serde_json::to_value(s).unwrap();
        assert_eq!(v["reward"], 1);
        assert_eq!(v["length"], 0);
        assert_eq!(v["answer_prop"], 1);
        let back: SignalVector = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SignalVector>(
            r#"{"reward":2,"format":1,"execution":1,"length":1,"answer_prop":1,"sql_prop":1,"thresholds":[0.95,0.95,0.95,0.95,0.95]}"#
        )
        .is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = ScoringConfig {
            answer_prop_band: [0.8, 0.2],
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }
}
