//! Deterministic synthetic suite generator.
//!
//! Every task gets a small schema from one of three families, a ground-truth
//! query with a threshold that splits the rows into two nonempty sides, and a
//! catalog whose responses are built to hit one archetype's signal signature
//! exactly. Token budgets are laid out arithmetically: a response renders as
//!
//! ```text
//! <think> T words </think> <answer> P words ```sql S tokens ``` </answer>
//! ```
//!
//! so it has `T + P + S + 6` tokens in total and `P + S + 2` in the answer.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Task, TaskSuite};
use crate::error::{Error, Result};
use crate::policy::PromptDistribution;
use crate::scoring::{token_count, DbFixture, NUM_CONSTRAINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    CorrectWellformed,
    WrongResult,
    NonExecutable,
    MalformedFormat,
    TooShort,
    AnswerHeavy,
    SqlLight,
}

impl Archetype {
    pub const ALL: [Archetype; 7] = [
        Archetype::CorrectWellformed,
        Archetype::WrongResult,
        Archetype::NonExecutable,
        Archetype::MalformedFormat,
        Archetype::TooShort,
        Archetype::AnswerHeavy,
        Archetype::SqlLight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::CorrectWellformed => "correct-wellformed",
            Archetype::WrongResult => "wrong-result",
            Archetype::NonExecutable => "non-executable",
            Archetype::MalformedFormat => "malformed-format",
            Archetype::TooShort => "too-short",
            Archetype::AnswerHeavy => "answer-heavy",
            Archetype::SqlLight => "sql-light",
        }
    }

    /// Intended `(reward, constraint bits)` when scored with the default
    /// scoring configuration.
    pub fn signature(self) -> (bool, [bool; NUM_CONSTRAINTS]) {
        match self {
            Archetype::CorrectWellformed => (true, [true; 5]),
            Archetype::WrongResult => (false, [true; 5]),
            Archetype::NonExecutable => (false, [true, false, true, true, true]),
            Archetype::MalformedFormat => (false, [false, false, true, false, false]),
            Archetype::TooShort => (true, [true, true, false, true, true]),
            Archetype::AnswerHeavy => (true, [true, true, true, false, true]),
            Archetype::SqlLight => (true, [true, true, true, true, false]),
        }
    }
}

/// Fractions of each archetype in every catalog.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchetypeMix {
    pub correct_wellformed: f64,
    pub wrong_result: f64,
    pub non_executable: f64,
    pub malformed_format: f64,
    pub too_short: f64,
    pub answer_heavy: f64,
    pub sql_light: f64,
}

impl ArchetypeMix {
    pub fn only(archetype: Archetype) -> Self {
        let mut mix = Self::default();
        mix.set(archetype, 1.0);
        mix
    }

    pub fn get(&self, archetype: Archetype) -> f64 {
        match archetype {
            Archetype::CorrectWellformed => self.correct_wellformed,
            Archetype::WrongResult => self.wrong_result,
            Archetype::NonExecutable => self.non_executable,
            Archetype::MalformedFormat => self.malformed_format,
            Archetype::TooShort => self.too_short,
            Archetype::AnswerHeavy => self.answer_heavy,
            Archetype::SqlLight => self.sql_light,
        }
    }

    pub fn set(&mut self, archetype: Archetype, value: f64) {
        let slot = match archetype {
            Archetype::CorrectWellformed => &mut self.correct_wellformed,
            Archetype::WrongResult => &mut self.wrong_result,
            Archetype::NonExecutable => &mut self.non_executable,
            Archetype::MalformedFormat => &mut self.malformed_format,
            Archetype::TooShort => &mut self.too_short,
            Archetype::AnswerHeavy => &mut self.answer_heavy,
            Archetype::SqlLight => &mut self.sql_light,
        };
        *slot = value;
    }

    pub fn validate(&self) -> Result<()> {
        for a in Archetype::ALL {
            let f = self.get(a);
            if !f.is_finite() || f < 0.0 {
                return Err(Error::config(format!(
                    "mix.{} must be a nonnegative number, got {f}",
                    a.name().replace('-', "_")
                )));
            }
        }
        let total: f64 = Archetype::ALL.iter().map(|&a| self.get(a)).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "mix fractions sum to {total}, expected 1"
            )));
        }
        if self.correct_wellformed <= 0.0 {
            return Err(Error::config(
                "mix.correct_wellformed must be positive so every task is solvable",
            ));
        }
        Ok(())
    }

    /// Per-archetype counts for a catalog of `n` responses: largest
    /// remainder rounding, then at least one correct response.
    pub fn counts(&self, n: usize) -> [usize; 7] {
        let exact: Vec<f64> = Archetype::ALL.iter().map(|&a| self.get(a) * n as f64).collect();
        let mut counts: [usize; 7] = std::array::from_fn(|i| exact[i].floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..7).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        if counts[0] == 0 {
            let donor = (1..7).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
            counts[donor] -= 1;
            counts[0] = 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_tasks: usize,
    pub catalog_size: usize,
    pub mix: ArchetypeMix,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.catalog_size < 2 {
            return Err(Error::config(format!(
                "catalog_size must be at least 2, got {}",
                self.catalog_size
            )));
        }
        self.mix.validate()
    }
}

pub fn generate_suite(spec: &GeneratorSpec) -> Result<TaskSuite> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts = spec.mix.counts(spec.catalog_size);
    let mut tasks = Vec::with_capacity(spec.n_tasks);
    let mut fixtures = BTreeMap::new();
    for i in 0..spec.n_tasks {
        let task_id = format!("task_{i:04}");
        let fixture_id = format!("db_{i:04}");
        let schema = Schema::random(&mut rng);

        let mut archetypes: Vec<Archetype> = Archetype::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&a, n)| std::iter::repeat_n(a, n))
            .collect();
        archetypes.shuffle(&mut rng);
        let responses = archetypes
            .iter()
            .map(|&a| render_response(a, &schema, &mut rng))
            .collect();

        fixtures.insert(
            fixture_id.clone(),
            DbFixture::new(fixture_id.clone(), schema.script.clone()),
        );
        tasks.push(Task {
            task_id,
            prompt_text: schema.question.clone(),
            fixture_id,
            gt_sql: schema.gt_sql.clone(),
            responses,
            archetypes: Some(archetypes),
        });
    }
    Ok(TaskSuite {
        prompt_dist: PromptDistribution::uniform(spec.n_tasks),
        tasks,
        fixtures,
    })
}

const NAMES: [&str; 24] = [
    "Ada", "Bela", "Chen", "Dara", "Emil", "Farah", "Goran", "Hana", "Ines", "Jonas", "Kira",
    "Luca", "Mina", "Nils", "Omar", "Priya", "Quinn", "Rosa", "Sven", "Tara", "Uma", "Vik",
    "Wren", "Yusuf",
];

const FILLER: [&str; 32] = [
    "first", "inspect", "the", "schema", "and", "note", "which", "columns", "hold", "values",
    "we", "need", "then", "filter", "rows", "by", "condition", "keep", "only", "matching",
    "records", "return", "requested", "field", "check", "join", "keys", "are", "consistent",
    "result", "each", "name",
];

/// One generated database with its question and query variants. Every
/// variant contains a `WHERE` clause so it can be padded with `AND 1 = 1`.
struct Schema {
    script: String,
    question: String,
    gt_sql: String,
    correct: Vec<String>,
    wrong: Vec<String>,
    broken: Vec<String>,
}

/// `n` distinct integers drawn from `lo..hi` in steps of `step`.
fn distinct_values(rng: &mut ChaCha8Rng, n: usize, lo: i64, hi: i64, step: i64) -> Vec<i64> {
    let mut pool: Vec<i64> = (lo / step..hi / step).map(|v| v * step).collect();
    pool.shuffle(rng);
    pool.truncate(n);
    pool
}

fn pick_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
    let mut names = NAMES.to_vec();
    names.shuffle(rng);
    names.truncate(n);
    names
}

/// A threshold taken from the sorted values so that both `> t` and `<= t`
/// select at least one row.
fn split_threshold(rng: &mut ChaCha8Rng, values: &[i64]) -> i64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    sorted[rng.gen_range(1..sorted.len() - 1)]
}

impl Schema {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        match rng.gen_range(0..3) {
            0 => Self::employees(rng),
            1 => Self::orders(rng),
            _ => Self::enrollments(rng),
        }
    }

    fn employees(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(6..=20);
        let names = pick_names(rng, n);
        let salaries = distinct_values(rng, n, 30_000, 120_000, 1_000);
        let depts = ["eng", "ops", "sales"];
        let mut script = String::from(
            "CREATE TABLE employees (id INTEGER PRIMARY KEY, name TEXT NOT NULL, dept TEXT NOT NULL, salary INTEGER NOT NULL);\n",
        );
        for i in 0..n {
            let dept = depts[rng.gen_range(0..depts.len())];
            script.push_str(&format!(
                "INSERT INTO employees VALUES ({}, '{}', '{dept}', {});\n",
                i + 1,
                names[i],
                salaries[i]
            ));
        }
        let t = split_threshold(rng, &salaries);
        Self {
            script,
            question: format!("List the names of employees whose salary is greater than {t}."),
            gt_sql: format!("SELECT name FROM employees WHERE salary > {t}"),
            correct: vec![
                format!("SELECT name FROM employees WHERE salary > {t}"),
                format!("SELECT e.name FROM employees AS e WHERE e.salary > {t}"),
                format!("SELECT name FROM employees WHERE {t} < salary"),
                format!("SELECT name FROM employees WHERE NOT salary <= {t}"),
            ],
            wrong: vec![
                format!("SELECT name FROM employees WHERE salary <= {t}"),
                "SELECT name FROM employees WHERE 1 = 1".to_string(),
            ],
            broken: vec![
                format!("SELECT missing_col FROM employees WHERE salary > {t}"),
                format!("SELEC name FROM employees WHERE salary > {t}"),
                format!("SELECT name FROM employee_records WHERE salary > {t}"),
            ],
        }
    }

    fn orders(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(5..=10);
        let names = pick_names(rng, n);
        let amounts = distinct_values(rng, n, 10, 1_000, 5);
        let cities = ["Oslo", "Lyon", "Porto", "Graz"];
        let mut script = String::from(
            "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT NOT NULL, city TEXT NOT NULL);\n\
             CREATE TABLE orders (id INTEGER PRIMARY KEY, customer_id INTEGER NOT NULL REFERENCES customers(id), amount INTEGER NOT NULL);\n",
        );
        for i in 0..n {
            let city = cities[rng.gen_range(0..cities.len())];
            script.push_str(&format!(
                "INSERT INTO customers VALUES ({}, '{}', '{city}');\n",
                i + 1,
                names[i]
            ));
        }
        // One order per customer, in shuffled order, so the two sides of the
        // threshold select disjoint customer names.
        let mut owners: Vec<usize> = (1..=n).collect();
        owners.shuffle(rng);
        for (i, owner) in owners.iter().enumerate() {
            script.push_str(&format!(
                "INSERT INTO orders VALUES ({}, {owner}, {});\n",
                100 + i,
                amounts[i]
            ));
        }
        let t = split_threshold(rng, &amounts);
        let join = "FROM customers AS c JOIN orders AS o ON o.customer_id = c.id";
        Self {
            script,
            question: format!("Which customers placed an order with an amount above {t}?"),
            gt_sql: format!("SELECT c.name {join} WHERE o.amount > {t}"),
            correct: vec![
                format!("SELECT c.name {join} WHERE o.amount > {t}"),
                format!("SELECT c.name FROM orders AS o JOIN customers AS c ON c.id = o.customer_id WHERE o.amount > {t}"),
                format!("SELECT name FROM customers WHERE id IN (SELECT customer_id FROM orders WHERE amount > {t})"),
            ],
            wrong: vec![
                format!("SELECT c.name {join} WHERE o.amount <= {t}"),
                format!("SELECT c.name {join} WHERE 1 = 1"),
            ],
            broken: vec![
                format!("SELECT c.missing_col {join} WHERE o.amount > {t}"),
                format!("SELEC c.name {join} WHERE o.amount > {t}"),
                format!("SELECT c.name FROM customers AS c JOIN purchases AS o ON o.customer_id = c.id WHERE o.amount > {t}"),
            ],
        }
    }

    fn enrollments(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(4..=6);
        let n_courses = rng.gen_range(2..=4);
        let names = pick_names(rng, n);
        let grades = distinct_values(rng, n, 40, 100, 1);
        let titles = ["Algebra", "Biology", "Chemistry", "Drawing"];
        let mut script = String::from(
            "CREATE TABLE students (id INTEGER PRIMARY KEY, name TEXT NOT NULL);\n\
             CREATE TABLE courses (id INTEGER PRIMARY KEY, title TEXT NOT NULL);\n\
             CREATE TABLE enrollments (student_id INTEGER NOT NULL REFERENCES students(id), course_id INTEGER NOT NULL REFERENCES courses(id), grade INTEGER NOT NULL);\n",
        );
        for (i, name) in names.iter().enumerate() {
            script.push_str(&format!("INSERT INTO students VALUES ({}, '{name}');\n", i + 1));
        }
        for (i, title) in titles.iter().take(n_courses).enumerate() {
            script.push_str(&format!("INSERT INTO courses VALUES ({}, '{title}');\n", i + 1));
        }
        for (i, grade) in grades.iter().enumerate() {
            let course = rng.gen_range(1..=n_courses);
            script.push_str(&format!(
                "INSERT INTO enrollments VALUES ({}, {course}, {grade});\n",
                i + 1
            ));
        }
        let t = split_threshold(rng, &grades);
        let join = "FROM students AS s JOIN enrollments AS e ON e.student_id = s.id \
                    JOIN courses AS k ON k.id = e.course_id";
        Self {
            script,
            question: format!("Name the students who earned a grade of at least {t} in any course."),
            gt_sql: format!("SELECT s.name {join} WHERE e.grade >= {t}"),
            correct: vec![
                format!("SELECT s.name {join} WHERE e.grade >= {t}"),
                format!("SELECT s.name FROM students AS s JOIN enrollments AS e ON e.student_id = s.id WHERE e.grade >= {t}"),
                format!("SELECT s.name {join} WHERE NOT e.grade < {t}"),
            ],
            wrong: vec![
                format!("SELECT s.name {join} WHERE e.grade < {t}"),
                format!("SELECT s.name {join} WHERE 1 = 1"),
            ],
            broken: vec![
                format!("SELECT s.missing_col {join} WHERE e.grade >= {t}"),
                format!("SELEC s.name {join} WHERE e.grade >= {t}"),
                format!("SELECT s.name FROM students AS s JOIN grades AS e ON e.student_id = s.id WHERE e.grade >= {t}"),
            ],
        }
    }
}

fn pad_sql(base: &str, target: usize) -> String {
    let mut sql = base.to_string();
    while token_count(&sql) < target {
        sql.push_str(" AND 1 = 1");
    }
    sql
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push(if i % 12 == 0 { '\n' } else { ' ' });
        }
        out.push_str(FILLER[rng.gen_range(0..FILLER.len())]);
    }
    out
}

fn render(think: &str, prose: &str, sql: &str) -> String {
    format!("<think>\n{think}\n</think>\n<answer>\n{prose}\n```sql\n{sql}\n```\n</answer>")
}

/// Token budget for one response: SQL tokens `s`, answer tokens `a` and total
/// tokens `total`.
struct Layout {
    s: usize,
    a: usize,
    total: usize,
}

fn range(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    debug_assert!(lo <= hi, "empty layout range {lo}..={hi}");
    rng.gen_range(lo..=hi.max(lo))
}

/// Answer-to-total ratios are kept inside [0.3, 0.7] for archetypes that must
/// satisfy the answer-proportion band, away from its edges.
fn balanced_total(rng: &mut ChaCha8Rng, a: usize, lo: usize, hi: usize) -> usize {
    let lo = lo.max((a as f64 / 0.7).ceil() as usize).max(a + 4);
    let hi = hi.min((a as f64 / 0.3).floor() as usize);
    range(rng, lo, hi)
}

fn render_response(archetype: Archetype, schema: &Schema, rng: &mut ChaCha8Rng) -> String {
    let pool = match archetype {
        Archetype::WrongResult => &schema.wrong,
        Archetype::NonExecutable => &schema.broken,
        _ => &schema.correct,
    };
    let base = pool.choose(rng).expect("variant pools are nonempty");

    let (sql, layout) = match archetype {
        Archetype::CorrectWellformed
        | Archetype::WrongResult
        | Archetype::NonExecutable
        | Archetype::MalformedFormat => {
            let target = range(rng, 36, 50);
            let sql = pad_sql(base, target);
            let s = token_count(&sql);
            let a = range(rng, 110.max(s + 2), 180.min(4 * s));
            // Malformed responses keep a margin above the length threshold
            // since corruption may remove a token.
            let floor = if archetype == Archetype::MalformedFormat { 315 } else { 310 };
            let total = balanced_total(rng, a, floor, usize::MAX);
            (sql, Layout { s, a, total })
        }
        Archetype::TooShort => {
            let target = range(rng, 14, 22);
            let sql = pad_sql(base, target);
            let s = token_count(&sql);
            let a = range(rng, 40.max(s + 2), 80.min(4 * s));
            let total = balanced_total(rng, a, 0, 300);
            (sql, Layout { s, a, total })
        }
        Archetype::AnswerHeavy => {
            let target = range(rng, 70, 90);
            let sql = pad_sql(base, target);
            let s = token_count(&sql);
            let a = range(rng, 260.max(s + 2), 320.min(4 * s));
            let total = range(rng, 310.max(a + 4), (a as f64 / 0.8).floor() as usize);
            (sql, Layout { s, a, total })
        }
        Archetype::SqlLight => {
            let sql = base.clone();
            let s = token_count(&sql);
            let lo = (4 * s + 8).max(110);
            let a = range(rng, lo, lo + 60);
            let total = balanced_total(rng, a, 310, usize::MAX);
            (sql, Layout { s, a, total })
        }
    };

    let prose = filler(rng, layout.a - layout.s - 2);
    let think = filler(rng, layout.total - layout.a - 4);
    let text = render(&think, &prose, &sql);
    debug_assert_eq!(token_count(&text), layout.total);
    if archetype == Archetype::MalformedFormat {
        corrupt(&text, rng)
    } else {
        text
    }
}

/// Breaks the grammar in one of five ways.
fn corrupt(text: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..5) {
        0 => text.replacen("</think>", "", 1),
        1 => text.replacen("</answer>", "", 1),
        2 => format!("{text}\n<think>\nrecheck the result\n</think>"),
        3 => text.replacen("```sql", "```", 1),
        _ => format!("{text}\nHope this helps!"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{parse_response, ScoringConfig, SqliteBackend, TaskJudge};

    fn spec(mix: ArchetypeMix, catalog_size: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n_tasks: 6,
            catalog_size,
            mix,
            seed,
        }
    }

    fn scored(suite: &TaskSuite) -> Vec<Vec<(Archetype, crate::scoring::SignalVector)>> {
        let backend = SqliteBackend;
        let config = ScoringConfig::default();
        suite
            .tasks
            .iter()
            .map(|t| {
                let judge = TaskJudge::new(
                    &backend,
                    &suite.fixtures[&t.fixture_id],
                    &t.task_id,
                    &t.gt_sql,
                    &config,
                )
                .unwrap();
                let labels = t.archetypes.as_ref().unwrap();
                labels.iter().zip(&t.responses).map(|(&a, r)| (a, judge.score(r))).collect()
            })
            .collect()
    }

    #[test]
    fn all_correct_mix_scores_all_ones() {
        let suite = generate_suite(&spec(ArchetypeMix::only(Archetype::CorrectWellformed), 5, 1))
            .unwrap();
        for (_, s) in scored(&suite).into_iter().flatten() {
            assert_eq!(s.bits(), [1; 6]);
        }
    }

    #[test]
    fn half_non_executable() {
        let mut mix = ArchetypeMix::default();
        mix.correct_wellformed = 0.5;
        mix.non_executable = 0.5;
        let suite = generate_suite(&spec(mix, 4, 2)).unwrap();
        for task in scored(&suite) {
            let executing = task.iter().filter(|(_, s)| s.execution).count();
            assert_eq!(executing, 2);
            assert_eq!(task.len() - executing, 2);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let mix = ArchetypeMix {
            correct_wellformed: 0.4,
            wrong_result: 0.2,
            too_short: 0.4,
            ..Default::default()
        };
        let a = generate_suite(&spec(mix, 6, 9)).unwrap();
        let b = generate_suite(&spec(mix, 6, 9)).unwrap();
        assert_eq!(a.to_canonical_json().unwrap(), b.to_canonical_json().unwrap());
        assert_eq!(a.fixtures, b.fixtures);
        let c = generate_suite(&spec(mix, 6, 10)).unwrap();
        assert_ne!(a.to_canonical_json().unwrap(), c.to_canonical_json().unwrap());
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let one = spec(ArchetypeMix::only(Archetype::CorrectWellformed), 1, 0);
        assert!(matches!(generate_suite(&one), Err(Error::Config(_))));
        let mut short = ArchetypeMix::only(Archetype::CorrectWellformed);
        short.correct_wellformed = 0.9;
        assert!(matches!(generate_suite(&spec(short, 4, 0)), Err(Error::Config(m)) if m.contains("sum")));
        let none = ArchetypeMix::only(Archetype::WrongResult);
        assert!(generate_suite(&spec(none, 4, 0)).is_err());
    }

    #[test]
    fn counts_round_and_keep_a_correct_response() {
        let mix = ArchetypeMix {
            correct_wellformed: 0.1,
            malformed_format: 0.45,
            too_short: 0.45,
            ..Default::default()
        };
        let counts = mix.counts(2);
        assert_eq!(counts.iter().sum::<usize>(), 2);
        assert_eq!(counts[0], 1);
        let even = ArchetypeMix {
            correct_wellformed: 0.5,
            wrong_result: 0.5,
            ..Default::default()
        };
        assert_eq!(even.counts(4), [2, 2, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn every_archetype_hits_its_signature() {
        let uniform = 1.0 / 7.0;
        let mut mix = ArchetypeMix::default();
        for a in Archetype::ALL {
            mix.set(a, uniform);
        }
        let total: f64 = Archetype::ALL.iter().map(|&a| mix.get(a)).sum();
        mix.correct_wellformed += 1.0 - total;
        let suite = generate_suite(&GeneratorSpec {
            n_tasks: 12,
            catalog_size: 14,
            mix,
            seed: 3,
        })
        .unwrap();
        for (archetype, s) in scored(&suite).into_iter().flatten() {
            let (reward, bits) = archetype.signature();
            assert_eq!((s.reward, s.constraint_bits()), (reward, bits), "{archetype:?}");
        }
    }

    #[test]
    fn well_formed_archetypes_parse() {
        let suite = generate_suite(&spec(ArchetypeMix::only(Archetype::CorrectWellformed), 3, 4))
            .unwrap();
        for task in &suite.tasks {
            for r in &task.responses {
                let parsed = parse_response(r).unwrap();
                assert!(parsed.total_len > 300);
            }
        }
    }
}
