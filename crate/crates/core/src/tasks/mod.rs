//! Task suites: prompts with database fixtures, ground-truth queries and
//! finite response catalogs.
//!
//! On disk a suite is one JSON document plus a sibling `fixtures/` directory
//! holding one `<fixture_id>.sql` script per fixture:
//!
//! ```text
//! {
//!   "prompt_dist": [0.5, 0.5],
//!   "tasks": [
//!     {"task_id": "...", "prompt_text": "...", "fixture_id": "...",
//!      "gt_sql": "...", "responses": ["...", "..."],
//!      "archetypes": ["correct-wellformed", "..."]}
//!   ]
//! }
//! ```
//!
//! `archetypes` is optional and only written for generated suites. Keys are
//! sorted and floats use shortest round-trip formatting, so equal suites
//! serialize to equal bytes.

mod generator;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PromptDistribution, PromptSpace};
use crate::scoring::{DbFixture, ScoringConfig, SqliteBackend, TaskJudge};

pub use generator::{generate_suite, Archetype, ArchetypeMix, GeneratorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub prompt_text: String,
    pub fixture_id: String,
    pub gt_sql: String,
    pub responses: Vec<String>,
    /// Intended archetype of each response, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetypes: Option<Vec<Archetype>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    pub tasks: Vec<Task>,
    pub prompt_dist: PromptDistribution,
    pub fixtures: BTreeMap<String, DbFixture>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    tasks: Vec<Task>,
    prompt_dist: PromptDistribution,
}

impl TaskSuite {
    /// Checks referential integrity and dimensions without executing SQL.
    pub fn check_structure(&self) -> Result<()> {
        if self.prompt_dist.len() != self.tasks.len() {
            return Err(Error::config(format!(
                "prompt_dist has {} weights for {} tasks",
                self.prompt_dist.len(),
                self.tasks.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for task in &self.tasks {
            if !seen.insert(task.task_id.as_str()) {
                return Err(task_error(task, "duplicate task id"));
            }
            if !self.fixtures.contains_key(&task.fixture_id) {
                return Err(Error::UnresolvedFixture {
                    task_id: task.task_id.clone(),
                    fixture_id: task.fixture_id.clone(),
                });
            }
            if task.responses.len() < 2 {
                return Err(task_error(task, "catalog needs at least 2 responses"));
            }
            if let Some(a) = &task.archetypes {
                if a.len() != task.responses.len() {
                    return Err(task_error(task, "archetype labels do not match responses"));
                }
            }
        }
        Ok(())
    }

    /// Full validation: structure, ground truth executes, and at least one
    /// response in every catalog earns reward 1.
    pub fn validate(&self, config: &ScoringConfig) -> Result<()> {
        self.check_structure()?;
        let backend = SqliteBackend;
        for task in &self.tasks {
            let judge = TaskJudge::new(
                &backend,
                &self.fixtures[&task.fixture_id],
                &task.task_id,
                &task.gt_sql,
                config,
            )?;
            if !task.responses.iter().any(|r| judge.score(r).reward) {
                return Err(task_error(task, "no response earns reward 1"));
            }
        }
        Ok(())
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.task_id.clone()).collect()
    }

    /// Prompt space whose response ids are catalog positions.
    pub fn prompt_space(&self) -> Result<PromptSpace> {
        let sizes: Vec<usize> = self.tasks.iter().map(|t| t.responses.len()).collect();
        PromptSpace::with_sizes(self.task_ids(), &sizes)
    }

    pub fn fixture_for(&self, task: &Task) -> Result<&DbFixture> {
        self.fixtures
            .get(&task.fixture_id)
            .ok_or_else(|| Error::UnresolvedFixture {
                task_id: task.task_id.clone(),
                fixture_id: task.fixture_id.clone(),
            })
    }

    /// Canonical JSON text of the suite document (fixtures excluded).
    pub fn to_canonical_json(&self) -> Result<String> {
        let file = SuiteFile {
            tasks: self.tasks.clone(),
            prompt_dist: self.prompt_dist.clone(),
        };
        // Round-tripping through `Value` sorts object keys.
        let value = serde_json::to_value(&file)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }
}

fn task_error(task: &Task, message: &str) -> Error {
    Error::Task {
        task_id: task.task_id.clone(),
        message: message.to_string(),
    }
}

fn fixtures_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
        .join("fixtures")
}

/// Writes the suite document to `path` and every fixture to
/// `<dir of path>/fixtures/<fixture_id>.sql`.
pub fn save_suite(suite: &TaskSuite, path: &Path) -> Result<()> {
    let json = suite.to_canonical_json()?;
    let dir = fixtures_dir(path);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (id, fixture) in &suite.fixtures {
        let file = dir.join(format!("{id}.sql"));
        fs::write(&file, &fixture.script).map_err(|e| Error::io(&file, e))?;
    }
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads and fully validates a suite with the default scoring configuration.
pub fn load_suite(path: &Path) -> Result<TaskSuite> {
    load_suite_with(path, &ScoringConfig::default())
}

pub fn load_suite_with(path: &Path, config: &ScoringConfig) -> Result<TaskSuite> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SuiteFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let dir = fixtures_dir(path);
    let mut fixtures = BTreeMap::new();
    for task in &file.tasks {
        if fixtures.contains_key(&task.fixture_id) {
            continue;
        }
        let file = dir.join(format!("{}.sql", task.fixture_id));
        if !valid_fixture_id(&task.fixture_id) || !file.is_file() {
            return Err(Error::UnresolvedFixture {
                task_id: task.task_id.clone(),
                fixture_id: task.fixture_id.clone(),
            });
        }
        let script = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        fixtures.insert(
            task.fixture_id.clone(),
            DbFixture::new(task.fixture_id.clone(), script),
        );
    }
    let suite = TaskSuite {
        tasks: file.tasks,
        prompt_dist: file.prompt_dist,
        fixtures,
    };
    suite.validate(config)?;
    Ok(suite)
}

/// Fixture ids become file names, so path separators are not allowed.
fn valid_fixture_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && id != "."
        && id != ".."
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_suite() -> TaskSuite {
        let fixture = DbFixture::new(
            "db",
            "CREATE TABLE t(a INTEGER);\nINSERT INTO t VALUES (1), (2), (3);\n",
        );
        let good = "<think>x</think><answer>```sql SELECT a FROM t WHERE a > 1```</answer>";
        let bad = "<think>x</think><answer>```sql SELECT a FROM t```</answer>";
        TaskSuite {
            tasks: vec![Task {
                task_id: "q1".into(),
                prompt_text: "Which a exceed 1?".into(),
                fixture_id: "db".into(),
                gt_sql: "SELECT a FROM t WHERE a > 1".into(),
                responses: vec![bad.into(), good.into()],
                archetypes: None,
            }],
            prompt_dist: PromptDistribution::uniform(1),
            fixtures: BTreeMap::from([("db".to_string(), fixture)]),
        }
    }

    #[test]
    fn round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.json");
        let suite = tiny_suite();
        save_suite(&suite, &path).unwrap();
        let loaded = load_suite(&path).unwrap();
        assert_eq!(loaded, suite);
    }

    #[test]
    fn gt_typo_names_the_task() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.json");
        let mut suite = tiny_suite();
        suite.tasks[0].gt_sql = "SELEC a FROM t".into();
        save_suite(&suite, &path).unwrap();
        match load_suite(&path) {
            Err(Error::Task { task_id, .. }) => assert_eq!(task_id, "q1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fixture_is_a_resolution_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.json");
        let mut suite = tiny_suite();
        save_suite(&suite, &path).unwrap();
        suite.tasks[0].fixture_id = "nope".into();
        fs::write(&path, suite.to_canonical_json().unwrap()).unwrap();
        assert!(matches!(
            load_suite(&path),
            Err(Error::UnresolvedFixture { .. })
        ));
    }

    #[test]
    fn unsolvable_task_is_rejected() {
        let mut suite = tiny_suite();
        suite.tasks[0].responses.pop();
        suite.tasks[0].responses.push("no tags".into());
        assert!(matches!(
            suite.validate(&ScoringConfig::default()),
            Err(Error::Task { .. })
        ));
    }

    #[test]
    fn empty_suite_saves_and_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.json");
        let suite = TaskSuite {
            tasks: vec![],
            prompt_dist: PromptDistribution::new(vec![]).unwrap(),
            fixtures: BTreeMap::new(),
        };
        save_suite(&suite, &path).unwrap();
        assert_eq!(load_suite(&path).unwrap(), suite);
    }

    #[test]
    fn canonical_json_has_sorted_keys() {
        let text = tiny_suite().to_canonical_json().unwrap();
        let prompt = text.find("\"prompt_dist\"").unwrap();
        let tasks = text.find("\"tasks\"").unwrap();
        assert!(prompt < tasks);
        let fixture = text.find("\"fixture_id\"").unwrap();
        let gt = text.find("\"gt_sql\"").unwrap();
        assert!(fixture < gt);
    }
}
