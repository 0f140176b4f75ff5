//! Run configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pdforge_core::objective::ObjectiveConfig;
use pdforge_core::oracle::CertifyConfig;
use pdforge_core::scoring::ScoringConfig;
use pdforge_core::tasks::{ArchetypeMix, GeneratorSpec};
use pdforge_core::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};

use crate::{Failure, Outcome};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Training seed. Overrides `trainer.seed`; `--seed` overrides both.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Suite JSON to load. Exactly one of `suite` and `generator` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    /// JSON object mapping task ids to reference probabilities. Uniform
    /// over each catalog when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    /// `scoring.thresholds` is always replaced by `objective.thresholds`.
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub oracle: CertifyConfig,
}

/// Generator spec file for `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorFile {
    pub schema_version: u32,
    pub n_tasks: usize,
    pub catalog_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub mix: ArchetypeMix,
}

impl GeneratorFile {
    pub fn spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            n_tasks: self.n_tasks,
            catalog_size: self.catalog_size,
            mix: self.mix,
            seed: self.seed,
        }
    }
}

fn check_version(version: u32, path: &Path) -> Outcome<()> {
    if version != SCHEMA_VERSION {
        return Err(Failure::validation(format!(
            "{}: schema_version {version} is not supported (expected {SCHEMA_VERSION})",
            path.display()
        )));
    }
    Ok(())
}

fn read(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))
}

pub fn load_generator(path: &Path) -> Outcome<GeneratorFile> {
    let file: GeneratorFile = toml::from_str(&read(path)?)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    check_version(file.schema_version, path)?;
    file.spec()
        .validate()
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    Ok(file)
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub deterministic: bool,
}

impl RunConfig {
    /// Parses, applies overrides, resolves relative paths against the config
    /// file's directory and validates every section.
    pub fn load(path: &Path, overrides: &Overrides) -> Outcome<Self> {
        let mut config: RunConfig = toml::from_str(&read(path)?)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        check_version(config.schema_version, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base, overrides)?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path, overrides: &Overrides) -> Outcome<()> {
        let invalid = |msg: String| Failure::validation(msg);
        match (&self.suite, &self.generator) {
            (Some(_), Some(_)) => {
                return Err(invalid("set exactly one of `suite` and `[generator]`, not both".into()))
            }
            (None, None) => return Err(invalid("set one of `suite` or `[generator]`".into())),
            _ => {}
        }
        for path in [&mut self.suite, &mut self.reference].into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            if !path.is_file() {
                return Err(invalid(format!("file not found: {}", path.display())));
            }
            *path = path
                .canonicalize()
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        }
        if let Some(dir) = &mut self.output_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        let seed = overrides.seed.or(self.seed).unwrap_or(self.trainer.seed);
        self.seed = Some(seed);
        self.trainer.seed = seed;
        if overrides.deterministic {
            self.trainer.parallel = false;
        }
        self.scoring.thresholds = self.objective.thresholds;

        let section = |name: &str, r: pdforge_core::Result<()>| {
            r.map_err(|e| invalid(format!("[{name}] {e}")))
        };
        if let Some(spec) = &self.generator {
            section("generator", spec.validate())?;
        }
        section("objective", self.objective.validate())?;
        section("scoring", self.scoring.validate())?;
        section("trainer", self.trainer.validate())?;
        section("oracle.dual", self.oracle.dual.validate())?;
        Ok(())
    }

    /// The resolved config as TOML; written verbatim to `config.snapshot`.
    pub fn snapshot(&self) -> Outcome<String> {
        toml::to_string(self).map_err(|e| Failure::internal(format!("cannot serialize config: {e}")))
    }
}

/// Reads a reference policy file: task id to probability row.
pub fn read_reference(path: &Path) -> Outcome<BTreeMap<String, Vec<f64>>> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}
