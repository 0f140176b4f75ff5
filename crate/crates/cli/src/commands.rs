//! The five subcommands. Each validates all of its inputs before creating a
//! run directory or writing any output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use pdforge_core::objective::{Problem, SignalTable};
use pdforge_core::oracle::certify_theorem;
use pdforge_core::policy::ReferencePolicy;
use pdforge_core::scoring::{ScoringConfig, SignalVector, SqliteBackend, TaskJudge, CONSTRAINT_NAMES};
use pdforge_core::tasks::{generate_suite, load_suite_with, save_suite, Archetype, TaskSuite};
use pdforge_core::trainer::train as run_training;
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{load_generator, read_reference, Overrides, RunConfig};
use crate::run::{run_root, Run};
use crate::{exit, Failure, Outcome};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
}

impl Globals {
    fn config_path(&self) -> Outcome<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| Failure::validation("--config <path> is required"))
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            deterministic: self.deterministic,
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Outcome<String> {
    let value = serde_json::to_value(value).map_err(|e| Failure::internal(e.to_string()))?;
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| Failure::internal(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn generate(globals: &Globals) -> Outcome<()> {
    let file = load_generator(globals.config_path()?)?;
    let out = globals
        .out
        .as_deref()
        .ok_or_else(|| Failure::validation("--out <suite.json> is required"))?;
    let mut spec = file.spec();
    if let Some(seed) = globals.seed {
        spec.seed = seed;
    }
    let suite = generate_suite(&spec)?;
    suite.validate(&ScoringConfig::default())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::io("create", parent, e))?;
    }
    save_suite(&suite, out)?;

    let mut realized: BTreeMap<&str, usize> = Archetype::ALL.iter().map(|a| (a.name(), 0)).collect();
    for task in &suite.tasks {
        for a in task.archetypes.iter().flatten() {
            *realized.entry(a.name()).or_default() += 1;
        }
    }
    let total: usize = realized.values().sum();
    println!("wrote {} ({} tasks, {} responses each)", out.display(), suite.tasks.len(), spec.catalog_size);
    for a in Archetype::ALL {
        let n = realized[a.name()];
        println!("  {:<20} {:>6}  {:.3}", a.name(), n, n as f64 / total.max(1) as f64);
    }
    Ok(())
}

/// Everything a training or certification run needs, fully validated.
struct Prepared {
    config: RunConfig,
    suite: TaskSuite,
    table: SignalTable,
    problem: Problem,
    snapshot: String,
}

fn prepare(globals: &Globals) -> Outcome<Prepared> {
    let config = RunConfig::load(globals.config_path()?, &globals.overrides())?;
    let suite = match (&config.suite, &config.generator) {
        (Some(path), _) => load_suite_with(path, &config.scoring)?,
        (None, Some(spec)) => {
            let suite = generate_suite(spec)?;
            suite.validate(&config.scoring)?;
            suite
        }
        (None, None) => unreachable!("checked by RunConfig::load"),
    };
    let table = SignalTable::build(&suite, &config.scoring, !globals.deterministic)?;
    let space = suite.prompt_space()?;
    let reference = match &config.reference {
        None => ReferencePolicy::uniform(&space),
        Some(path) => {
            let mut rows = read_reference(path)?;
            let ids = suite.task_ids();
            let missing: Vec<&String> = ids.iter().filter(|id| !rows.contains_key(*id)).collect();
            if !missing.is_empty() {
                return Err(Failure::validation(format!(
                    "{} has no reference row for: {}",
                    path.display(),
                    missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                )));
            }
            let probs = ids.iter().map(|id| rows.remove(id).unwrap()).collect();
            ReferencePolicy::new(ids, probs)?
        }
    };
    let problem = Problem::new(&suite, &table, reference, config.objective.clone())?;
    let snapshot = config.snapshot()?;
    Ok(Prepared {
        config,
        suite,
        table,
        problem,
        snapshot,
    })
}

fn open_run(globals: &Globals, command: &str, prepared: &Prepared) -> Outcome<Run> {
    let root = run_root(globals.out.as_deref(), prepared.config.output_dir.as_deref());
    let seed = prepared.config.trainer.seed;
    let mut run = Run::create(&root, command, prepared.snapshot.clone(), seed, globals.deterministic)?;
    run.write("suite.json", prepared.suite.to_canonical_json()?.as_bytes())?;
    for (id, fixture) in &prepared.suite.fixtures {
        run.write(&format!("fixtures/{id}.sql"), fixture.script.as_bytes())?;
    }
    let mut signals = Vec::new();
    prepared.table.write_csv(&mut signals)?;
    run.write("signals.csv", &signals)?;
    Ok(run)
}

fn print_metrics(reward: f64, c: &[f64], lambdas: &[f64]) {
    println!("reward     {reward:.6}");
    for (i, name) in CONSTRAINT_NAMES.iter().enumerate() {
        println!("c_{name:<10} {:.6}  lambda {:.6}", c[i], lambdas[i]);
    }
}

pub fn train(globals: &Globals) -> Outcome<()> {
    let prepared = prepare(globals)?;
    let mut run = open_run(globals, "train", &prepared)?;
    let result = (|| {
        let outcome = run_training(&prepared.problem, &prepared.config.trainer)?;
        let mut metrics = Vec::new();
        outcome.log.write_csv(&mut metrics)?;
        run.write("metrics.csv", &metrics)?;
        run.write("checkpoint.json", outcome.checkpoint().to_json()?.as_bytes())?;
        Ok::<_, Failure>(outcome)
    })();
    let dir = run.dir.clone();
    run.finish(&result)?;
    let outcome = result?;
    let last = outcome.log.last().expect("log holds the initial row");
    println!("run {}", dir.display());
    print_metrics(last.reward, &last.constraints, &last.lambdas);
    Ok(())
}

pub fn certify(globals: &Globals) -> Outcome<()> {
    let prepared = prepare(globals)?;
    let mut run = open_run(globals, "certify", &prepared)?;
    let result = (|| {
        let cert = certify_theorem(&prepared.problem, &prepared.config.oracle)?;
        run.write("certificate.json", to_json(&cert)?.as_bytes())?;
        if !cert.passed {
            return Err(Failure::internal(format!(
                "certificate failed: D* = {}, P* = {}, gap = {:e}, bound = {:e}",
                cert.dual_value, cert.primal_value, cert.gap, cert.bound
            )));
        }
        Ok(cert)
    })();
    let dir = run.dir.clone();
    run.finish(&result)?;
    println!("run {}", dir.display());
    match result {
        Ok(cert) => {
            println!("D* = {:.12}", cert.dual_value);
            println!("P* = {:.12}", cert.primal_value);
            println!("gap = {:e} (bound {:e})", cert.gap, cert.bound);
            println!("lambda* = {:?}", cert.lambda_star.values());
            Ok(())
        }
        Err(f) if f.code == exit::INFEASIBLE => Err(Failure {
            code: f.code,
            message: format!("infeasible: {}", f.message),
        }),
        Err(f) => Err(f),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseLine {
    task_id: String,
    response: String,
}

/// Scores a JSON Lines file of `{"task_id", "response"}` objects and writes
/// one CSV row per line.
pub fn score(globals: &Globals, suite_path: &Path, responses: &Path) -> Outcome<()> {
    let config = ScoringConfig::default();
    let suite = load_suite_with(suite_path, &config)?;
    let text = std::fs::read_to_string(responses)
        .map_err(|e| Failure::validation(format!("cannot read {}: {e}", responses.display())))?;
    let mut lines = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: ResponseLine = serde_json::from_str(raw).map_err(|e| {
            Failure::validation(format!("{}:{}: {e}", responses.display(), n + 1))
        })?;
        lines.push((n + 1, line));
    }
    let tasks: BTreeMap<&str, usize> = suite
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.task_id.as_str(), i))
        .collect();
    let mut unknown: Vec<&str> = lines
        .iter()
        .map(|(_, l)| l.task_id.as_str())
        .filter(|id| !tasks.contains_key(id))
        .collect();
    unknown.sort_unstable();
    unknown.dedup();
    if !unknown.is_empty() {
        return Err(Failure::validation(format!("unknown task ids: {}", unknown.join(", "))));
    }

    // One judge per task; lines are scored grouped by task.
    let mut by_task: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, l)) in lines.iter().enumerate() {
        by_task.entry(tasks[l.task_id.as_str()]).or_default().push(i);
    }
    let score_task = |(&t, idx): (&usize, &Vec<usize>)| -> Outcome<Vec<(usize, SignalVector)>> {
        let task = &suite.tasks[t];
        let backend = SqliteBackend;
        let judge = TaskJudge::new(&backend, suite.fixture_for(task)?, &task.task_id, &task.gt_sql, &config)?;
        Ok(idx.iter().map(|&i| (i, judge.score(&lines[i].1.response))).collect())
    };
    let groups: Vec<Vec<(usize, SignalVector)>> = if globals.deterministic {
        by_task.iter().map(score_task).collect::<Outcome<_>>()?
    } else {
        by_task.par_iter().map(score_task).collect::<Outcome<_>>()?
    };
    let mut scored: Vec<Option<SignalVector>> = vec![None; lines.len()];
    for (i, s) in groups.into_iter().flatten() {
        scored[i] = Some(s);
    }

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["line".to_string(), "task_id".to_string(), "r".to_string()];
        header.extend(CONSTRAINT_NAMES.iter().map(|n| format!("c_{n}")));
        w.write_record(&header).map_err(|e| Failure::internal(e.to_string()))?;
        for ((n, line), s) in lines.iter().zip(&scored) {
            let s = s.as_ref().expect("every line scored");
            let mut row = vec![n.to_string(), line.task_id.clone()];
            row.extend(s.bits().iter().map(u8::to_string));
            w.write_record(&row).map_err(|e| Failure::internal(e.to_string()))?;
        }
        w.flush().map_err(|e| Failure::internal(e.to_string()))?;
    }
    match &globals.out {
        Some(path) => std::fs::write(path, &buf).map_err(|e| Failure::io("write", path, e))?,
        None => std::io::stdout()
            .write_all(&buf)
            .map_err(|e| Failure::internal(e.to_string()))?,
    }
    Ok(())
}

pub fn report(globals: &Globals, run_dir: &Path) -> Outcome<()> {
    let metrics = run_dir.join("metrics.csv");
    if !metrics.is_file() {
        return Err(Failure::validation(format!("no metrics.csv in {}", run_dir.display())));
    }
    let series = crate::report::read_metrics(&metrics)?;
    let thresholds = std::fs::read_to_string(run_dir.join("config.snapshot"))
        .ok()
        .and_then(|s| toml::from_str::<RunConfig>(&s).ok())
        .map(|c| c.objective.thresholds);
    let out = globals.out.clone().unwrap_or_else(|| run_dir.join("plots"));
    let written = crate::report::render(&series, thresholds.as_ref(), &out)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}
