//! Shared inputs for the criterion benches.

use pdforge_core::objective::{ObjectiveConfig, Problem, SignalTable};
use pdforge_core::policy::ReferencePolicy;
use pdforge_core::scoring::ScoringConfig;
use pdforge_core::tasks::{generate_suite, Archetype, ArchetypeMix, GeneratorSpec, TaskSuite};

/// Every archetype in roughly equal share.
pub fn even_mix() -> ArchetypeMix {
    let mut mix = ArchetypeMix::default();
    for a in Archetype::ALL {
        mix.set(a, 1.0 / 7.0);
    }
    let total: f64 = Archetype::ALL.iter().map(|&a| mix.get(a)).sum();
    mix.set(Archetype::CorrectWellformed, mix.get(Archetype::CorrectWellformed) + 1.0 - total);
    mix
}

pub fn suite(n_tasks: usize, catalog_size: usize) -> TaskSuite {
    generate_suite(&GeneratorSpec {
        n_tasks,
        catalog_size,
        mix: even_mix(),
        seed: 1,
    })
    .expect("valid generator spec")
}

/// Scored problem with a uniform reference and default thresholds.
pub fn problem(n_tasks: usize, catalog_size: usize, beta: f64) -> Problem {
    let suite = suite(n_tasks, catalog_size);
    let table = SignalTable::build(&suite, &ScoringConfig::default(), true).expect("suite scores");
    let reference = ReferencePolicy::uniform(&suite.prompt_space().expect("valid suite"));
    let config = ObjectiveConfig {
        beta,
        ..ObjectiveConfig::default()
    };
    Problem::new(&suite, &table, reference, config).expect("consistent problem")
}
