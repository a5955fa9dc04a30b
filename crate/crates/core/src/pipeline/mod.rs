//! End-to-end experiment plumbing: configuration, scenario suites,
//! planning and evaluation reports.

pub mod config;
pub mod eval;
pub mod plan;
pub mod run;
pub mod suite;

pub use config::{Agent, EvalConfig, ExperimentConfig, PathsConfig, PlanConfig, SuiteConfig};
pub use run::{gen_scenarios, run_eval, run_plan, run_train_il, run_train_rl, run_train_rwm, LoadedModels};
pub use eval::{evaluate, render_csv, write_report, EvalReport, ReportRow};
pub use plan::{plan, plan_with, Models, PlanPass, PlanResult, Scoring};
pub use suite::{generate_split, load_split, read_manifest, write_suite, Split, Suite, SuiteEntry, SuiteManifest};

use crate::error::{Error, Result};

/// Environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "PAIRPLAN_THREADS";

/// Thread count from `PAIRPLAN_THREADS`, `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
    }
}

/// Runs `f` inside a dedicated rayon pool with `threads` workers, or the
/// global pool when `threads` is `None`.
pub fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
