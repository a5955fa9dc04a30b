//! `pairplan`: one subcommand per pipeline stage.
//!
//! Every stage reads and writes under the `--out` run directory, so a full
//! experiment is
//!
//! ```text
//! pairplan gen-scenarios --config c.toml --seed 1 --out run
//! pairplan train-il      --config c.toml --seed 1 --out run
//! pairplan train-rl      --config c.toml --seed 1 --out run
//! pairplan train-rwm     --config c.toml --seed 1 --out run
//! pairplan eval          --config c.toml --seed 1 --out run
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pairplan_core::pipeline::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pairplan", version, about = "Parallel imitation and reinforcement trajectory planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config, TOML or JSON. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level seed; component seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for suites, checkpoints and reports.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and eval scenario suites.
    GenScenarios(Common),
    /// Train the imitation policy on the train split.
    TrainIl(Common),
    /// Train the trajectory sampler with GRPO.
    TrainRl(Common),
    /// Train the reward world model.
    TrainRwm(Common),
    /// Score the agent roster on the eval split and append to the report.
    Eval(Common),
    /// Plan eval scenarios and write the chosen trajectories.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Plan only this scenario.
        #[arg(long)]
        scenario: Option<String>,
    },
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> anyhow::Result<()> {
    let (common, scenario) = match &command {
        Command::Plan { common, scenario } => (common, scenario.as_deref()),
        Command::GenScenarios(c)
        | Command::TrainIl(c)
        | Command::TrainRl(c)
        | Command::TrainRwm(c)
        | Command::Eval(c) => (c, None),
    };
    let cfg = load_config(common)?;
    let out: &Path = &common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    log::info!("config hash {}", cfg.hash());
    match command {
        Command::GenScenarios(_) => {
            let (train, eval) = pipeline::gen_scenarios(&cfg, out)?;
            println!("wrote {} train and {} eval scenarios to {}", train.len(), eval.len(), cfg.paths.suite(out).display());
        }
        Command::TrainIl(_) => {
            let policy = pipeline::run_train_il(&cfg, out)?;
            let last = policy.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!("il: {} epochs, final loss {last:.4} -> {}", policy.loss_curve.len(), cfg.paths.il_ckpt(out).display());
        }
        Command::TrainRl(_) => {
            let outcome = pipeline::run_train_rl(&cfg, out)?;
            let last = outcome.log.last().map_or(f64::NAN, |r| r.mean_reward);
            println!("rl: {} updates, last mean reward {last:.4} -> {}", outcome.log.len(), cfg.paths.sampler_ckpt(out).display());
        }
        Command::TrainRwm(_) => {
            let model = pipeline::run_train_rwm(&cfg, out)?;
            let last = model.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!("rwm: final loss {last:.5} -> {}", cfg.paths.rwm_ckpt(out).display());
        }
        Command::Eval(_) => {
            let report = pipeline::run_eval(&cfg, out)?;
            for row in &report.aggregates {
                println!("{:<20} pdms {:.4} epdms {:.4}", row.agent, row.pdms, row.epdms);
            }
            if let Some(path) = &report.csv_path {
                println!("report appended to {}", path.display());
            }
        }
        Command::Plan { .. } => {
            for (path, result) in pipeline::run_plan(&cfg, out, scenario)? {
                let source = if result.kept_il() { "il" } else { "sampled" };
                println!("{} ({source})", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = pipeline::threads_from_env()?;
    pipeline::with_pool(threads, || run(cli.command))?
}
