use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::eval::{evaluate, write_report, EvalReport};
use super::plan::{plan, Models, PlanResult};
use super::suite::{generate_split, load_split, write_suite, Split, Suite};
use crate::error::{Error, Result};
use crate::grpo::{train_rl, write_training_log, RlOutcome};
use crate::il::{train_il, IlPolicy};
use crate::metrics::ScenarioScorer;
use crate::nn::Checkpoint;
use crate::rwm::{train_rwm, RwmModel};
use crate::sampler::SamplerModel;

pub const RL_LOG_FILE: &str = "rl_log.csv";
pub const PLAN_DIR: &str = "plans";

/// Owned checkpoints for the planning agents.
#[derive(Debug, Clone)]
pub struct LoadedModels {
    pub il: IlPolicy,
    pub sampler: SamplerModel,
    pub rwm: RwmModel,
}

impl LoadedModels {
    pub fn load(cfg: &ExperimentConfig, out: &Path) -> Result<Self> {
        let il = IlPolicy::from_checkpoint(&Checkpoint::load(&cfg.paths.il_ckpt(out))?)?;
        let sampler = SamplerModel::from_checkpoint(&Checkpoint::load(&cfg.paths.sampler_ckpt(out))?)?;
        let rwm = RwmModel::from_checkpoint(&Checkpoint::load(&cfg.paths.rwm_ckpt(out))?)?;
        Ok(LoadedModels { il, sampler, rwm })
    }

    pub fn view(&self) -> Models<'_> {
        Models {
            il: &self.il,
            sampler: &self.sampler,
            rwm: Some(&self.rwm),
        }
    }
}

pub fn gen_scenarios(cfg: &ExperimentConfig, out: &Path) -> Result<(Suite, Suite)> {
    let train = generate_split(&cfg.suite, &cfg.sim, cfg.seed, Split::Train)?;
    let eval = generate_split(&cfg.suite, &cfg.sim, cfg.seed, Split::Eval)?;
    write_suite(&cfg.paths.suite(out), &train, &eval)?;
    Ok((train, eval))
}

fn load(cfg: &ExperimentConfig, out: &Path, split: Split) -> Result<Suite> {
    load_split(&cfg.paths.suite(out), split, cfg.sim.horizon)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    create_parent(path)?;
    ck.save(path)
}

pub fn run_train_il(cfg: &ExperimentConfig, out: &Path) -> Result<IlPolicy> {
    let suite = load(cfg, out, Split::Train)?;
    let policy = train_il(&suite.scenarios, &cfg.il)?;
    let mut ck = policy.to_checkpoint();
    ck.rng_seed = cfg.il.seed;
    save(&ck, &cfg.paths.il_ckpt(out))?;
    Ok(policy)
}

/// Trains the sampler from a fresh initialization and writes its checkpoint,
/// optimizer state included, plus the per-update log.
pub fn run_train_rl(cfg: &ExperimentConfig, out: &Path) -> Result<RlOutcome> {
    let suite = load(cfg, out, Split::Train)?;
    let init = SamplerModel::new(cfg.sampler.clone(), cfg.grpo.seed)?;
    let outcome = train_rl(&suite.scenarios, init, &cfg.grpo, &cfg.sim, &cfg.metrics)?;
    let mut ck = outcome.model.to_checkpoint();
    ck.rng_seed = cfg.grpo.seed;
    ck.step = outcome.log.len() as u64;
    ck.optimizer = Some(outcome.optimizer.clone());
    ck.metadata = serde_json::json!({ "beta": outcome.beta });
    save(&ck, &cfg.paths.sampler_ckpt(out))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_training_log(&out.join(RL_LOG_FILE), &outcome.log)?;
    Ok(outcome)
}

/// Trains the reward model on groups drawn from the trained sampler, rooted
/// at demonstrations and at the trained IL policy's plans.
pub fn run_train_rwm(cfg: &ExperimentConfig, out: &Path) -> Result<RwmModel> {
    let suite = load(cfg, out, Split::Train)?;
    let sampler = SamplerModel::from_checkpoint(&Checkpoint::load(&cfg.paths.sampler_ckpt(out))?)?;
    let il = IlPolicy::from_checkpoint(&Checkpoint::load(&cfg.paths.il_ckpt(out))?)?;
    let model = train_rwm(&suite.scenarios, &sampler, Some(&il), &cfg.rwm, &cfg.sim, &cfg.metrics)?;
    let mut ck = model.to_checkpoint();
    ck.rng_seed = cfg.rwm.seed;
    save(&ck, &cfg.paths.rwm_ckpt(out))?;
    Ok(model)
}

/// Evaluates the roster on the eval split and appends the report under `out`.
pub fn run_eval(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    let suite = load(cfg, out, Split::Eval)?;
    let models = if cfg.eval.roster.iter().any(|a| a.needs_checkpoints()) {
        Some(LoadedModels::load(cfg, out)?)
    } else {
        None
    };
    let mut report = evaluate(cfg, &suite, models.as_ref().map(LoadedModels::view))?;
    write_report(&mut report, cfg, out)?;
    Ok(report)
}

/// Plans one eval scenario, or all of them when `scenario_id` is `None`, and
/// writes each plan as `out/plans/<id>.csv`.
pub fn run_plan(cfg: &ExperimentConfig, out: &Path, scenario_id: Option<&str>) -> Result<Vec<(PathBuf, PlanResult)>> {
    let suite = load(cfg, out, Split::Eval)?;
    let models = LoadedModels::load(cfg, out)?;
    let picked: Vec<_> = suite
        .scenarios
        .iter()
        .filter(|s| scenario_id.is_none_or(|id| s.id == id))
        .collect();
    if picked.is_empty() {
        return Err(Error::Config(format!(
            "scenario '{}' is not in the eval split",
            scenario_id.unwrap_or_default()
        )));
    }
    let dir = out.join(PLAN_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    picked
        .into_iter()
        .map(|scn| {
            let oracle = ScenarioScorer::new(scn, &cfg.sim, &cfg.metrics)?;
            let result = plan(scn, models.view(), &cfg.plan, &oracle, cfg.seed)?;
            let path = dir.join(format!("{}.csv", scn.id));
            std::fs::write(&path, result.trajectory.to_rows()).map_err(|e| Error::io(&path, e))?;
            Ok((path, result))
        })
        .collect()
}
