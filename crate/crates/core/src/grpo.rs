//! Group relative policy optimization for the tree sampler.
//!
//! Each update snapshots the policy, samples one group per scenario rooted at
//! the human trajectory, scores members in the simulator, normalizes rewards
//! within the group and ascends the clipped, KL-regularized surrogate.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{encode_scene_dim, SceneFeatures};
use crate::metrics::{MetricsConfig, ScenarioScorer};
use crate::nn::{clipped_surrogate_value, AdamW, AdamWConfig, Gradients, Mat, Schedule, Tape};
use crate::rng::{derive_seed, derive_seed_idx, seeded};
use crate::sampler::{log_prob_on_tape, sample_group, GroupConfig, GroupMember, SamplerModel};
use crate::sim::{Scenario, SimConfig};
use crate::types::Trajectory;

pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 10.0;
const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advantages {
    pub values: Vec<f64>,
    /// Rewards had (numerically) zero spread; every advantage is zero.
    pub degenerate: bool,
}

/// `(r_i - mean) / std` with the population standard deviation.
pub fn group_advantage(rewards: &[f64]) -> Result<Advantages> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!("group of {} cannot be normalized; need at least 2", rewards.len())));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std >= DEGENERATE_STD) {
        return Ok(Advantages {
            values: vec![0.0; rewards.len()],
            degenerate: true,
        });
    }
    Ok(Advantages {
        values: rewards.iter().map(|r| (r - mean) / std).collect(),
        degenerate: false,
    })
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> Result<f64> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::Numerical(format!("policy ratio must be positive and finite, got {ratio}")));
    }
    Ok(clipped_surrogate_value(ratio, advantage, eps))
}

/// Pointwise `exp(old - new) - (old - new) - 1`, averaged over members.
pub fn kl_estimate(new_lps: &[f64], old_lps: &[f64]) -> Result<f64> {
    if new_lps.len() != old_lps.len() {
        return Err(Error::LengthMismatch {
            expected: old_lps.len(),
            found: new_lps.len(),
        });
    }
    if new_lps.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = new_lps
        .iter()
        .zip(old_lps)
        .map(|(n, o)| {
            let d = o - n;
            d.exp_m1() - d
        })
        .sum();
    Ok(total / new_lps.len() as f64)
}

/// Doubles `beta` when the KL overshoots the target by half, halves it when
/// it undershoots by the same factor.
pub fn update_beta(beta: f64, measured_kl: f64, target_kl: f64) -> f64 {
    let next = if measured_kl > 1.5 * target_kl {
        beta * 2.0
    } else if measured_kl < target_kl / 1.5 {
        beta / 2.0
    } else {
        beta
    };
    next.clamp(BETA_MIN, BETA_MAX)
}

/// One scored group with its snapshot log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub scenario_id: String,
    pub reference: Trajectory,
    pub members: Vec<GroupMember>,
    pub rewards: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

impl GroupSample {
    pub fn new(scenario_id: &str, reference: Trajectory, members: Vec<GroupMember>, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != members.len() {
            return Err(Error::LengthMismatch {
                expected: members.len(),
                found: rewards.len(),
            });
        }
        let adv = group_advantage(&rewards)?;
        Ok(GroupSample {
            scenario_id: scenario_id.to_string(),
            reference,
            old_log_probs: members.iter().map(|m| m.log_prob).collect(),
            members,
            rewards,
            advantages: adv.values,
            degenerate: adv.degenerate,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// `J_RL`; gradients point in its ascent direction.
    pub value: f64,
    pub grads: Gradients,
    pub kl: f64,
    pub new_log_probs: Vec<f64>,
    /// The group was degenerate and contributed nothing.
    pub skipped: bool,
}

/// `mean_i [clipped_surrogate(r_i, A_i) - beta * KL_i]` and its gradient.
pub fn grpo_objective(
    model: &SamplerModel,
    group: &GroupSample,
    features: &SceneFeatures,
    beta: f64,
    eps: f64,
) -> Result<Objective> {
    let n_params = model.params.len();
    if group.degenerate {
        return Ok(Objective {
            value: 0.0,
            grads: Gradients::zeros(n_params),
            kl: 0.0,
            new_log_probs: group.old_log_probs.clone(),
            skipped: true,
        });
    }
    let g = group.members.len() as f64;
    let per_member: Vec<(f64, f64, f64, Gradients)> = group
        .members
        .par_iter()
        .zip(group.old_log_probs.par_iter().zip(group.advantages.par_iter()))
        .map(|(m, (&old, &adv))| {
            let mut tape = Tape::new();
            let scene = model.scene_tokens(&mut tape, features)?;
            let new = log_prob_on_tape(
                model,
                &mut tape,
                scene,
                m.trajectory.points(),
                group.reference.points(),
                &m.intentions,
                &m.latents,
            )?;
            let log_ratio = tape.add_scalar(new, -old);
            let ratio = tape.exp(log_ratio);
            let surr = tape.surrogate(ratio, &[adv], eps)?;
            // d = old - new; KL_i = e^d - d - 1
            let d = tape.scale(log_ratio, -1.0);
            let ed = tape.exp(d);
            let kl = tape.sub(ed, d)?;
            let kl = tape.add_scalar(kl, -1.0);
            let pen = tape.scale(kl, beta);
            let j = tape.sub(surr, pen)?;
            let bw = tape.backward(j, &Mat::scalar(1.0), n_params)?;
            Ok((tape.scalar(j), tape.scalar(kl), tape.scalar(new), bw.params))
        })
        .collect::<Result<_>>()?;
    let mut grads = Gradients::zeros(n_params);
    let (mut value, mut kl) = (0.0, 0.0);
    let mut new_log_probs = Vec::with_capacity(per_member.len());
    for (j, k, lp, gr) in &per_member {
        value += j / g;
        kl += k / g;
        grads.add_scaled(gr, 1.0 / g);
        new_log_probs.push(*lp);
    }
    Ok(Objective {
        value,
        grads,
        kl,
        new_log_probs,
        skipped: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group: GroupConfig,
    pub clip_eps: f64,
    pub beta_init: f64,
    pub kl_target: f64,
    pub updates: usize,
    /// Scenarios (groups) per update.
    pub batch_scenarios: usize,
    /// Gradient steps taken against each snapshot.
    pub inner_steps: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group: GroupConfig::default(),
            clip_eps: 0.2,
            beta_init: 0.04,
            kl_target: 0.02,
            updates: 200,
            batch_scenarios: 2,
            inner_steps: 2,
            lr: 1e-3,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!("clip_eps {} outside (0, 1)", self.clip_eps)));
        }
        if self.group.group_size < 2 {
            return Err(Error::Config("GRPO needs a group size of at least 2".into()));
        }
        if !(self.beta_init > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.batch_scenarios == 0 || self.inner_steps == 0 {
            return Err(Error::Config("batch_scenarios and inner_steps must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the RL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub update: usize,
    pub scenario_batch: String,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub kl: f64,
    pub beta: f64,
    pub objective: f64,
}

pub fn write_training_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut out = String::from("update,scenario_batch,mean_reward,max_reward,kl,beta,objective\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.update, r.scenario_batch, r.mean_reward, r.max_reward, r.kl, r.beta, r.objective
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub model: SamplerModel,
    pub optimizer: AdamW,
    pub log: Vec<TrainLogRow>,
    pub beta: f64,
}

struct Prepared<'a> {
    scenario: &'a Scenario,
    features: SceneFeatures,
}

/// Samples and scores one group for `scenario`, rooted at its expert.
pub fn score_group(
    model: &SamplerModel,
    scenario: &Scenario,
    features: &SceneFeatures,
    group: &GroupConfig,
    sim: &SimConfig,
    metrics: &MetricsConfig,
    seed: u64,
) -> Result<GroupSample> {
    let scorer = ScenarioScorer::new(scenario, sim, metrics)?;
    let value = |t: &Trajectory| scorer.pdms(t);
    let members = sample_group(model, &scenario.expert, features, group, &value, &mut seeded(seed))?;
    let rewards: Vec<f64> = members.iter().map(|m| m.value).collect();
    GroupSample::new(&scenario.id, scenario.expert.clone(), members, rewards)
}

/// Runs GRPO over `suite`, starting from `model`. Rewards are simulator PDMS.
pub fn train_rl(
    suite: &[Scenario],
    model: SamplerModel,
    cfg: &GrpoConfig,
    sim: &SimConfig,
    metrics: &MetricsConfig,
) -> Result<RlOutcome> {
    cfg.validate()?;
    if suite.is_empty() {
        return Err(Error::Config("RL training needs at least one scenario".into()));
    }
    let prepared: Vec<Prepared> = suite
        .iter()
        .map(|s| {
            s.expert.expect_horizon(model.config.horizon)?;
            Ok(Prepared {
                scenario: s,
                features: encode_scene_dim(s, model.config.feature_dim)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut model = model;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            schedule: Schedule::Constant,
            ..AdamWConfig::default()
        },
        model.params.len(),
    );
    let mut beta = cfg.beta_init;
    let mut log = Vec::with_capacity(cfg.updates);
    let mut order: Vec<usize> = Vec::new();
    let mut shuffle_rng = seeded(derive_seed(cfg.seed, "rl_order"));
    let mut cursor = 0;
    for update in 0..cfg.updates {
        let mut batch = Vec::with_capacity(cfg.batch_scenarios);
        while batch.len() < cfg.batch_scenarios.min(prepared.len()) {
            if cursor == order.len() {
                order = (0..prepared.len()).collect();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let snapshot = model.clone();
        let groups: Vec<GroupSample> = batch
            .iter()
            .enumerate()
            .map(|(b, &i)| {
                let p = &prepared[i];
                let seed = derive_seed_idx(cfg.seed, "rl_group", (update * cfg.batch_scenarios + b) as u64);
                score_group(&snapshot, p.scenario, &p.features, &cfg.group, sim, metrics, seed)
            })
            .collect::<Result<_>>()?;

        let mut objective = 0.0;
        for inner in 0..cfg.inner_steps {
            let mut total = Gradients::zeros(model.params.len());
            let mut value = 0.0;
            for (g, &i) in groups.iter().zip(&batch) {
                let obj = grpo_objective(&model, g, &prepared[i].features, beta, cfg.clip_eps)?;
                value += obj.value / groups.len() as f64;
                total.add_scaled(&obj.grads, -1.0 / groups.len() as f64);
            }
            if inner == 0 {
                objective = value;
            }
            total.clip_norm(cfg.grad_clip);
            opt.step(&mut model.params, &total)?;
        }

        let mut kl = 0.0;
        for (g, &i) in groups.iter().zip(&batch) {
            let obj = grpo_objective(&model, g, &prepared[i].features, beta, cfg.clip_eps)?;
            kl += obj.kl / groups.len() as f64;
        }
        let rewards: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().copied()).collect();
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let max_reward = groups
            .iter()
            .map(|g| g.rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / groups.len() as f64;
        log::debug!("rl update {update}: mean {mean_reward:.4} max {max_reward:.4} kl {kl:.5} beta {beta:.4}");
        log.push(TrainLogRow {
            update,
            scenario_batch: batch.iter().map(|&i| prepared[i].scenario.id.as_str()).collect::<Vec<_>>().join(";"),
            mean_reward,
            max_reward,
            kl,
            beta,
            objective,
        });
        beta = update_beta(beta, kl, cfg.kl_target);
    }
    Ok(RlOutcome {
        model,
        optimizer: opt,
        log,
        beta,
    })
}
