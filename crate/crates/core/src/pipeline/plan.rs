use rayon::prelude::*;

use super::config::PlanConfig;
use crate::error::Result;
use crate::features::{encode_scene_dim, SceneFeatures};
use crate::il::IlPolicy;
use crate::metrics::ScenarioScorer;
use crate::rng::{derive_seed, derive_seed_idx, seeded};
use crate::rwm::{best_of_n, select_plan_index, RwmModel, RwmOutput};
use crate::sampler::{sample_group, SamplerModel};
use crate::sim::Scenario;
use crate::types::Trajectory;

/// Where trajectory scores come from during planning.
#[derive(Clone, Copy)]
pub enum Scoring<'a> {
    Rwm(&'a RwmModel),
    /// The simulator itself; reward is PDMS and confidence is 1.
    Oracle(&'a ScenarioScorer<'a>),
}

impl Scoring<'_> {
    pub fn score(&self, scenario: &Scenario, features: &SceneFeatures, trajs: &[&Trajectory]) -> Result<Vec<RwmOutput>> {
        match self {
            Scoring::Rwm(m) => m.forward_batch(scenario, features, trajs),
            Scoring::Oracle(s) => trajs
                .par_iter()
                .map(|t| {
                    Ok(RwmOutput {
                        reward: s.pdms(t)?,
                        confidence: 1.0,
                    })
                })
                .collect(),
        }
    }
}

/// The three trained components.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub il: &'a IlPolicy,
    pub sampler: &'a SamplerModel,
    pub rwm: Option<&'a RwmModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanPass {
    pub il_score: RwmOutput,
    pub candidates: Vec<(Trajectory, RwmOutput)>,
    /// Index into `candidates`, `None` when the IL plan was kept.
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub il_trajectory: Trajectory,
    pub passes: Vec<PlanPass>,
    pub chosen_pass: usize,
}

impl PlanResult {
    pub fn kept_il(&self) -> bool {
        self.passes[self.chosen_pass].chosen.is_none()
    }
}

/// IL plan, then `n_passes` sampled groups rooted at it, filtered and
/// selected by `scoring`; across passes the best plan under `final_scoring`
/// wins.
pub fn plan_with(
    scenario: &Scenario,
    models: Models<'_>,
    cfg: &PlanConfig,
    scoring: Scoring<'_>,
    final_scoring: Scoring<'_>,
    n_passes: usize,
    seed: u64,
) -> Result<PlanResult> {
    let features = encode_scene_dim(scenario, models.il.feature_dim())?;
    let il_traj = models.il.forward(&features)?;
    let sampler_features = if models.sampler.config.feature_dim == features.dim() {
        features.clone()
    } else {
        encode_scene_dim(scenario, models.sampler.config.feature_dim)?
    };
    let il_score = scoring.score(scenario, &features, &[&il_traj])?[0];
    let value = |t: &Trajectory| Ok(scoring.score(scenario, &features, &[t])?[0].reward);
    let base = derive_seed(seed, &scenario.id);
    let mut passes = Vec::with_capacity(n_passes);
    let mut plans = Vec::with_capacity(n_passes);
    for pass in 0..n_passes.max(1) {
        let mut rng = seeded(derive_seed_idx(base, "plan", pass as u64));
        let members = sample_group(models.sampler, &il_traj, &sampler_features, &cfg.group, &value, &mut rng)?;
        let trajs: Vec<&Trajectory> = members.iter().map(|m| &m.trajectory).collect();
        let scores = scoring.score(scenario, &features, &trajs)?;
        let chosen = select_plan_index(&il_score, &scores, cfg.policy);
        plans.push(match chosen {
            Some(i) => members[i].trajectory.clone(),
            None => il_traj.clone(),
        });
        passes.push(PlanPass {
            il_score,
            candidates: members.into_iter().map(|m| m.trajectory).zip(scores).collect(),
            chosen,
        });
    }
    let (chosen_pass, trajectory) = if plans.len() == 1 {
        (0, plans[0].clone())
    } else {
        best_of_n(&plans, |t| Ok(final_scoring.score(scenario, &features, &[t])?[0].reward))?
    };
    Ok(PlanResult {
        trajectory,
        il_trajectory: il_traj,
        passes,
        chosen_pass,
    })
}

/// Single-pass plan scored by the RWM, or by the simulator when no RWM is
/// loaded.
pub fn plan(
    scenario: &Scenario,
    models: Models<'_>,
    cfg: &PlanConfig,
    oracle: &ScenarioScorer<'_>,
    seed: u64,
) -> Result<PlanResult> {
    let scoring = match models.rwm {
        Some(m) => Scoring::Rwm(m),
        None => Scoring::Oracle(oracle),
    };
    plan_with(scenario, models, cfg, scoring, scoring, 1, seed)
}
