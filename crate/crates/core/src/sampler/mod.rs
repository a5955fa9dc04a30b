//! Tree-structured trajectory sampler for the RL branch.
//!
//! A tree grows from the root of a reference trajectory in stages of
//! `stride` steps. At every stage each leaf spawns one child branch per
//! intention; within a stage the intention stays fixed. Step offsets are a
//! latent Gaussian draw squashed into the intention's box around the
//! reference step. Branch log-probabilities add the latent densities and one
//! intention log-prior per stage.

pub mod bounds;
pub mod model;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bounds::{delta_to_step, reference_steps, step_to_delta, BoundsConfig, IntentionOffsetBounds, OffsetBox};
pub use model::{continue_with_reference, SamplerConfig, SamplerModel, LOG_STD_FLOOR, RL_ROLE};

use crate::error::{Error, Result};
use crate::features::SceneFeatures;
use crate::nn::{Gradients, Mat, Tape, Var};
use crate::rng::Rng;
use crate::tree::{NodeId, TrajectoryTree};
use crate::types::{Intention, OffsetStep, Trajectory, Waypoint};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-intention distribution of the next step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistribution {
    pub latent_mean: Vec<[f64; 3]>,
    /// World-frame step at the latent mean.
    pub mean_offset: Vec<OffsetStep>,
    pub log_std: Vec<[f64; 3]>,
    pub log_prior: Vec<f64>,
}

/// Diagonal Gaussian log-density of `u`.
pub fn gaussian_log_density(u: [f64; 3], mean: [f64; 3], log_std: [f64; 3]) -> f64 {
    let mut q = 0.0;
    for i in 0..3 {
        let z = (u[i] - mean[i]) * (-log_std[i]).exp();
        q += z * z;
    }
    -0.5 * q - (log_std[0] + log_std[1] + log_std[2]) - 1.5 * LN_2PI
}

fn gaussian_on_tape(tape: &mut Tape, u: [f64; 3], mean: Var, log_std: Var) -> Result<Var> {
    let uc = tape.constant(Mat::row_vector(u.to_vec()));
    let diff = tape.sub(uc, mean)?;
    let neg = tape.scale(log_std, -1.0);
    let inv = tape.exp(neg);
    let z = tape.mul(diff, inv)?;
    let z2 = tape.mul(z, z)?;
    let q = tape.sum(z2);
    let q = tape.scale(q, -0.5);
    let s = tape.sum(log_std);
    let r = tape.sub(q, s)?;
    Ok(tape.add_scalar(r, -1.5 * LN_2PI))
}

fn row3(m: &Mat, i: usize) -> [f64; 3] {
    let r = m.row(i);
    [r[0], r[1], r[2]]
}

fn check_reference(model: &SamplerModel, reference: &Trajectory) -> Result<()> {
    reference.expect_horizon(model.config.horizon)
}

/// Step `k` (1-based) for `intention` at latent `u`.
fn step_for(model: &SamplerModel, ref_steps: &[(OffsetStep, f64)], k: usize, intention: usize, u: [f64; 3]) -> OffsetStep {
    let (rs, rh) = ref_steps[k - 1];
    delta_to_step(&rs, rh, model.bounds.boxes[intention].squash(u))
}

/// Offset distributions for the step after `branch` (`w_0..w_t`).
pub fn sampler_step(
    model: &SamplerModel,
    branch: &[Waypoint],
    reference: &Trajectory,
    features: &SceneFeatures,
) -> Result<StepDistribution> {
    check_reference(model, reference)?;
    let refp = reference.points();
    let mut tape = Tape::new();
    let scene = model.scene_tokens(&mut tape, features)?;
    let inputs = model.traj_inputs(branch, refp)?;
    let k = branch.len();
    let h = model.heads(&mut tape, scene, inputs, k)?;
    let mean = tape.value(h.mean).clone();
    let ref_steps = reference_steps(refp);
    let n = model.n_intentions();
    Ok(StepDistribution {
        latent_mean: (0..n).map(|i| row3(&mean, i)).collect(),
        mean_offset: (0..n).map(|i| step_for(model, &ref_steps, k, i, row3(&mean, i))).collect(),
        log_std: model.log_std_values(),
        log_prior: tape.value(h.log_prior).data.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Latents drawn from the per-intention Gaussian.
    #[default]
    Stochastic,
    /// Latents at the mean.
    Greedy,
}

/// One expanded child chain: `stride` waypoints with their latents.
struct ChildChain {
    intention: usize,
    points: Vec<(Waypoint, [f64; 3], f64)>,
    is_reference: bool,
}

#[allow(clippy::too_many_arguments)]
fn expand_leaf(
    model: &SamplerModel,
    features: &SceneFeatures,
    refp: &[Waypoint],
    ref_steps: &[(OffsetStep, f64)],
    prefix: Vec<Waypoint>,
    parent_lp: f64,
    parent_is_ref: bool,
    noise: &[f64],
) -> Result<Vec<ChildChain>> {
    let n = model.n_intentions();
    let stride = model.config.stride;
    let t0 = prefix.len() - 1;
    let log_std = model.log_std_values();
    let mut tape = Tape::new();
    let scene = model.scene_tokens(&mut tape, features)?;
    let first = model.heads(&mut tape, scene, model.traj_inputs(&prefix, refp)?, t0 + 1)?;
    let first_mean = tape.value(first.mean).clone();
    let prior = tape.value(first.log_prior).data.clone();

    let mut chains = Vec::with_capacity(n);
    for i in 0..n {
        let is_ref = parent_is_ref && model.config.intentions[i] == Intention::Keep;
        let mut path = prefix.clone();
        let mut lp = parent_lp + prior[i];
        let mut points = Vec::with_capacity(stride);
        for j in 0..stride {
            let k = t0 + j + 1;
            let mean = if j == 0 {
                row3(&first_mean, i)
            } else {
                let h = model.heads(&mut tape, scene, model.traj_inputs(&path, refp)?, k)?;
                row3(tape.value(h.mean), i)
            };
            let u = if is_ref {
                [0.0; 3]
            } else if noise.is_empty() {
                mean
            } else {
                let e = &noise[(i * stride + j) * 3..(i * stride + j) * 3 + 3];
                std::array::from_fn(|d| mean[d] + log_std[i][d].exp() * e[d])
            };
            lp += gaussian_log_density(u, mean, log_std[i]);
            let w = if is_ref {
                refp[k]
            } else {
                path[k - 1].offset(&step_for(model, ref_steps, k, i, u))
            };
            path.push(w);
            points.push((w, u, lp));
        }
        chains.push(ChildChain {
            intention: i,
            points,
            is_reference: is_ref,
        });
    }
    Ok(chains)
}

/// Grows every leaf by one stage. `rng` supplies the latent noise in
/// stochastic mode and is left untouched in greedy mode.
pub fn expand_tree(
    model: &SamplerModel,
    tree: &TrajectoryTree,
    reference: &Trajectory,
    features: &SceneFeatures,
    mode: SampleMode,
    rng: &mut Rng,
) -> Result<TrajectoryTree> {
    check_reference(model, reference)?;
    let depth = tree.leaf_depth()?;
    let stride = model.config.stride;
    if depth + stride > model.config.horizon {
        return Err(Error::TreeInvariant(format!(
            "cannot expand leaves at depth {depth} by {stride} within horizon {}",
            model.config.horizon
        )));
    }
    let refp = reference.points();
    let ref_steps = reference_steps(refp);
    let leaves: Vec<(NodeId, f64, bool)> = tree
        .leaves()
        .iter()
        .map(|l| (l.id, l.cum_log_prob, l.is_reference))
        .collect();
    let per_leaf = model.n_intentions() * stride * 3;
    // noise is drawn up front in leaf order so results do not depend on scheduling
    let noise: Vec<Vec<f64>> = leaves
        .iter()
        .map(|_| match mode {
            SampleMode::Stochastic => (0..per_leaf).map(|_| StandardNormal.sample(rng)).collect(),
            SampleMode::Greedy => Vec::new(),
        })
        .collect();
    let prefixes: Vec<Vec<Waypoint>> = leaves
        .iter()
        .map(|(id, _, _)| tree.path_waypoints(*id))
        .collect::<Result<_>>()?;
    let expanded: Vec<Vec<ChildChain>> = leaves
        .par_iter()
        .zip(prefixes.into_par_iter())
        .zip(noise.par_iter())
        .map(|((&(_, lp, is_ref), prefix), noise)| {
            expand_leaf(model, features, refp, &ref_steps, prefix, lp, is_ref, noise)
        })
        .collect::<Result<_>>()?;

    let mut out = tree.clone();
    for ((leaf, _, _), chains) in leaves.iter().zip(expanded) {
        for chain in chains {
            let intention = model.config.intentions[chain.intention];
            let mut parent = *leaf;
            for (w, u, lp) in chain.points {
                parent = out.add_child(parent, w, intention, lp, Some(u), chain.is_reference)?;
            }
        }
    }
    Ok(out)
}

/// Scores a full-horizon trajectory; higher is better.
pub type ValueFn<'a> = dyn Fn(&Trajectory) -> Result<f64> + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    pub group_size: usize,
    /// Leaves kept after each intermediate stage; defaults to the group size.
    pub keep_k: Option<usize>,
    pub mode: SampleMode,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig {
            group_size: 15,
            keep_k: None,
            mode: SampleMode::Stochastic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub trajectory: Trajectory,
    pub offsets: Vec<OffsetStep>,
    /// One intention per stage.
    pub intentions: Vec<Intention>,
    /// One latent per step.
    pub latents: Vec<[f64; 3]>,
    pub log_prob: f64,
    pub is_reference: bool,
    /// Value used for the final selection.
    pub value: f64,
}

/// Completes a tree leaf prefix with the reference continuation.
fn completed(model: &SamplerModel, prefix: &[Waypoint], refp: &[Waypoint]) -> Result<Trajectory> {
    Trajectory::new(continue_with_reference(prefix, refp), model.config.dt)
}

fn leaf_values(
    model: &SamplerModel,
    tree: &TrajectoryTree,
    refp: &[Waypoint],
    value: &ValueFn<'_>,
) -> Result<Vec<f64>> {
    let leaves = tree.leaves();
    let prefixes: Vec<_> = leaves.iter().map(|l| tree.path_waypoints(l.id)).collect::<Result<_>>()?;
    leaves
        .par_iter()
        .zip(prefixes.par_iter())
        .map(|(leaf, prefix)| {
            if leaf.is_reference {
                // the reference branch always survives pruning
                Ok(f64::INFINITY)
            } else {
                value(&completed(model, prefix, refp)?)
            }
        })
        .collect()
}

/// Runs the staged expansion and pruning to full depth and returns the
/// group, reference branch first. In greedy mode duplicate trajectories are
/// dropped and the group may be smaller than requested.
pub fn sample_group(
    model: &SamplerModel,
    reference: &Trajectory,
    features: &SceneFeatures,
    cfg: &GroupConfig,
    value: &ValueFn<'_>,
    rng: &mut Rng,
) -> Result<Vec<GroupMember>> {
    check_reference(model, reference)?;
    let g = cfg.group_size;
    if g == 0 {
        return Err(Error::Config("group size must be at least 1".into()));
    }
    let keep_k = cfg.keep_k.unwrap_or(g);
    if keep_k == 0 {
        return Err(Error::Config("keep_k must be at least 1".into()));
    }
    let stages = model.config.stages();
    let n = model.n_intentions();
    let mut kept = 1;
    let mut achievable = 0;
    for stage in 0..stages {
        achievable = kept * n;
        if stage + 1 < stages {
            kept = achievable.min(keep_k);
        }
    }
    if cfg.mode == SampleMode::Stochastic && g > achievable {
        return Err(Error::Config(format!(
            "group size {g} exceeds the {achievable} leaves reachable with {n} intentions, {stages} stages, keep_k {keep_k}"
        )));
    }
    let refp = reference.points();
    let mut tree = TrajectoryTree::new(refp[0]);
    let mut final_values = Vec::new();
    for stage in 0..stages {
        tree = expand_tree(model, &tree, reference, features, cfg.mode, rng)?;
        let target = if stage + 1 == stages { g } else { keep_k };
        let last = stage + 1 == stages;
        let n_leaves = tree.leaves().len();
        if n_leaves > target || last {
            let values = leaf_values(model, &tree, refp, value)?;
            if n_leaves > target {
                let leaf_ids: Vec<_> = tree.leaves().iter().map(|l| l.id).collect();
                tree = tree.prune(target, &values)?;
                if last {
                    let kept: Vec<_> = tree.leaves().iter().map(|l| l.id).collect();
                    final_values = kept
                        .iter()
                        .map(|id| values[leaf_ids.binary_search(id).expect("kept leaf existed")])
                        .collect();
                }
            } else if last {
                final_values = values;
            }
        }
    }

    let ref_steps = reference_steps(refp);
    let stride = model.config.stride;
    let leaves: Vec<_> = tree.leaves().iter().map(|l| (l.id, l.is_reference, l.cum_log_prob)).collect();
    let mut members = Vec::with_capacity(leaves.len());
    for ((id, is_ref, lp), v) in leaves.into_iter().zip(final_values) {
        let path = tree.path(id)?;
        let latents: Vec<[f64; 3]> = path[1..].iter().map(|nd| nd.latent.unwrap_or([0.0; 3])).collect();
        let intentions: Vec<Intention> = path[1..]
            .iter()
            .step_by(stride)
            .map(|nd| nd.intention.expect("non-root nodes carry an intention"))
            .collect();
        let trajectory = Trajectory::new(path.iter().map(|nd| nd.waypoint).collect(), model.config.dt)?;
        let offsets = if is_ref {
            trajectory.offsets()
        } else {
            (1..=model.config.horizon)
                .map(|k| {
                    let i = model.bounds.index_of(intentions[(k - 1) / stride]).expect("intention in set");
                    step_for(model, &ref_steps, k, i, latents[k - 1])
                })
                .collect()
        };
        members.push(GroupMember {
            trajectory,
            offsets,
            intentions,
            latents,
            log_prob: lp,
            is_reference: is_ref,
            value: if is_ref { value(&Trajectory::new(refp.to_vec(), model.config.dt)?)? } else { v },
        });
    }
    members.sort_by_key(|m| !m.is_reference);
    if cfg.mode == SampleMode::Greedy {
        let mut unique: Vec<GroupMember> = Vec::with_capacity(members.len());
        for m in members {
            if !unique.iter().any(|u| u.trajectory == m.trajectory) {
                unique.push(m);
            }
        }
        members = unique;
    }
    Ok(members)
}

/// Latents that reproduce `trajectory` under the given intention path; the
/// flag reports boundary clamping.
pub fn recover_latents(
    model: &SamplerModel,
    trajectory: &Trajectory,
    reference: &Trajectory,
    intentions: &[Intention],
) -> Result<(Vec<[f64; 3]>, bool)> {
    check_reference(model, reference)?;
    trajectory.expect_horizon(model.config.horizon)?;
    let stride = model.config.stride;
    if intentions.len() != model.config.stages() {
        return Err(Error::LengthMismatch {
            expected: model.config.stages(),
            found: intentions.len(),
        });
    }
    let ref_steps = reference_steps(reference.points());
    let mut any = false;
    let mut out = Vec::with_capacity(model.config.horizon);
    for (k, step) in trajectory.offsets().iter().enumerate() {
        let i = model
            .bounds
            .index_of(intentions[k / stride])
            .ok_or_else(|| Error::Contract(format!("intention {:?} not in the sampler's set", intentions[k / stride])))?;
        let (rs, rh) = ref_steps[k];
        let (u, clamped) = model.bounds.boxes[i].unsquash(step_to_delta(&rs, rh, step));
        any |= clamped;
        out.push(u);
    }
    Ok((out, any))
}

/// Builds the log-probability of a branch on `tape` and returns its scalar var.
pub fn log_prob_on_tape(
    model: &SamplerModel,
    tape: &mut Tape,
    scene: Var,
    points: &[Waypoint],
    reference: &[Waypoint],
    intentions: &[Intention],
    latents: &[[f64; 3]],
) -> Result<Var> {
    let stride = model.config.stride;
    let horizon = model.config.horizon;
    if points.len() != horizon + 1 || latents.len() != horizon || intentions.len() != model.config.stages() {
        return Err(Error::Contract("branch does not match the sampler horizon".into()));
    }
    let log_std = model.log_std(tape)?;
    let mut total: Option<Var> = None;
    for (s, &intention) in intentions.iter().enumerate() {
        let i = model
            .bounds
            .index_of(intention)
            .ok_or_else(|| Error::Contract(format!("intention {intention:?} not in the sampler's set")))?;
        let ls = tape.slice_rows(log_std, i, 1)?;
        let t0 = s * stride;
        let mut stage_terms = Vec::with_capacity(stride + 1);
        for j in 0..stride {
            let k = t0 + j + 1;
            let h = model.heads(tape, scene, model.traj_inputs(&points[..k], reference)?, k)?;
            if j == 0 {
                stage_terms.push(tape.slice_cols(h.log_prior, i, 1)?);
            }
            let mean = tape.slice_rows(h.mean, i, 1)?;
            stage_terms.push(gaussian_on_tape(tape, latents[k - 1], mean, ls)?);
        }
        for term in stage_terms {
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
    }
    total.ok_or_else(|| Error::Contract("empty intention path".into()))
}

/// Log-probability of `trajectory` under `model` given its intention path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProbEval {
    pub value: f64,
    /// Some offset sat on its box boundary and was clamped before inversion.
    pub clamped: bool,
}

pub fn traj_log_prob(
    model: &SamplerModel,
    trajectory: &Trajectory,
    reference: &Trajectory,
    intentions: &[Intention],
    features: &SceneFeatures,
) -> Result<LogProbEval> {
    let (latents, clamped) = recover_latents(model, trajectory, reference, intentions)?;
    let (value, _) = latent_log_prob(model, trajectory, reference, intentions, &latents, features, false)?;
    Ok(LogProbEval { value, clamped })
}

/// Log-probability of a branch with known latents, and optionally its
/// parameter gradient.
pub fn latent_log_prob(
    model: &SamplerModel,
    trajectory: &Trajectory,
    reference: &Trajectory,
    intentions: &[Intention],
    latents: &[[f64; 3]],
    features: &SceneFeatures,
    with_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    check_reference(model, reference)?;
    let mut tape = Tape::new();
    let scene = model.scene_tokens(&mut tape, features)?;
    let lp = log_prob_on_tape(
        model,
        &mut tape,
        scene,
        trajectory.points(),
        reference.points(),
        intentions,
        latents,
    )?;
    let value = tape.scalar(lp);
    let grads = if with_grad {
        Some(tape.backward(lp, &Mat::scalar(1.0), model.params.len())?.params)
    } else {
        None
    };
    Ok((value, grads))
}
