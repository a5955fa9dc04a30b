//! Reward world model: a learned stand-in for the simulator that scores a
//! trajectory (reward and confidence), plus plan selection and best-of-N.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{encode_scene_dim, trajectory_probe, SceneFeatures, PROBE_PER_STEP};
use crate::il::IlPolicy;
use crate::metrics::{MetricsConfig, ScenarioScorer};
use crate::nn::{dense, Activation, AdamW, AdamWConfig, Checkpoint, Gradients, Manifest, Mat, ParameterSet, Schedule, Tape};
use crate::rng::{derive_seed, derive_seed_idx, fnv1a, seeded};
use crate::sampler::{sample_group, GroupConfig, SampleMode, SamplerModel};
use crate::sim::{Scenario, SimConfig};
use crate::types::{DrivingCommand, Trajectory};

pub const RWM_ROLE: &str = "rwm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwmOutput {
    pub reward: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwmConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Sampled groups per training scenario, rooted at the demonstration.
    pub groups_per_scenario: usize,
    /// Extra groups rooted at a noisy copy of the demonstration.
    pub jitter_groups: usize,
    /// Per-waypoint noise of those roots: position (m) and heading (rad).
    pub jitter_std: [f64; 2],
    /// Extra groups rooted at the IL plan, when an IL policy is supplied.
    pub il_groups: usize,
    pub group_size: usize,
    pub epochs: usize,
    pub confidence_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of scenarios held out for the confidence head.
    pub confidence_fraction: f64,
    pub seed: u64,
}

impl Default for RwmConfig {
    fn default() -> Self {
        RwmConfig {
            feature_dim: crate::features::DEFAULT_FEATURE_DIM,
            hidden: 128,
            horizon: 8,
            dt: 0.5,
            groups_per_scenario: 4,
            jitter_groups: 4,
            jitter_std: [0.3, 0.03],
            il_groups: 4,
            group_size: 15,
            epochs: 60,
            confidence_epochs: 15,
            batch_size: 64,
            lr: 1e-3,
            confidence_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct RwmShape {
    feature_dim: usize,
    hidden: usize,
    horizon: usize,
    dt: f64,
}

impl RwmShape {
    fn input_dim(&self) -> usize {
        self.feature_dim + DrivingCommand::COUNT + 3 * (self.horizon + 1) + PROBE_PER_STEP * self.horizon
    }
}

fn manifest(shape: &RwmShape) -> Manifest {
    let mut m = Manifest::new();
    m.dense("rwm_in", shape.input_dim(), shape.hidden, Activation::Gelu);
    m.dense("rwm_hidden", shape.hidden, shape.hidden, Activation::Gelu);
    m.dense("rwm_out", shape.hidden, 2, Activation::Sigmoid);
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwmModel {
    pub params: ParameterSet,
    shape: RwmShape,
    /// Mean reward-head loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl RwmModel {
    pub fn new(cfg: &RwmConfig) -> Self {
        let shape = RwmShape {
            feature_dim: cfg.feature_dim,
            hidden: cfg.hidden,
            horizon: cfg.horizon,
            dt: cfg.dt,
        };
        RwmModel {
            params: ParameterSet::init(manifest(&shape), &mut seeded(derive_seed(cfg.seed, "rwm_init"))),
            shape,
            loss_curve: Vec::new(),
        }
    }

    pub fn zeros(cfg: &RwmConfig) -> Self {
        let mut m = RwmModel::new(cfg);
        m.params = ParameterSet::zeros(m.params.manifest().clone());
        m
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.shape.feature_dim
    }

    fn input_row(&self, scenario: &Scenario, features: &SceneFeatures, traj: &Trajectory) -> Result<Vec<f64>> {
        if features.dim() != self.shape.feature_dim {
            return Err(Error::shape("RWM features", self.shape.feature_dim, features.dim()));
        }
        if traj.len() != self.shape.horizon + 1 {
            return Err(Error::shape("RWM trajectory length", self.shape.horizon + 1, traj.len()));
        }
        let mut row = Vec::with_capacity(self.input_dim());
        row.extend_from_slice(&features.0);
        row.extend_from_slice(&scenario.command.one_hot());
        for p in traj.points() {
            row.extend_from_slice(&[p.x / 20.0, p.y / 5.0, p.h]);
        }
        row.extend(trajectory_probe(scenario, traj));
        Ok(row)
    }

    fn forward_rows(&self, rows: Vec<f64>, n: usize) -> Result<(Tape, crate::nn::Var)> {
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_vec(n, self.input_dim(), rows)?);
        let h = dense(&mut tape, &self.params, 0, x)?;
        let h = dense(&mut tape, &self.params, 1, h)?;
        let y = dense(&mut tape, &self.params, 2, h)?;
        Ok((tape, y))
    }

    pub fn forward(&self, scenario: &Scenario, features: &SceneFeatures, traj: &Trajectory) -> Result<RwmOutput> {
        let row = self.input_row(scenario, features, traj)?;
        let (tape, y) = self.forward_rows(row, 1)?;
        let v = tape.value(y);
        Ok(RwmOutput {
            reward: v.get(0, 0),
            confidence: v.get(0, 1),
        })
    }

    pub fn forward_batch(
        &self,
        scenario: &Scenario,
        features: &SceneFeatures,
        trajs: &[&Trajectory],
    ) -> Result<Vec<RwmOutput>> {
        if trajs.is_empty() {
            return Ok(Vec::new());
        }
        let mut rows = Vec::with_capacity(trajs.len() * self.input_dim());
        for t in trajs {
            rows.extend(self.input_row(scenario, features, t)?);
        }
        let (tape, y) = self.forward_rows(rows, trajs.len())?;
        let v = tape.value(y);
        Ok((0..trajs.len())
            .map(|i| RwmOutput {
                reward: v.get(i, 0),
                confidence: v.get(i, 1),
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            RWM_ROLE,
            self.params.clone(),
            serde_json::to_value(self.shape).expect("shape serializes"),
        );
        ck.metadata = serde_json::json!({ "loss_curve": self.loss_curve });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.role != RWM_ROLE {
            return Err(Error::Format(format!("expected an '{RWM_ROLE}' checkpoint, got '{}'", ck.role)));
        }
        let shape: RwmShape =
            serde_json::from_value(ck.config.clone()).map_err(|e| Error::Format(format!("RWM config: {e}")))?;
        if &manifest(&shape) != ck.params.manifest() {
            return Err(Error::Format("RWM manifest does not match its config".into()));
        }
        Ok(RwmModel {
            params: ck.params.clone(),
            shape,
            loss_curve: ck
                .metadata
                .get("loss_curve")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .unwrap_or_default(),
        })
    }
}

pub fn rwm_forward(model: &RwmModel, scenario: &Scenario, features: &SceneFeatures, traj: &Trajectory) -> Result<RwmOutput> {
    model.forward(scenario, features, traj)
}

/// One labelled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RwmSample {
    pub scenario: usize,
    pub trajectory: Trajectory,
    pub label: f64,
}

/// Score-independent pruning value: a hash of the coordinates.
fn neutral(t: &Trajectory) -> Result<f64> {
    let bytes: Vec<u8> = t.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    Ok((fnv1a(&bytes) % 1_000_003) as f64)
}

/// Copy of `traj` with Gaussian noise on every waypoint after the first.
fn jitter(traj: &Trajectory, std: [f64; 2], rng: &mut crate::rng::Rng) -> Result<Trajectory> {
    let pos = Normal::new(0.0, std[0]).map_err(|e| Error::Config(format!("jitter_std: {e}")))?;
    let head = Normal::new(0.0, std[1]).map_err(|e| Error::Config(format!("jitter_std: {e}")))?;
    let mut pts = traj.points().to_vec();
    for p in pts.iter_mut().skip(1) {
        p.x += pos.sample(rng);
        p.y += pos.sample(rng);
        p.h += head.sample(rng);
    }
    Trajectory::new(pts, traj.dt())
}

/// Demonstrations plus sampled groups rooted at them, at noisy copies of
/// them, and at the plans of `il` when given, all labelled with simulator
/// PDMS. Groups are pruned on a hash of the trajectory rather than on its
/// score, so the labels cover bad candidates as well as good ones.
pub fn rwm_dataset(
    suite: &[Scenario],
    sampler: &SamplerModel,
    il: Option<&IlPolicy>,
    cfg: &RwmConfig,
    sim: &SimConfig,
    metrics: &MetricsConfig,
) -> Result<Vec<RwmSample>> {
    let per: Vec<Vec<RwmSample>> = suite
        .par_iter()
        .enumerate()
        .map(|(idx, scn)| {
            let features = encode_scene_dim(scn, sampler.config.feature_dim)?;
            let scorer = ScenarioScorer::new(scn, sim, metrics)?;
            let mut out = vec![RwmSample {
                scenario: idx,
                trajectory: scn.expert.clone(),
                label: scorer.pdms(&scn.expert)?,
            }];
            let gcfg = GroupConfig {
                group_size: cfg.group_size,
                keep_k: None,
                mode: SampleMode::Stochastic,
            };
            let il_plan = il.map(|p| p.forward(&encode_scene_dim(scn, p.feature_dim())?)).transpose()?;
            let il_groups = if il_plan.is_some() { cfg.il_groups } else { 0 };
            if let Some(plan) = &il_plan {
                out.push(RwmSample {
                    scenario: idx,
                    trajectory: plan.clone(),
                    label: scorer.pdms(plan)?,
                });
            }
            for g in 0..cfg.groups_per_scenario + cfg.jitter_groups + il_groups {
                let seed = derive_seed_idx(derive_seed(cfg.seed, &scn.id), "rwm_group", g as u64);
                let mut rng = seeded(seed);
                let root = if g < cfg.groups_per_scenario {
                    scn.expert.clone()
                } else if g < cfg.groups_per_scenario + cfg.jitter_groups {
                    let root = jitter(&scn.expert, cfg.jitter_std, &mut rng)?;
                    out.push(RwmSample {
                        scenario: idx,
                        trajectory: root.clone(),
                        label: scorer.pdms(&root)?,
                    });
                    root
                } else {
                    il_plan.clone().expect("il groups need an IL plan")
                };
                for m in sample_group(sampler, &root, &features, &gcfg, &neutral, &mut rng)? {
                    if !m.is_reference {
                        out.push(RwmSample {
                            scenario: idx,
                            label: scorer.pdms(&m.trajectory)?,
                            trajectory: m.trajectory,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Trains on a labelled dataset. Scenarios whose id hash lands in the
/// confidence fold train only the confidence head, on `1 - |error|` of the
/// frozen reward head.
pub fn train_rwm_on(suite: &[Scenario], data: &[RwmSample], cfg: &RwmConfig) -> Result<RwmModel> {
    if suite.is_empty() || data.is_empty() {
        return Err(Error::Config("RWM training needs at least one scenario".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let features: Vec<SceneFeatures> = suite
        .iter()
        .map(|s| encode_scene_dim(s, cfg.feature_dim))
        .collect::<Result<_>>()?;
    let in_conf_fold = |i: usize| -> bool {
        suite.len() > 1 && (fnv1a(suite[i].id.as_bytes()) % 1000) as f64 / 1000.0 < cfg.confidence_fraction
    };
    let (fold_a, fold_b): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| !in_conf_fold(data[i].scenario));
    let fold_a = if fold_a.is_empty() { (0..data.len()).collect() } else { fold_a };

    let mut model = RwmModel::new(cfg);
    // Input rows do not depend on the weights, so build them once.
    let inputs: Vec<Vec<f64>> = data
        .par_iter()
        .map(|s| model.input_row(&suite[s.scenario], &features[s.scenario], &s.trajectory))
        .collect::<Result<_>>()?;
    let n_params = model.params.len();
    let out_layer = model.params.layer_id("rwm_out").expect("output layer exists");
    let (w_off, b_off) = (model.params.manifest().offset(out_layer, 0), model.params.manifest().offset(out_layer, 1));
    let conf_mask: Vec<bool> = (0..n_params)
        .map(|i| (i >= w_off && i < b_off && (i - w_off) % 2 == 1) || i == b_off + 1)
        .collect();

    let run = |model: &mut RwmModel, samples: &[usize], targets: &[f64], epochs: usize, column: usize, tag: &str| -> Result<Vec<f64>> {
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: cfg.lr,
                schedule: Schedule::Cosine {
                    total_steps: (epochs * samples.len().div_ceil(cfg.batch_size)) as u64,
                    min_factor: 0.1,
                },
                ..AdamWConfig::default()
            },
            n_params,
        );
        let mut rng = seeded(derive_seed(cfg.seed, tag));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut curve = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let mut rows = Vec::with_capacity(chunk.len() * model.input_dim());
                for &i in chunk {
                    rows.extend_from_slice(&inputs[samples[i]]);
                }
                let t: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
                let (mut tape, y) = model.forward_rows(rows, chunk.len())?;
                let col = tape.slice_cols(y, column, 1)?;
                let t = tape.constant(Mat::from_vec(chunk.len(), 1, t)?);
                let d = tape.sub(col, t)?;
                let sq = tape.mul(d, d)?;
                let loss = tape.mean(sq);
                total += tape.scalar(loss) * chunk.len() as f64;
                let mut grads: Gradients = tape.backward(loss, &Mat::scalar(1.0), n_params)?.params;
                if column == 1 {
                    for (g, &keep) in grads.data.iter_mut().zip(&conf_mask) {
                        if !keep {
                            *g = 0.0;
                        }
                    }
                }
                opt.step(&mut model.params, &grads)?;
            }
            curve.push(total / samples.len() as f64);
        }
        Ok(curve)
    };

    let labels: Vec<f64> = fold_a.iter().map(|&i| data[i].label).collect();
    model.loss_curve = run(&mut model, &fold_a, &labels, cfg.epochs, 0, "rwm_reward")?;
    if !fold_b.is_empty() && cfg.confidence_epochs > 0 {
        let before = model.params.clone();
        let mut rows = Vec::with_capacity(fold_b.len() * model.input_dim());
        for &i in &fold_b {
            rows.extend_from_slice(&inputs[i]);
        }
        let (tape, y) = model.forward_rows(rows, fold_b.len())?;
        let pred = tape.value(y);
        let targets: Vec<f64> = fold_b
            .iter()
            .enumerate()
            .map(|(r, &i)| 1.0 - (pred.get(r, 0) - data[i].label).abs())
            .collect();
        run(&mut model, &fold_b, &targets, cfg.confidence_epochs, 1, "rwm_confidence")?;
        // the reward head is untouched by the confidence stage
        debug_assert!(before
            .data()
            .iter()
            .zip(model.params.data())
            .zip(&conf_mask)
            .all(|((a, b), &m)| m || a == b));
    }
    Ok(model)
}

/// Samples a dataset with `sampler` (see [`rwm_dataset`]) and trains on it.
pub fn train_rwm(
    suite: &[Scenario],
    sampler: &SamplerModel,
    il: Option<&IlPolicy>,
    cfg: &RwmConfig,
    sim: &SimConfig,
    metrics: &MetricsConfig,
) -> Result<RwmModel> {
    if suite.is_empty() {
        return Err(Error::Config("RWM training needs at least one scenario".into()));
    }
    let data = rwm_dataset(suite, sampler, il, cfg, sim, metrics)?;
    train_rwm_on(suite, &data, cfg)
}

/// Mean absolute error of the reward head against the labels.
pub fn rwm_mae(model: &RwmModel, suite: &[Scenario], data: &[RwmSample]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let features: Vec<SceneFeatures> = suite
        .iter()
        .map(|s| encode_scene_dim(s, model.feature_dim()))
        .collect::<Result<_>>()?;
    let errs: Vec<f64> = data
        .par_iter()
        .map(|s| {
            let out = model.forward(&suite[s.scenario], &features[s.scenario], &s.trajectory)?;
            Ok((out.reward - s.label).abs())
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    Reward,
    ConfidenceWeighted,
}

impl SelectionPolicy {
    fn key(self, o: &RwmOutput) -> f64 {
        match self {
            SelectionPolicy::Reward => o.reward,
            SelectionPolicy::ConfidenceWeighted => o.reward * o.confidence,
        }
    }
}

/// Index of the chosen candidate, or `None` for the IL trajectory.
pub fn select_plan_index(il_score: &RwmOutput, candidates: &[RwmOutput], policy: SelectionPolicy) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut best_key = policy.key(il_score);
    for (i, c) in candidates.iter().enumerate() {
        // candidates predicted worse than the IL plan are filtered out first
        if c.reward < il_score.reward {
            continue;
        }
        let k = policy.key(c);
        if k > best_key {
            best_key = k;
            best = Some(i);
        }
    }
    best
}

pub fn select_plan(
    il_traj: &Trajectory,
    candidates: &[(Trajectory, RwmOutput)],
    il_score: &RwmOutput,
    policy: SelectionPolicy,
) -> Trajectory {
    let scores: Vec<RwmOutput> = candidates.iter().map(|(_, o)| *o).collect();
    match select_plan_index(il_score, &scores, policy) {
        Some(i) => candidates[i].0.clone(),
        None => il_traj.clone(),
    }
}

/// Highest-scoring plan, first one on ties.
pub fn best_of_n<F>(plans: &[Trajectory], scorer: F) -> Result<(usize, Trajectory)>
where
    F: Fn(&Trajectory) -> Result<f64>,
{
    if plans.is_empty() {
        return Err(Error::Config("best_of_n needs at least one plan".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in plans.iter().enumerate() {
        let s = scorer(p)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok((best.0, plans[best.0].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::encode_scene;
    use crate::sampler::SamplerConfig;
    use crate::sim::{generate_scenario, ScenarioFamily};
    use crate::types::Waypoint;
    use proptest::prelude::*;

    fn small() -> RwmConfig {
        RwmConfig {
            hidden: 32,
            groups_per_scenario: 1,
            epochs: 10,
            confidence_epochs: 3,
            ..RwmConfig::default()
        }
    }

    fn out(r: f64, c: f64) -> RwmOutput {
        RwmOutput { reward: r, confidence: c }
    }

    fn line(len: f64) -> Trajectory {
        Trajectory::new((0..=8).map(|k| Waypoint::new(len * k as f64 / 8.0, 0.0, 0.0)).collect(), 0.5).unwrap()
    }

    #[test]
    fn zero_model_outputs_half() {
        let scn = generate_scenario(ScenarioFamily::Turn, 0, &SimConfig::default()).unwrap();
        let o = rwm_forward(&RwmModel::zeros(&small()), &scn, &encode_scene(&scn), &scn.expert).unwrap();
        assert_eq!(o, out(0.5, 0.5));
        let short = Trajectory::stationary(Waypoint::ORIGIN, 3, 0.5);
        assert!(RwmModel::zeros(&small()).forward(&scn, &encode_scene(&scn), &short).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn outputs_are_bounded(seed in 0u64..1000, scale in 0.1f64..100.0) {
            let scn = generate_scenario(ScenarioFamily::LeadBrake, seed, &SimConfig::default()).unwrap();
            let cfg = RwmConfig { seed, ..small() };
            let m = RwmModel::new(&cfg);
            let mut rng = seeded(seed);
            let f = SceneFeatures((0..cfg.feature_dim).map(|_| scale * rand::Rng::random_range(&mut rng, -1.0..1.0)).collect());
            let o = m.forward(&scn, &f, &line(scale)).unwrap();
            prop_assert!((0.0..=1.0).contains(&o.reward) && (0.0..=1.0).contains(&o.confidence));
        }
    }

    #[test]
    fn selection_rules() {
        let il = line(10.0);
        let cands = vec![(line(11.0), out(0.6, 0.9)), (line(12.0), out(0.8, 0.5)), (line(13.0), out(0.8, 0.9))];
        assert_eq!(select_plan(&il, &[], &out(0.5, 0.5), SelectionPolicy::Reward), il);
        assert_eq!(select_plan(&il, &cands, &out(0.9, 0.1), SelectionPolicy::Reward), il);
        // tie on reward goes to the lower index
        assert_eq!(select_plan(&il, &cands, &out(0.5, 0.5), SelectionPolicy::Reward), line(12.0));
        assert_eq!(select_plan(&il, &cands, &out(0.5, 0.5), SelectionPolicy::ConfidenceWeighted), line(13.0));
        // tie with the IL plan keeps the IL plan
        assert_eq!(select_plan(&il, &cands, &out(0.8, 1.0), SelectionPolicy::Reward), il);
        // filtering uses raw reward even under confidence weighting
        let c2 = vec![(line(11.0), out(0.55, 1.0))];
        assert_eq!(select_plan(&il, &c2, &out(0.6, 0.1), SelectionPolicy::ConfidenceWeighted), il);
    }

    proptest! {
        #[test]
        fn selection_never_returns_a_filtered_candidate(
            il in 0.0f64..1.0,
            rs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..12),
            weighted in any::<bool>(),
        ) {
            let policy = if weighted { SelectionPolicy::ConfidenceWeighted } else { SelectionPolicy::Reward };
            let scores: Vec<_> = rs.iter().map(|&(r, c)| out(r, c)).collect();
            if let Some(i) = select_plan_index(&out(il, 0.7), &scores, policy) {
                prop_assert!(scores[i].reward >= il);
            }
        }

        #[test]
        fn best_of_n_is_monotone(scores in prop::collection::vec(0.0f64..1.0, 1..10)) {
            let plans: Vec<_> = (0..scores.len()).map(|i| line(i as f64 + 1.0)).collect();
            let score_of = |t: &Trajectory| Ok(scores[(t.points()[8].x - 1.0).round() as usize]);
            let mut prev = f64::NEG_INFINITY;
            for n in 1..=plans.len() {
                let (i, _) = best_of_n(&plans[..n], score_of).unwrap();
                prop_assert!(scores[i] >= prev);
                prev = scores[i];
            }
        }
    }

    #[test]
    fn best_of_n_examples() {
        let plans = vec![line(1.0), line(2.0), line(3.0)];
        let s = [0.3, 0.9, 0.7];
        let (i, p) = best_of_n(&plans, |t| Ok(s[(t.points()[8].x - 1.0).round() as usize])).unwrap();
        assert_eq!((i, p), (1, line(2.0)));
        assert_eq!(best_of_n(&plans[..1], |_| Ok(0.0)).unwrap().0, 0);
        assert!(best_of_n(&[], |_| Ok(0.0)).is_err());
    }

    fn tiny_suite(n: u64) -> Vec<Scenario> {
        let sim = SimConfig::default();
        (0..n)
            .map(|i| generate_scenario(ScenarioFamily::ALL[(i % 5) as usize], i, &sim).unwrap())
            .collect()
    }

    #[test]
    fn constant_labels_are_fit() {
        let suite = tiny_suite(3);
        let data: Vec<RwmSample> = suite
            .iter()
            .enumerate()
            .map(|(i, s)| RwmSample {
                scenario: i,
                trajectory: s.expert.clone(),
                label: 0.73,
            })
            .collect();
        let cfg = RwmConfig {
            epochs: 300,
            confidence_fraction: 0.0,
            ..small()
        };
        let m = train_rwm_on(&suite, &data, &cfg).unwrap();
        assert!(rwm_mae(&m, &suite, &data).unwrap() < 0.01);
    }

    #[test]
    fn training_reduces_loss_and_round_trips() {
        let suite = tiny_suite(6);
        let sampler = SamplerModel::new(
            SamplerConfig {
                d_model: 16,
                heads: 2,
                ..SamplerConfig::default()
            },
            0,
        )
        .unwrap();
        let cfg = small();
        let m = train_rwm(&suite, &sampler, None, &cfg, &SimConfig::default(), &MetricsConfig::default()).unwrap();
        assert!(m.loss_curve.last().unwrap() < &m.loss_curve[0]);
        let again = train_rwm(&suite, &sampler, None, &cfg, &SimConfig::default(), &MetricsConfig::default()).unwrap();
        assert_eq!(m, again);
        let back = RwmModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(train_rwm(&[], &sampler, None, &cfg, &SimConfig::default(), &MetricsConfig::default()).is_err());
    }
}
