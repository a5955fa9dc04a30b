//! Imitation branch: a single-shot waypoint decoder over scene features,
//! trained with an L1 objective against the demonstrations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dense, Activation, AdamW, AdamWConfig, Checkpoint, Manifest, Mat, ParameterSet, Schedule, Tape};
use crate::rng::{derive_seed, seeded};
use crate::sim::Scenario;
use crate::types::{normalize_angle, Trajectory, Waypoint};

pub use crate::features::{encode_scene, encode_scene_dim, SceneFeatures};

pub const IL_ROLE: &str = "il";

/// Output units are scaled so unit activations span a few seconds of driving.
const OUT_SCALE: [f64; 3] = [20.0, 5.0, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub dt: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for IlConfig {
    fn default() -> Self {
        IlConfig {
            feature_dim: crate::features::DEFAULT_FEATURE_DIM,
            hidden: 128,
            horizon: 8,
            dt: 0.5,
            epochs: 50,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct IlShape {
    feature_dim: usize,
    hidden: usize,
    horizon: usize,
    dt: f64,
}

/// A trained (or freshly initialized) imitation policy.
#[derive(Debug, Clone, PartialEq)]
pub struct IlPolicy {
    pub params: ParameterSet,
    shape: IlShape,
    /// Mean training loss after each epoch.
    pub loss_curve: Vec<f64>,
}

fn manifest(shape: &IlShape) -> Manifest {
    let mut m = Manifest::new();
    m.dense("il_in", shape.feature_dim, shape.hidden, Activation::Gelu);
    m.dense("il_hidden", shape.hidden, shape.hidden, Activation::Gelu);
    m.dense("il_out", shape.hidden, 3 * shape.horizon, Activation::None);
    m
}

impl IlPolicy {
    pub fn new(cfg: &IlConfig) -> Self {
        let shape = IlShape {
            feature_dim: cfg.feature_dim,
            hidden: cfg.hidden,
            horizon: cfg.horizon,
            dt: cfg.dt,
        };
        let mut rng = seeded(derive_seed(cfg.seed, "il_init"));
        IlPolicy {
            params: ParameterSet::init(manifest(&shape), &mut rng),
            shape,
            loss_curve: Vec::new(),
        }
    }

    pub fn zeros(cfg: &IlConfig) -> Self {
        let mut p = IlPolicy::new(cfg);
        p.params = ParameterSet::zeros(p.params.manifest().clone());
        p
    }

    pub fn horizon(&self) -> usize {
        self.shape.horizon
    }

    pub fn feature_dim(&self) -> usize {
        self.shape.feature_dim
    }

    fn check_features(&self, f: &SceneFeatures) -> Result<()> {
        if f.dim() != self.shape.feature_dim {
            return Err(Error::shape("IL features", self.shape.feature_dim, f.dim()));
        }
        Ok(())
    }

    /// Raw decoder output (`rows x 3T`, unscaled) for a batch of features.
    fn decode(&self, tape: &mut Tape, x: crate::nn::Var) -> Result<crate::nn::Var> {
        let h = dense(tape, &self.params, 0, x)?;
        let h = dense(tape, &self.params, 1, h)?;
        dense(tape, &self.params, 2, h)
    }

    fn to_trajectory(&self, raw: &[f64]) -> Trajectory {
        let mut pts = vec![Waypoint::ORIGIN];
        for k in 0..self.shape.horizon {
            let o = &raw[3 * k..3 * k + 3];
            pts.push(Waypoint::new(o[0] * OUT_SCALE[0], o[1] * OUT_SCALE[1], o[2] * OUT_SCALE[2]));
        }
        Trajectory::new(pts, self.shape.dt).expect("decoder output is finite")
    }

    pub fn forward(&self, features: &SceneFeatures) -> Result<Trajectory> {
        self.check_features(features)?;
        let mut tape = Tape::new();
        let x = tape.constant(Mat::row_vector(features.0.clone()));
        let y = self.decode(&mut tape, x)?;
        let raw = tape.value(y).data.clone();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("IL decoder produced a non-finite waypoint".into()));
        }
        Ok(self.to_trajectory(&raw))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            IL_ROLE,
            self.params.clone(),
            serde_json::to_value(self.shape).expect("shape serializes"),
        );
        ck.metadata = serde_json::json!({ "loss_curve": self.loss_curve });
        ck.step = self.loss_curve.len() as u64;
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.role != IL_ROLE {
            return Err(Error::Format(format!("expected an '{IL_ROLE}' checkpoint, got '{}'", ck.role)));
        }
        let shape: IlShape =
            serde_json::from_value(ck.config.clone()).map_err(|e| Error::Format(format!("IL config: {e}")))?;
        if &manifest(&shape) != ck.params.manifest() {
            return Err(Error::Format("IL manifest does not match its config".into()));
        }
        let loss_curve = ck
            .metadata
            .get("loss_curve")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        Ok(IlPolicy {
            params: ck.params.clone(),
            shape,
            loss_curve,
        })
    }
}

pub fn il_forward(policy: &IlPolicy, features: &SceneFeatures) -> Result<Trajectory> {
    policy.forward(features)
}

/// Mean absolute difference over every coordinate, headings wrapped.
pub fn il_loss(pred: &Trajectory, human: &Trajectory) -> Result<f64> {
    if pred.len() != human.len() {
        return Err(Error::LengthMismatch {
            expected: human.len(),
            found: pred.len(),
        });
    }
    let total: f64 = pred
        .points()
        .iter()
        .zip(human.points())
        .map(|(p, h)| (p.x - h.x).abs() + (p.y - h.y).abs() + normalize_angle(p.h - h.h).abs())
        .sum();
    Ok(total / (3 * pred.len()) as f64)
}

/// Batch mean of [`il_loss`] over `policy`'s predictions and its parameter
/// gradient.
pub fn batch_loss(policy: &IlPolicy, feats: &[&SceneFeatures], targets: &[&Trajectory]) -> Result<(f64, crate::nn::Gradients)> {
    let b = feats.len();
    let (d, t) = (policy.shape.feature_dim, policy.shape.horizon);
    let mut x = Vec::with_capacity(b * d);
    for f in feats {
        x.extend_from_slice(&f.0);
    }
    let mut tape = Tape::new();
    let xv = tape.constant(Mat::from_vec(b, d, x)?);
    let raw = policy.decode(&mut tape, xv)?;
    let scale = Mat::row_vector((0..t).flat_map(|_| OUT_SCALE).collect());
    let scale = tape.constant(scale);
    let pred = tape.mul_row(raw, scale)?;
    // wrap heading targets onto the prediction's branch so the L1 sees the short way round
    let pv = tape.value(pred).clone();
    let mut target = Mat::zeros(b, 3 * t);
    for (i, traj) in targets.iter().enumerate() {
        for k in 0..t {
            let w = traj.points()[k + 1];
            let ph = pv.get(i, 3 * k + 2);
            let row = target.row_mut(i);
            row[3 * k] = w.x;
            row[3 * k + 1] = w.y;
            row[3 * k + 2] = ph + normalize_angle(w.h - ph);
        }
    }
    let tv = tape.constant(target);
    let diff = tape.sub(pred, tv)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs);
    // point 0 is pinned to the origin and counts as an exact match
    let loss = tape.scale(total, 1.0 / (b * 3 * (t + 1)) as f64);
    let value = tape.scalar(loss);
    let bw = tape.backward(loss, &Mat::scalar(1.0), policy.params.len())?;
    Ok((value, bw.params))
}

pub fn train_il(suite: &[Scenario], cfg: &IlConfig) -> Result<IlPolicy> {
    if suite.is_empty() {
        return Err(Error::Config("IL training needs at least one scenario".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    for s in suite {
        s.expert.expect_horizon(cfg.horizon)?;
    }
    let feats: Vec<SceneFeatures> = suite
        .iter()
        .map(|s| encode_scene_dim(s, cfg.feature_dim))
        .collect::<Result<_>>()?;
    let mut policy = IlPolicy::new(cfg);
    let batches_per_epoch = suite.len().div_ceil(cfg.batch_size);
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            schedule: Schedule::Constant,
            ..AdamWConfig::default()
        },
        policy.params.len(),
    );
    let mut rng = seeded(derive_seed(cfg.seed, "il_shuffle"));
    let mut order: Vec<usize> = (0..suite.len()).collect();
    for epoch in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let f: Vec<&SceneFeatures> = chunk.iter().map(|&i| &feats[i]).collect();
            let t: Vec<&Trajectory> = chunk.iter().map(|&i| &suite[i].expert).collect();
            let (loss, grads) = batch_loss(&policy, &f, &t)?;
            epoch_loss += loss * chunk.len() as f64;
            opt.step(&mut policy.params, &grads)?;
        }
        let mean = epoch_loss / suite.len() as f64;
        log::debug!("il epoch {epoch}: loss {mean:.5} over {batches_per_epoch} batches");
        policy.loss_curve.push(mean);
    }
    Ok(policy)
}

/// Mean [`il_loss`] of `policy` over `suite`.
pub fn mean_il_loss(policy: &IlPolicy, suite: &[Scenario]) -> Result<f64> {
    let mut total = 0.0;
    for s in suite {
        let f = encode_scene_dim(s, policy.feature_dim())?;
        total += il_loss(&policy.forward(&f)?, &s.expert)?;
    }
    Ok(total / suite.len().max(1) as f64)
}
