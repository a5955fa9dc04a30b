//! Offset and score network of the tree sampler.
//!
//! Trajectory tokens pass through a pre-LN self-attention block. Intention
//! queries then cross-attend over the trajectory and scene tokens, pass an MLP,
//! and feed the offset head (latent means, one row per intention) and the
//! score head (log-prior over intentions).

use serde::{Deserialize, Serialize};

use super::bounds::{BoundsConfig, IntentionOffsetBounds};
use crate::error::{Error, Result};
use crate::features::SceneFeatures;
use crate::nn::{attention, dense, embedding, layer_norm, Activation, Checkpoint, LayerId, Manifest, Mat, ParameterSet, Tape, Var};
use crate::rng::{derive_seed, seeded};
use crate::types::{normalize_angle, Intention, Waypoint};

pub const RL_ROLE: &str = "rl";
/// ln(0.02)
pub const LOG_STD_FLOOR: f64 = -3.912_023_005_428_146;
const TOKEN_INPUTS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub scene_tokens: usize,
    pub feature_dim: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Steps per expansion stage; the intention is fixed within a stage.
    pub stride: usize,
    pub intentions: Vec<Intention>,
    pub bounds: BoundsConfig,
    pub init_log_std: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            d_model: 128,
            heads: 4,
            scene_tokens: 8,
            feature_dim: crate::features::DEFAULT_FEATURE_DIM,
            horizon: 8,
            dt: 0.5,
            stride: 2,
            intentions: Intention::DEFAULT_SET.to_vec(),
            bounds: BoundsConfig::default(),
            init_log_std: -1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.horizon == 0 || !self.horizon.is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "horizon {} must be a positive multiple of stride {}",
                self.horizon, self.stride
            )));
        }
        if self.scene_tokens == 0 || !self.feature_dim.is_multiple_of(self.scene_tokens) {
            return Err(Error::Config(format!(
                "feature_dim {} not divisible into {} scene tokens",
                self.feature_dim, self.scene_tokens
            )));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if self.intentions.is_empty() {
            return Err(Error::Config("intention set is empty".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.horizon / self.stride
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layers {
    traj_in: LayerId,
    scene_in: LayerId,
    scene_pos: LayerId,
    intention_emb: LayerId,
    step_emb: LayerId,
    ln_traj: LayerId,
    self_attn: LayerId,
    ln_ctx: LayerId,
    ln_query: LayerId,
    cross_attn: LayerId,
    ln_mlp: LayerId,
    mlp_in: LayerId,
    mlp_out: LayerId,
    ln_out: LayerId,
    offset_head: LayerId,
    score_head: LayerId,
    log_std: LayerId,
}

fn build_manifest(cfg: &SamplerConfig) -> (Manifest, Layers) {
    let d = cfg.d_model;
    let n = cfg.intentions.len();
    let mut m = Manifest::new();
    let layers = Layers {
        traj_in: m.dense("traj_in", TOKEN_INPUTS, d, Activation::None),
        scene_in: m.dense("scene_in", cfg.feature_dim / cfg.scene_tokens, d, Activation::None),
        scene_pos: m.embedding("scene_pos", cfg.scene_tokens, d),
        intention_emb: m.embedding("intention_emb", n, d),
        step_emb: m.embedding("step_emb", cfg.horizon, d),
        ln_traj: m.layer_norm("ln_traj", d),
        self_attn: m.self_attention("self_attn", d, cfg.heads),
        ln_ctx: m.layer_norm("ln_ctx", d),
        ln_query: m.layer_norm("ln_query", d),
        cross_attn: m.cross_attention("cross_attn", d, d, cfg.heads),
        ln_mlp: m.layer_norm("ln_mlp", d),
        mlp_in: m.dense("mlp_in", d, 2 * d, Activation::Gelu),
        mlp_out: m.dense("mlp_out", 2 * d, d, Activation::None),
        ln_out: m.layer_norm("ln_out", d),
        offset_head: m.dense("offset_head", d, 3, Activation::None),
        score_head: m.dense("score_head", d, 1, Activation::None),
        log_std: m.embedding("log_std", n, 3),
    };
    (m, layers)
}

/// The RL branch policy: network parameters plus the offset boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerModel {
    pub config: SamplerConfig,
    pub params: ParameterSet,
    pub bounds: IntentionOffsetBounds,
    layers: Layers,
}

/// Network outputs for one predicted step.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// `N x 3` latent means.
    pub mean: Var,
    /// `1 x N` log-prior over intentions.
    pub log_prior: Var,
}

impl SamplerModel {
    pub fn new(config: SamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (manifest, layers) = build_manifest(&config);
        let mut params = ParameterSet::init(manifest, &mut seeded(derive_seed(seed, "sampler_init")));
        // small heads so the initial policy stays near box centers and uniform priors
        for head in [layers.offset_head, layers.score_head] {
            let w = params.tensor(head, 0).map(|v| 0.1 * v);
            params.set_tensor(head, 0, &w)?;
        }
        let n = config.intentions.len();
        params.set_tensor(layers.log_std, 0, &Mat::filled(n, 3, config.init_log_std))?;
        let bounds = IntentionOffsetBounds::new(&config.intentions, &config.bounds)?;
        Ok(SamplerModel {
            config,
            params,
            bounds,
            layers,
        })
    }

    /// All-zero parameters: box-center means, unit std, uniform priors.
    pub fn zeros(config: SamplerConfig) -> Result<Self> {
        let mut m = SamplerModel::new(config, 0)?;
        m.params = ParameterSet::zeros(m.params.manifest().clone());
        Ok(m)
    }

    pub fn n_intentions(&self) -> usize {
        self.config.intentions.len()
    }

    pub fn with_params(&self, params: ParameterSet) -> Result<Self> {
        if params.manifest() != self.params.manifest() {
            return Err(Error::Contract("parameter manifest does not match the sampler".into()));
        }
        Ok(SamplerModel {
            params,
            ..self.clone()
        })
    }

    /// `S x d` scene tokens; build once per tape and reuse across forwards.
    pub fn scene_tokens(&self, tape: &mut Tape, features: &SceneFeatures) -> Result<Var> {
        let cfg = &self.config;
        if features.dim() != cfg.feature_dim {
            return Err(Error::shape("sampler features", cfg.feature_dim, features.dim()));
        }
        let chunks = Mat::from_vec(cfg.scene_tokens, cfg.feature_dim / cfg.scene_tokens, features.0.clone())?;
        let x = tape.constant(chunks);
        let h = dense(tape, &self.params, self.layers.scene_in, x)?;
        let pos = embedding(tape, &self.params, self.layers.scene_pos)?;
        tape.add(h, pos)
    }

    /// Clamped `N x 3` log-std.
    pub fn log_std(&self, tape: &mut Tape) -> Result<Var> {
        let ls = embedding(tape, &self.params, self.layers.log_std)?;
        Ok(tape.clamp_min(ls, LOG_STD_FLOOR))
    }

    pub fn log_std_values(&self) -> Vec<[f64; 3]> {
        let t = self.params.tensor(self.layers.log_std, 0);
        (0..t.rows)
            .map(|i| std::array::from_fn(|j| t.get(i, j).max(LOG_STD_FLOOR)))
            .collect()
    }

    /// Token inputs for a branch prefix `w_0..w_t`. Steps past `t` follow the
    /// reference steps from the branch point.
    pub fn traj_inputs(&self, prefix: &[Waypoint], reference: &[Waypoint]) -> Result<Mat> {
        let t_max = self.config.horizon;
        if reference.len() != t_max + 1 {
            return Err(Error::LengthMismatch {
                expected: t_max + 1,
                found: reference.len(),
            });
        }
        if prefix.is_empty() || prefix.len() > t_max + 1 {
            return Err(Error::Contract(format!("branch prefix of length {} for horizon {t_max}", prefix.len())));
        }
        let path = continue_with_reference(prefix, reference);
        let known = prefix.len() - 1;
        let mut m = Mat::zeros(t_max + 1, TOKEN_INPUTS);
        for (k, (b, r)) in path.iter().zip(reference).enumerate() {
            let step_len = if k > 0 { reference[k - 1].distance(r) } else { 0.0 };
            let row = m.row_mut(k);
            row.copy_from_slice(&[
                b.x / 20.0,
                b.y / 5.0,
                b.h,
                (b.x - r.x) / 5.0,
                (b.y - r.y) / 5.0,
                normalize_angle(b.h - r.h),
                k as f64 / t_max as f64,
                if k <= known { 1.0 } else { 0.0 },
                step_len / 10.0,
            ]);
        }
        Ok(m)
    }

    /// Heads for predicting step `step` (1-based) given token inputs.
    pub fn heads(&self, tape: &mut Tape, scene: Var, traj_inputs: Mat, step: usize) -> Result<HeadVars> {
        if step == 0 || step > self.config.horizon {
            return Err(Error::Contract(format!("step {step} outside 1..={}", self.config.horizon)));
        }
        let l = &self.layers;
        let p = &self.params;
        let x = tape.constant(traj_inputs);
        let x = dense(tape, p, l.traj_in, x)?;
        let xn = layer_norm(tape, p, l.ln_traj, x)?;
        let a = attention(tape, p, l.self_attn, xn, None)?;
        let x = tape.add(x, a)?;
        let ctx = tape.concat_rows(&[x, scene])?;
        let ctx = layer_norm(tape, p, l.ln_ctx, ctx)?;

        let q = embedding(tape, p, l.intention_emb)?;
        let steps = embedding(tape, p, l.step_emb)?;
        let s = tape.slice_rows(steps, step - 1, 1)?;
        let q = tape.add_row(q, s)?;
        let qn = layer_norm(tape, p, l.ln_query, q)?;
        let a = attention(tape, p, l.cross_attn, qn, Some(ctx))?;
        let q = tape.add(q, a)?;
        let qn = layer_norm(tape, p, l.ln_mlp, q)?;
        let h = dense(tape, p, l.mlp_in, qn)?;
        let h = dense(tape, p, l.mlp_out, h)?;
        let q = tape.add(q, h)?;
        let h = layer_norm(tape, p, l.ln_out, q)?;

        let mean = dense(tape, p, l.offset_head, h)?;
        let score = dense(tape, p, l.score_head, h)?;
        let score = tape.transpose(score);
        let log_prior = tape.log_softmax_rows(score);
        Ok(HeadVars { mean, log_prior })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            RL_ROLE,
            self.params.clone(),
            serde_json::to_value(&self.config).expect("config serializes"),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.role != RL_ROLE {
            return Err(Error::Format(format!("expected an '{RL_ROLE}' checkpoint, got '{}'", ck.role)));
        }
        let config: SamplerConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| Error::Format(format!("sampler config: {e}")))?;
        let model = SamplerModel::new(config, 0)?;
        if model.params.manifest() != ck.params.manifest() {
            return Err(Error::Format("sampler manifest does not match its config".into()));
        }
        model.with_params(ck.params.clone())
    }
}

/// Extends `prefix` to the reference length by repeating the remaining
/// reference steps from the last prefix point.
pub fn continue_with_reference(prefix: &[Waypoint], reference: &[Waypoint]) -> Vec<Waypoint> {
    let mut out = prefix.to_vec();
    for k in prefix.len()..reference.len() {
        let step = reference[k - 1].step_to(&reference[k]);
        let last = *out.last().expect("prefix is non-empty");
        out.push(last.offset(&step));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::encode_scene;
    use crate::sim::{generate_scenario, ScenarioFamily, SimConfig};

    fn small() -> SamplerConfig {
        SamplerConfig {
            d_model: 16,
            heads: 2,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig { stride: 3, ..small() }.validate().is_err());
        assert!(SamplerConfig { scene_tokens: 7, ..small() }.validate().is_err());
        assert!(SamplerConfig { heads: 3, ..small() }.validate().is_err());
        assert!(small().validate().is_ok());
    }

    #[test]
    fn zero_model_is_centered_and_uniform() {
        let m = SamplerModel::zeros(small()).unwrap();
        let scn = generate_scenario(ScenarioFamily::StraightFollow, 0, &SimConfig::default()).unwrap();
        let mut tape = Tape::new();
        let scene = m.scene_tokens(&mut tape, &encode_scene(&scn)).unwrap();
        let refp = scn.expert.points();
        let inputs = m.traj_inputs(&refp[..1], refp).unwrap();
        let h = m.heads(&mut tape, scene, inputs, 1).unwrap();
        assert!(tape.value(h.mean).data.iter().all(|&v| v == 0.0));
        let ln5 = -(5f64).ln();
        assert!(tape.value(h.log_prior).data.iter().all(|&v| (v - ln5).abs() < 1e-15));
    }

    #[test]
    fn continuation_reproduces_reference_from_root() {
        let refp = [
            Waypoint::new(0.0, 0.0, 0.0),
            Waypoint::new(1.0, 0.1, 0.05),
            Waypoint::new(2.0, 0.3, 0.1),
        ];
        let c = continue_with_reference(&refp[..1], &refp);
        for (a, b) in c.iter().zip(&refp) {
            assert!(a.distance(b) < 1e-12);
        }
        let shifted = continue_with_reference(&[Waypoint::new(0.0, 1.0, 0.0)], &refp);
        assert!((shifted[2].y - 1.3).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_role_check() {
        let m = SamplerModel::new(small(), 5).unwrap();
        let back = SamplerModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
        let mut ck = m.to_checkpoint();
        ck.role = "il".into();
        assert!(SamplerModel::from_checkpoint(&ck).is_err());
    }
}
