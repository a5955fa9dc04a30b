use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    SelfAttention,
    CrossAttention,
    LayerNorm,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Gelu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// `[rows, cols]` of every tensor, in storage order.
    pub shapes: Vec<[usize; 2]>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub heads: usize,
}

impl LayerSpec {
    pub fn n_params(&self) -> usize {
        self.shapes.iter().map(|s| s[0] * s[1]).sum()
    }
}

pub type LayerId = usize;

/// Ordered layer list; parameters are stored back to back in this order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub layers: Vec<LayerSpec>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    fn push(&mut self, spec: LayerSpec) -> LayerId {
        self.layers.push(spec);
        self.layers.len() - 1
    }

    /// Weights `in x out` and bias `1 x out`.
    pub fn dense(&mut self, name: &str, input: usize, output: usize, activation: Activation) -> LayerId {
        self.push(LayerSpec {
            name: name.into(),
            kind: LayerKind::Dense,
            shapes: vec![[input, output], [1, output]],
            activation,
            heads: 0,
        })
    }

    /// `Wq, bq, Wk, bk, Wv, bv, Wo, bo` over model width `d`.
    pub fn self_attention(&mut self, name: &str, d: usize, heads: usize) -> LayerId {
        self.push(LayerSpec {
            name: name.into(),
            kind: LayerKind::SelfAttention,
            shapes: attention_shapes(d, d),
            activation: Activation::None,
            heads,
        })
    }

    /// Queries of width `d` attending to a context of width `d_ctx`.
    pub fn cross_attention(&mut self, name: &str, d: usize, d_ctx: usize, heads: usize) -> LayerId {
        self.push(LayerSpec {
            name: name.into(),
            kind: LayerKind::CrossAttention,
            shapes: attention_shapes(d, d_ctx),
            activation: Activation::None,
            heads,
        })
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerId {
        self.push(LayerSpec {
            name: name.into(),
            kind: LayerKind::LayerNorm,
            shapes: vec![[1, d], [1, d]],
            activation: Activation::None,
            heads: 0,
        })
    }

    pub fn embedding(&mut self, name: &str, n: usize, d: usize) -> LayerId {
        self.push(LayerSpec {
            name: name.into(),
            kind: LayerKind::Embedding,
            shapes: vec![[n, d]],
            activation: Activation::None,
            heads: 0,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(LayerSpec::n_params).sum()
    }

    /// Flat offset of tensor `t` of `layer`.
    pub fn offset(&self, layer: LayerId, t: usize) -> usize {
        let before: usize = self.layers[..layer].iter().map(LayerSpec::n_params).sum();
        let spec = &self.layers[layer];
        before + spec.shapes[..t].iter().map(|s| s[0] * s[1]).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            if l.shapes.iter().any(|s| s[0] == 0 || s[1] == 0) {
                return Err(Error::Config(format!("layer '{}' has an empty tensor", l.name)));
            }
            let attn = matches!(l.kind, LayerKind::SelfAttention | LayerKind::CrossAttention);
            if attn && (l.heads == 0 || l.shapes[0][1] % l.heads != 0) {
                return Err(Error::Config(format!(
                    "layer '{}': width {} not divisible into {} heads",
                    l.name, l.shapes[0][1], l.heads
                )));
            }
        }
        Ok(())
    }
}

fn attention_shapes(d: usize, d_ctx: usize) -> Vec<[usize; 2]> {
    vec![[d, d], [1, d], [d_ctx, d], [1, d], [d_ctx, d], [1, d], [d, d], [1, d]]
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Flat parameter vector plus its manifest. Every mutation stamps a new
/// version so cached forward passes can detect staleness.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    manifest: Manifest,
    data: Vec<f64>,
    version: u64,
}

impl PartialEq for ParameterSet {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest && self.data == other.data
    }
}

impl ParameterSet {
    pub fn zeros(manifest: Manifest) -> Self {
        let n = manifest.n_params();
        ParameterSet {
            manifest,
            data: vec![0.0; n],
            version: fresh_version(),
        }
    }

    /// Scaled-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(manifest: Manifest, rng: &mut Rng) -> Self {
        let mut p = ParameterSet::zeros(manifest);
        for (li, spec) in p.manifest.layers.clone().iter().enumerate() {
            for (ti, shape) in spec.shapes.iter().enumerate() {
                let off = p.manifest.offset(li, ti);
                let n = shape[0] * shape[1];
                let slot = &mut p.data[off..off + n];
                match (spec.kind, ti) {
                    (LayerKind::LayerNorm, 0) => slot.fill(1.0),
                    (LayerKind::LayerNorm, _) => {}
                    (LayerKind::Embedding, _) => {
                        for v in slot.iter_mut() {
                            *v = rng.random_range(-0.5..0.5);
                        }
                    }
                    (_, t) if t % 2 == 0 => {
                        let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                        for v in slot.iter_mut() {
                            *v = rng.random_range(-bound..bound);
                        }
                    }
                    _ => {}
                }
            }
        }
        p
    }

    pub fn from_vec(manifest: Manifest, data: Vec<f64>) -> Result<Self> {
        if data.len() != manifest.n_params() {
            return Err(Error::LengthMismatch {
                expected: manifest.n_params(),
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(ParameterSet {
            manifest,
            data,
            version: fresh_version(),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Changes whenever the values may have changed.
    pub fn fingerprint(&self) -> u64 {
        self.version
    }

    pub fn tensor(&self, layer: LayerId, t: usize) -> Mat {
        let [r, c] = self.manifest.layers[layer].shapes[t];
        let off = self.manifest.offset(layer, t);
        Mat {
            rows: r,
            cols: c,
            data: self.data[off..off + r * c].to_vec(),
        }
    }

    pub fn set_tensor(&mut self, layer: LayerId, t: usize, value: &Mat) -> Result<()> {
        let [r, c] = self.manifest.layers[layer].shapes[t];
        if value.shape() != (r, c) {
            return Err(Error::shape(
                &self.manifest.layers[layer].name,
                format!("{r}x{c}"),
                format!("{}x{}", value.rows, value.cols),
            ));
        }
        let off = self.manifest.offset(layer, t);
        self.data_mut()[off..off + r * c].copy_from_slice(&value.data);
        Ok(())
    }

    pub fn layer_id(&self, name: &str) -> Option<LayerId> {
        self.manifest.layers.iter().position(|l| l.name == name)
    }
}

/// Gradient aligned with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients { data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }

    /// Rescales so the L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n.is_finite() {
            self.scale(max_norm / n);
        }
    }
}
