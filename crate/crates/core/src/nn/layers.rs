//! Layer evaluation on a [`Tape`], and a plain sequential network built from a
//! manifest.

use super::mat::Mat;
use super::params::{Activation, Gradients, LayerId, LayerKind, ParameterSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

fn expect_kind(params: &ParameterSet, layer: LayerId, kinds: &[LayerKind]) -> Result<()> {
    let spec = &params.manifest().layers[layer];
    if !kinds.contains(&spec.kind) {
        return Err(Error::Contract(format!("layer '{}' is {:?}, expected {kinds:?}", spec.name, spec.kind)));
    }
    Ok(())
}

pub fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::None => x,
        Activation::Gelu => tape.gelu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// `act(x W + b)` over the rows of `x`.
pub fn dense(tape: &mut Tape, params: &ParameterSet, layer: LayerId, x: Var) -> Result<Var> {
    expect_kind(params, layer, &[LayerKind::Dense])?;
    let w = tape.param(params, layer, 0);
    let b = tape.param(params, layer, 1);
    let h = tape.matmul(x, w)?;
    let h = tape.add_row(h, b)?;
    Ok(activate(tape, h, params.manifest().layers[layer].activation))
}

pub fn layer_norm(tape: &mut Tape, params: &ParameterSet, layer: LayerId, x: Var) -> Result<Var> {
    expect_kind(params, layer, &[LayerKind::LayerNorm])?;
    let gain = tape.param(params, layer, 0);
    let bias = tape.param(params, layer, 1);
    let z = tape.standardize(x, LN_EPS);
    let z = tape.mul_row(z, gain)?;
    tape.add_row(z, bias)
}

/// The whole embedding table as a leaf.
pub fn embedding(tape: &mut Tape, params: &ParameterSet, layer: LayerId) -> Result<Var> {
    expect_kind(params, layer, &[LayerKind::Embedding])?;
    Ok(tape.param(params, layer, 0))
}

/// Multi-head scaled dot-product attention of the rows of `x` over `ctx`
/// (over `x` itself when `ctx` is `None`).
pub fn attention(tape: &mut Tape, params: &ParameterSet, layer: LayerId, x: Var, ctx: Option<Var>) -> Result<Var> {
    expect_kind(params, layer, &[LayerKind::SelfAttention, LayerKind::CrossAttention])?;
    let spec = &params.manifest().layers[layer];
    let heads = spec.heads.max(1);
    let d = spec.shapes[0][1];
    let dh = d / heads;
    let ctx = ctx.unwrap_or(x);
    let proj = |tape: &mut Tape, input: Var, t: usize| -> Result<Var> {
        let w = tape.param(params, layer, t);
        let b = tape.param(params, layer, t + 1);
        let h = tape.matmul(input, w)?;
        tape.add_row(h, b)
    };
    let q = proj(tape, x, 0)?;
    let k = proj(tape, ctx, 2)?;
    let v = proj(tape, ctx, 4)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = tape.matmul_t(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let p = tape.softmax_rows(scores);
        outs.push(tape.matmul(p, vh)?);
    }
    let o = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let w = tape.param(params, layer, 6);
    let b = tape.param(params, layer, 7);
    let o = tape.matmul(o, w)?;
    tape.add_row(o, b)
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub tape: Tape,
    pub input: Var,
    pub output: Var,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn new(tape: Tape, input: Var, output: Var, params: &ParameterSet) -> Self {
        ForwardCache {
            tape,
            input,
            output,
            fingerprint: params.fingerprint(),
        }
    }

    pub fn output(&self) -> &Mat {
        self.tape.value(self.output)
    }

    /// Parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, params: &ParameterSet, output_grad: &Mat) -> Result<(Gradients, Mat)> {
        if params.fingerprint() != self.fingerprint {
            return Err(Error::Contract("stale forward cache: parameters changed since the forward pass".into()));
        }
        let bw = self.tape.backward(self.output, output_grad, params.len())?;
        let input_grad = bw.wrt(self.input).cloned().unwrap_or_else(|| {
            let (r, c) = self.tape.value(self.input).shape();
            Mat::zeros(r, c)
        });
        Ok((bw.params, input_grad))
    }
}

/// Runs the manifest as a plain stack over the rows of `input`. Attention
/// layers treat rows as tokens; cross-attention attends to the original input.
pub fn forward(params: &ParameterSet, input: &Mat) -> Result<(Mat, ForwardCache)> {
    let mut tape = Tape::new();
    let x0 = tape.input(input.clone());
    let mut x = x0;
    for (id, spec) in params.manifest().layers.iter().enumerate() {
        let width = tape.value(x).cols;
        let expected = spec.shapes[0][0];
        let expected = if spec.kind == LayerKind::LayerNorm { spec.shapes[0][1] } else { expected };
        if spec.kind != LayerKind::Embedding && width != expected {
            return Err(Error::shape(&format!("input to layer '{}'", spec.name), expected, width));
        }
        x = match spec.kind {
            LayerKind::Dense => dense(&mut tape, params, id, x)?,
            LayerKind::LayerNorm => layer_norm(&mut tape, params, id, x)?,
            LayerKind::SelfAttention => attention(&mut tape, params, id, x, None)?,
            LayerKind::CrossAttention => attention(&mut tape, params, id, x, Some(x0))?,
            LayerKind::Embedding => {
                return Err(Error::Contract("embedding layers cannot appear in a sequential stack".into()))
            }
        };
    }
    let cache = ForwardCache::new(tape, x0, x, params);
    Ok((cache.output().clone(), cache))
}

/// Gradients of `sum(output * output_grad)`.
pub fn backward(params: &ParameterSet, cache: &ForwardCache, output_grad: &Mat) -> Result<(Gradients, Mat)> {
    cache.backward(params, output_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Manifest;
    use crate::rng::seeded;

    #[test]
    fn zero_parameters_map_to_zero() {
        let mut m = Manifest::new();
        m.dense("a", 3, 4, Activation::Gelu);
        m.self_attention("sa", 4, 2);
        m.layer_norm("ln", 4);
        m.dense("b", 4, 2, Activation::None);
        let p = ParameterSet::zeros(m);
        let x = Mat::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.1, -0.7]).unwrap();
        let (y, _) = forward(&p, &x).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_layer() {
        let mut m = Manifest::new();
        let id = m.dense("id", 3, 3, Activation::None);
        let mut p = ParameterSet::zeros(m);
        let mut eye = Mat::zeros(3, 3);
        for i in 0..3 {
            eye.data[i * 3 + i] = 1.0;
        }
        p.set_tensor(id, 0, &eye).unwrap();
        let x = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0]).unwrap();
        let (y, cache) = forward(&p, &x).unwrap();
        assert_eq!(y, x);
        // d sum(y) / dx = 1
        let (_, gx) = backward(&p, &cache, &Mat::filled(2, 3, 1.0)).unwrap();
        assert!(gx.data.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn single_token_attention_returns_value_projection() {
        let mut m = Manifest::new();
        let sa = m.self_attention("sa", 4, 2);
        let p = ParameterSet::init(m, &mut seeded(3));
        let x = Mat::from_vec(1, 4, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let (y, _) = forward(&p, &x).unwrap();
        // softmax over one key is 1, so out = (x Wv + bv) Wo + bo
        let v = x.matmul(&p.tensor(sa, 4)).zip_map(&p.tensor(sa, 5), |a, b| a + b);
        let want = v.matmul(&p.tensor(sa, 6)).zip_map(&p.tensor(sa, 7), |a, b| a + b);
        for (a, b) in y.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = Manifest::new();
        m.dense("a", 2, 2, Activation::Tanh);
        let mut p = ParameterSet::init(m, &mut seeded(1));
        let x = Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let (_, cache) = forward(&p, &x).unwrap();
        p.data_mut()[0] += 1.0;
        assert!(matches!(backward(&p, &cache, &Mat::filled(1, 2, 1.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn input_width_mismatch_is_a_shape_error() {
        let mut m = Manifest::new();
        m.dense("a", 3, 2, Activation::None);
        let p = ParameterSet::zeros(m);
        let x = Mat::zeros(1, 4);
        assert!(matches!(forward(&p, &x), Err(Error::Shape { .. })));
    }
}
