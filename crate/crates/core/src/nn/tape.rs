//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameter leaves
//! remember their flat offset into the [`ParameterSet`] they were read from, so
//! a single backward sweep yields both parameter gradients and gradients with
//! respect to any input leaf.

use super::mat::Mat;
use super::params::{Gradients, LayerId, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param { offset: usize },
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `(r x c) + (1 x c)` broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// `(r x c) * (1 x c)` broadcast over rows.
    MulRow(Var, Var),
    /// `(r x c) * (r x 1)` broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Abs(Var),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    /// Row-wise standardization without affine terms.
    Standardize(Var, f64),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sum(Var),
    /// Elementwise `min(r A, clip(r, 1-eps, 1+eps) A)`.
    Surrogate { ratio: Var, adv: Vec<f64>, eps: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf whose gradient is reported by [`Backward::wrt`].
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Tensor `t` of `layer` as a differentiable leaf.
    pub fn param(&mut self, params: &ParameterSet, layer: LayerId, t: usize) -> Var {
        let offset = params.manifest().offset(layer, t);
        self.push(params.tensor(layer, t), Op::Param { offset }, true)
    }

    fn check(&self, ctx: &str, found: (usize, usize), expected: (usize, usize)) -> Result<()> {
        if found != expected {
            return Err(Error::shape(
                ctx,
                format!("{}x{}", expected.0, expected.1),
                format!("{}x{}", found.0, found.1),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::shape("matmul inner dimension", sa.1, sb.0));
        }
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(Error::shape("matmul_t inner dimension", sa.1, sb.1));
        }
        let v = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMulT(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("add", self.shape(b), self.shape(a))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("sub", self.shape(b), self.shape(a))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        self.check("add_row", self.shape(b), (1, c))?;
        let mut v = self.value(a).clone();
        let bias = self.value(b).data.clone();
        for i in 0..r {
            for (x, y) in v.row_mut(i).iter_mut().zip(&bias) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::AddRow(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check("mul", self.shape(b), self.shape(a))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        self.check("mul_row", self.shape(b), (1, c))?;
        let mut v = self.value(a).clone();
        let g = self.value(b).data.clone();
        for i in 0..r {
            for (x, y) in v.row_mut(i).iter_mut().zip(&g) {
                *x *= y;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MulRow(a, b), ng))
    }

    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, _) = self.shape(a);
        self.check("mul_col", self.shape(b), (r, 1))?;
        let mut v = self.value(a).clone();
        for i in 0..r {
            let s = self.value(b).data[i];
            for x in v.row_mut(i) {
                *x *= s;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MulCol(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(v, op, ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// `max(a, floor)`; the gradient is cut where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            log_softmax_row(x.row(i), v.row_mut(i));
        }
        let v = v.map(f64::exp);
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            log_softmax_row(x.row(i), v.row_mut(i));
        }
        let ng = self.ng(a);
        self.push(v, Op::LogSoftmaxRows(a), ng)
    }

    /// `(x - mean) / sqrt(var + eps)` per row.
    pub fn standardize(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let n = x.cols as f64;
        for i in 0..x.rows {
            let row = v.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for r in row.iter_mut() {
                *r = (*r - mean) * inv;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::Standardize(a, eps), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            self.check("concat_rows", (self.shape(p).0, self.shape(p).1), (self.shape(p).0, cols))?;
            data.extend_from_slice(&self.value(p).data);
            rows += self.shape(p).0;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Mat { rows, cols, data }, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            self.check("concat_cols", self.shape(p), (rows, self.shape(p).1))?;
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                v.row_mut(i)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(Error::shape("slice_rows", r, start + len));
        }
        let data = self.value(a).data[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(Mat { rows: len, cols: c, data }, Op::SliceRows(a, start), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::shape("slice_cols", c, start + len));
        }
        let x = self.value(a);
        let mut v = Mat::zeros(r, len);
        for i in 0..r {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(v, Op::SliceCols(a, start), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Clipped policy-gradient surrogate, elementwise over `ratio`.
    pub fn surrogate(&mut self, ratio: Var, adv: &[f64], eps: f64) -> Result<Var> {
        let r = self.value(ratio);
        if r.len() != adv.len() {
            return Err(Error::LengthMismatch {
                expected: r.len(),
                found: adv.len(),
            });
        }
        let v = Mat {
            rows: r.rows,
            cols: r.cols,
            data: r
                .data
                .iter()
                .zip(adv)
                .map(|(&x, &a)| clipped_surrogate_value(x, a, eps))
                .collect(),
        };
        let ng = self.ng(ratio);
        Ok(self.push(
            v,
            Op::Surrogate {
                ratio,
                adv: adv.to_vec(),
                eps,
            },
            ng,
        ))
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape).
    pub fn backward(&self, output: Var, seed: &Mat, n_params: usize) -> Result<Backward> {
        if seed.shape() != self.shape(output) {
            return Err(Error::shape(
                "output gradient",
                format!("{:?}", self.shape(output)),
                format!("{:?}", seed.shape()),
            ));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());
        let mut params = Gradients::zeros(n_params);

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Input => {
                    grads[idx] = Some(g);
                }
                Op::Param { offset } => {
                    if offset + g.len() > n_params {
                        return Err(Error::Contract("parameter leaf outside the gradient buffer".into()));
                    }
                    for (p, gv) in params.data[*offset..offset + g.len()].iter_mut().zip(&g.data) {
                        *p += gv;
                    }
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.matmul_t(val(*b)));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, val(*a).t_matmul(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    // out = a b^T: da = g b, db = g^T a
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.matmul(val(*b)));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.t_matmul(val(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.map(|x| -x));
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.ng(*b) {
                        let mut gb = Mat::zeros(1, g.cols);
                        for i in 0..g.rows {
                            for (s, x) in gb.data.iter_mut().zip(g.row(i)) {
                                *s += x;
                            }
                        }
                        acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.zip_map(val(*b), |x, y| x * y));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.zip_map(val(*a), |x, y| x * y));
                    }
                }
                Op::MulRow(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if self.ng(*b) {
                        let mut gb = Mat::zeros(1, g.cols);
                        for i in 0..g.rows {
                            for ((s, x), y) in gb.data.iter_mut().zip(g.row(i)).zip(av.row(i)) {
                                *s += x * y;
                            }
                        }
                        acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        let mut ga = g.clone();
                        for i in 0..ga.rows {
                            for (x, y) in ga.row_mut(i).iter_mut().zip(&bv.data) {
                                *x *= y;
                            }
                        }
                        acc(&mut grads, *a, ga);
                    }
                }
                Op::MulCol(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if self.ng(*b) {
                        let gb = Mat {
                            rows: g.rows,
                            cols: 1,
                            data: (0..g.rows)
                                .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                                .collect(),
                        };
                        acc(&mut grads, *b, gb);
                    }
                    if self.ng(*a) {
                        let mut ga = g.clone();
                        for i in 0..ga.rows {
                            let s = bv.data[i];
                            for x in ga.row_mut(i) {
                                *x *= s;
                            }
                        }
                        acc(&mut grads, *a, ga);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Gelu(a) => acc(&mut grads, *a, g.zip_map(val(*a), |x, y| x * gelu_grad(y))),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(&node.value, |x, t| x * (1.0 - t * t))),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(&node.value, |x, s| x * s * (1.0 - s))),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(&node.value, |x, e| x * e)),
                Op::Abs(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(val(*a), |x, y| {
                        if y > 0.0 {
                            x
                        } else if y < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    }),
                ),
                Op::ClampMin(a, floor) => {
                    acc(&mut grads, *a, g.zip_map(val(*a), |x, y| if y > *floor { x } else { 0.0 }))
                }
                Op::SoftmaxRows(a) => {
                    let p = &node.value;
                    let mut ga = Mat::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let dot: f64 = g.row(i).iter().zip(p.row(i)).map(|(x, y)| x * y).sum();
                        for ((o, x), y) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(p.row(i)) {
                            *o = y * (x - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let lp = &node.value;
                    let mut ga = Mat::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let total: f64 = g.row(i).iter().sum();
                        for ((o, x), l) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(lp.row(i)) {
                            *o = x - l.exp() * total;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Standardize(a, eps) => {
                    let x = val(*a);
                    let y = &node.value;
                    let n = x.cols as f64;
                    let mut ga = Mat::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let row = x.row(i);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gm = g.row(i).iter().sum::<f64>() / n;
                        let gy = g.row(i).iter().zip(y.row(i)).map(|(p, q)| p * q).sum::<f64>() / n;
                        for ((o, gv), yv) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                            *o = inv * (gv - gm - yv * gy);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        if self.ng(p) {
                            let data = g.data[r0 * c..(r0 + r) * c].to_vec();
                            acc(&mut grads, p, Mat { rows: r, cols: c, data });
                        }
                        r0 += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        if self.ng(p) {
                            let mut gp = Mat::zeros(r, c);
                            for i in 0..r {
                                gp.row_mut(i).copy_from_slice(&g.row(i)[c0..c0 + c]);
                            }
                            acc(&mut grads, p, gp);
                        }
                        c0 += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Mat::zeros(r, c);
                    ga.data[start * c..start * c + g.len()].copy_from_slice(&g.data);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Mat::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i)[*start..start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Mat::filled(r, c, g.data[0]));
                }
                Op::Surrogate { ratio, adv, eps } => {
                    let r = val(*ratio);
                    let ga = Mat {
                        rows: r.rows,
                        cols: r.cols,
                        data: r
                            .data
                            .iter()
                            .zip(adv)
                            .zip(&g.data)
                            .map(|((&x, &a), &gv)| gv * clipped_surrogate_slope(x, a, *eps))
                            .collect(),
                    };
                    acc(&mut grads, *ratio, ga);
                }
            }
        }
        Ok(Backward { grads, params })
    }
}

/// `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate_value(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Derivative of [`clipped_surrogate_value`] in `ratio`: `A` on the
/// unclipped branch, exactly zero once the clipped branch is selected.
pub fn clipped_surrogate_slope(ratio: f64, adv: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    if ratio * adv <= clipped * adv {
        adv
    } else {
        0.0
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Backward {
    grads: Vec<Option<Mat>>,
    pub params: Gradients,
}

impl Backward {
    /// Gradient reaching an input leaf; `None` when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
