//! Minimal reverse-mode tape over feature fields.

use super::params::{Gradients, NetParams};
use super::{NetInput, Result};
use crate::ops::{conv_aggregate, conv_aggregate_adjoint, linear, linear_backward, FeatureField};
use crate::scalar::Real;

pub(crate) type Node = usize;

/// Branch taken by every rectifier and absolute value of a forward pass, in
/// evaluation order: `1`, `0` or `-1` per element.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KinkPattern(pub(crate) Vec<Vec<i8>>);

impl KinkPattern {
    /// Number of elements whose branch differs.
    pub fn differences(&self, other: &Self) -> usize {
        if self.0.len() != other.0.len() {
            return usize::MAX;
        }
        self.0.iter().zip(&other.0).map(|(a, b)| if a.len() != b.len() { usize::MAX / 2 } else { a.iter().zip(b).filter(|(x, y)| x != y).count() }).sum()
    }
}

pub(crate) enum Kinks<'a> {
    Free,
    Record(KinkPattern),
    /// Evaluate the smooth piece selected by a recorded pattern.
    Frozen(&'a KinkPattern, usize),
}

enum Op<T> {
    Leaf,
    /// `x W^T (+ b)`; `w`, `b` are tensor indices.
    Linear { x: Node, w: usize, b: Option<usize> },
    /// Linear map of the cached `4L` aggregate.
    Conv { x: Node, level: usize, agg: FeatureField<T>, w: usize },
    Norm { gamma: usize, beta: usize, xhat: FeatureField<T>, inv: Vec<T>, batch: bool, x: Node },
    Relu { x: Node },
    Add { a: Node, b: Node },
    Scale { x: Node, s: T },
    /// Resampler `r`, level `r` to `r + 1`.
    Down { x: Node, r: usize },
    /// Resampler `r`, level `r + 1` to `r`.
    Up { x: Node, r: usize },
    Concat { xs: Vec<Node> },
}

pub(crate) struct Tape<'a, T> {
    params: &'a NetParams<T>,
    input: &'a NetInput<T>,
    values: Vec<FeatureField<T>>,
    ops: Vec<Op<T>>,
    train: bool,
    pub kinks: Kinks<'a>,
    /// New running statistics `(tensor, values)` produced in train mode.
    pub running: Vec<(usize, Vec<T>)>,
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(params: &'a NetParams<T>, input: &'a NetInput<T>, train: bool) -> Self {
        Self { params, input, values: Vec::new(), ops: Vec::new(), train, kinks: Kinks::Free, running: Vec::new() }
    }

    fn push(&mut self, v: FeatureField<T>, op: Op<T>) -> Node {
        self.values.push(v);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn value(&self, n: Node) -> &FeatureField<T> {
        &self.values[n]
    }

    fn data(&self, t: usize) -> &'a [T] {
        &self.params.tensors[t].data
    }

    pub fn leaf(&mut self, v: FeatureField<T>) -> Node {
        self.push(v, Op::Leaf)
    }

    pub fn linear(&mut self, x: Node, w: usize, b: Option<usize>, out: usize) -> Result<Node> {
        let y = linear(&self.values[x], self.data(w), b.map(|b| self.data(b)), out)?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    /// Records `fresh()` or returns the frozen branch of the next kink op.
    fn branch(kinks: &mut Kinks<'a>, fresh: impl FnOnce() -> Vec<i8>) -> Option<&'a [i8]> {
        match kinks {
            Kinks::Free => None,
            Kinks::Record(p) => {
                p.0.push(fresh());
                None
            }
            Kinks::Frozen(p, k) => {
                let p: &'a KinkPattern = p;
                *k += 1;
                Some(p.0.get(*k - 1).map_or(&[][..], |v| v.as_slice()))
            }
        }
    }

    pub fn conv(&mut self, x: Node, level: usize, w: usize, out: usize) -> Result<Node> {
        let nbrs = &self.input.neighbors[level];
        let xv = &self.values[x];
        let signs = Self::branch(&mut self.kinks, || conv_signs(xv, nbrs));
        let agg = match signs {
            Some(s) => frozen_aggregate(&self.values[x], nbrs, s)?,
            None => conv_aggregate(&self.values[x], nbrs)?,
        };
        let y = linear(&agg, self.data(w), None, out)?;
        Ok(self.push(y, Op::Conv { x, level, agg, w }))
    }

    /// Batch normalization; in train mode also records running statistics
    /// `(1 - m) old + m batch` with the unbiased batch variance.
    pub fn norm(&mut self, x: Node, [gamma, beta, rmean, rvar]: [usize; 4], eps: T, momentum: T) -> Node {
        let xv = &self.values[x];
        let (mean, inv) = if self.train {
            let (mean, var) = crate::ops::channel_stats(xv);
            let n = T::from_usize_lossy(xv.rows);
            let unbias = if xv.rows > 1 { n / (n - T::one()) } else { T::one() };
            let keep = T::one() - momentum;
            let rm = self.data(rmean).iter().zip(&mean).map(|(o, b)| keep * *o + momentum * *b).collect();
            let rv = self.data(rvar).iter().zip(&var).map(|(o, b)| keep * *o + momentum * *b * unbias).collect();
            self.running.push((rmean, rm));
            self.running.push((rvar, rv));
            let inv = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
            (mean, inv)
        } else {
            let inv: Vec<T> = self.data(rvar).iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
            (self.data(rmean).to_vec(), inv)
        };
        let c = xv.channels;
        let ones = vec![T::one(); c];
        let zeros = vec![T::zero(); c];
        let xhat = crate::ops::normalize_with(xv, &mean, &inv, &ones, &zeros);
        let y = crate::ops::normalize_with(&xhat, &zeros, &ones, self.data(gamma), self.data(beta));
        let batch = self.train;
        self.push(y, Op::Norm { gamma, beta, xhat, inv, batch, x })
    }

    pub fn relu(&mut self, x: Node) -> Node {
        let xv = &self.values[x];
        let mask = Self::branch(&mut self.kinks, || xv.data.iter().map(|v| i8::from(*v > T::zero())).collect());
        let y = match mask {
            Some(m) if m.len() == self.values[x].data.len() => {
                let mut y = self.values[x].clone();
                for (v, k) in y.data.iter_mut().zip(m) {
                    if *k == 0 {
                        *v = T::zero();
                    }
                }
                y
            }
            _ => crate::ops::relu(&self.values[x]),
        };
        self.push(y, Op::Relu { x })
    }

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        let (va, vb) = (&self.values[a], &self.values[b]);
        if va.rows != vb.rows || va.channels != vb.channels {
            return Err(super::NetError::ShapeMismatch(format!("adding {}x{} to {}x{}", vb.rows, vb.channels, va.rows, va.channels)));
        }
        let mut y = va.clone();
        for (p, q) in y.data.iter_mut().zip(&vb.data) {
            *p += *q;
        }
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Node, s: T) -> Node {
        let mut y = self.values[x].clone();
        for v in y.data.iter_mut() {
            *v *= s;
        }
        self.push(y, Op::Scale { x, s })
    }

    pub fn down(&mut self, x: Node, r: usize) -> Result<Node> {
        let y = self.input.resamplers[r].downsample(&self.values[x], r + 1)?;
        Ok(self.push(y, Op::Down { x, r }))
    }

    pub fn up(&mut self, x: Node, r: usize) -> Result<Node> {
        let y = self.input.resamplers[r].upsample_barycentric(&self.values[x], r)?;
        Ok(self.push(y, Op::Up { x, r }))
    }

    pub fn concat(&mut self, xs: Vec<Node>) -> Result<Node> {
        let rows = self.values[xs[0]].rows;
        if xs.iter().any(|&x| self.values[x].rows != rows) {
            return Err(super::NetError::ShapeMismatch("concatenating fields with different face counts".into()));
        }
        let width: usize = xs.iter().map(|&x| self.values[x].channels).sum();
        let mut y = FeatureField::zeros(self.values[xs[0]].level, rows, width);
        for i in 0..rows {
            let mut off = 0;
            for &x in &xs {
                let v = &self.values[x];
                y.data[i * width + off..i * width + off + v.channels].copy_from_slice(v.row(i));
                off += v.channels;
            }
        }
        Ok(self.push(y, Op::Concat { xs }))
    }

    /// Propagates `seed` from node `out` back to every parameter.
    pub fn backward(&self, out: Node, seed: FeatureField<T>) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros_like(self.params);
        let mut g: Vec<Option<FeatureField<T>>> = (0..self.values.len()).map(|_| None).collect();
        g[out] = Some(seed);
        for n in (0..=out).rev() {
            let Some(dy) = g[n].take() else { continue };
            match &self.ops[n] {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (mut dw, mut db) = (std::mem::take(&mut grads.0[*w]), b.map(|b| std::mem::take(&mut grads.0[b])));
                    let dx = linear_backward(&self.values[*x], self.data(*w), &dy, &mut dw, db.as_deref_mut());
                    grads.0[*w] = dw;
                    if let (Some(b), Some(db)) = (b, db) {
                        grads.0[*b] = db;
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::Conv { x, level, agg, w } => {
                    let mut dw = std::mem::take(&mut grads.0[*w]);
                    let dagg = linear_backward(agg, self.data(*w), &dy, &mut dw, None);
                    grads.0[*w] = dw;
                    let dx = conv_aggregate_adjoint(&self.values[*x], &self.input.neighbors[*level], &dagg);
                    accumulate(&mut g, *x, dx);
                }
                Op::Norm { gamma, beta, xhat, inv, batch, x } => {
                    let c = dy.channels;
                    let rows = dy.rows;
                    let mut sum_dy = vec![T::zero(); c];
                    let mut sum_dyx = vec![T::zero(); c];
                    for i in 0..rows {
                        for ch in 0..c {
                            sum_dy[ch] += dy.data[i * c + ch];
                            sum_dyx[ch] += dy.data[i * c + ch] * xhat.data[i * c + ch];
                        }
                    }
                    for ch in 0..c {
                        grads.0[*gamma][ch] += sum_dyx[ch];
                        grads.0[*beta][ch] += sum_dy[ch];
                    }
                    let gm = self.data(*gamma);
                    let mut dx = FeatureField::zeros(dy.level, rows, c);
                    let n = T::from_usize_lossy(rows);
                    for i in 0..rows {
                        for ch in 0..c {
                            let k = i * c + ch;
                            dx.data[k] = if *batch {
                                gm[ch] * inv[ch] / n * (n * dy.data[k] - sum_dy[ch] - xhat.data[k] * sum_dyx[ch])
                            } else {
                                gm[ch] * inv[ch] * dy.data[k]
                            };
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::Relu { x } => {
                    let mut dx = dy;
                    for (d, v) in dx.data.iter_mut().zip(&self.values[n].data) {
                        if !(*v > T::zero()) {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut g, *b, dy.clone());
                    accumulate(&mut g, *a, dy);
                }
                Op::Scale { x, s } => {
                    let mut dx = dy;
                    for v in dx.data.iter_mut() {
                        *v *= *s;
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::Down { x, r } => {
                    let dx = self.input.resamplers[*r].downsample_adjoint(&dy, *r)?;
                    accumulate(&mut g, *x, dx);
                }
                Op::Up { x, r } => {
                    let dx = self.input.resamplers[*r].upsample_barycentric_adjoint(&dy, r + 1)?;
                    accumulate(&mut g, *x, dx);
                }
                Op::Concat { xs } => {
                    let width = dy.channels;
                    let mut off = 0;
                    for &x in xs {
                        let c = self.values[x].channels;
                        let mut dx = FeatureField::zeros(self.values[x].level, dy.rows, c);
                        for i in 0..dy.rows {
                            dx.data[i * c..(i + 1) * c].copy_from_slice(&dy.data[i * width + off..i * width + off + c]);
                        }
                        off += c;
                        accumulate(&mut g, x, dx);
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn sign<T: Real>(x: T) -> i8 {
    if x > T::zero() {
        1
    } else if x < T::zero() {
        -1
    } else {
        0
    }
}

/// Per face and channel the signs of `y1 - y0, y2 - y1, y0 - y2, x - y0,
/// x - y1, x - y2`.
fn conv_signs<T: Real>(f: &FeatureField<T>, nbrs: &crate::ops::FaceNeighbors) -> Vec<i8> {
    let l = f.channels;
    let mut out = Vec::with_capacity(f.rows * l * 6);
    for (i, nb) in nbrs.0.iter().enumerate() {
        for ch in 0..l {
            let x = f.get(i, ch);
            let y = nb.map(|j| f.get(j, ch));
            out.extend([sign(y[1] - y[0]), sign(y[2] - y[1]), sign(y[0] - y[2]), sign(x - y[0]), sign(x - y[1]), sign(x - y[2])]);
        }
    }
    out
}

/// The aggregate with each `|d|` replaced by `s d` for the frozen sign `s`.
fn frozen_aggregate<T: Real>(f: &FeatureField<T>, nbrs: &crate::ops::FaceNeighbors, signs: &[i8]) -> Result<FeatureField<T>> {
    let l = f.channels;
    if signs.len() != f.rows * l * 6 || nbrs.len() != f.rows {
        return Err(super::NetError::ShapeMismatch("kink pattern does not match the network".into()));
    }
    let s = |k: usize| T::from_i8(signs[k]).expect("small integer");
    let mut out = FeatureField::zeros(f.level, f.rows, 4 * l);
    for (i, nb) in nbrs.0.iter().enumerate() {
        for ch in 0..l {
            let b = (i * l + ch) * 6;
            let x = f.get(i, ch);
            let y = nb.map(|j| f.get(j, ch));
            let o = out.row_mut(i);
            o[ch] = x;
            o[l + ch] = y[0] + y[1] + y[2];
            o[2 * l + ch] = s(b) * (y[1] - y[0]) + s(b + 1) * (y[2] - y[1]) + s(b + 2) * (y[0] - y[2]);
            o[3 * l + ch] = s(b + 3) * (x - y[0]) + s(b + 4) * (x - y[1]) + s(b + 5) * (x - y[2]);
        }
    }
    Ok(out)
}

fn accumulate<T: Real>(g: &mut [Option<FeatureField<T>>], n: Node, d: FeatureField<T>) {
    match &mut g[n] {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&d.data) {
                *a += *b;
            }
        }
        slot => *slot = Some(d),
    }
}
