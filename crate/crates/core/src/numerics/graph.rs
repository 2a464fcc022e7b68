//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes in creation order.
//! Because inputs always precede their consumers, a single reverse sweep over
//! the tape visits nodes in a valid topological order. A tape is used by one
//! thread for one forward/backward pass and then dropped.

use super::scalar::{gemm, Scalar, View};
use super::tensor::{numel, Tensor};
use crate::error::{bail, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    BroadcastTo(Var),
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, ta: bool, tb: bool },
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Silu { input: Var, sig: Vec<T> },
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Gather { table: Var, indices: Vec<usize> },
    GaussianSample { mu: Var, sigma: Var, noise: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every tracked node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => bail!(Shape, "cannot broadcast {:?} with {:?}", a, b),
        };
    }
    Ok(out)
}

/// Flat input index for each flat output index under right-aligned broadcasting.
/// A trailing-suffix broadcast (bias rows, scalars) reduces to a modulo.
enum Bcast {
    Same,
    Cycle(usize),
    Map(Vec<usize>),
}

impl Bcast {
    fn new(out: &[usize], input: &[usize]) -> Self {
        if out == input {
            return Bcast::Same;
        }
        let lead = input.iter().take_while(|&&d| d == 1).count();
        let core = &input[lead..];
        if core.len() <= out.len() && out[out.len() - core.len()..] == *core {
            return Bcast::Cycle(numel(core).max(1));
        }
        Bcast::Map(index_map(out, input))
    }

    #[inline]
    fn at(&self, k: usize) -> usize {
        match self {
            Bcast::Same => k,
            Bcast::Cycle(n) => k % n,
            Bcast::Map(m) => m[k],
        }
    }
}

fn index_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..input.len()).rev() {
        let oi = i + rank - input.len();
        strides[oi] = if input[i] == 1 { 0 } else { s };
        s *= input[i];
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut idx = 0usize;
    for _ in 0..total {
        map.push(idx);
        for d in (0..rank).rev() {
            counter[d] += 1;
            idx += strides[d];
            if counter[d] < out[d] {
                break;
            }
            idx -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let da = self.value(a).data();
        let db = self.value(b).data();
        let (shape, data) = if sa == sb {
            (sa, da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect())
        } else {
            let out = broadcast_shape(&sa, &sb)?;
            let ma = Bcast::new(&out, &sa);
            let mb = Bcast::new(&out, &sb);
            let data = match (&ma, &mb) {
                (Bcast::Same, Bcast::Cycle(n)) => da
                    .chunks(*n)
                    .flat_map(|c| c.iter().zip(db).map(|(&x, &y)| f(x, y)))
                    .collect(),
                (Bcast::Cycle(n), Bcast::Same) => db
                    .chunks(*n)
                    .flat_map(|c| da.iter().zip(c).map(|(&x, &y)| f(x, y)))
                    .collect(),
                _ => (0..numel(&out)).map(|k| f(da[ma.at(k)], db[mb.at(k)])).collect(),
            };
            (out, data)
        };
        Ok((Tensor::new(shape, data)?, self.rg(&[a, b])))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// Tile `a` over leading axes (right-aligned broadcasting) to `shape`.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if broadcast_shape(&sa, shape)? != shape {
            bail!(Shape, "cannot broadcast {:?} to {:?}", sa, shape);
        }
        let map = Bcast::new(shape, &sa);
        let da = self.value(a).data();
        let data = (0..numel(shape)).map(|k| da[map.at(k)]).collect();
        let t = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::BroadcastTo(a), rg))
    }

    /// `a[..., k] x b[k, n] -> [..., n]`: applies a weight matrix to the last axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            bail!(Shape, "matmul {:?} x {:?}", sa, sb);
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k.max(1);
        let mut out = vec![T::zero(); m * n];
        gemm(
            self.value(a).data(),
            View::row_major(m, k, 0),
            self.value(b).data(),
            View::row_major(k, n, 0),
            &mut out,
            View::row_major(m, n, 0),
            T::zero(),
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]`, optionally transposing
    /// the trailing two axes of either operand first.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            bail!(Shape, "bmm {:?} x {:?}", sa, sb);
        }
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            bail!(Shape, "bmm inner dims {:?} x {:?}", sa, sb);
        }
        let batch = sa[0];
        let mut out = vec![T::zero(); batch * m * n];
        let da = self.value(a).data();
        let db = self.value(b).data();
        for bi in 0..batch {
            let av = op_view(sa[1], sa[2], bi * sa[1] * sa[2], ta);
            let bv = op_view(sb[1], sb[2], bi * sb[1] * sb[2], tb);
            gemm(
                da,
                av,
                db,
                bv,
                &mut out,
                View::row_major(m, n, bi * m * n),
                T::zero(),
            );
        }
        let t = Tensor::new(vec![batch, m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Bmm { a, b, ta, tb }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Collapse all axes after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let rest = numel(&s[1..]);
        self.reshape(a, &[s[0], rest])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            bail!(Shape, "concat of zero tensors");
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            bail!(Shape, "concat axis {} for rank {}", axis, first.len());
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                bail!(Shape, "concat {:?} with {:?} on axis {}", first, s, axis);
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || start + len > sa[axis] {
            bail!(Shape, "slice {}..{} of axis {} in {:?}", start, start + len, axis, sa);
        }
        let (outer, n, inner) = split_at_axis(&sa, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = sa;
        shape[axis] = len;
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Slice { input: a, axis, start }, rg))
    }

    fn last_axis(&self, a: Var, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(a);
        let width = s.last().copied().unwrap_or(0);
        if width == 0 {
            bail!(Shape, "{} over empty axis in {:?}", what, s);
        }
        Ok((numel(s) / width, width))
    }

    /// Row-wise softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, w) = self.last_axis(a, "softmax")?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); rows * w];
        for r in 0..rows {
            let x = &src[r * w..(r + 1) * w];
            let mx = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s = 0.0;
            for (o, &v) in out[r * w..(r + 1) * w].iter_mut().zip(x) {
                let e = (v - mx).exp();
                s += e.f64();
                *o = e;
            }
            let inv = T::of(1.0 / s);
            for o in &mut out[r * w..(r + 1) * w] {
                *o *= inv;
            }
        }
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, w) = self.last_axis(a, "log_softmax")?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); rows * w];
        for r in 0..rows {
            let x = &src[r * w..(r + 1) * w];
            let mx = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let lse = mx + x.iter().map(|v| (v.f64() - mx).exp()).sum::<f64>().ln();
            for (o, v) in out[r * w..(r + 1) * w].iter_mut().zip(x) {
                *o = T::of(v.f64() - lse);
            }
        }
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::LogSoftmax(a), rg))
    }

    /// Per-token layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (rows, w) = self.last_axis(x, "layer_norm")?;
        if self.shape(gain) != [w] || self.shape(bias) != [w] {
            bail!(
                Shape,
                "layer_norm gain {:?} / bias {:?} for width {}",
                self.shape(gain),
                self.shape(bias),
                w
            );
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); rows * w];
        let mut xhat = vec![T::zero(); rows * w];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &src[r * w..(r + 1) * w];
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / w as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = T::of(rs);
            for j in 0..w {
                let h = (row[j].f64() - mean) * rs;
                xhat[r * w + j] = T::of(h);
                out[r * w + j] = T::of(h * g[j].f64() + b[j].f64());
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a).data();
        let sig: Vec<T> = x.iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
        let data = x.iter().zip(&sig).map(|(&v, &s)| v * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Silu { input: a, sig }, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v.f64()).sum::<f64>();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let s = d.iter().map(|v| v.f64()).sum::<f64>() / d.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(T::of(s)), Op::Mean(a), rg)
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let w = s.last().copied().unwrap_or(0).max(1);
        let data = self
            .value(a)
            .data()
            .chunks(w)
            .map(|c| T::of(c.iter().map(|v| v.f64()).sum::<f64>()))
            .collect();
        let mut shape = s;
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SumLast(a), rg))
    }

    /// Row lookup in a `[rows, width]` table.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            bail!(Shape, "gather table must be 2-D, got {:?}", s);
        }
        let w = s[1];
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= s[0] {
                bail!(Shape, "gather index {} out of {} rows", i, s[0]);
            }
            data.extend_from_slice(&src[i * w..(i + 1) * w]);
        }
        let t = Tensor::new(vec![indices.len(), w], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Reparameterized Gaussian draw `mu + sigma * noise`; `noise` is held fixed.
    pub fn gaussian_sample(&mut self, mu: Var, sigma: Var, noise: Tensor<T>) -> Result<Var> {
        if self.shape(mu) != self.shape(sigma) || self.shape(mu) != noise.shape() {
            bail!(
                Shape,
                "gaussian_sample mu {:?} sigma {:?} noise {:?}",
                self.shape(mu),
                self.shape(sigma),
                noise.shape()
            );
        }
        let m = self.value(mu).data();
        let s = self.value(sigma).data();
        let data = m
            .iter()
            .zip(s)
            .zip(noise.data())
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        let t = Tensor::new(self.shape(mu).to_vec(), data)?;
        let rg = self.rg(&[mu, sigma]);
        Ok(self.push(
            t,
            Op::GaussianSample {
                mu,
                sigma,
                noise: noise.into_data(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            bail!(Shape, "backward needs a scalar loss, got {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                self.reduce_into(grads, *a, out_shape, g.iter().copied());
                self.reduce_into(grads, *b, out_shape, g.iter().map(|&x| x * sign));
            }
            Op::Mul(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let da = self.value(*a).data();
                let db = self.value(*b).data();
                if sa == sb {
                    if let Some(ga) = self.buf(grads, *a) {
                        for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(db) {
                            *o += gi * y;
                        }
                    }
                    if let Some(gb) = self.buf(grads, *b) {
                        for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(da) {
                            *o += gi * x;
                        }
                    }
                } else {
                    let ma = Bcast::new(out_shape, sa);
                    let mb = Bcast::new(out_shape, sb);
                    if let Some(ga) = self.buf(grads, *a) {
                        for (k, &gi) in g.iter().enumerate() {
                            ga[ma.at(k)] += gi * db[mb.at(k)];
                        }
                    }
                    if let Some(gb) = self.buf(grads, *b) {
                        for (k, &gi) in g.iter().enumerate() {
                            gb[mb.at(k)] += gi * da[ma.at(k)];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o += gi * *c;
                    }
                }
            }
            Op::BroadcastTo(a) => {
                self.reduce_into(grads, *a, out_shape, g.iter().copied());
            }
            Op::MatMul(a, b) => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let m = self.value(*a).len() / k.max(1);
                if let Some(ga) = self.buf(grads, *a) {
                    gemm(
                        g,
                        View::row_major(m, n, 0),
                        self.value(*b).data(),
                        View::row_major(k, n, 0).t(),
                        ga,
                        View::row_major(m, k, 0),
                        T::one(),
                    );
                }
                if let Some(gb) = self.buf(grads, *b) {
                    gemm(
                        self.value(*a).data(),
                        View::row_major(m, k, 0).t(),
                        g,
                        View::row_major(m, n, 0),
                        gb,
                        View::row_major(k, n, 0),
                        T::one(),
                    );
                }
            }
            Op::Bmm { a, b, ta, tb } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (m, n) = (out_shape[1], out_shape[2]);
                let batch = sa[0];
                if let Some(ga) = self.buf(grads, *a) {
                    // d(op A) = G * (op B)^T
                    for bi in 0..batch {
                        let bv = op_view(sb[1], sb[2], bi * sb[1] * sb[2], *tb);
                        let target = op_view(sa[1], sa[2], bi * sa[1] * sa[2], *ta);
                        gemm(
                            g,
                            View::row_major(m, n, bi * m * n),
                            self.value(*b).data(),
                            bv.t(),
                            ga,
                            target,
                            T::one(),
                        );
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    // d(op B) = (op A)^T * G
                    for bi in 0..batch {
                        let av = op_view(sa[1], sa[2], bi * sa[1] * sa[2], *ta);
                        let target = op_view(sb[1], sb[2], bi * sb[1] * sb[2], *tb);
                        gemm(
                            self.value(*a).data(),
                            av.t(),
                            g,
                            View::row_major(m, n, bi * m * n),
                            gb,
                            target,
                            T::one(),
                        );
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_at_axis(out_shape, *axis);
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    if let Some(gv) = self.buf(grads, v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + len];
                            for (d, &s) in gv[o * len..(o + 1) * len].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let sa = self.shape(*input).to_vec();
                let (outer, n, inner) = split_at_axis(&sa, *axis);
                let len = out_shape[*axis];
                if let Some(ga) = self.buf(grads, *input) {
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &s) in ga[base..base + len * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let w = *out_shape.last().unwrap();
                let y = node.value.data();
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..y.len() / w {
                        let ys = &y[r * w..(r + 1) * w];
                        let gs = &g[r * w..(r + 1) * w];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a.f64() * b.f64()).sum();
                        let dot = T::of(dot);
                        for j in 0..w {
                            ga[r * w + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let w = *out_shape.last().unwrap();
                let y = node.value.data();
                if let Some(ga) = self.buf(grads, *a) {
                    for r in 0..y.len() / w {
                        let gs = &g[r * w..(r + 1) * w];
                        let total = T::of(gs.iter().map(|v| v.f64()).sum::<f64>());
                        for j in 0..w {
                            ga[r * w + j] += gs[j] - y[r * w + j].exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let w = *out_shape.last().unwrap();
                let rows = rstd.len();
                let gamma = self.value(*gain).data();
                if let Some(gb) = self.buf(grads, *bias) {
                    for r in 0..rows {
                        for j in 0..w {
                            gb[j] += g[r * w + j];
                        }
                    }
                }
                if let Some(gg) = self.buf(grads, *gain) {
                    for r in 0..rows {
                        for j in 0..w {
                            gg[j] += g[r * w + j] * xhat[r * w + j];
                        }
                    }
                }
                if let Some(gx) = self.buf(grads, *x) {
                    let mut dxhat = vec![0.0f64; w];
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..w {
                            let d = g[r * w + j].f64() * gamma[j].f64();
                            dxhat[j] = d;
                            mean_d += d;
                            mean_dx += d * xhat[r * w + j].f64();
                        }
                        mean_d /= w as f64;
                        mean_dx /= w as f64;
                        let rs = rstd[r].f64();
                        for j in 0..w {
                            let h = xhat[r * w + j].f64();
                            gx[r * w + j] += T::of(rs * (dxhat[j] - mean_d - h * mean_dx));
                        }
                    }
                }
            }
            Op::Silu { input, sig } => {
                let x = self.value(*input).data();
                if let Some(ga) = self.buf(grads, *input) {
                    for k in 0..g.len() {
                        let s = sig[k];
                        ga[k] += g[k] * s * (T::one() + x[k] * (T::one() - s));
                    }
                }
            }
            Op::Exp(a) => {
                let y = node.value.data();
                if let Some(ga) = self.buf(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k];
                    }
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.buf(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += g[k] / x[k];
                    }
                }
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let two = T::of(2.0);
                if let Some(ga) = self.buf(grads, *a) {
                    for k in 0..g.len() {
                        ga[k] += two * x[k] * g[k];
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let n = self.value(*a).len();
                let gi = if matches!(node.op, Op::Mean(_)) {
                    g[0] / T::of(n.max(1) as f64)
                } else {
                    g[0]
                };
                if let Some(ga) = self.buf(grads, *a) {
                    for o in ga.iter_mut() {
                        *o += gi;
                    }
                }
            }
            Op::SumLast(a) => {
                let w = self.shape(*a).last().copied().unwrap_or(1).max(1);
                if let Some(ga) = self.buf(grads, *a) {
                    for (k, o) in ga.iter_mut().enumerate() {
                        *o += g[k / w];
                    }
                }
            }
            Op::Gather { table, indices } => {
                let w = self.shape(*table)[1];
                if let Some(gt) = self.buf(grads, *table) {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..w {
                            gt[i * w + j] += g[r * w + j];
                        }
                    }
                }
            }
            Op::GaussianSample { mu, sigma, noise } => {
                if let Some(gm) = self.buf(grads, *mu) {
                    for (o, &gi) in gm.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if let Some(gs) = self.buf(grads, *sigma) {
                    for ((o, &gi), &e) in gs.iter_mut().zip(g).zip(noise) {
                        *o += gi * e;
                    }
                }
            }
        }
    }

    /// Accumulate an output-shaped gradient into `v`, summing over broadcast axes.
    fn reduce_into(
        &self,
        grads: &mut [Option<Vec<T>>],
        v: Var,
        out_shape: &[usize],
        g: impl Iterator<Item = T>,
    ) {
        let sv = self.shape(v).to_vec();
        let Some(buf) = self.buf(grads, v) else { return };
        if sv == out_shape {
            for (o, gi) in buf.iter_mut().zip(g) {
                *o += gi;
            }
        } else {
            match Bcast::new(out_shape, &sv) {
                Bcast::Cycle(n) => {
                    let mut j = 0;
                    for gi in g {
                        buf[j] += gi;
                        j += 1;
                        if j == n {
                            j = 0;
                        }
                    }
                }
                map => {
                    for (k, gi) in g.enumerate() {
                        buf[map.at(k)] += gi;
                    }
                }
            }
        }
    }
}

/// View of the logical operand of a batched product: the stored `[rows, cols]`
/// block at `offset`, transposed when `t` is set.
fn op_view(rows: usize, cols: usize, offset: usize, t: bool) -> View {
    let v = View::row_major(rows, cols, offset);
    if t {
        v.t()
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_over_empty_axis_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![2, 0], vec![]).unwrap());
        assert!(g.softmax(x).is_err());
    }

    #[test]
    fn silu_derivative_at_zero_matches_finite_difference() {
        let h = 1e-4;
        let silu = |x: f64| x / (1.0 + (-x).exp());
        let fd = (silu(h) - silu(-h)) / (2.0 * h);
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1], &[0.0]));
        let y = g.silu(x);
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        let an = grads.get(x).unwrap().data()[0];
        assert!((an - 0.5).abs() < 1e-12);
        assert!((an - fd).abs() < 1e-8);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(&[2, 4], 3.5f32));
        let gain = g.constant(Tensor::full(&[4], 1.0));
        let bias = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert!(g.value(y).data().iter().all(|v| v.abs() <= 1e-2));
    }

    #[test]
    fn broadcasting_add_and_its_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = g.param(t(&[3], &[10., 20., 30.]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11., 22., 33., 14., 25., 36.]);
        let l = g.sum(c);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2., 2., 2.]);
        assert_eq!(grads.get(a).unwrap().data(), &[1.; 6]);
    }

    #[test]
    fn broadcast_mul_over_middle_axis() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[2, 1, 2], &[1., 2., 3., 4.]));
        let b = g.param(t(&[3, 1], &[1., 10., 100.]));
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 2]);
        assert_eq!(
            g.value(c).data(),
            &[1., 2., 10., 20., 100., 200., 3., 4., 30., 40., 300., 400.]
        );
    }

    #[test]
    fn matmul_shape_mismatch_is_reported() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn bmm_with_transposes_matches_naive_product() {
        let mut g = Graph::<f64>::new();
        let av: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let bv: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        // a stored [2, 3, 2] and used transposed as [2, 2, 3]; b stored [2, 2, 3] used as [2, 3, 2].
        let a = g.constant(t(&[2, 3, 2], &av));
        let b = g.constant(t(&[2, 2, 3], &bv));
        let c = g.bmm(a, b, true, true).unwrap();
        assert_eq!(g.shape(c), &[2, 2, 2]);
        for bi in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        s += av[bi * 6 + k * 2 + i] * bv[bi * 6 + j * 3 + k];
                    }
                    assert!((g.value(c).data()[bi * 4 + i * 2 + j] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 1, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 2, 2], &[5., 6., 7., 8., 9., 10., 11., 12.]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 2]);
        let s = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), g.value(b).data());
    }

    #[test]
    fn gaussian_sample_gradient_wrt_mu_is_identity() {
        let mut g = Graph::<f64>::new();
        let mu = g.param(t(&[3], &[0.1, -0.2, 0.3]));
        let sigma = g.param(t(&[3], &[1.0, 2.0, 0.5]));
        let noise = t(&[3], &[0.7, -1.1, 0.4]);
        let z = g.gaussian_sample(mu, sigma, noise.clone()).unwrap();
        let l = g.sum(z);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(mu).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.get(sigma).unwrap().data(), noise.data());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[1., 2.]));
        let b = g.param(t(&[2], &[3., 4.]));
        let c = g.mul(a, b).unwrap();
        let l = g.sum(c);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1., 2.]);
    }
}
