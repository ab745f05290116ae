//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! The tape is rebuilt for every forward pass: ops are recorded on a [`Graph`]
//! as they execute, and [`Graph::backward`] replays them in reverse to fill
//! gradients. Everything is f64 and single-threaded per graph; a frozen model
//! can run forward passes concurrently by giving each thread its own graph.

mod dct;
mod kernels;
mod special;

pub use dct::{dct_apply, dct_matrix, idct_apply};
pub use kernels::matmul_2d;
pub use special::{erf, gelu_scalar, gelu_scalar_grad};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, NumError>;

// ── Tensor ───────────────────────────────────────────────────────────

/// A dense row-major f64 tensor. Plain value; gradients live on the [`Graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(NumError::Invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Right-aligned numpy-style broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(NumError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides for reading `shape` as if broadcast to `target` (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    let offset = target.len() - shape.len();
    let mut out = vec![0usize; target.len()];
    for i in 0..target.len() {
        if i >= offset && shape[i - offset] != 1 {
            out[i] = strides[i - offset];
        }
    }
    out
}

/// Sum `grad` (shaped `from`) down to `to`, undoing broadcasting.
fn reduce_to_shape(grad: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return grad.to_vec();
    }
    let to_len: usize = to.iter().product();
    let mut out = vec![0.0; to_len];
    let rstrides = broadcast_strides(to, from);
    let fstrides = strides_of(from);
    let rank = from.len();
    let mut idx = vec![0usize; rank];
    for (flat, g) in grad.iter().enumerate() {
        let mut rem = flat;
        let mut tgt = 0usize;
        for d in 0..rank {
            idx[d] = rem / fstrides[d];
            rem %= fstrides[d];
            tgt += idx[d] * rstrides[d];
        }
        out[tgt] += g;
    }
    out
}

// ── Graph ────────────────────────────────────────────────────────────

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Matmul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    IndexSelect(Var, usize, Vec<usize>),
    Concat(Vec<Var>, usize),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        // per-row (mean, inv_std) cached from forward
        cache: Vec<(f64, f64)>,
    },
    Gelu(Var),
    Abs(Var),
    Sqrt(Var),
    SumAll(Var),
    MeanAll(Var),
    SumAxis(Var, usize),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode tape. Nodes are appended in execution order, so creation
/// order is already topological; backward walks it once in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` call w.r.t. `v`, if it was tracked.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Tracked leaf: participates in gradient computation.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Untracked constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    // ── elementwise with broadcasting ────────────────────────────────

    fn binary_broadcast(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb, op_name)?;
        let numel: usize = out_shape.iter().product();
        let da = self.nodes[a.0].value.data();
        let db = self.nodes[b.0].value.data();
        let mut out = Vec::with_capacity(numel);
        if sa == sb {
            for i in 0..numel {
                out.push(f(da[i], db[i]));
            }
        } else {
            let stra = broadcast_strides(&sa, &out_shape);
            let strb = broadcast_strides(&sb, &out_shape);
            let ostr = strides_of(&out_shape);
            for flat in 0..numel {
                let mut rem = flat;
                let (mut ia, mut ib) = (0usize, 0usize);
                for d in 0..out_shape.len() {
                    let id = rem / ostr[d];
                    rem %= ostr[d];
                    ia += id * stra[d];
                    ib += id * strb[d];
                }
                out.push(f(da[ia], db[ib]));
            }
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape: out_shape, data: out }, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.nodes[a.0].value.data().iter().map(|v| -v).collect(),
        };
        let rg = self.needs(a);
        self.push(value, rg, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.nodes[a.0].value.data().iter().map(|v| v * c).collect(),
        };
        let rg = self.needs(a);
        self.push(value, rg, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.nodes[a.0].value.data().iter().map(|v| v + c).collect(),
        };
        let rg = self.needs(a);
        self.push(value, rg, Op::AddScalar(a))
    }

    // ── matmul ───────────────────────────────────────────────────────

    /// Batched matrix product `[..., M, K] x [..., K, N] -> [..., M, N]`.
    /// Leading batch dimensions broadcast right-aligned.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let value = matmul_value(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let _ = (&sa, &sb);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Matmul(a, b)))
    }

    // ── shape ops ────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a.0].value.numel() {
            return Err(NumError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: self.nodes[a.0].value.data().to_vec(),
        };
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::Reshape(a)))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        let rank = src.rank();
        if axes.len() != rank {
            return Err(NumError::Invalid(format!(
                "permute axes {:?} do not match rank {}",
                axes, rank
            )));
        }
        let mut seen = vec![false; rank];
        for &ax in axes {
            if ax >= rank || seen[ax] {
                return Err(NumError::Invalid(format!("bad permutation {:?}", axes)));
            }
            seen[ax] = true;
        }
        let value = permute_value(src, axes);
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::Permute(a, axes.to_vec())))
    }

    /// Gather slices along `axis` at the given indices.
    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        if axis >= src.rank() {
            return Err(NumError::InvalidAxis {
                axis,
                rank: src.rank(),
            });
        }
        let dim = src.shape[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(NumError::Invalid(format!(
                "index {} out of bounds for axis {} of size {}",
                bad, axis, dim
            )));
        }
        let value = index_select_value(src, axis, indices);
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::IndexSelect(a, axis, indices.to_vec())))
    }

    /// Concatenate along `axis`; shapes must match elsewhere.
    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Result<Var> {
        if vars.is_empty() {
            return Err(NumError::Invalid("concat of zero tensors".into()));
        }
        let first = self.shape(vars[0]).to_vec();
        if axis >= first.len() {
            return Err(NumError::InvalidAxis {
                axis,
                rank: first.len(),
            });
        }
        let mut axis_total = 0;
        for &v in vars {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &x)| d != axis && x != first[d])
            {
                return Err(NumError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; out_shape.iter().product()];
        let mut col = 0usize;
        for &v in vars {
            let s = self.shape(v).to_vec();
            let chunk = s[axis] * inner;
            let src = self.nodes[v.0].value.data();
            for o in 0..outer {
                let dst_start = o * axis_total * inner + col * inner;
                data[dst_start..dst_start + chunk]
                    .copy_from_slice(&src[o * chunk..(o + 1) * chunk]);
            }
            col += s[axis];
        }
        let rg = vars.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data,
            },
            rg,
            Op::Concat(vars.to_vec(), axis),
        ))
    }

    // ── nonlinearities / reductions ──────────────────────────────────

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        if axis >= src.rank() {
            return Err(NumError::InvalidAxis {
                axis,
                rank: src.rank(),
            });
        }
        let value = softmax_value(src, axis);
        let rg = self.needs(a);
        Ok(self.push(value, rg, Op::Softmax(a, axis)))
    }

    /// Layer normalization over the last axis, then `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let rank = src.rank();
        if rank == 0 {
            return Err(NumError::Invalid("layer_norm on scalar".into()));
        }
        let width = src.shape[rank - 1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(v);
            if s != [width] {
                return Err(NumError::Invalid(format!(
                    "layer_norm {} must have shape [{}], got {:?}",
                    name, width, s
                )));
            }
        }
        let rows = src.numel() / width;
        let g = self.nodes[gamma.0].value.data().to_vec();
        let b = self.nodes[beta.0].value.data().to_vec();
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; src.numel()];
        let mut cache = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for c in 0..width {
                out[r * width + c] = g[c] * (row[c] - mean) * inv_std + b[c];
            }
            cache.push((mean, inv_std));
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor {
                shape: src.shape.clone(),
                data: out,
            },
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
        ))
    }

    /// Exact Gaussian-CDF GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.nodes[a.0]
                .value
                .data()
                .iter()
                .map(|&v| gelu_scalar(v))
                .collect(),
        };
        let rg = self.needs(a);
        self.push(value, rg, Op::Gelu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.nodes[a.0].value.data().iter().map(|v| v.abs()).collect(),
        };
        let rg = self.needs(a);
        self.push(value, rg, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.nodes[a.0].value.data().iter().map(|v| v.sqrt()).collect(),
        };
        let rg = self.needs(a);
        self.push(value, rg, Op::Sqrt(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), rg, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.numel() as f64;
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s / n), rg, Op::MeanAll(a))
    }

    /// Sum over one axis, keeping it with size 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        if axis >= src.rank() {
            return Err(NumError::InvalidAxis {
                axis,
                rank: src.rank(),
            });
        }
        let mut out_shape = src.shape.clone();
        let dim = out_shape[axis];
        out_shape[axis] = 1;
        let outer: usize = src.shape[..axis].iter().product();
        let inner: usize = src.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        let d = src.data();
        for o in 0..outer {
            for k in 0..dim {
                let base = (o * dim + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let rg = self.needs(a);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: out,
            },
            rg,
            Op::SumAxis(a, axis),
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    fn accumulate(&mut self, v: Var, grad: &[f64]) {
        if !self.needs(v) {
            return;
        }
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, d) in g.iter_mut().zip(grad) {
                    *gi += d;
                }
            }
            None => node.grad = Some(grad.to_vec()),
        }
    }

    /// Populate gradients of every tracked node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NumError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let grad = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.backprop_node(i, &grad, &op);
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn backprop_node(&mut self, node: usize, grad: &[f64], op: &Op) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let out_shape = self.nodes[node].value.shape.clone();
                let ga = reduce_to_shape(grad, &out_shape, self.shape(*a));
                self.accumulate(*a, &ga);
                let gb = reduce_to_shape(grad, &out_shape, self.shape(*b));
                self.accumulate(*b, &gb);
            }
            Op::Sub(a, b) => {
                let out_shape = self.nodes[node].value.shape.clone();
                let ga = reduce_to_shape(grad, &out_shape, self.shape(*a));
                self.accumulate(*a, &ga);
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                let gb = reduce_to_shape(&neg, &out_shape, self.shape(*b));
                self.accumulate(*b, &gb);
            }
            Op::Mul(a, b) => {
                let out_shape = self.nodes[node].value.shape.clone();
                let ga_full = self.broadcast_mul_grad(grad, *b, &out_shape);
                let ga = reduce_to_shape(&ga_full, &out_shape, self.shape(*a));
                self.accumulate(*a, &ga);
                let gb_full = self.broadcast_mul_grad(grad, *a, &out_shape);
                let gb = reduce_to_shape(&gb_full, &out_shape, self.shape(*b));
                self.accumulate(*b, &gb);
            }
            Op::Div(a, b) => {
                let out_shape = self.nodes[node].value.shape.clone();
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let da = self.nodes[a.0].value.data();
                let db = self.nodes[b.0].value.data();
                let stra = broadcast_strides(&sa, &out_shape);
                let strb = broadcast_strides(&sb, &out_shape);
                let ostr = strides_of(&out_shape);
                let numel = grad.len();
                let mut ga_full = vec![0.0; numel];
                let mut gb_full = vec![0.0; numel];
                for flat in 0..numel {
                    let mut rem = flat;
                    let (mut ia, mut ib) = (0usize, 0usize);
                    for d in 0..out_shape.len() {
                        let id = rem / ostr[d];
                        rem %= ostr[d];
                        ia += id * stra[d];
                        ib += id * strb[d];
                    }
                    ga_full[flat] = grad[flat] / db[ib];
                    gb_full[flat] = -grad[flat] * da[ia] / (db[ib] * db[ib]);
                }
                let ga = reduce_to_shape(&ga_full, &out_shape, &sa);
                self.accumulate(*a, &ga);
                let gb = reduce_to_shape(&gb_full, &out_shape, &sb);
                self.accumulate(*b, &gb);
            }
            Op::Neg(a) => {
                let g: Vec<f64> = grad.iter().map(|v| -v).collect();
                self.accumulate(*a, &g);
            }
            Op::Scale(a, c) => {
                let g: Vec<f64> = grad.iter().map(|v| v * c).collect();
                self.accumulate(*a, &g);
            }
            Op::AddScalar(a) => self.accumulate(*a, grad),
            Op::Matmul(a, b) => {
                let (ga, gb) = matmul_backward(
                    &self.nodes[a.0].value,
                    &self.nodes[b.0].value,
                    grad,
                    &self.nodes[node].value.shape,
                );
                self.accumulate(*a, &ga);
                self.accumulate(*b, &gb);
            }
            Op::Reshape(a) => self.accumulate(*a, grad),
            Op::Permute(a, axes) => {
                let out = &self.nodes[node].value;
                let gt = Tensor {
                    shape: out.shape.clone(),
                    data: grad.to_vec(),
                };
                let mut inv = vec![0usize; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                let back = permute_value(&gt, &inv);
                self.accumulate(*a, back.data());
            }
            Op::IndexSelect(a, axis, indices) => {
                let src_shape = self.shape(*a).to_vec();
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[*axis + 1..].iter().product();
                let dim = src_shape[*axis];
                let mut ga = vec![0.0; src_shape.iter().product()];
                let k = indices.len();
                for o in 0..outer {
                    for (pos, &idx) in indices.iter().enumerate() {
                        let src = (o * k + pos) * inner;
                        let dst = (o * dim + idx) * inner;
                        for i in 0..inner {
                            ga[dst + i] += grad[src + i];
                        }
                    }
                }
                self.accumulate(*a, &ga);
            }
            Op::Concat(vars, axis) => {
                let out_shape = self.nodes[node].value.shape.clone();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut col = 0usize;
                for &v in vars {
                    let s = self.shape(v).to_vec();
                    let chunk = s[*axis] * inner;
                    let mut gv = vec![0.0; s.iter().product()];
                    for o in 0..outer {
                        let src = o * total * inner + col * inner;
                        gv[o * chunk..(o + 1) * chunk]
                            .copy_from_slice(&grad[src..src + chunk]);
                    }
                    self.accumulate(v, &gv);
                    col += s[*axis];
                }
            }
            Op::Softmax(a, axis) => {
                let out = &self.nodes[node].value;
                let shape = out.shape.clone();
                let dim = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let s = out.data();
                let mut ga = vec![0.0; grad.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut dot = 0.0;
                        for k in 0..dim {
                            let idx = (o * dim + k) * inner + i;
                            dot += grad[idx] * s[idx];
                        }
                        for k in 0..dim {
                            let idx = (o * dim + k) * inner + i;
                            ga[idx] = s[idx] * (grad[idx] - dot);
                        }
                    }
                }
                self.accumulate(*a, &ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let width = *self.shape(*x).last().unwrap();
                let rows = self.nodes[x.0].value.numel() / width;
                let xd = self.nodes[x.0].value.data().to_vec();
                let gd = self.nodes[gamma.0].value.data().to_vec();
                let mut gx = vec![0.0; xd.len()];
                let mut ggamma = vec![0.0; width];
                let mut gbeta = vec![0.0; width];
                for r in 0..rows {
                    let (mean, inv_std) = cache[r];
                    let base = r * width;
                    let mut sum_gg = 0.0;
                    let mut sum_ggx = 0.0;
                    for c in 0..width {
                        let xhat = (xd[base + c] - mean) * inv_std;
                        let gy = grad[base + c];
                        ggamma[c] += gy * xhat;
                        gbeta[c] += gy;
                        let gg = gy * gd[c];
                        sum_gg += gg;
                        sum_ggx += gg * xhat;
                    }
                    let n = width as f64;
                    for c in 0..width {
                        let xhat = (xd[base + c] - mean) * inv_std;
                        let gg = grad[base + c] * gd[c];
                        gx[base + c] = inv_std * (gg - sum_gg / n - xhat * sum_ggx / n);
                    }
                }
                self.accumulate(*x, &gx);
                self.accumulate(*gamma, &ggamma);
                self.accumulate(*beta, &gbeta);
            }
            Op::Gelu(a) => {
                let xd = self.nodes[a.0].value.data();
                let g: Vec<f64> = grad
                    .iter()
                    .zip(xd)
                    .map(|(g, &x)| g * gelu_scalar_grad(x))
                    .collect();
                self.accumulate(*a, &g);
            }
            Op::Abs(a) => {
                let xd = self.nodes[a.0].value.data();
                let g: Vec<f64> = grad
                    .iter()
                    .zip(xd)
                    .map(|(g, &x)| if x >= 0.0 { *g } else { -g })
                    .collect();
                self.accumulate(*a, &g);
            }
            Op::Sqrt(a) => {
                let yd = self.nodes[node].value.data().to_vec();
                let g: Vec<f64> = grad
                    .iter()
                    .zip(&yd)
                    .map(|(g, &y)| g * 0.5 / y)
                    .collect();
                self.accumulate(*a, &g);
            }
            Op::SumAll(a) => {
                let n = self.nodes[a.0].value.numel();
                self.accumulate(*a, &vec![grad[0]; n]);
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.numel();
                self.accumulate(*a, &vec![grad[0] / n as f64; n]);
            }
            Op::SumAxis(a, axis) => {
                let src_shape = self.shape(*a).to_vec();
                let dim = src_shape[*axis];
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[*axis + 1..].iter().product();
                let mut ga = vec![0.0; src_shape.iter().product()];
                for o in 0..outer {
                    for k in 0..dim {
                        let base = (o * dim + k) * inner;
                        for i in 0..inner {
                            ga[base + i] = grad[o * inner + i];
                        }
                    }
                }
                self.accumulate(*a, &ga);
            }
        }
    }

    fn broadcast_mul_grad(&self, grad: &[f64], other: Var, out_shape: &[usize]) -> Vec<f64> {
        let so = self.shape(other).to_vec();
        let d = self.nodes[other.0].value.data();
        if so == out_shape {
            return grad.iter().zip(d).map(|(g, v)| g * v).collect();
        }
        let str_o = broadcast_strides(&so, out_shape);
        let ostr = strides_of(out_shape);
        let mut out = vec![0.0; grad.len()];
        for flat in 0..grad.len() {
            let mut rem = flat;
            let mut io = 0usize;
            for dim in 0..out_shape.len() {
                let id = rem / ostr[dim];
                rem %= ostr[dim];
                io += id * str_o[dim];
            }
            out[flat] = grad[flat] * d[io];
        }
        out
    }
}

// ── op value helpers (shared by graph and plain callers) ─────────────

fn matmul_value(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(NumError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, ka) = (a.shape[a.rank() - 2], a.shape[a.rank() - 1]);
    let (kb, n) = (b.shape[b.rank() - 2], b.shape[b.rank() - 1]);
    if ka != kb {
        return Err(NumError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let batch_a = &a.shape[..a.rank() - 2];
    let batch_b = &b.shape[..b.rank() - 2];
    let batch = broadcast_shape(batch_a, batch_b, "matmul")?;
    let nbatch: usize = batch.iter().product();
    let stra = broadcast_strides(batch_a, &batch);
    let strb = broadcast_strides(batch_b, &batch);
    let bstr = strides_of(&batch);
    let mut out_shape = batch.clone();
    out_shape.push(m);
    out_shape.push(n);
    let mut out = vec![0.0; nbatch * m * n];
    for bi in 0..nbatch {
        let mut rem = bi;
        let (mut ia, mut ib) = (0usize, 0usize);
        for d in 0..batch.len() {
            let id = rem / bstr[d];
            rem %= bstr[d];
            ia += id * stra[d];
            ib += id * strb[d];
        }
        kernels::matmul_2d_into(
            &a.data[ia * m * ka..(ia + 1) * m * ka],
            &b.data[ib * ka * n..(ib + 1) * ka * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            ka,
            n,
        );
    }
    Ok(Tensor {
        shape: out_shape,
        data: out,
    })
}

fn matmul_backward(a: &Tensor, b: &Tensor, grad: &[f64], out_shape: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let (m, k) = (a.shape[a.rank() - 2], a.shape[a.rank() - 1]);
    let n = b.shape[b.rank() - 1];
    let batch = &out_shape[..out_shape.len() - 2];
    let nbatch: usize = batch.iter().product();
    let batch_a = &a.shape[..a.rank() - 2];
    let batch_b = &b.shape[..b.rank() - 2];
    let stra = broadcast_strides(batch_a, batch);
    let strb = broadcast_strides(batch_b, batch);
    let bstr = strides_of(batch);
    let mut ga = vec![0.0; a.numel()];
    let mut gb = vec![0.0; b.numel()];
    for bi in 0..nbatch {
        let mut rem = bi;
        let (mut ia, mut ib) = (0usize, 0usize);
        for d in 0..batch.len() {
            let id = rem / bstr[d];
            rem %= bstr[d];
            ia += id * stra[d];
            ib += id * strb[d];
        }
        let g = &grad[bi * m * n..(bi + 1) * m * n];
        // dA += G . B^T
        kernels::matmul_bt_accum(
            g,
            &b.data[ib * k * n..(ib + 1) * k * n],
            &mut ga[ia * m * k..(ia + 1) * m * k],
            m,
            n,
            k,
        );
        // dB += A^T . G
        kernels::matmul_at_accum(
            &a.data[ia * m * k..(ia + 1) * m * k],
            g,
            &mut gb[ib * k * n..(ib + 1) * k * n],
            m,
            k,
            n,
        );
    }
    (ga, gb)
}

fn permute_value(src: &Tensor, axes: &[usize]) -> Tensor {
    let rank = src.rank();
    let out_shape: Vec<usize> = axes.iter().map(|&a| src.shape[a]).collect();
    let in_strides = src.strides();
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let out_strides = strides_of(&out_shape);
    let mut data = vec![0.0; src.numel()];
    for (flat, slot) in data.iter_mut().enumerate() {
        let mut rem = flat;
        let mut src_idx = 0usize;
        for d in 0..rank {
            let id = rem / out_strides[d];
            rem %= out_strides[d];
            src_idx += id * perm_strides[d];
        }
        *slot = src.data[src_idx];
    }
    Tensor {
        shape: out_shape,
        data,
    }
}

fn index_select_value(src: &Tensor, axis: usize, indices: &[usize]) -> Tensor {
    let outer: usize = src.shape[..axis].iter().product();
    let inner: usize = src.shape[axis + 1..].iter().product();
    let dim = src.shape[axis];
    let mut out_shape = src.shape.clone();
    out_shape[axis] = indices.len();
    let mut data = vec![0.0; outer * indices.len() * inner];
    for o in 0..outer {
        for (pos, &idx) in indices.iter().enumerate() {
            let dst = (o * indices.len() + pos) * inner;
            let srcoff = (o * dim + idx) * inner;
            data[dst..dst + inner].copy_from_slice(&src.data[srcoff..srcoff + inner]);
        }
    }
    Tensor {
        shape: out_shape,
        data,
    }
}

fn softmax_value(src: &Tensor, axis: usize) -> Tensor {
    let shape = src.shape.clone();
    let dim = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let d = src.data();
    let mut out = vec![0.0; src.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let mut max = f64::NEG_INFINITY;
            for k in 0..dim {
                max = max.max(d[(o * dim + k) * inner + i]);
            }
            let mut sum = 0.0;
            for k in 0..dim {
                let idx = (o * dim + k) * inner + i;
                let e = (d[idx] - max).exp();
                out[idx] = e;
                sum += e;
            }
            for k in 0..dim {
                out[(o * dim + k) * inner + i] /= sum;
            }
        }
    }
    Tensor { shape, data: out }
}
