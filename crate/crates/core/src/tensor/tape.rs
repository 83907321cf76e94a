use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeometry, GroupStats};
use super::{Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

/// Elementwise operation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointwiseKind {
    Sigmoid,
    Tanh,
    Add,
    Sub,
    Hadamard,
}

impl PointwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, PointwiseKind::Add | PointwiseKind::Sub | PointwiseKind::Hadamard)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geo: ConvGeometry,
    },
    GroupNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        stats: GroupStats,
    },
    ChannelScale {
        x: usize,
        scales: Vec<f64>,
    },
    Sigmoid(usize),
    Tanh(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    GlobalAvgPool(usize),
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Slice {
        x: usize,
        offset: usize,
    },
    Concat(Vec<usize>),
    Sum(usize),
    Norm(usize),
    SumSquares(usize),
    Scale(usize, f64),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order so gradients can be replayed
/// backwards. Leaf gradients accumulate across [`Tape::backward`] calls until
/// [`Tape::zero_grads`].
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const AXES: [&str; 5] = ["axis 0", "axis 1", "axis 2", "axis 3", "axis 4"];

fn check_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "rank",
            expected: a.len(),
            found: b.len(),
        });
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(TensorError::ShapeMismatch {
                op,
                dim: AXES.get(i).copied().unwrap_or("axis"),
                expected: *x,
                found: *y,
            });
        }
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Records a leaf; it takes part in differentiation iff the tensor
    /// requires a gradient.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Copies `x` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let (shape, value) = (self.nodes[i].shape.clone(), self.nodes[i].value.clone());
        Ok(self.push(shape, value, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[self.idx(v).expect("foreign var")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[self.idx(v).expect("foreign var")].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[self.idx(v).expect("foreign var")];
        Tensor::new(&n.shape, n.value.clone()).expect("tape nodes hold valid shapes")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.idx(v).expect("foreign var")].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[self.idx(v).ok()?].as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite(what.to_string()))
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let geo = ConvGeometry::new(&self.nodes[xi].shape, &self.nodes[wi].shape, stride, pad)?;
        if let Some(bi) = bi {
            check_same_shape("conv2d bias", &[geo.c_out], &self.nodes[bi].shape)?;
        }
        let out = kernels::conv2d_forward(
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            bi.map(|b| self.nodes[b].value.as_slice()),
            &geo,
        );
        let mut deps = vec![xi, wi];
        deps.extend(bi);
        let rg = self.rg(&deps);
        Ok(self.push(
            vec![geo.c_out, geo.h_out, geo.w_out],
            out,
            Op::Conv2d { x: xi, w: wi, b: bi, geo },
            rg,
        ))
    }

    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let shape = self.nodes[xi].shape.clone();
        let c = shape[0];
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::Config(format!(
                "group_norm: {c} channels are not divisible into {groups} groups"
            )));
        }
        check_same_shape("group_norm gamma", &[c], &self.nodes[gi].shape)?;
        check_same_shape("group_norm beta", &[c], &self.nodes[bi].shape)?;
        let (y, stats) = kernels::group_norm_forward(
            &self.nodes[xi].value,
            c,
            groups,
            &self.nodes[gi].value,
            &self.nodes[bi].value,
            eps,
        );
        let rg = self.rg(&[xi, gi, bi]);
        Ok(self.push(
            shape,
            y,
            Op::GroupNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                groups,
                stats,
            },
            rg,
        ))
    }

    /// Zeroes dropped channels and scales kept ones by `1 / (1 - rate)`.
    pub fn channel_dropout(&mut self, x: Var, rate: f64, keep: &[bool]) -> Result<Var> {
        let xi = self.idx(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!("dropout rate {rate} must lie in [0, 1)")));
        }
        let c = self.nodes[xi].shape[0];
        if keep.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "channel_dropout",
                dim: "mask length",
                expected: c,
                found: keep.len(),
            });
        }
        let scale = 1.0 / (1.0 - rate);
        let scales: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let spatial = self.nodes[xi].value.len() / c;
        let out: Vec<f64> = self.nodes[xi]
            .value
            .iter()
            .enumerate()
            .map(|(i, v)| v * scales[i / spatial])
            .collect();
        let shape = self.nodes[xi].shape.clone();
        let rg = self.rg(&[xi]);
        Ok(self.push(shape, out, Op::ChannelScale { x: xi, scales }, rg))
    }

    pub fn pointwise(&mut self, kind: PointwiseKind, x: Var, y: Option<Var>) -> Result<Var> {
        match (kind, y) {
            (PointwiseKind::Sigmoid, _) => self.unary(x, kernels::sigmoid, Op::Sigmoid),
            (PointwiseKind::Tanh, _) => self.unary(x, f64::tanh, Op::Tanh),
            (k, Some(y)) => {
                let f: fn(f64, f64) -> f64 = match k {
                    PointwiseKind::Add => |a, b| a + b,
                    PointwiseKind::Sub => |a, b| a - b,
                    _ => |a, b| a * b,
                };
                let op: fn(usize, usize) -> Op = match k {
                    PointwiseKind::Add => Op::Add,
                    PointwiseKind::Sub => Op::Sub,
                    _ => Op::Mul,
                };
                self.binary(x, y, f, op)
            }
            (k, None) => Err(TensorError::Config(format!("{k:?} needs a second operand"))),
        }
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[xi].shape.clone();
        let rg = self.rg(&[xi]);
        Ok(self.push(shape, out, op(xi), rg))
    }

    fn binary(&mut self, a: Var, b: Var, f: fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        check_same_shape("pointwise", &self.nodes[ai].shape, &self.nodes[bi].shape)?;
        let out = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[ai].shape.clone();
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(shape, out, op(ai, bi), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(PointwiseKind::Sigmoid, x, None)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.pointwise(PointwiseKind::Tanh, x, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pointwise(PointwiseKind::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pointwise(PointwiseKind::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pointwise(PointwiseKind::Hadamard, a, Some(b))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let shape = self.nodes[xi].shape.clone();
        if shape.len() != 3 {
            return Err(TensorError::Rank {
                op: "global_avg_pool",
                expected: 3,
                found: shape,
            });
        }
        let spatial = shape[1] * shape[2];
        let out = self.nodes[xi]
            .value
            .chunks(spatial)
            .map(|c| c.iter().sum::<f64>() / spatial as f64)
            .collect();
        let rg = self.rg(&[xi]);
        Ok(self.push(vec![shape[0]], out, Op::GlobalAvgPool(xi), rg))
    }

    /// `weight · x + bias` for a vector `x`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (m, n) = match self.nodes[wi].shape[..] {
            [m, n] => (m, n),
            _ => {
                return Err(TensorError::Rank {
                    op: "dense",
                    expected: 2,
                    found: self.nodes[wi].shape.clone(),
                })
            }
        };
        check_same_shape("dense input", &[n], &self.nodes[xi].shape)?;
        check_same_shape("dense bias", &[m], &self.nodes[bi].shape)?;
        let mut out = self.nodes[bi].value.clone();
        kernels::gemm(m, n, 1, &self.nodes[wi].value, false, &self.nodes[xi].value, false, &mut out, 1.0);
        let rg = self.rg(&[xi, wi, bi]);
        Ok(self.push(vec![m], out, Op::Dense { x: xi, w: wi, b: bi }, rg))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let shape = self.nodes[xi].shape.clone();
        if len == 0 || start + len > shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                dim: "axis 0",
                expected: shape[0],
                found: start + len,
            });
        }
        let inner: usize = shape[1..].iter().product();
        let out = self.nodes[xi].value[start * inner..(start + len) * inner].to_vec();
        let mut new_shape = shape;
        new_shape[0] = len;
        let rg = self.rg(&[xi]);
        Ok(self.push(new_shape, out, Op::Slice { x: xi, offset: start * inner }, rg))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or_else(|| TensorError::Config("concat of nothing".into()))?;
        let tail = self.nodes[*first].shape[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &i in &ids {
            check_same_shape("concat", &tail, &self.nodes[i].shape[1..])?;
            lead += self.nodes[i].shape[0];
            out.extend_from_slice(&self.nodes[i].value);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(&ids);
        Ok(self.push(shape, out, Op::Concat(ids), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.nodes[xi].value.iter().sum();
        let rg = self.rg(&[xi]);
        Ok(self.push(vec![1], vec![s], Op::Sum(xi), rg))
    }

    /// Euclidean norm of all elements.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.nodes[xi].value.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(&[xi]);
        Ok(self.push(vec![1], vec![s], Op::Norm(xi), rg))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.nodes[xi].value.iter().map(|v| v * v).sum();
        let rg = self.rg(&[xi]);
        Ok(self.push(vec![1], vec![s], Op::SumSquares(xi), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.iter().map(|v| v * s).collect();
        let shape = self.nodes[xi].shape.clone();
        let rg = self.rg(&[xi]);
        Ok(self.push(shape, out, Op::Scale(xi, s), rg))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every recorded operation on
    /// the loss's ancestry is visited once, newest first; leaf gradients are
    /// added to whatever previous passes left behind.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(TensorError::NotScalar(self.nodes[li].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let slot = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    for (s, v) in slot.iter_mut().zip(&g) {
                        *s += v;
                    }
                }
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, out: &[f64], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |i: usize| nodes[i].requires_grad;
        let mut acc = |i: usize, contrib: &[f64]| {
            match &mut grads[i] {
                Some(buf) => buf.iter_mut().zip(contrib).for_each(|(b, c)| *b += c),
                slot @ None => *slot = Some(contrib.to_vec()),
            };
        };
        match op {
            Op::Leaf => unreachable!("leaves are handled by backward"),
            Op::Conv2d { x, w, b, geo } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(g, &nodes[*x].value, &nodes[*w].value, geo, wants(*x));
                if let Some(dx) = dx {
                    acc(*x, &dx);
                }
                if wants(*w) {
                    acc(*w, &dw);
                }
                if let Some(b) = b.filter(|&b| wants(b)) {
                    acc(b, &db);
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let c = nodes[*x].shape[0];
                let (dx, dgamma, dbeta) = kernels::group_norm_backward(
                    g,
                    &nodes[*x].value,
                    c,
                    *groups,
                    &nodes[*gamma].value,
                    stats,
                );
                if wants(*x) {
                    acc(*x, &dx);
                }
                if wants(*gamma) {
                    acc(*gamma, &dgamma);
                }
                if wants(*beta) {
                    acc(*beta, &dbeta);
                }
            }
            Op::ChannelScale { x, scales } => {
                let spatial = g.len() / scales.len();
                let d: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * scales[i / spatial]).collect();
                acc(*x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                acc(*x, &d);
            }
            Op::Tanh(x) => {
                let d: Vec<f64> = g.iter().zip(out).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                acc(*x, &d);
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(*a, g);
                }
                if wants(*b) {
                    acc(*b, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(*a, g);
                }
                if wants(*b) {
                    let d: Vec<f64> = g.iter().map(|v| -v).collect();
                    acc(*b, &d);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let d: Vec<f64> = g.iter().zip(&nodes[*b].value).map(|(x, y)| x * y).collect();
                    acc(*a, &d);
                }
                if wants(*b) {
                    let d: Vec<f64> = g.iter().zip(&nodes[*a].value).map(|(x, y)| x * y).collect();
                    acc(*b, &d);
                }
            }
            Op::GlobalAvgPool(x) => {
                let n = nodes[*x].value.len();
                let spatial = n / g.len();
                let inv = 1.0 / spatial as f64;
                let d: Vec<f64> = (0..n).map(|i| g[i / spatial] * inv).collect();
                acc(*x, &d);
            }
            Op::Dense { x, w, b } => {
                let (m, n) = (g.len(), nodes[*x].value.len());
                if wants(*x) {
                    let mut dx = vec![0.0; n];
                    kernels::gemm(n, m, 1, &nodes[*w].value, true, g, false, &mut dx, 0.0);
                    acc(*x, &dx);
                }
                if wants(*w) {
                    let xv = &nodes[*x].value;
                    let mut dw = Vec::with_capacity(m * n);
                    for gv in g {
                        dw.extend(xv.iter().map(|x| gv * x));
                    }
                    acc(*w, &dw);
                }
                if wants(*b) {
                    acc(*b, g);
                }
            }
            Op::Slice { x, offset } => {
                let mut d = vec![0.0; nodes[*x].value.len()];
                d[*offset..*offset + g.len()].copy_from_slice(g);
                acc(*x, &d);
            }
            Op::Concat(ids) => {
                let mut off = 0;
                for &i in ids {
                    let len = nodes[i].value.len();
                    if wants(i) {
                        acc(i, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::Sum(x) => {
                let d = vec![g[0]; nodes[*x].value.len()];
                acc(*x, &d);
            }
            Op::Norm(x) => {
                let norm = out[0];
                let d: Vec<f64> = if norm > 0.0 {
                    nodes[*x].value.iter().map(|v| g[0] * v / norm).collect()
                } else {
                    vec![0.0; nodes[*x].value.len()]
                };
                acc(*x, &d);
            }
            Op::SumSquares(x) => {
                let d: Vec<f64> = nodes[*x].value.iter().map(|v| 2.0 * g[0] * v).collect();
                acc(*x, &d);
            }
            Op::Scale(x, s) => {
                let d: Vec<f64> = g.iter().map(|v| v * s).collect();
                acc(*x, &d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]));
        let k = tape.constant(&t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(&t(&[1], &[0.0]));
        let y = tape.conv2d(x, k, Some(b), 1, 0).unwrap();
        assert_eq!(tape.value(y), &[1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn all_ones_kernel_sums_the_patch() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::from_fn(&[1, 3, 3], |i| (i + 1) as f64));
        let k = tape.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.constant(&t(&[1], &[0.0]));
        let y = tape.conv2d(x, k, Some(b), 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1]);
        assert_eq!(tape.value(y), &[45.0]);
    }

    #[test]
    fn strided_conv_output_shape() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[8, 112, 112]));
        let k = tape.constant(&Tensor::zeros(&[16, 8, 3, 3]));
        let y = tape.conv2d(x, k, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[16, 56, 56]);
    }

    #[test]
    fn conv_reports_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[3, 4, 4]));
        let k = tape.constant(&Tensor::zeros(&[2, 4, 3, 3]));
        let err = tape.conv2d(x, k, None, 1, 1).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { dim: "input channels", expected: 4, found: 3, .. }));
    }

    fn gn(x: &[f64], c: usize, groups: usize, gamma: f64, beta: f64) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(&t(&[c, 1, x.len() / c], x));
        let g = tape.constant(&Tensor::full(&[c], gamma));
        let b = tape.constant(&Tensor::full(&[c], beta));
        let y = tape.group_norm(xv, groups, g, b, 1e-5).unwrap();
        tape.value(y).to_vec()
    }

    #[test]
    fn group_norm_examples() {
        assert!(gn(&[3.0; 8], 2, 1, 1.0, 0.0).iter().all(|&v| v == 0.0));
        let y = gn(&[1.0, 3.0], 2, 1, 1.0, 0.0);
        // mean 2, variance 1: (±1) / sqrt(1 + 1e-5)
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y[0] + expect).abs() < 1e-15 && (y[1] - expect).abs() < 1e-15);
        assert!((y[1] - 0.999995).abs() < 1e-9);
        assert!(gn(&[1.0, -4.0, 9.0, 0.5], 2, 2, 0.0, 5.0).iter().all(|&v| v == 5.0));
    }

    #[test]
    fn group_norm_rejects_indivisible_groups() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[3, 2, 2]));
        let g = tape.constant(&Tensor::zeros(&[3]));
        let err = tape.group_norm(x, 2, g, g, 1e-5).unwrap_err();
        assert!(matches!(err, TensorError::Config(_)));
    }

    #[test]
    fn dropout_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let same = tape.channel_dropout(x, 0.0, &[true, true]).unwrap();
        assert_eq!(tape.value(same), tape.value(x));
        let y = tape.channel_dropout(x, 0.5, &[false, true]).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0, 6.0, 8.0]);
        let y2 = tape.channel_dropout(x, 0.5, &[false, true]).unwrap();
        assert_eq!(tape.value(y), tape.value(y2));
        assert!(matches!(tape.channel_dropout(x, 1.0, &[true, true]), Err(TensorError::Config(_))));
        assert!(tape.channel_dropout(x, 0.1, &[true]).is_err());
    }

    #[test]
    fn pointwise_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(&Tensor::zeros(&[3]));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s), &[0.5; 3]);
        let th = tape.tanh(z).unwrap();
        assert_eq!(tape.value(th), &[0.0; 3]);
        let a = tape.constant(&t(&[2], &[1.0, 2.0]));
        let b = tape.constant(&t(&[2], &[3.0, -1.0]));
        let h = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(h), &[3.0, -2.0]);
        let c = tape.constant(&t(&[3], &[1.0, 2.0, 3.0]));
        assert!(tape.add(a, c).is_err());
        assert!(tape.pointwise(PointwiseKind::Hadamard, a, None).is_err());
    }

    #[test]
    fn pooling_and_dense_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 2, 2], &[1., 2., 3., 4.]));
        let p = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(p), &[2.5]);
        let wide = tape.constant(&Tensor::full(&[1024, 3, 5], 0.25));
        let pw = tape.global_avg_pool(wide).unwrap();
        assert_eq!(tape.shape(pw), &[1024]);
        assert!(tape.value(pw).iter().all(|&v| v == 0.25));

        let v = tape.constant(&t(&[2], &[2.0, 3.0]));
        let w = tape.constant(&t(&[1, 2], &[1.0, 1.0]));
        let b = tape.constant(&t(&[1], &[1.0]));
        let y = tape.dense(v, w, b).unwrap();
        assert_eq!(tape.value(y), &[6.0]);
        let eye = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zb = tape.constant(&Tensor::zeros(&[2]));
        let y = tape.dense(v, eye, zb).unwrap();
        assert_eq!(tape.value(y), &[2.0, 3.0]);
        let zw = tape.constant(&Tensor::zeros(&[2, 2]));
        let bb = tape.constant(&t(&[2], &[-1.0, 7.0]));
        let y = tape.dense(v, zw, bb).unwrap();
        assert_eq!(tape.value(y), &[-1.0, 7.0]);
        assert!(tape.dense(b, w, b).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.param(&t(&[3], &[1.0, -2.0, 0.5]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 3]);

        let mut tape = Tape::new();
        let x = tape.param(&t(&[3], &[1.0, -2.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
        // repeated passes accumulate until cleared
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, -8.0, 2.0]);
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.param(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
        let mut other = Tape::new();
        let y = other.param(&t(&[1], &[1.0]));
        assert!(matches!(tape.backward(y), Err(TensorError::ForeignVar)));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&t(&[2], &[1.0, 2.0]));
        let d = tape.detach(x).unwrap();
        let y = tape.mul(d, x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        // only the non-detached operand contributes
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
        assert!(tape.grad(d).is_none());
    }

    #[test]
    fn slice_concat_roundtrip_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::from_fn(&[4, 1, 2], |i| i as f64));
        let a = tape.slice(x, 0, 1).unwrap();
        let b = tape.slice(x, 1, 3).unwrap();
        let c = tape.concat(&[b, a]).unwrap();
        assert_eq!(tape.value(c), &[2., 3., 4., 5., 6., 7., 0., 1.]);
        let w = tape.constant(&Tensor::from_fn(&[4, 1, 2], |i| i as f64 + 1.0));
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[7., 8., 1., 2., 3., 4., 5., 6.]);
    }
}
