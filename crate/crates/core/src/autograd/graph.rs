use super::kernels::{self, gemm};
use super::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded operation plus whatever the backward rule needs from the forward pass.
#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Hadamard(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Relu(Var),
    Gelu(Var),
    /// Backward reads the node's own output.
    Softmax(Var),
    /// Backward reads the node's own (normalized) output.
    LayerNorm { x: Var, rstd: Vec<f64> },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    ReduceSum(Var),
    ReduceMean(Var),
    MeanAxis { x: Var, outer: usize, len: usize, inner: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Hadamard(..) => "hadamard",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::MulBroadcast(..) => "mul_broadcast",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Permute { .. } => "permute",
            Op::Reshape(_) => "reshape",
            Op::ReduceSum(_) => "reduce_sum",
            Op::ReduceMean(_) => "reduce_mean",
            Op::MeanAxis { .. } => "mean_axis",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// True if this node or any ancestor requires a gradient.
    tracked: bool,
    grad: Option<Vec<f64>>,
}

/// Reverse-mode tape.
///
/// Nodes are appended in creation order, so index order is a topological
/// order and backward simply walks indices downward from the loss.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            tracked: requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a `requires_grad` node, once backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            tracked,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(va.shape().to_vec(), data)
    }

    /// Matrix product of `[r, k] · [k, c]`, or batched `[b, r, k] · [b, k, c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (batch, m, k, n) = match (&sa[..], &sb[..]) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => (*b, *m, *k, *n),
            _ => return Err(mismatch()),
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let (va, vb) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &va[i * m * k..(i + 1) * m * k],
                    false,
                    &vb[i * k * n..(i + 1) * k * n],
                    false,
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::MatMul { a, b, batch, m, k, n },
            &[a, b],
        ))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Hadamard(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x).map(|v| v * factor);
        self.push(t, Op::Scale(x, factor), &[x])
    }

    fn check_trailing(&self, op: &'static str, x: Var, b: Var) -> Result<usize> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.is_empty() || sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(Error::Shape {
                op,
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(self.value(b).len())
    }

    /// `x + b` where `b`'s shape equals the trailing dimensions of `x`.
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let blen = self.check_trailing("add_broadcast", x, b)?;
        let (vx, vb) = (self.value(x), self.value(b).data());
        let data = vx
            .data()
            .chunks(blen)
            .flat_map(|row| row.iter().zip(vb).map(|(a, c)| a + c))
            .collect();
        let t = Tensor::from_parts(vx.shape().to_vec(), data);
        Ok(self.push(t, Op::AddBroadcast(x, b), &[x, b]))
    }

    /// `x ⊙ g` where `g`'s shape equals the trailing dimensions of `x`.
    pub fn mul_broadcast(&mut self, x: Var, g: Var) -> Result<Var> {
        let glen = self.check_trailing("mul_broadcast", x, g)?;
        let (vx, vg) = (self.value(x), self.value(g).data());
        let data = vx
            .data()
            .chunks(glen)
            .flat_map(|row| row.iter().zip(vg).map(|(a, c)| a * c))
            .collect();
        let t = Tensor::from_parts(vx.shape().to_vec(), data);
        Ok(self.push(t, Op::MulBroadcast(x, g), &[x, g]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::gelu);
        self.push(t, Op::Gelu(x), &[x])
    }

    fn last_dim(&self, op: &'static str, x: Var) -> Result<usize> {
        self.shape(x).last().copied().ok_or_else(|| Error::Shape {
            op,
            lhs: vec![],
            rhs: vec![],
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let c = self.last_dim("softmax", x)?;
        let vx = self.value(x);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::from_parts(vx.shape().to_vec(), data);
        Ok(self.push(t, Op::Softmax(x), &[x]))
    }

    /// Normalize over the last axis to zero mean and unit variance (no affine terms).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "layernorm eps must be positive, got {eps}"
            )));
        }
        let c = self.last_dim("layernorm", x)?;
        let vx = self.value(x);
        let rows = vx.len() / c;
        let mut data = vec![0.0; vx.len()];
        let mut rstd = Vec::with_capacity(rows);
        for (src, dst) in vx.data().chunks(c).zip(data.chunks_mut(c)) {
            let mean = src.iter().sum::<f64>() / c as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + eps).sqrt();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * r;
            }
            rstd.push(r);
        }
        let t = Tensor::from_parts(vx.shape().to_vec(), data);
        Ok(self.push(t, Op::LayerNorm { x, rstd }, &[x]))
    }

    /// Swap the last two axes (copying).
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: self.shape(x).to_vec(),
                rhs: vec![],
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    /// General axis permutation (copying). Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::Shape {
                op: "permute",
                lhs: shape,
                rhs: axes.to_vec(),
            });
        }
        let (data, out_shape) = kernels::permute(self.value(x).data(), &shape, axes);
        let t = Tensor::from_parts(out_shape, data);
        Ok(self.push(
            t,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != vx.len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: vx.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let t = Tensor::from_parts(shape.to_vec(), vx.data().to_vec());
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Sum of all elements, as a scalar.
    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::ReduceSum(x), &[x])
    }

    /// Mean of all elements, as a scalar.
    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::ReduceMean(x), &[x])
    }

    /// Mean along `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "mean_axis",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let t = Tensor::from_parts(out_shape, out);
        Ok(self.push(t, Op::MeanAxis { x, outer, len, inner }, &[x]))
    }

    /// Mean negative log-softmax of the true class over a `[batch, classes]` logit matrix.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: vec![b, c],
                rhs: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[label];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let t = Tensor::scalar(loss / b as f64);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Propagate gradients of the scalar `loss` to every reachable leaf with
    /// `requires_grad`. Calling again without [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalar(self.shape(loss).to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if self.nodes[i].requires_grad {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
            self.backprop_node(i, &g, &mut adj);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let tracked = |v: Var| self.nodes[v.0].tracked;

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, batch, m, k, n } => {
                let (va, vb) = (val(a), val(b));
                if tracked(a) {
                    let mut da = vec![0.0; batch * m * k];
                    for s in 0..batch {
                        // da = g · bᵀ
                        gemm(
                            m,
                            n,
                            k,
                            &g[s * m * n..(s + 1) * m * n],
                            false,
                            &vb[s * k * n..(s + 1) * k * n],
                            true,
                            0.0,
                            &mut da[s * m * k..(s + 1) * m * k],
                        );
                    }
                    send(a, da);
                }
                if tracked(b) {
                    let mut db = vec![0.0; batch * k * n];
                    for s in 0..batch {
                        // db = aᵀ · g
                        gemm(
                            k,
                            m,
                            n,
                            &va[s * m * k..(s + 1) * m * k],
                            true,
                            &g[s * m * n..(s + 1) * m * n],
                            false,
                            0.0,
                            &mut db[s * k * n..(s + 1) * k * n],
                        );
                    }
                    send(b, db);
                }
            }
            &Op::Hadamard(a, b) => {
                if tracked(a) {
                    send(a, g.iter().zip(val(b)).map(|(g, y)| g * y).collect());
                }
                if tracked(b) {
                    send(b, g.iter().zip(val(a)).map(|(g, x)| g * x).collect());
                }
            }
            &Op::Add(a, b) => {
                send(a, g.to_vec());
                send(b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                send(a, g.to_vec());
                send(b, g.iter().map(|v| -v).collect());
            }
            &Op::Scale(x, f) => send(x, g.iter().map(|v| v * f).collect()),
            &Op::AddBroadcast(x, b) => {
                send(x, g.to_vec());
                if tracked(b) {
                    let blen = val(b).len();
                    let mut db = vec![0.0; blen];
                    for row in g.chunks(blen) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(b, db);
                }
            }
            &Op::MulBroadcast(x, s) => {
                let (vx, vs) = (val(x), val(s));
                let slen = vs.len();
                if tracked(x) {
                    let dx = g
                        .chunks(slen)
                        .flat_map(|row| row.iter().zip(vs).map(|(g, s)| g * s))
                        .collect();
                    send(x, dx);
                }
                if tracked(s) {
                    let mut ds = vec![0.0; slen];
                    for (grow, xrow) in g.chunks(slen).zip(vx.chunks(slen)) {
                        for ((d, gv), xv) in ds.iter_mut().zip(grow).zip(xrow) {
                            *d += gv * xv;
                        }
                    }
                    send(s, ds);
                }
            }
            &Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(val(x))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                send(x, dx);
            }
            &Op::Gelu(x) => {
                let dx = g
                    .iter()
                    .zip(val(x))
                    .map(|(g, &x)| g * kernels::gelu_grad(x))
                    .collect();
                send(x, dx);
            }
            &Op::Softmax(x) => {
                let c = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; g.len()];
                for ((grow, yrow), drow) in g.chunks(c).zip(out.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = y * (gv - dot);
                    }
                }
                send(x, dx);
            }
            Op::LayerNorm { x, rstd } => {
                let c = *node.value.shape().last().unwrap();
                let inv_c = 1.0 / c as f64;
                let mut dx = vec![0.0; g.len()];
                for (((grow, yrow), drow), r) in g
                    .chunks(c)
                    .zip(out.chunks(c))
                    .zip(dx.chunks_mut(c))
                    .zip(rstd)
                {
                    let mean_g = grow.iter().sum::<f64>() * inv_c;
                    let mean_gy = grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() * inv_c;
                    for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = r * (gv - mean_g - y * mean_gy);
                    }
                }
                send(*x, dx);
            }
            Op::Permute { x, axes } => {
                let inv = kernels::invert_axes(axes);
                let (dx, _) = kernels::permute(g, node.value.shape(), &inv);
                send(*x, dx);
            }
            &Op::Reshape(x) => send(x, g.to_vec()),
            &Op::ReduceSum(x) => send(x, vec![g[0]; val(x).len()]),
            &Op::ReduceMean(x) => {
                let n = val(x).len();
                send(x, vec![g[0] / n as f64; n]);
            }
            &Op::MeanAxis { x, outer, len, inner } => {
                let inv = 1.0 / len as f64;
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for i in 0..inner {
                            dx[base + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                send(x, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut dx = probs.clone();
                for (row, &label) in dx.chunks_mut(c).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                send(*logits, dx);
            }
        }
    }
}
