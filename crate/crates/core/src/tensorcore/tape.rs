//! Dynamic reverse-mode tape.
//!
//! Every forward operation appends a node holding its value and a record of
//! how it was produced. [`Tape::backward`] walks the nodes once, newest
//! first, so the tape is rebuilt for every forward pass.

use super::kernels::{gemm, permute_data};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Gelu(Var),
    Relu(Var),
    Softplus(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    IndexSelect {
        table: Var,
        indices: Vec<usize>,
    },
    ExpandLeading(Var),
    RotateBlocks {
        x: Var,
        rots: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "bmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::MulBroadcast(..) => "mul_broadcast",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Gelu(..) => "gelu",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::IndexSelect { .. } => "index_select",
            Op::ExpandLeading(..) => "expand_leading",
            Op::RotateBlocks { .. } => "rotate_blocks",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data_of(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Records a leaf; gradients flow to it iff the tensor requires grad.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg).expect("leaf values must be finite")
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Records a constant leaf (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        let d = self.data_of(v);
        assert_eq!(d.len(), 1, "item() on a non-scalar");
        d[0]
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    fn binary_same(&mut self, a: Var, b: Var, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data_of(a), false, self.data_of(b), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// Batched matrix product of `[.., m, k]` and `[.., k, n]` with equal leading extents.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r < 3 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let batch = numel(&sa[..r - 2]);
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.data_of(a), self.data_of(b));
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, out)?, Op::BatchMatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "div", Op::Div(a, b), |x, y| x / y)
    }

    fn check_suffix(&self, a: Var, b: Var, name: &'static str) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(name, sa, sb));
        }
        Ok(numel(sb))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s (bias, position tables, scalars).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let inner = self.check_suffix(a, b, "add_broadcast")?;
        let db = self.data_of(b);
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().enumerate().map(|(i, &x)| x + db[i % inner]).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::AddBroadcast(a, b), rg)
    }

    /// `a * b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let inner = self.check_suffix(a, b, "mul_broadcast")?;
        let db = self.data_of(b);
        let ta = &self.nodes[a.0].value;
        let data = ta.data().iter().enumerate().map(|(i, &x)| x * db[i % inner]).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MulBroadcast(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Gelu(x), gelu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    /// Softmax along `axis`, with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.data_of(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(src[base + j * inner]);
                }
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    total += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= total;
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg)
    }

    /// Layer normalization over the last axis followed by `gain * xhat + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::contract("layernorm eps must be positive"));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::contract("layernorm on a scalar"))?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::shape("layernorm", &shape, self.shape(p)));
            }
        }
        let src = self.data_of(x);
        let (g, b) = (self.data_of(gain), self.data_of(bias));
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if numel(shape) != src.numel() {
            return Err(Error::shape("reshape", src.shape(), shape));
        }
        let out = Tensor::new(shape.to_vec(), src.data().to_vec())?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape("permute", &shape, axes));
        }
        let (data, out_shape) = permute_data(self.data_of(x), &shape, axes);
        let rg = self.rg(x);
        self.push(
            Tensor::new(out_shape, data)?,
            Op::Permute { x, axes: axes.to_vec() },
            rg,
        )
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let r = self.shape(x).len();
        if a >= r || b >= r {
            return Err(Error::contract(format!(
                "transpose axes ({a},{b}) out of range for rank {r}"
            )));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(a, b);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let d = self.data_of(v);
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::contract(format!(
                "slice {start}..{end} on axis {axis} invalid for {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let len = end - start;
        let src = self.data_of(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = o * n * inner + start * inner;
            out.extend_from_slice(&src[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(x);
        self.push(Tensor::new(out_shape, out)?, Op::Slice { x, axis, start }, rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.data_of(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::contract(format!("sum axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.data_of(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.rg(x);
        self.push(Tensor::new(out_shape, out)?, Op::SumAxis { x, axis }, rg)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| Error::contract("mean axis out of range"))? as f64;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / n)
    }

    /// Gathers rows of `table` (first axis) by index.
    pub fn index_select(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.is_empty() {
            return Err(Error::contract("index_select on a scalar"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return Err(Error::contract(format!(
                "index {bad} out of range for table with {} rows",
                shape[0]
            )));
        }
        if indices.is_empty() {
            return Err(Error::contract("index_select with no indices"));
        }
        let row = numel(&shape[1..]);
        let src = self.data_of(table);
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let rg = self.rg(table);
        self.push(
            Tensor::new(out_shape, out)?,
            Op::IndexSelect {
                table,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    /// Repeats `x` along a new leading axis of extent `n`.
    pub fn expand_leading(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::contract("expand to zero extent"));
        }
        let src = &self.nodes[x.0].value;
        let mut shape = vec![n];
        shape.extend_from_slice(src.shape());
        let out = src.data().repeat(n);
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::ExpandLeading(x), rg)
    }

    /// Applies per-token block-diagonal rotations.
    ///
    /// `x` is `[B, H, N, nb*b]` and `rots` is `[G, N, nb, b, b]` with `B % G == 0`;
    /// row `bi` of `x` uses rotation group `bi % G`, shared across the `H` axis.
    pub fn rotate_blocks(&mut self, x: Var, rots: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x).to_vec(), self.shape(rots).to_vec());
        if sx.len() != 4
            || sr.len() != 5
            || sr[3] != sr[4]
            || sx[2] != sr[1]
            || sx[3] != sr[2] * sr[3]
            || sx[0] % sr[0] != 0
        {
            return Err(Error::shape("rotate_blocks", &sx, &sr));
        }
        let (bsz, heads, n, d) = (sx[0], sx[1], sx[2], sx[3]);
        let (groups, nb, b) = (sr[0], sr[2], sr[3]);
        let (xd, rd) = (self.data_of(x), self.data_of(rots));
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bsz {
            let g = bi % groups;
            for h in 0..heads {
                for t in 0..n {
                    let xo = ((bi * heads + h) * n + t) * d;
                    for j in 0..nb {
                        let ro = ((g * n + t) * nb + j) * b * b;
                        for r in 0..b {
                            let mut acc = 0.0;
                            for c in 0..b {
                                acc += rd[ro + r * b + c] * xd[xo + j * b + c];
                            }
                            out[xo + j * b + r] = acc;
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(rots);
        self.push(Tensor::new(sx, out)?, Op::RotateBlocks { x, rots }, rg)
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.data_of(*b), true, &mut da, false);
                    acc(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.data_of(*a), true, g, false, &mut db, false);
                    acc(*b, db);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let r = sa.len();
                let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
                let batch = numel(&sa[..r - 2]);
                let (ad, bd) = (self.data_of(*a), self.data_of(*b));
                if self.rg(*a) {
                    let mut da = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &bd[i * k * n..(i + 1) * k * n],
                            true,
                            &mut da[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    acc(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &ad[i * m * k..(i + 1) * m * k],
                            true,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &mut db[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data_of(*a), self.data_of(*b));
                acc(*a, g.iter().zip(bd).map(|(g, y)| g * y).collect());
                acc(*b, g.iter().zip(ad).map(|(g, x)| g * x).collect());
            }
            Op::Div(a, b) => {
                let (ad, bd) = (self.data_of(*a), self.data_of(*b));
                acc(*a, g.iter().zip(bd).map(|(g, y)| g / y).collect());
                acc(
                    *b,
                    g.iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect(),
                );
            }
            Op::AddBroadcast(a, b) => {
                acc(*a, g.to_vec());
                if self.rg(*b) {
                    let inner = self.value(*b).numel();
                    let mut db = vec![0.0; inner];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % inner] += gv;
                    }
                    acc(*b, db);
                }
            }
            Op::MulBroadcast(a, b) => {
                let (ad, bd) = (self.data_of(*a), self.data_of(*b));
                let inner = bd.len();
                if self.rg(*a) {
                    acc(*a, g.iter().enumerate().map(|(i, gv)| gv * bd[i % inner]).collect());
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; inner];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % inner] += gv * ad[i];
                    }
                    acc(*b, db);
                }
            }
            Op::Scale(x, c) => acc(*x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) => acc(*x, g.to_vec()),
            Op::Exp(x) => acc(*x, g.iter().zip(out).map(|(g, y)| g * y).collect()),
            Op::Log(x) => {
                let xd = self.data_of(*x);
                acc(*x, g.iter().zip(xd).map(|(g, x)| g / x).collect());
            }
            Op::Sqrt(x) => acc(*x, g.iter().zip(out).map(|(g, y)| g * 0.5 / y).collect()),
            Op::Gelu(x) => {
                let xd = self.data_of(*x);
                acc(*x, g.iter().zip(xd).map(|(g, &x)| g * gelu_grad(x)).collect());
            }
            Op::Relu(x) => {
                let xd = self.data_of(*x);
                acc(
                    *x,
                    g.iter().zip(xd).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
                );
            }
            Op::Softplus(x) => {
                let xd = self.data_of(*x);
                acc(*x, g.iter().zip(xd).map(|(g, &x)| g * sigmoid(x)).collect());
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: f64 = (0..n).map(|j| g[base + j * inner] * out[base + j * inner]).sum();
                        for j in 0..n {
                            let p = base + j * inner;
                            dx[p] = out[p] * (g[p] - dot);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gd = self.data_of(*gain);
                let d = gd.len();
                let rows = g.len() / d;
                if self.rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let (mut m1, mut m2) = (0.0, 0.0);
                        for j in 0..d {
                            let dh = g[r * d + j] * gd[j];
                            m1 += dh;
                            m2 += dh * xhat[r * d + j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            let dh = g[r * d + j] * gd[j];
                            dx[r * d + j] = inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                        }
                    }
                    acc(*x, dx);
                }
                if self.rg(*gain) || self.rg(*bias) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                            db[j] += g[r * d + j];
                        }
                    }
                    acc(*gain, dg);
                    acc(*bias, db);
                }
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (dx, _) = permute_data(g, node.value.shape(), &inverse);
                acc(*x, dx);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    if self.rg(v) {
                        let mut dv = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            dv.extend_from_slice(&g[s..s + n * inner]);
                        }
                        acc(v, dv);
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.shape(*x);
                let (outer, n, inner) = split_axis(src_shape, *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; numel(src_shape)];
                for o in 0..outer {
                    let off = o * n * inner + start * inner;
                    dx[off..off + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, dx);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
            Op::SumAxis { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        dx[(o * n + j) * inner..(o * n + j + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                acc(*x, dx);
            }
            Op::IndexSelect { table, indices } => {
                let tv = self.value(*table);
                let row = numel(&tv.shape()[1..]);
                let mut dt = vec![0.0; tv.numel()];
                for (k, &i) in indices.iter().enumerate() {
                    for (a, b) in dt[i * row..(i + 1) * row].iter_mut().zip(&g[k * row..(k + 1) * row]) {
                        *a += b;
                    }
                }
                acc(*table, dt);
            }
            Op::ExpandLeading(x) => {
                let inner = self.value(*x).numel();
                let mut dx = vec![0.0; inner];
                for chunk in g.chunks(inner) {
                    dx.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                acc(*x, dx);
            }
            Op::RotateBlocks { x, rots } => {
                let (sx, sr) = (self.shape(*x), self.shape(*rots));
                let (bsz, heads, n, d) = (sx[0], sx[1], sx[2], sx[3]);
                let (groups, nb, b) = (sr[0], sr[2], sr[3]);
                let (xd, rd) = (self.data_of(*x), self.data_of(*rots));
                let want_x = self.rg(*x);
                let want_r = self.rg(*rots);
                let mut dx = if want_x { vec![0.0; xd.len()] } else { Vec::new() };
                let mut dr = if want_r { vec![0.0; rd.len()] } else { Vec::new() };
                for bi in 0..bsz {
                    let gi = bi % groups;
                    for h in 0..heads {
                        for t in 0..n {
                            let xo = ((bi * heads + h) * n + t) * d;
                            for j in 0..nb {
                                let ro = ((gi * n + t) * nb + j) * b * b;
                                for r in 0..b {
                                    let gr = g[xo + j * b + r];
                                    for c in 0..b {
                                        if want_x {
                                            dx[xo + j * b + c] += rd[ro + r * b + c] * gr;
                                        }
                                        if want_r {
                                            dr[ro + r * b + c] += gr * xd[xo + j * b + c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if want_x {
                    acc(*x, dx);
                }
                if want_r {
                    acc(*rots, dr);
                }
            }
        }
    }
}
