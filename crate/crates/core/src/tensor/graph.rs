//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so node ids are already a
//! topological order and `backward` is a single reverse sweep.

use rand::Rng;

use super::value::{strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    Conv1d { x: Var, w: Var, groups: usize },
    MeanAxis { x: Var, axis: usize },
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Select { x: Var, axis: usize, index: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Dropout { x: Var, mask: Vec<f64> },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::Conv1d { x, w, .. } => vec![*x, *w],
            Op::Affine { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Softmax { x, .. }
            | Op::MeanAxis { x, .. }
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::Reshape(x)
            | Op::Permute { x, .. }
            | Op::Select { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Parameters of a gated recurrent unit, in row-vector convention
/// (`x · W`). Input weights are `[D_in, D]`, recurrent weights `[D, D]`,
/// biases `[D]`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Maps each flat output index of a broadcast op to a flat input index.
enum BroadcastMap {
    Same,
    Cyclic(usize),
    Table(Vec<usize>),
}

impl BroadcastMap {
    fn new(out_shape: &[usize], in_shape: &[usize]) -> Self {
        if out_shape == in_shape {
            return BroadcastMap::Same;
        }
        let offset = out_shape.len() - in_shape.len();
        if out_shape[offset..] == *in_shape {
            return BroadcastMap::Cyclic(in_shape.iter().product());
        }
        let in_strides = strides(in_shape);
        let eff: Vec<usize> = (0..out_shape.len())
            .map(|i| {
                if i < offset || in_shape[i - offset] == 1 {
                    0
                } else {
                    in_strides[i - offset]
                }
            })
            .collect();
        let n: usize = out_shape.iter().product();
        let mut table = Vec::with_capacity(n);
        for_each_index(out_shape, |idx| {
            table.push(idx.iter().zip(&eff).map(|(i, s)| i * s).sum());
        });
        BroadcastMap::Table(table)
    }

    #[inline]
    fn get(&self, i: usize) -> usize {
        match self {
            BroadcastMap::Same => i,
            BroadcastMap::Cyclic(n) => i % n,
            BroadcastMap::Table(t) => t[i],
        }
    }
}

fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        f(&idx);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(op, format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// (outer, len, inner) split of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
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

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- elementwise ------------------------------------------------------

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(op, &sa, &sb)?;
        let ma = BroadcastMap::new(&out_shape, &sa);
        let mb = BroadcastMap::new(&out_shape, &sb);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let data = (0..n).map(|i| f(va[ma.get(i)], vb[mb.get(i)])).collect();
        Tensor::new(out_shape, data)
    }

    /// Broadcasting addition (numpy rules, right-aligned).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| scale * a + shift).collect())
            .expect("same shape");
        self.push(t, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect()).expect("same shape")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.unary(x, |a| a.max(0.0));
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.unary(x, sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.unary(x, f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    // ---- linear algebra ---------------------------------------------------

    /// `a[..., k] × b[k, n] -> [..., n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() != 2 || sa.last() != Some(&sb[0]) {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).len() / k;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for (p, &aik) in va[i * k..(i + 1) * k].iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&vb[p * n..(p + 1) * n]) {
                    *o += aik * bv;
                }
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Batched product `a[g, m, k] × b[g, k, n]`, or `× b[g, n, k]ᵀ` when
    /// `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let bad = || Error::dim("batch_matmul", format!("{sa:?} x {sb:?} (transpose_b={transpose_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(bad());
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            let ab = &va[gi * m * k..(gi + 1) * m * k];
            let bb = &vb[gi * k * n..(gi + 1) * k * n];
            let ob = &mut out[gi * m * n..(gi + 1) * m * n];
            for i in 0..m {
                let arow = &ab[i * k..(i + 1) * k];
                for j in 0..n {
                    let mut acc = 0.0;
                    if transpose_b {
                        let brow = &bb[j * k..(j + 1) * k];
                        for p in 0..k {
                            acc += arow[p] * brow[p];
                        }
                    } else {
                        for p in 0..k {
                            acc += arow[p] * bb[p * n + j];
                        }
                    }
                    ob[i * n + j] = acc;
                }
            }
        }
        let t = Tensor::new(vec![g, m, n], out)?;
        Ok(self.push(t, Op::BatchMatMul { a, b, transpose_b }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let v = self.value(x).data();
        if v.iter().any(|a| a.is_nan()) {
            return Err(Error::Numeric {
                op: "softmax",
                detail: "NaN input".into(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(v[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (v[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Softmax { x, axis }))
    }

    /// Same-padded 1-D cross-correlation over time in channels-last layout:
    /// `x[B, T, C_in]`, `w[C_out, C_in / groups, k]` → `[B, T, C_out]`.
    ///
    /// Padding is `⌊(k−1)/2⌋` on the left and `⌈(k−1)/2⌉` on the right, so
    /// even kernels lean towards the future side.
    pub fn conv1d_same(&mut self, x: Var, w: Var, groups: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let bad = |d: &str| Error::dim("conv1d_same", format!("x {sx:?}, kernels {sw:?}: {d}"));
        if sx.len() != 3 || sw.len() != 3 {
            return Err(bad("expected x[B,T,C] and w[C_out,C_in/g,k]"));
        }
        let (b, t, cin) = (sx[0], sx[1], sx[2]);
        let (cout, cin_g, k) = (sw[0], sw[1], sw[2]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(bad("channel mismatch"));
        }
        let cout_g = cout / groups;
        let pad_left = (k - 1) / 2;
        let wt = transpose_kernel(self.value(w).data(), cout, cin_g, k);
        let vx = self.value(x).data();
        let mut out = vec![0.0; b * t * cout];
        for bi in 0..b {
            for ti in 0..t {
                let orow = &mut out[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                for j in 0..k {
                    let Some(src) = (ti + j).checked_sub(pad_left).filter(|&s| s < t) else {
                        continue;
                    };
                    let xrow = &vx[(bi * t + src) * cin..(bi * t + src + 1) * cin];
                    for (o, ov) in orow.iter_mut().enumerate() {
                        let gi = o / cout_g;
                        let wrow = &wt[(j * cout + o) * cin_g..(j * cout + o + 1) * cin_g];
                        let xs = &xrow[gi * cin_g..(gi + 1) * cin_g];
                        let mut acc = 0.0;
                        for c in 0..cin_g {
                            acc += wrow[c] * xs[c];
                        }
                        *ov += acc;
                    }
                }
            }
        }
        let tn = Tensor::new(vec![b, t, cout], out)?;
        Ok(self.push(tn, Op::Conv1d { x, w, groups }))
    }

    // ---- reductions & reshaping -------------------------------------------

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("mean_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let v = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &v[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|a| *a *= inv);
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let t = Tensor::new(new_shape, out)?;
        Ok(self.push(t, Op::MeanAxis { x, axis }))
    }

    /// Temporal mean pooling of `x[T, D]` or `x[B, T, D]`.
    pub fn mean_pool_time(&mut self, x: Var) -> Result<Var> {
        match self.shape(x).len() {
            2 => self.mean_axis(x, 0),
            3 => self.mean_axis(x, 1),
            _ => Err(Error::dim("mean_pool_time", format!("{:?}", self.shape(x)))),
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", format!("{perm:?} is not a permutation of {shape:?}")));
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let v = self.value(x).data();
        let mut out = Vec::with_capacity(v.len());
        for_each_index(&out_shape, |idx| {
            out.push(v[idx.iter().zip(&eff).map(|(i, s)| i * s).sum::<usize>()]);
        });
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::Permute { x, perm: perm.to_vec() }))
    }

    /// Slice `index` out of `axis`, dropping the axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(Error::dim("select", format!("index {index} on axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let v = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * len + index) * inner;
            out.extend_from_slice(&v[start..start + inner]);
        }
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let t = Tensor::new(new_shape, out)?;
        Ok(self.push(t, Op::Select { x, axis, index }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("{s:?} vs {first:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                let v = self.value(x).data();
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// Inverted dropout. `rng = None` means evaluation mode (identity);
    /// in training mode each element is zeroed with probability `p` and
    /// survivors are scaled by `1/(1−p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} must lie in [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let v = self.value(x);
        let mask: Vec<f64> = (0..v.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { x, mask }))
    }

    /// One GRU step: `x[B, D_in]`, `h[B, D]` → `h'[B, D]`.
    ///
    /// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
    /// `h̃ = tanh(xW_h + (r⊙h)U_h + b_h)`, `h' = (1−z)⊙h + z⊙h̃`.
    pub fn gru_cell(&mut self, x: Var, h: Var, p: &GruParams) -> Result<Var> {
        let gate = |g: &mut Self, w: Var, u: Var, b: Var, hh: Var| -> Result<Var> {
            let xw = g.matmul(x, w)?;
            let hu = g.matmul(hh, u)?;
            let s = g.add(xw, hu)?;
            g.add(s, b)
        };
        let z_pre = gate(self, p.w_z, p.u_z, p.b_z, h)?;
        let z = self.sigmoid(z_pre);
        let r_pre = gate(self, p.w_r, p.u_r, p.b_r, h)?;
        let r = self.sigmoid(r_pre);
        let rh = self.mul(r, h)?;
        let c_pre = gate(self, p.w_h, p.u_h, p.b_h, rh)?;
        let cand = self.tanh(c_pre);
        // (1−z)⊙h + z⊙h̃ written as h + z⊙(h̃ − h)
        let diff = self.sub(cand, h)?;
        let step = self.mul(z, diff)?;
        self.add(h, step)
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::dim(
                "mse",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                leaf_grads.push((id, g));
            } else {
                self.propagate(id, g, &mut grads);
            }
        }
        for (id, g) in leaf_grads {
            let slot = &mut self.nodes[id].grad;
            match slot {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[id];
        let val = |v: Var| &nodes[v.0].value;
        // Gradient buffer of `v`, or None if `v` does not need one.
        fn buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
        }
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => unreachable!("leaves are collected by backward"),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = buf(nodes, grads, *a) {
                    let m = BroadcastMap::new(out_shape, val(*a).shape());
                    g.iter().enumerate().for_each(|(i, gi)| ga[m.get(i)] += gi);
                }
                if let Some(gb) = buf(nodes, grads, *b) {
                    let m = BroadcastMap::new(out_shape, val(*b).shape());
                    g.iter().enumerate().for_each(|(i, gi)| gb[m.get(i)] += sign * gi);
                }
            }
            Op::Mul(a, b) => {
                let ma = BroadcastMap::new(out_shape, val(*a).shape());
                let mb = BroadcastMap::new(out_shape, val(*b).shape());
                let (va, vb) = (val(*a).data(), val(*b).data());
                if let Some(ga) = buf(nodes, grads, *a) {
                    g.iter().enumerate().for_each(|(i, gi)| ga[ma.get(i)] += gi * vb[mb.get(i)]);
                }
                if let Some(gb) = buf(nodes, grads, *b) {
                    g.iter().enumerate().for_each(|(i, gi)| gb[mb.get(i)] += gi * va[ma.get(i)]);
                }
            }
            Op::Affine { x, scale } => {
                if let Some(gx) = buf(nodes, grads, *x) {
                    gx.iter_mut().zip(&g).for_each(|(d, gi)| *d += scale * gi);
                }
            }
            Op::MatMul(a, b) => {
                let sb = val(*b).shape();
                let (k, n) = (sb[0], sb[1]);
                let (va, vb) = (val(*a).data(), val(*b).data());
                let m = va.len() / k;
                if let Some(ga) = buf(nodes, grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &vb[p * n..(p + 1) * n];
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                if let Some(gb) = buf(nodes, grads, *b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = va[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, gj) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * gj;
                            }
                        }
                    }
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let sa = val(*a).shape();
                let (gn, m, k) = (sa[0], sa[1], sa[2]);
                let n = out_shape[2];
                let (va, vb) = (val(*a).data(), val(*b).data());
                // b element (p, j) within a batch
                let bidx = |p: usize, j: usize| if *transpose_b { j * k + p } else { p * n + j };
                if let Some(ga) = buf(nodes, grads, *a) {
                    for gi in 0..gn {
                        let (ao, bo, oo) = (gi * m * k, gi * k * n, gi * m * n);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[oo + i * n + j] * vb[bo + bidx(p, j)];
                                }
                                ga[ao + i * k + p] += acc;
                            }
                        }
                    }
                }
                if let Some(gb) = buf(nodes, grads, *b) {
                    for gi in 0..gn {
                        let (ao, bo, oo) = (gi * m * k, gi * k * n, gi * m * n);
                        for i in 0..m {
                            for p in 0..k {
                                let aip = va[ao + i * k + p];
                                for j in 0..n {
                                    gb[bo + bidx(p, j)] += aip * g[oo + i * n + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let vx = val(*x).data();
                if let Some(gx) = buf(nodes, grads, *x) {
                    for i in 0..g.len() {
                        if vx[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(gx) = buf(nodes, grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                if let Some(gx) = buf(nodes, grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(out_shape, *axis);
                if let Some(gx) = buf(nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                            for j in 0..len {
                                let q = base + j * inner;
                                gx[q] += y[q] * (g[q] - dot);
                            }
                        }
                    }
                }
            }
            Op::Conv1d { x, w, groups } => {
                let sx = val(*x).shape();
                let sw = val(*w).shape();
                let (b, t, cin) = (sx[0], sx[1], sx[2]);
                let (cout, cin_g, k) = (sw[0], sw[1], sw[2]);
                let cout_g = cout / groups;
                let pad_left = (k - 1) / 2;
                let vx = val(*x).data();
                let wt = transpose_kernel(val(*w).data(), cout, cin_g, k);
                if let Some(gx) = buf(nodes, grads, *x) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let grow = &g[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                            for j in 0..k {
                                let Some(src) = (ti + j).checked_sub(pad_left).filter(|&s| s < t) else {
                                    continue;
                                };
                                let gxrow = &mut gx[(bi * t + src) * cin..(bi * t + src + 1) * cin];
                                for (o, &go) in grow.iter().enumerate() {
                                    if go == 0.0 {
                                        continue;
                                    }
                                    let gi = o / cout_g;
                                    let wrow = &wt[(j * cout + o) * cin_g..(j * cout + o + 1) * cin_g];
                                    for (d, wv) in gxrow[gi * cin_g..(gi + 1) * cin_g].iter_mut().zip(wrow) {
                                        *d += go * wv;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gw) = buf(nodes, grads, *w) {
                    let mut gwt = vec![0.0; k * cout * cin_g];
                    for bi in 0..b {
                        for ti in 0..t {
                            let grow = &g[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                            for j in 0..k {
                                let Some(src) = (ti + j).checked_sub(pad_left).filter(|&s| s < t) else {
                                    continue;
                                };
                                let xrow = &vx[(bi * t + src) * cin..(bi * t + src + 1) * cin];
                                for (o, &go) in grow.iter().enumerate() {
                                    if go == 0.0 {
                                        continue;
                                    }
                                    let gi = o / cout_g;
                                    let dst = &mut gwt[(j * cout + o) * cin_g..(j * cout + o + 1) * cin_g];
                                    for (d, xv) in dst.iter_mut().zip(&xrow[gi * cin_g..(gi + 1) * cin_g]) {
                                        *d += go * xv;
                                    }
                                }
                            }
                        }
                    }
                    for o in 0..cout {
                        for c in 0..cin_g {
                            for j in 0..k {
                                gw[(o * cin_g + c) * k + j] += gwt[(j * cout + o) * cin_g + c];
                            }
                        }
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                let sx = val(*x).shape();
                let (outer, len, inner) = axis_split(sx, *axis);
                let inv = 1.0 / len as f64;
                if let Some(gx) = buf(nodes, grads, *x) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..len {
                            let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * inv);
                        }
                    }
                }
            }
            Op::SumAll(x) | Op::MeanAll(x) => {
                let scale = if matches!(node.op, Op::MeanAll(_)) {
                    1.0 / val(*x).len() as f64
                } else {
                    1.0
                };
                if let Some(gx) = buf(nodes, grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0] * scale);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = buf(nodes, grads, *x) {
                    gx.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                }
            }
            Op::Permute { x, perm } => {
                let in_strides = strides(val(*x).shape());
                let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                if let Some(gx) = buf(nodes, grads, *x) {
                    let mut flat = 0;
                    for_each_index(out_shape, |idx| {
                        gx[idx.iter().zip(&eff).map(|(i, s)| i * s).sum::<usize>()] += g[flat];
                        flat += 1;
                    });
                }
            }
            Op::Select { x, axis, index } => {
                let (outer, len, inner) = axis_split(val(*x).shape(), *axis);
                if let Some(gx) = buf(nodes, grads, *x) {
                    for o in 0..outer {
                        let start = (o * len + index) * inner;
                        gx[start..start + inner]
                            .iter_mut()
                            .zip(&g[o * inner..(o + 1) * inner])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = axis_split(out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = val(x).shape()[*axis];
                    if let Some(gx) = buf(nodes, grads, x) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            gx[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += len;
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = buf(nodes, grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * mask[i];
                    }
                }
            }
        }
    }
}

/// `[C_out, C_in_g, k]` → `[k, C_out, C_in_g]` so the channel dot is contiguous.
fn transpose_kernel(w: &[f64], cout: usize, cin_g: usize, k: usize) -> Vec<f64> {
    let mut wt = vec![0.0; w.len()];
    for o in 0..cout {
        for c in 0..cin_g {
            for j in 0..k {
                wt[(j * cout + o) * cin_g + c] = w[(o * cin_g + c) * k + j];
            }
        }
    }
    wt
}
