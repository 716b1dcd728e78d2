//! Operation recording and reverse-mode gradient propagation.
//!
//! Every primitive appends one node holding its output value to the tape.
//! Nodes only ever reference earlier nodes, so the tape is topologically
//! ordered by construction and [`Tape::backward`] is a single reverse sweep.
//!
//! Reductions inside a primitive run in increasing index order along the
//! reduced axis; matrix products go through a single-threaded kernel. A
//! forward pass is therefore bit-reproducible for a fixed build.

use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{numel, strides, Mask, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: T },
    MatMul { a: Var, b: Var, trans_b: bool },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Slice { a: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Softmax { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    CrossEntropy { logits: Var, probs: Vec<T>, targets: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of tensor operations.
///
/// A tape belongs to one worker; independent workers each build their own.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to the leaves that requested them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn suffix_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        Ok(())
    }

    /// Elementwise `a + b`, where `b`'s shape may be a trailing suffix of
    /// `a`'s and is then repeated over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.suffix_broadcast("add", a, b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = if bv.len() == av.len() {
            av.iter().zip(bv).map(|(&x, &y)| x + y).collect()
        } else if bv.is_empty() {
            av.to_vec()
        } else {
            av.chunks(bv.len()).flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y)).collect()
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    /// Elementwise `a * b` with the same suffix broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.suffix_broadcast("mul", a, b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = if bv.len() == av.len() {
            av.iter().zip(bv).map(|(&x, &y)| x * y).collect()
        } else if bv.is_empty() {
            av.to_vec()
        } else {
            av.chunks(bv.len()).flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x * y)).collect()
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        let v = self.value(a);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x * c).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, c }, rg)
    }

    /// Batched matrix product `a[..., m, k] @ b[..., k, n]` with numpy-style
    /// broadcasting of the leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Batched `a[..., m, k] @ b[..., n, k]ᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let g = MatmulGeom::new(self.shape(a), self.shape(b), trans_b)?;
        let mut out = vec![T::zero(); g.out_len()];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        g.forward(av, bv, &mut out);
        let rg = self.rg(a) || self.rg(b);
        let shape = g.out_shape.clone();
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Reshape { a }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        check_perm(perm, in_shape.len())?;
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let in_strides = strides(&in_shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        walk_strided(&out_shape, &src_strides, |dst, s| out[dst] = src[s]);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Permute { a, perm: perm.to_vec() }, rg))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { op: "slice", axis, shape });
        }
        if start + len > shape[axis] {
            let mut want = shape.clone();
            want[axis] = start + len;
            return Err(TensorError::ShapeMismatch { op: "slice", lhs: shape, rhs: want });
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Slice { a, axis, start }, rg))
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or(TensorError::Rank {
            op: "concat",
            expected: "at least one part",
            shape: vec![],
        })?)
        .to_vec();
        if axis >= first.len() {
            return Err(TensorError::Axis { op: "concat", axis, shape: first });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: first, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut out_shape = first;
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_masked(a, None)
    }

    /// Softmax over the last axis. Positions where `mask` is `false` get
    /// weight exactly zero; the mask's shape must be a trailing suffix of the
    /// input's shape and is repeated over the leading axes.
    pub fn softmax_masked(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some(&l) = shape.last() else {
            return Err(TensorError::Rank { op: "softmax", expected: "rank >= 1", shape });
        };
        if let Some(m) = mask {
            let ms = m.shape();
            if ms.len() > shape.len() || shape[shape.len() - ms.len()..] != *ms {
                return Err(TensorError::ShapeMismatch { op: "softmax", lhs: shape, rhs: ms.to_vec() });
            }
        }
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        if l > 0 {
            for (r, (row, dst)) in src.chunks(l).zip(out.chunks_mut(l)).enumerate() {
                let keep: Option<&[bool]> = mask.map(|m| {
                    let rows = m.data().len() / l;
                    let mr = r % rows;
                    &m.data()[mr * l..(mr + 1) * l]
                });
                softmax_row(row, keep, dst).map_err(|_| TensorError::DegenerateMask { row: r })?;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a }, rg))
    }

    /// Normalises each row over the last axis to zero mean and unit
    /// (population) variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 {
            return Err(TensorError::Rank { op: "layer_norm", expected: "last extent >= 1", shape });
        }
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).expect("extent fits");
        let (src, g, b) = (self.value(x).data(), self.value(gain).data(), self.value(bias).data());
        let rows = src.len() / d;
        let mut out = vec![T::zero(); src.len()];
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::from_f64_lossy(GELU_C);
        let k = T::from_f64_lossy(GELU_A);
        let half = T::from_f64_lossy(0.5);
        let v = self.value(a);
        let out: Vec<T> = v
            .data()
            .iter()
            .map(|&x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()))
            .collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Gelu { a }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).data();
        let n = T::from_usize(v.len().max(1)).expect("length fits");
        let s = v.iter().copied().sum::<T>() / n;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean { a }, rg)
    }

    /// Mean over rows of `-log softmax(logits)[true class]`.
    ///
    /// `targets` must have the logits' shape with one-hot rows.
    pub fn cross_entropy_from_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if targets.shape() != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: shape,
                rhs: targets.shape().to_vec(),
            });
        }
        let q = match shape.last() {
            Some(&q) if q > 0 => q,
            _ => return Err(TensorError::Rank { op: "cross_entropy", expected: "class axis >= 1", shape }),
        };
        let z = self.value(logits).data();
        let y = targets.data();
        let rows = z.len() / q;
        let mut probs = vec![T::zero(); z.len()];
        let mut total = T::zero();
        for r in 0..rows {
            let yr = &y[r * q..(r + 1) * q];
            let hot = one_hot_index(yr).ok_or(TensorError::Encoding { row: r })?;
            let zr = &z[r * q..(r + 1) * q];
            let max = zr.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (j, &v) in zr.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * q + j] = e;
                denom = denom + e;
            }
            for p in &mut probs[r * q..(r + 1) * q] {
                *p = *p / denom;
            }
            total = total + (max + denom.ln() - zr[hot]);
        }
        let loss = if rows == 0 { T::zero() } else { total / T::from_usize(rows).expect("fits") };
        let rg = self.rg(logits);
        let op = Op::CrossEntropy { logits, probs, targets: y.to_vec() };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Propagates d`loss` back to every reachable leaf created with
    /// `requires_grad`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::Rank { op: "backward", expected: "a scalar", shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    axpy(ga, g);
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    reduce_suffix(gb, g);
                }
            }
            Op::Mul { a, b } => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(ga) = slot(grads, nodes, *a) {
                    let bl = bv.len().max(1);
                    for (i, (d, &gi)) in ga.iter_mut().zip(g).enumerate() {
                        *d = *d + gi * bv[i % bl];
                    }
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    let bl = gb.len().max(1);
                    for (i, (&gi, &ai)) in g.iter().zip(av).enumerate() {
                        gb[i % bl] = gb[i % bl] + gi * ai;
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d = *d + gi * *c;
                    }
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let geom = MatmulGeom::new(nodes[a.0].value.shape(), nodes[b.0].value.shape(), *trans_b)
                    .expect("validated in forward");
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(ga) = slot(grads, nodes, *a) {
                    geom.grad_a(g, bv, ga);
                }
                if let Some(gb) = slot(grads, nodes, *b) {
                    geom.grad_b(g, av, gb);
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    axpy(ga, g);
                }
            }
            Op::Permute { a, perm } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    let in_shape = nodes[a.0].value.shape();
                    let in_strides = strides(in_shape);
                    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                    walk_strided(node.value.shape(), &src_strides, |dst, s| ga[s] = ga[s] + g[dst]);
                }
            }
            Op::Slice { a, axis, start } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    let in_shape = nodes[a.0].value.shape();
                    let outer = numel(&in_shape[..*axis]);
                    let inner = numel(&in_shape[axis + 1..]);
                    let len = node.value.shape()[*axis];
                    for o in 0..outer {
                        let base = (o * in_shape[*axis] + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        axpy(&mut ga[base..base + len * inner], src);
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let outer = numel(&out_shape[..*axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let row = out_shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = nodes[p.0].value.shape()[*axis] * inner;
                    if let Some(gp) = slot(grads, nodes, p) {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            axpy(&mut gp[o * chunk..(o + 1) * chunk], src);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Softmax { a } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    let y = node.value.data();
                    let l = *node.value.shape().last().expect("rank >= 1");
                    if l > 0 {
                        for ((yr, gr), dr) in y.chunks(l).zip(g.chunks(l)).zip(ga.chunks_mut(l)) {
                            let dot = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum::<T>();
                            for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                                *d = *d + yi * (gi - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = nodes[gain.0].value.numel();
                let gv = nodes[gain.0].value.data();
                if let Some(gg) = slot(grads, nodes, *gain) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] = gg[j] + gr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = slot(grads, nodes, *bias) {
                    reduce_suffix(gb, g);
                }
                if let Some(gx) = slot(grads, nodes, *x) {
                    let dn = T::from_usize(d).expect("fits");
                    let mut dh = vec![T::zero(); d];
                    for (r, ((gr, hr), xr)) in g.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = gr[j] * gv[j];
                        }
                        let m1 = dh.iter().copied().sum::<T>() / dn;
                        let m2 = dh.iter().zip(hr).map(|(&a, &h)| a * h).sum::<T>() / dn;
                        for j in 0..d {
                            xr[j] = xr[j] + rstd[r] * (dh[j] - m1 - hr[j] * m2);
                        }
                    }
                }
            }
            Op::Gelu { a } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    let c = T::from_f64_lossy(GELU_C);
                    let k = T::from_f64_lossy(GELU_A);
                    let three = T::from_f64_lossy(3.0);
                    let half = T::from_f64_lossy(0.5);
                    for ((d, &x), &gi) in ga.iter_mut().zip(nodes[a.0].value.data()).zip(g) {
                        let t = (c * (x + k * x * x * x)).tanh();
                        let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
                        *d = *d + gi * half * (T::one() + t + x * dt);
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    for d in ga.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::Mean { a } => {
                if let Some(ga) = slot(grads, nodes, *a) {
                    let n = T::from_usize(ga.len().max(1)).expect("fits");
                    for d in ga.iter_mut() {
                        *d = *d + g[0] / n;
                    }
                }
            }
            Op::CrossEntropy { logits, probs, targets } => {
                if let Some(gl) = slot(grads, nodes, *logits) {
                    let q = *nodes[logits.0].value.shape().last().expect("rank >= 1");
                    let rows = (probs.len() / q).max(1);
                    let scale = g[0] / T::from_usize(rows).expect("fits");
                    for ((d, &p), &y) in gl.iter_mut().zip(probs).zip(targets) {
                        *d = *d + scale * (p - y);
                    }
                }
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` when `v` does not
/// take part in differentiation.
fn slot<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'g mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Sums `src` into `dst` cyclically (gradient of suffix broadcasting).
fn reduce_suffix<T: Scalar>(dst: &mut [T], src: &[T]) {
    if dst.is_empty() {
        return;
    }
    for row in src.chunks(dst.len()) {
        axpy(dst, row);
    }
}

fn one_hot_index<T: Scalar>(row: &[T]) -> Option<usize> {
    let mut hot = None;
    for (j, &v) in row.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return None;
            }
            hot = Some(j);
        } else if v != T::zero() {
            return None;
        }
    }
    hot
}

fn softmax_row<T: Scalar>(row: &[T], keep: Option<&[bool]>, out: &mut [T]) -> std::result::Result<(), ()> {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let mut max = T::neg_infinity();
    let mut any = false;
    for (j, &v) in row.iter().enumerate() {
        if kept(j) {
            any = true;
            max = max.max(v);
        }
    }
    if !any {
        return Err(());
    }
    let mut denom = T::zero();
    for (j, &v) in row.iter().enumerate() {
        out[j] = if kept(j) { (v - max).exp() } else { T::zero() };
        denom = denom + out[j];
    }
    for o in out.iter_mut() {
        *o = *o / denom;
    }
    Ok(())
}

fn check_perm(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    let ok = perm.len() == rank
        && perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
    if ok {
        Ok(())
    } else {
        Err(TensorError::Permutation { perm: perm.to_vec(), rank })
    }
}

/// Visits every output position of a strided gather in row-major order,
/// calling `f(dst_index, src_index)`.
fn walk_strided(out_shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(out_shape);
    if total == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let last = out_shape[rank - 1];
    let last_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut dst = 0;
    loop {
        let base: usize = idx.iter().zip(src_strides).map(|(i, s)| i * s).sum();
        for j in 0..last {
            f(dst + j, base + j * last_stride);
        }
        dst += last;
        if dst == total {
            return;
        }
        let mut ax = rank - 1;
        loop {
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Index arithmetic shared by the matmul forward and backward passes.
struct MatmulGeom {
    out_shape: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
    /// Offsets of each batch's operand matrices; empty for the flattened case.
    a_off: Vec<usize>,
    b_off: Vec<usize>,
    /// Rows of `a` when every leading axis folds into one big product.
    flat_rows: Option<usize>,
}

impl MatmulGeom {
    fn new(sa: &[usize], sb: &[usize], trans_b: bool) -> Result<Self> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        if sa.len() < 2 || sb.len() < 2 {
            let shape = if sa.len() < 2 { sa } else { sb };
            return Err(TensorError::Rank { op, expected: "rank >= 2", shape: shape.to_vec() });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        let mismatch = || TensorError::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() };
        if k != kb {
            return Err(mismatch());
        }
        let la = &sa[..sa.len() - 2];
        let lb = &sb[..sb.len() - 2];
        let rank = la.len().max(lb.len());
        let pad = |l: &[usize]| -> Vec<usize> {
            let mut v = vec![1; rank - l.len()];
            v.extend_from_slice(l);
            v
        };
        let (pa, pb) = (pad(la), pad(lb));
        let mut lead = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            lead.push(match (x, y) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(mismatch()),
            });
        }
        let mut out_shape = lead.clone();
        out_shape.extend([m, n]);

        let batch = numel(&lead);
        if numel(lb) == 1 && pa == lead {
            return Ok(MatmulGeom {
                out_shape,
                m,
                k,
                n,
                trans_b,
                a_off: Vec::new(),
                b_off: Vec::new(),
                flat_rows: Some(batch * m),
            });
        }
        let sta = strides(&pa);
        let stb = strides(&pb);
        let mut a_off = Vec::with_capacity(batch);
        let mut b_off = Vec::with_capacity(batch);
        let lead_strides = strides(&lead);
        for bi in 0..batch {
            let (mut ia, mut ib) = (0, 0);
            for ax in 0..rank {
                let i = (bi / lead_strides[ax]) % lead[ax];
                if pa[ax] != 1 {
                    ia += i * sta[ax];
                }
                if pb[ax] != 1 {
                    ib += i * stb[ax];
                }
            }
            a_off.push(ia * m * k);
            b_off.push(ib * k * n);
        }
        Ok(MatmulGeom { out_shape, m, k, n, trans_b, a_off, b_off, flat_rows: None })
    }

    fn out_len(&self) -> usize {
        numel(&self.out_shape)
    }

    fn b_ref(&self, off: usize) -> MatRef {
        if self.trans_b {
            MatRef::row_major(off, self.k).t()
        } else {
            MatRef::row_major(off, self.n)
        }
    }

    fn forward<T: Scalar>(&self, a: &[T], b: &[T], c: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if let Some(rows) = self.flat_rows {
            gemm(rows, k, n, a, MatRef::row_major(0, k), b, self.b_ref(0), T::zero(), c, MatRef::row_major(0, n));
            return;
        }
        for (i, (&ao, &bo)) in self.a_off.iter().zip(&self.b_off).enumerate() {
            let cr = MatRef::row_major(i * m * n, n);
            gemm(m, k, n, a, MatRef::row_major(ao, k), b, self.b_ref(bo), T::zero(), c, cr);
        }
    }

    /// `ga += g @ bᵀ`
    fn grad_a<T: Scalar>(&self, g: &[T], b: &[T], ga: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let one = T::one();
        if let Some(rows) = self.flat_rows {
            gemm(rows, n, k, g, MatRef::row_major(0, n), b, self.b_ref(0).t(), one, ga, MatRef::row_major(0, k));
            return;
        }
        for (i, (&ao, &bo)) in self.a_off.iter().zip(&self.b_off).enumerate() {
            let gr = MatRef::row_major(i * m * n, n);
            gemm(m, n, k, g, gr, b, self.b_ref(bo).t(), one, ga, MatRef::row_major(ao, k));
        }
    }

    /// `gb += aᵀ @ g`, stored in `b`'s physical layout.
    fn grad_b<T: Scalar>(&self, g: &[T], a: &[T], gb: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let one = T::one();
        let mut run = |rows: usize, ao: usize, go: usize, bo: usize| {
            let ar = MatRef::row_major(ao, k);
            let gr = MatRef::row_major(go, n);
            if self.trans_b {
                // gb (n×k) += gᵀ (n×rows) @ a (rows×k)
                gemm(n, rows, k, g, gr.t(), a, ar, one, gb, MatRef::row_major(bo, k));
            } else {
                // gb (k×n) += aᵀ (k×rows) @ g (rows×n)
                gemm(k, rows, n, a, ar.t(), g, gr, one, gb, MatRef::row_major(bo, n));
            }
        };
        if let Some(rows) = self.flat_rows {
            run(rows, 0, 0, 0);
            return;
        }
        for (i, (&ao, &bo)) in self.a_off.iter().zip(&self.b_off).enumerate() {
            run(m, ao, i * m * n, bo);
        }
    }
}
