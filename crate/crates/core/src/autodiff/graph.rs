//! Wengert-list reverse-mode differentiation over row-major matrices.
//!
//! Every node is a 2-D value; vectors are single rows and scalars are 1x1.
//! Nodes only reference earlier nodes, so the graph is acyclic by construction.

use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var, bc: Bcast },
    Mul { a: Var, b: Var, bc: Bcast },
    Relu(Var),
    Exp(Var),
    Log(Var),
    SumRows(Var),
    MeanRows(Var),
    Softmax(Var),
    L2Norm { a: Var, norms: Vec<f64> },
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Gather { src: Var, idx: Vec<usize> },
}

pub struct Graph<T: Scalar> {
    shapes: Vec<(usize, usize)>,
    values: Vec<Vec<T>>,
    grads: Vec<Option<Vec<T>>>,
    needs_grad: Vec<bool>,
    ops: Vec<Op>,
    bound: Vec<(String, Var)>,
    track_params: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            needs_grad: Vec::new(),
            ops: Vec::new(),
            bound: Vec::new(),
            track_params: true,
        }
    }

    /// A graph whose parameters bind as constants: forward passes only.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, shape: (usize, usize), value: Vec<T>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.0 * shape.1, value.len());
        self.shapes.push(shape);
        self.values.push(value);
        self.grads.push(None);
        self.needs_grad.push(needs_grad);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    fn check(&self, v: Var) {
        assert!(v.0 < self.values.len(), "variable {v:?} does not belong to this graph");
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Var {
        assert_eq!(rows * cols, data.len(), "constant shape mismatch");
        self.push((rows, cols), data, Op::Leaf, false)
    }

    pub fn scalar(&mut self, x: T) -> Var {
        self.constant(1, 1, vec![x])
    }

    /// A leaf holding a copy of `t`; gradients are tracked when `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        self.push(t.matrix_dims(), t.data().to_vec(), Op::Leaf, requires_grad)
    }

    /// Binds the named parameter once per graph. Frozen parameters are still
    /// differentiated; freezing only affects optimizer updates.
    pub fn param(&mut self, set: &ParamSet<T>, name: &str) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(n, _)| n == name) {
            return v;
        }
        let t = set.expect(name);
        let v = self.leaf(t, self.track_params);
        self.bound.push((name.to_string(), v));
        v
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.shapes[v.0]
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.values[v.0]
    }

    pub fn scalar_value(&self, v: Var) -> T {
        assert_eq!(self.values[v.0].len(), 1, "not a scalar");
        self.values[v.0][0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shapes[v.0];
        Tensor::new(vec![r, c], self.values[v.0].clone())
    }

    // ---- primitives ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        self.check(a);
        self.check(b);
        let (m, k) = self.shapes[a.0];
        let (br, bc) = self.shapes[b.0];
        let (kb, n, bs) = if trans_b { (bc, br, (1, bc)) } else { (br, bc, (bc, 1)) };
        assert_eq!(k, kb, "matmul inner dimensions differ: {m}x{k} by {br}x{bc} (trans_b={trans_b})");
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, &self.values[a.0], (k, 1), &self.values[b.0], bs, T::zero(), &mut out);
        let ng = self.needs_grad[a.0] || self.needs_grad[b.0];
        self.push((m, n), out, Op::MatMul { a, b, trans_b }, ng)
    }

    fn bcast(&self, a: Var, b: Var) -> Bcast {
        let sa = self.shapes[a.0];
        let sb = self.shapes[b.0];
        if sa == sb {
            Bcast::Same
        } else if sb == (1, 1) {
            Bcast::Scalar
        } else if sb == (1, sa.1) {
            Bcast::Row
        } else if sb == (sa.0, 1) {
            Bcast::Col
        } else {
            panic!("cannot broadcast {sb:?} onto {sa:?}")
        }
    }

    #[inline]
    fn bidx(bc: Bcast, i: usize, j: usize, cols: usize) -> usize {
        match bc {
            Bcast::Same => i * cols + j,
            Bcast::Row => j,
            Bcast::Col => i,
            Bcast::Scalar => 0,
        }
    }

    /// Elementwise `a + b`, with `b` broadcast as a row, a column, or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        let bc = self.bcast(a, b);
        let (r, c) = self.shapes[a.0];
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(av[i * c + j] + bv[Self::bidx(bc, i, j, c)]);
            }
        }
        let ng = self.needs_grad[a.0] || self.needs_grad[b.0];
        self.push((r, c), out, Op::Add { a, b, bc }, ng)
    }

    /// Elementwise `a * b` with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        let bc = self.bcast(a, b);
        let (r, c) = self.shapes[a.0];
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(av[i * c + j] * bv[Self::bidx(bc, i, j, c)]);
            }
        }
        let ng = self.needs_grad[a.0] || self.needs_grad[b.0];
        self.push((r, c), out, Op::Mul { a, b, bc }, ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        self.check(a);
        let out = self.values[a.0].iter().map(|&x| f(x)).collect();
        let ng = self.needs_grad[a.0];
        self.push(self.shapes[a.0], out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, T::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, T::ln, Op::Log(a))
    }

    /// Sums each row: `r x c -> r x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        self.check(a);
        let (r, c) = self.shapes[a.0];
        let out = self.values[a.0]
            .chunks(c)
            .map(|row| row.iter().fold(T::zero(), |s, &x| s + x))
            .collect();
        let ng = self.needs_grad[a.0];
        self.push((r, 1), out, Op::SumRows(a), ng)
    }

    /// Mean over rows: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        self.check(a);
        let (r, c) = self.shapes[a.0];
        let mut out = vec![T::zero(); c];
        for row in self.values[a.0].chunks(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        let inv = T::one() / T::of(r as f64);
        out.iter_mut().for_each(|o| *o = *o * inv);
        let ng = self.needs_grad[a.0];
        self.push((1, c), out, Op::MeanRows(a), ng)
    }

    /// Row-wise softmax, computed with the row maximum subtracted.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.check(a);
        let (r, c) = self.shapes[a.0];
        let mut out = Vec::with_capacity(r * c);
        for row in self.values[a.0].chunks(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let start = out.len();
            let mut z = T::zero();
            for &x in row {
                let e = (x - m).exp();
                z = z + e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e = *e / z);
        }
        let ng = self.needs_grad[a.0];
        self.push((r, c), out, Op::Softmax(a), ng)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a);
        let (r, c) = self.shapes[a.0];
        let mut out = Vec::with_capacity(r * c);
        let mut norms = Vec::with_capacity(r);
        for (i, row) in self.values[a.0].chunks(c).enumerate() {
            let n = row
                .iter()
                .map(|&x| x.as_f64() * x.as_f64())
                .sum::<f64>()
                .sqrt();
            if !(n > 1e-12) {
                return Err(Error::DegenerateEmbedding {
                    norm: n,
                    context: Some(format!("row {i}")),
                });
            }
            let nt = T::of(n);
            out.extend(row.iter().map(|&x| x / nt));
            norms.push(n);
        }
        let ng = self.needs_grad[a.0];
        Ok(self.push((r, c), out, Op::L2Norm { a, norms }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let c = self.shapes[parts[0].0].1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            self.check(p);
            assert_eq!(self.shapes[p.0].1, c, "concat_rows column mismatch");
            rows += self.shapes[p.0].0;
            out.extend_from_slice(&self.values[p.0]);
        }
        let ng = parts.iter().any(|p| self.needs_grad[p.0]);
        self.push((rows, c), out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.check(a);
        let (r, c) = self.shapes[a.0];
        assert!(len > 0 && start + len <= r, "row slice {start}+{len} out of {r}");
        let out = self.values[a.0][start * c..(start + len) * c].to_vec();
        let ng = self.needs_grad[a.0];
        self.push((len, c), out, Op::SliceRows { a, start }, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.check(a);
        let (r, c) = self.shapes[a.0];
        assert!(len > 0 && start + len <= c, "column slice {start}+{len} out of {c}");
        let out = self.values[a.0]
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let ng = self.needs_grad[a.0];
        self.push((r, len), out, Op::SliceCols { a, start }, ng)
    }

    /// Embedding lookup: row `i` of the output is row `idx[i]` of `src`.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Var {
        self.check(src);
        let (r, c) = self.shapes[src.0];
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "gather index {i} out of {r} rows");
            out.extend_from_slice(&self.values[src.0][i * c..(i + 1) * c]);
        }
        let ng = self.needs_grad[src.0];
        self.push(
            (idx.len(), c),
            out,
            Op::Gather {
                src,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    // ---- compositions ----

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let s = self.scalar(T::of(k));
        self.mul(a, s)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// `x * w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add(y, b),
            None => y,
        }
    }

    /// Sum of every element, as a 1x1 node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let r = self.shapes[a.0].0;
        let s = self.sum_rows(a);
        let m = self.mean_rows(s);
        self.scale(m, r as f64)
    }

    // ---- reverse pass ----

    /// Back-propagates from a scalar node. Gradients accumulate additively into
    /// every node that depends on a tracked leaf.
    pub fn backward(&mut self, loss: Var) {
        self.check(loss);
        assert_eq!(
            self.values[loss.0].len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.shapes[loss.0]
        );
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
            self.propagate(i, &op, &g);
            self.ops[i] = op;
            self.grads[i] = Some(g);
        }
    }

    fn grad_buf(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
        grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn propagate(&mut self, i: usize, op: &Op, g: &[T]) {
        let (r, c) = self.shapes[i];
        let values = &self.values;
        let grads = &mut self.grads;
        let ng = &self.needs_grad;
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.shapes[a.0];
                let n = c;
                if ng[a.0] {
                    // dA = G * B^T  (or G * B when b was transposed)
                    let bs = if trans_b { (k, 1) } else { (1, n) };
                    let da = Self::grad_buf(grads, a, m * k);
                    T::gemm(m, n, k, g, (n, 1), &values[b.0], bs, T::one(), da);
                }
                if ng[b.0] {
                    if trans_b {
                        // dB (n x k) = G^T * A
                        let db = Self::grad_buf(grads, b, n * k);
                        T::gemm(n, m, k, g, (1, n), &values[a.0], (k, 1), T::one(), db);
                    } else {
                        // dB (k x n) = A^T * G
                        let db = Self::grad_buf(grads, b, k * n);
                        T::gemm(k, m, n, &values[a.0], (1, k), g, (n, 1), T::one(), db);
                    }
                }
            }
            Op::Add { a, b, bc } => {
                if ng[a.0] {
                    let da = Self::grad_buf(grads, a, r * c);
                    for (d, &x) in da.iter_mut().zip(g) {
                        *d = *d + x;
                    }
                }
                if ng[b.0] {
                    let len = values[b.0].len();
                    let db = Self::grad_buf(grads, b, len);
                    for ii in 0..r {
                        for jj in 0..c {
                            let k = Self::bidx(bc, ii, jj, c);
                            db[k] = db[k] + g[ii * c + jj];
                        }
                    }
                }
            }
            Op::Mul { a, b, bc } => {
                let (av, bv) = (&values[a.0], &values[b.0]);
                if ng[a.0] {
                    let da = Self::grad_buf(grads, a, r * c);
                    for ii in 0..r {
                        for jj in 0..c {
                            let p = ii * c + jj;
                            da[p] = da[p] + g[p] * bv[Self::bidx(bc, ii, jj, c)];
                        }
                    }
                }
                if ng[b.0] {
                    let db = Self::grad_buf(grads, b, bv.len());
                    for ii in 0..r {
                        for jj in 0..c {
                            let p = ii * c + jj;
                            let k = Self::bidx(bc, ii, jj, c);
                            db[k] = db[k] + g[p] * av[p];
                        }
                    }
                }
            }
            Op::Relu(a) => {
                let av = &values[a.0];
                let da = Self::grad_buf(grads, a, r * c);
                for p in 0..r * c {
                    if av[p] > T::zero() {
                        da[p] = da[p] + g[p];
                    }
                }
            }
            Op::Exp(a) => {
                let out = &values[i];
                let da = Self::grad_buf(grads, a, r * c);
                for p in 0..r * c {
                    da[p] = da[p] + g[p] * out[p];
                }
            }
            Op::Log(a) => {
                let av = &values[a.0];
                let da = Self::grad_buf(grads, a, r * c);
                for p in 0..r * c {
                    da[p] = da[p] + g[p] / av[p];
                }
            }
            Op::SumRows(a) => {
                let (ar, ac) = self.shapes[a.0];
                let da = Self::grad_buf(grads, a, ar * ac);
                for ii in 0..ar {
                    for jj in 0..ac {
                        da[ii * ac + jj] = da[ii * ac + jj] + g[ii];
                    }
                }
            }
            Op::MeanRows(a) => {
                let (ar, ac) = self.shapes[a.0];
                let inv = T::one() / T::of(ar as f64);
                let da = Self::grad_buf(grads, a, ar * ac);
                for ii in 0..ar {
                    for jj in 0..ac {
                        da[ii * ac + jj] = da[ii * ac + jj] + g[jj] * inv;
                    }
                }
            }
            Op::Softmax(a) => {
                let out = &values[i];
                let da = Self::grad_buf(grads, a, r * c);
                for ii in 0..r {
                    let row = ii * c..(ii + 1) * c;
                    let dot = out[row.clone()]
                        .iter()
                        .zip(&g[row.clone()])
                        .fold(T::zero(), |s, (&y, &gy)| s + y * gy);
                    for p in row {
                        da[p] = da[p] + out[p] * (g[p] - dot);
                    }
                }
            }
            Op::L2Norm { a, ref norms } => {
                let out = &values[i];
                let da = Self::grad_buf(grads, a, r * c);
                for ii in 0..r {
                    let row = ii * c..(ii + 1) * c;
                    let dot = out[row.clone()]
                        .iter()
                        .zip(&g[row.clone()])
                        .fold(T::zero(), |s, (&y, &gy)| s + y * gy);
                    let inv = T::of(1.0 / norms[ii]);
                    for p in row {
                        da[p] = da[p] + (g[p] - out[p] * dot) * inv;
                    }
                }
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = values[p.0].len();
                    if ng[p.0] {
                        let dp = Self::grad_buf(grads, p, len);
                        for (d, &x) in dp.iter_mut().zip(&g[offset..offset + len]) {
                            *d = *d + x;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceRows { a, start } => {
                let len = values[a.0].len();
                let da = Self::grad_buf(grads, a, len);
                for (d, &x) in da[start * c..(start + r) * c].iter_mut().zip(g) {
                    *d = *d + x;
                }
            }
            Op::SliceCols { a, start } => {
                let ac = self.shapes[a.0].1;
                let len = values[a.0].len();
                let da = Self::grad_buf(grads, a, len);
                for ii in 0..r {
                    for jj in 0..c {
                        let p = ii * ac + start + jj;
                        da[p] = da[p] + g[ii * c + jj];
                    }
                }
            }
            Op::Gather { src, ref idx } => {
                let len = values[src.0].len();
                let ds = Self::grad_buf(grads, src, len);
                for (row, &k) in idx.iter().enumerate() {
                    for jj in 0..c {
                        ds[k * c + jj] = ds[k * c + jj] + g[row * c + jj];
                    }
                }
            }
        }
    }
}

/// Runs `backward` from `loss` and adds every bound parameter's gradient into
/// the matching tensor of `params`.
pub fn backward_into<T: Scalar>(graph: &mut Graph<T>, loss: Var, params: &mut ParamSet<T>) {
    graph.backward(loss);
    for (name, v) in graph.bound_params() {
        if let (Some(g), Some(t)) = (graph.grad(v), params.get_mut(name)) {
            t.accumulate_grad(g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]), true);
        let sq = g.mul(x, x);
        let loss = g.sum_all(sq);
        g.backward(loss);
        assert_eq!(g.scalar_value(loss), 14.0);
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn relu_blocks_negative_branch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(1, 1, vec![-1.0]);
        let c = g.leaf(&Tensor::scalar(5.0), true);
        let r = g.relu(x);
        let loss = g.mul(r, c);
        g.backward(loss);
        assert_eq!(g.grad(c).unwrap(), &[0.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::new(vec![2], vec![1.0, 2.0]), true);
        g.backward(x);
    }

    #[test]
    #[should_panic(expected = "does not belong")]
    fn foreign_variable_is_rejected() {
        let mut g = Graph::<f64>::new();
        g.relu(Var(3));
    }

    #[test]
    fn l2_normalize_three_four() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(1, 2, vec![3.0, 4.0]);
        let y = g.l2_normalize_rows(x).unwrap();
        assert_eq!(g.value(y), &[0.6, 0.8]);
    }

    #[test]
    fn l2_normalize_zero_is_degenerate() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(1, 4, vec![0.0; 4]);
        assert!(matches!(
            g.l2_normalize_rows(x),
            Err(Error::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn unit_vector_is_fixed_point() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(1, 3, vec![0.0, 1.0, 0.0]);
        let y = g.l2_normalize_rows(x).unwrap();
        assert_eq!(g.value(y), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        // loss = sum(x) + sum(x) -> grad 2
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::new(vec![2], vec![0.3, -0.1]), true);
        let a = g.sum_all(x);
        let b = g.sum_all(x);
        let loss = g.add(a, b);
        g.backward(loss);
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn matmul_nt_matches_explicit_transpose() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = g.constant(2, 3, vec![1., 0., 1., 0., 1., 0.]);
        let bt = g.constant(3, 2, vec![1., 0., 0., 1., 1., 0.]);
        let x = g.matmul_nt(a, b);
        let y = g.matmul(a, bt);
        assert_eq!(g.value(x), g.value(y));
        assert_eq!(g.value(x), &[4., 2., 10., 5.]);
    }

    #[test]
    fn gather_scatters_back() {
        let mut g = Graph::<f64>::new();
        let t = g.leaf(&Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]), true);
        let rows = g.gather_rows(t, &[2, 0, 2]);
        assert_eq!(g.value(rows), &[5., 6., 1., 2., 5., 6.]);
        let loss = g.sum_all(rows);
        g.backward(loss);
        assert_eq!(g.grad(t).unwrap(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(1, 2, vec![1.0, 2.0]);
        let x = g.leaf(&Tensor::new(vec![2], vec![3.0, 4.0]), true);
        let y = g.mul(x, c);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
