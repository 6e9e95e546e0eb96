//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every forward operation appends a node holding its value and the recipe to
//! push gradients back to its inputs. Parameters enter as leaves tagged with
//! their index in the owning model's declaration order, so after `backward`
//! the gradient set lines up with the parameter list one-to-one.
//!
//! Nodes whose inputs are all constants (or frozen parameters) are marked as
//! not needing gradients and are skipped during the backward sweep.

use std::sync::Arc;

use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-token rotary angles: `cos[t][m]`, `sin[t][m]` for pair `m` of token `t`.
#[derive(Clone, Debug)]
pub struct RopeTable<F> {
    pub cos: Mat<F>,
    pub sin: Mat<F>,
}

impl<F: Real> RopeTable<F> {
    /// Angles `position · base^(−2m/d_head)` for each pair `m < d_head/2`.
    pub fn new(positions: &[usize], d_head: usize, base: f64) -> Self {
        assert!(d_head % 2 == 0, "rotary dimension must be even");
        let half = d_head / 2;
        let mut cos = Mat::zeros(positions.len(), half);
        let mut sin = Mat::zeros(positions.len(), half);
        for (t, &p) in positions.iter().enumerate() {
            for m in 0..half {
                let freq = base.powf(-2.0 * m as f64 / d_head as f64);
                let angle = p as f64 * freq;
                cos.set(t, m, F::of(angle.cos()));
                sin.set(t, m, F::of(angle.sin()));
            }
        }
        Self { cos, sin }
    }
}

enum Op<F> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, F),
    MaskConst(Var, Arc<Vec<F>>),
    Silu(Var),
    RmsNorm(Var, F),
    Gather(Var, Arc<Vec<Option<usize>>>),
    EmbedRows(Var, Arc<Vec<usize>>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    RepeatRows(Var),
    Rope(Var, Arc<RopeTable<F>>),
    MaskedSoftmax(Var),
    CrossEntropy(Var, Arc<Vec<(usize, usize)>>),
}

struct Node<F> {
    value: Mat<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn silu<F: Real>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

fn silu_grad<F: Real>(x: F) -> F {
    let s = F::one() / (F::one() + (-x).exp());
    s * (F::one() + x * (F::one() - s))
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Mat<F>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for the parameter at position `index` of the owner's declaration order.
    pub fn param(&mut self, index: usize, value: Mat<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Param(index), requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds the 1×n row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let row = self.value(r);
        assert_eq!((row.rows, row.cols), (1, self.value(a).cols), "add_row shape");
        let row = row.data.clone();
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&row) {
                *x = *x + b;
            }
        }
        let ng = self.ng(a) || self.ng(r);
        self.push(v, Op::AddRow(a, r), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p * q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Multiplies every row of `a` elementwise by the 1×n row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let row = self.value(r);
        assert_eq!((row.rows, row.cols), (1, self.value(a).cols), "mul_row shape");
        let row = row.data.clone();
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            for (x, &g) in v.row_mut(i).iter_mut().zip(&row) {
                *x = *x * g;
            }
        }
        let ng = self.ng(a) || self.ng(r);
        self.push(v, Op::MulRow(a, r), ng)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mask_const(&mut self, a: Var, mask: Arc<Vec<F>>) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), mask.len(), "mask_const length");
        let data = x.data.iter().zip(mask.iter()).map(|(&p, &m)| p * m).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        let ng = self.ng(a);
        self.push(v, Op::MaskConst(a, mask), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(silu);
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    /// Row-wise `x / sqrt(mean(x²) + eps)`.
    pub fn rms_norm(&mut self, a: Var, eps: F) -> Var {
        let x = self.value(a);
        let n = F::from_usize(x.cols).unwrap();
        let mut v = x.clone();
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let ms = row.iter().map(|&y| y * y).sum::<F>() / n;
            let inv = F::one() / (ms + eps).sqrt();
            for y in row.iter_mut() {
                *y = *y * inv;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::RmsNorm(a, eps), ng)
    }

    /// Output of shape `rows × cols` with `out[i] = src[index[i]]`, or zero where the index is `None`.
    pub fn gather(&mut self, src: Var, index: Arc<Vec<Option<usize>>>, rows: usize, cols: usize) -> Var {
        assert_eq!(rows * cols, index.len(), "gather shape");
        let s = &self.value(src).data;
        let data = index.iter().map(|i| i.map_or(F::zero(), |k| s[k])).collect();
        let v = Mat::from_vec(rows, cols, data);
        let ng = self.ng(src);
        self.push(v, Op::Gather(src, index), ng)
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn embed_rows(&mut self, table: Var, ids: Arc<Vec<usize>>) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(id));
        }
        let ng = self.ng(table);
        self.push(v, Op::EmbedRows(table, ids), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let v = Mat::from_fn(x.rows, len, |r, c| x.get(r, start + c));
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + x.cols].copy_from_slice(x.row(r));
            }
            off += x.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Column means as a 1×n row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = F::from_usize(x.rows).unwrap();
        let mut v = Mat::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, &y) in v.data.iter_mut().zip(x.row(r)) {
                *o = *o + y;
            }
        }
        for o in v.data.iter_mut() {
            *o = *o / n;
        }
        let ng = self.ng(a);
        self.push(v, Op::MeanRows(a), ng)
    }

    /// Stacks the 1×n row `a` into `rows` copies.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, 1, "repeat_rows expects a row");
        let v = Mat::from_fn(rows, x.cols, |_, c| x.data[c]);
        let ng = self.ng(a);
        self.push(v, Op::RepeatRows(a), ng)
    }

    /// Rotates consecutive column pairs `(2m, 2m+1)` of each row by the token's angles.
    pub fn rope(&mut self, a: Var, table: Arc<RopeTable<F>>) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, table.cos.rows, "rope token count");
        assert_eq!(x.cols, 2 * table.cos.cols, "rope width");
        let mut v = x.clone();
        for t in 0..x.rows {
            for m in 0..table.cos.cols {
                let (c, s) = (table.cos.get(t, m), table.sin.get(t, m));
                let (x0, x1) = (x.get(t, 2 * m), x.get(t, 2 * m + 1));
                v.set(t, 2 * m, x0 * c - x1 * s);
                v.set(t, 2 * m + 1, x0 * s + x1 * c);
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::Rope(a, table), ng)
    }

    /// Row-wise softmax restricted to `visible` entries; hidden entries get probability exactly 0.
    pub fn masked_softmax(&mut self, a: Var, visible: Arc<Vec<bool>>) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), visible.len(), "mask shape");
        let mut v = Mat::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let vis = &visible[r * x.cols..(r + 1) * x.cols];
            let row = x.row(r);
            let mut mx = F::neg_infinity();
            for (&y, &ok) in row.iter().zip(vis) {
                if ok && y > mx {
                    mx = y;
                }
            }
            assert!(mx > F::neg_infinity(), "attention row {r} has no visible position");
            let mut z = F::zero();
            let out = v.row_mut(r);
            for ((o, &y), &ok) in out.iter_mut().zip(row).zip(vis) {
                if ok {
                    *o = (y - mx).exp();
                    z = z + *o;
                }
            }
            for o in out.iter_mut() {
                *o = *o / z;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::MaskedSoftmax(a), ng)
    }

    /// Mean negative log-likelihood of `(row, class)` targets under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Arc<Vec<(usize, usize)>>) -> Var {
        assert!(!targets.is_empty(), "cross_entropy needs at least one target");
        let x = self.value(logits);
        let mut total = F::zero();
        for &(r, k) in targets.iter() {
            let row = x.row(r);
            let mx = row.iter().fold(F::neg_infinity(), |m, &y| m.max(y));
            let lse = row.iter().map(|&y| (y - mx).exp()).sum::<F>().ln() + mx;
            total = total + lse - row[k];
        }
        let n = F::from_usize(targets.len()).unwrap();
        let v = Mat::from_vec(1, 1, vec![total / n]);
        let ng = self.ng(logits);
        self.push(v, Op::CrossEntropy(logits, targets), ng)
    }

    /// Reverse sweep from the scalar `out`. Returns gradients for parameter indices `0..n_params`
    /// (`None` where the parameter was absent, frozen, or unreached).
    pub fn backward(&self, out: Var, n_params: usize) -> Vec<Option<Mat<F>>> {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::from_vec(1, 1, vec![F::one()]));
        let mut params: Vec<Option<Mat<F>>> = (0..n_params).map(|_| None).collect();

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(k) => accumulate(&mut params[*k], g),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b);
                        let dst = slot(&mut grads, *a, self.value(*a));
                        matmul_bt_acc(&g, bv, dst);
                    }
                    if self.ng(*b) {
                        let av = self.value(*a);
                        let dst = slot(&mut grads, *b, self.value(*b));
                        matmul_at_acc(av, &g, dst);
                    }
                }
                Op::MatMulBt(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b);
                        let dst = slot(&mut grads, *a, self.value(*a));
                        matmul_acc(&g, bv, dst);
                    }
                    if self.ng(*b) {
                        let av = self.value(*a);
                        let dst = slot(&mut grads, *b, self.value(*b));
                        matmul_at_acc(&g, av, dst);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        slot(&mut grads, *a, &g).add_assign(&g);
                    }
                    if self.ng(*b) {
                        slot(&mut grads, *b, &g).add_assign(&g);
                    }
                }
                Op::AddRow(a, r) => {
                    if self.ng(*r) {
                        let dst = slot(&mut grads, *r, self.value(*r));
                        for i in 0..g.rows {
                            for (d, &x) in dst.data.iter_mut().zip(g.row(i)) {
                                *d = *d + x;
                            }
                        }
                    }
                    if self.ng(*a) {
                        slot(&mut grads, *a, &g).add_assign(&g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let bv = &self.value(*b).data;
                        let dst = slot(&mut grads, *a, &g);
                        for ((d, &x), &y) in dst.data.iter_mut().zip(&g.data).zip(bv) {
                            *d = *d + x * y;
                        }
                    }
                    if self.ng(*b) {
                        let av = &self.value(*a).data;
                        let dst = slot(&mut grads, *b, &g);
                        for ((d, &x), &y) in dst.data.iter_mut().zip(&g.data).zip(av) {
                            *d = *d + x * y;
                        }
                    }
                }
                Op::MulRow(a, r) => {
                    let av = self.value(*a);
                    let rv = self.value(*r);
                    if self.ng(*r) {
                        let dst = slot(&mut grads, *r, rv);
                        for i in 0..g.rows {
                            for ((d, &x), &y) in dst.data.iter_mut().zip(g.row(i)).zip(av.row(i)) {
                                *d = *d + x * y;
                            }
                        }
                    }
                    if self.ng(*a) {
                        let dst = slot(&mut grads, *a, av);
                        for i in 0..g.rows {
                            for ((d, &x), &y) in dst.row_mut(i).iter_mut().zip(g.row(i)).zip(&rv.data) {
                                *d = *d + x * y;
                            }
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let dst = slot(&mut grads, *a, &g);
                    for (d, &x) in dst.data.iter_mut().zip(&g.data) {
                        *d = *d + x * *s;
                    }
                }
                Op::MaskConst(a, m) => {
                    let dst = slot(&mut grads, *a, &g);
                    for ((d, &x), &y) in dst.data.iter_mut().zip(&g.data).zip(m.iter()) {
                        *d = *d + x * y;
                    }
                }
                Op::Silu(a) => {
                    let av = &self.value(*a).data;
                    let dst = slot(&mut grads, *a, &g);
                    for ((d, &x), &y) in dst.data.iter_mut().zip(&g.data).zip(av) {
                        *d = *d + x * silu_grad(y);
                    }
                }
                Op::RmsNorm(a, eps) => {
                    let xv = self.value(*a);
                    let yv = &node.value;
                    let n = F::from_usize(xv.cols).unwrap();
                    let dst = slot(&mut grads, *a, xv);
                    for r in 0..xv.rows {
                        let x = xv.row(r);
                        let ms = x.iter().map(|&y| y * y).sum::<F>() / n;
                        let inv = F::one() / (ms + *eps).sqrt();
                        let gy = g.row(r);
                        let dot: F = gy.iter().zip(yv.row(r)).map(|(&p, &q)| p * q).sum();
                        for ((d, &gi), &yi) in dst.row_mut(r).iter_mut().zip(gy).zip(yv.row(r)) {
                            *d = *d + inv * (gi - yi * dot / n);
                        }
                    }
                }
                Op::Gather(src, index) => {
                    let dst = slot(&mut grads, *src, self.value(*src));
                    for (&x, k) in g.data.iter().zip(index.iter()) {
                        if let Some(k) = *k {
                            dst.data[k] = dst.data[k] + x;
                        }
                    }
                }
                Op::EmbedRows(table, ids) => {
                    let dst = slot(&mut grads, *table, self.value(*table));
                    for (i, &id) in ids.iter().enumerate() {
                        for (d, &x) in dst.row_mut(id).iter_mut().zip(g.row(i)) {
                            *d = *d + x;
                        }
                    }
                }
                Op::SliceCols(a, start) => {
                    let dst = slot(&mut grads, *a, self.value(*a));
                    for r in 0..g.rows {
                        let drow = &mut dst.row_mut(r)[*start..*start + g.cols];
                        for (d, &x) in drow.iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        if self.ng(p) {
                            let dst = slot(&mut grads, p, self.value(p));
                            for r in 0..g.rows {
                                for (d, &x) in dst.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                    *d = *d + x;
                                }
                            }
                        }
                        off += w;
                    }
                }
                Op::MeanRows(a) => {
                    let xv = self.value(*a);
                    let n = F::from_usize(xv.rows).unwrap();
                    let dst = slot(&mut grads, *a, xv);
                    for r in 0..xv.rows {
                        for (d, &x) in dst.row_mut(r).iter_mut().zip(&g.data) {
                            *d = *d + x / n;
                        }
                    }
                }
                Op::RepeatRows(a) => {
                    let dst = slot(&mut grads, *a, self.value(*a));
                    for r in 0..g.rows {
                        for (d, &x) in dst.data.iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                }
                Op::Rope(a, table) => {
                    let dst = slot(&mut grads, *a, self.value(*a));
                    for t in 0..g.rows {
                        for m in 0..table.cos.cols {
                            let (c, s) = (table.cos.get(t, m), table.sin.get(t, m));
                            let (g0, g1) = (g.get(t, 2 * m), g.get(t, 2 * m + 1));
                            let d0 = dst.get(t, 2 * m) + g0 * c + g1 * s;
                            let d1 = dst.get(t, 2 * m + 1) - g0 * s + g1 * c;
                            dst.set(t, 2 * m, d0);
                            dst.set(t, 2 * m + 1, d1);
                        }
                    }
                }
                Op::MaskedSoftmax(a) => {
                    let p = &node.value;
                    let dst = slot(&mut grads, *a, p);
                    for r in 0..p.rows {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let dot: F = pr.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                        for ((d, &pi), &gi) in dst.row_mut(r).iter_mut().zip(pr).zip(gr) {
                            *d = *d + pi * (gi - dot);
                        }
                    }
                }
                Op::CrossEntropy(logits, targets) => {
                    let xv = self.value(*logits);
                    let scale = g.data[0] / F::from_usize(targets.len()).unwrap();
                    let dst = slot(&mut grads, *logits, xv);
                    for &(r, k) in targets.iter() {
                        let row = xv.row(r);
                        let mx = row.iter().fold(F::neg_infinity(), |m, &y| m.max(y));
                        let z: F = row.iter().map(|&y| (y - mx).exp()).sum();
                        let drow = dst.row_mut(r);
                        for (j, (d, &y)) in drow.iter_mut().zip(row).enumerate() {
                            let mut p = (y - mx).exp() / z;
                            if j == k {
                                p = p - F::one();
                            }
                            *d = *d + scale * p;
                        }
                    }
                }
            }
        }
        params
    }
}

fn slot<'a, F: Real>(grads: &'a mut [Option<Mat<F>>], v: Var, like: &Mat<F>) -> &'a mut Mat<F> {
    grads[v.0].get_or_insert_with(|| Mat::zeros(like.rows, like.cols))
}

fn accumulate<F: Real>(dst: &mut Option<Mat<F>>, g: Mat<F>) {
    match dst {
        Some(d) => d.add_assign(&g),
        None => *dst = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(scalar)/d(param) for a builder closure over two parameters.
    fn check(build: impl Fn(&mut Tape<f64>, Var, Var) -> Var, a: Mat<f64>, b: Mat<f64>) {
        let run = |a: &Mat<f64>, b: &Mat<f64>| {
            let mut t = Tape::new();
            let va = t.param(0, a.clone(), true);
            let vb = t.param(1, b.clone(), true);
            let out = build(&mut t, va, vb);
            (t.value(out).data[0], t.backward(out, 2))
        };
        let (_, grads) = run(&a, &b);
        let eps = 1e-6;
        for (pi, base) in [a.clone(), b.clone()].iter().enumerate() {
            for k in 0..base.len() {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus.data[k] += eps;
                minus.data[k] -= eps;
                let (fp, fm) = if pi == 0 {
                    (run(&plus, &b).0, run(&minus, &b).0)
                } else {
                    (run(&a, &plus).0, run(&a, &minus).0)
                };
                let num = (fp - fm) / (2.0 * eps);
                let ana = grads[pi].as_ref().map_or(0.0, |g| g.data[k]);
                assert!((num - ana).abs() <= 1e-6 * (1.0 + num.abs()), "param {pi} coord {k}: {ana} vs {num}");
            }
        }
    }

    /// Reduces any matrix to a scalar through a fixed random projection, so every entry matters.
    fn reduce(t: &mut Tape<f64>, x: Var) -> Var {
        let (r, c) = t.value(x).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = t.constant(rand_mat(&mut rng, c, 1));
        let y = t.matmul(x, w);
        let ones = t.constant(Mat::from_fn(1, r, |_, _| 1.0));
        t.matmul(ones, y)
    }

    #[test]
    fn matmul_family_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(|t, a, b| { let y = t.matmul(a, b); reduce(t, y) }, rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 4, 2));
        check(|t, a, b| { let y = t.matmul_bt(a, b); reduce(t, y) }, rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 5, 4));
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 3, 4));
        check(|t, a, b| { let y = t.add(a, b); let y = t.silu(y); reduce(t, y) }, a.clone(), b.clone());
        check(|t, a, b| { let y = t.mul(a, b); let y = t.scale(y, 0.3); reduce(t, y) }, a.clone(), b.clone());
        let r = rand_mat(&mut rng, 1, 4);
        check(|t, a, r| { let y = t.add_row(a, r); let y = t.mul_row(y, r); reduce(t, y) }, a.clone(), r);
        let mask = Arc::new(vec![1.0, 0.0, 2.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0, 0.0]);
        check(move |t, a, b| { let y = t.add(a, b); let y = t.mask_const(y, mask.clone()); reduce(t, y) }, a, b);
    }

    #[test]
    fn norm_and_reshaping_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 3, 2));
        check(|t, a, _| { let y = t.rms_norm(a, 1e-6); reduce(t, y) }, a.clone(), b.clone());
        check(|t, a, b| {
            let s = t.slice_cols(a, 1, 2);
            let c = t.concat_cols(&[s, b, a]);
            let m = t.mean_rows(c);
            let r = t.repeat_rows(m, 5);
            reduce(t, r)
        }, a.clone(), b.clone());
        let idx = Arc::new(vec![Some(0), None, Some(5), Some(5), Some(11), Some(2)]);
        check(move |t, a, _| { let y = t.gather(a, idx.clone(), 2, 3); reduce(t, y) }, a.clone(), b.clone());
        let ids = Arc::new(vec![2, 0, 2]);
        check(move |t, a, _| { let y = t.embed_rows(a, ids.clone()); reduce(t, y) }, a, b);
    }

    #[test]
    fn attention_pieces_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = Arc::new(RopeTable::new(&[0, 3, 1], 4, 10000.0));
        check(move |t, a, _| { let y = t.rope(a, table.clone()); reduce(t, y) }, rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 1, 1));
        let vis = Arc::new(vec![true, false, true, true, true, false, false, true, true]);
        check(move |t, a, b| { let s = t.add(a, b); let y = t.masked_softmax(s, vis.clone()); reduce(t, y) }, rand_mat(&mut rng, 3, 3), rand_mat(&mut rng, 3, 3));
        let targets = Arc::new(vec![(0, 2), (2, 0), (1, 1)]);
        check(move |t, a, b| { let s = t.mul(a, b); t.cross_entropy(s, targets.clone()) }, rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 3, 4));
    }

    #[test]
    fn masked_entries_are_exact_zero_and_rows_normalize() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Mat::from_vec(2, 3, vec![1.0, 50.0, -2.0, 0.5, 0.25, 9.0]));
        let p = t.masked_softmax(x, Arc::new(vec![true, false, true, true, true, false]));
        let p = t.value(p);
        assert_eq!(p.get(0, 1), 0.0);
        assert_eq!(p.get(1, 2), 0.0);
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.param(0, Mat::from_vec(1, 2, vec![1.0, 2.0]), false);
        let b = t.param(1, Mat::from_vec(2, 1, vec![3.0, 4.0]), true);
        let y = t.matmul(a, b);
        let g = t.backward(y, 2);
        assert!(g[0].is_none());
        assert_eq!(g[1].as_ref().unwrap().data, vec![1.0, 2.0]);
    }
}
