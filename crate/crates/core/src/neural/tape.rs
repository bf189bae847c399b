//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! a reverse topological order. Recurrent and attention layers are recorded
//! as single fused operations with hand-written adjoints.

use super::tensor::{matmul, matmul_into, sigmoid, Mat, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Tanh(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows { src: Var, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    GruStep {
        gx: Var,
        row0: usize,
        h: Var,
        wh: Var,
        bh: Var,
        mask: Vec<bool>,
        /// r, z, n and the recurrent n-gate pre-activation, each B x H
        saved: [Mat<S>; 4],
    },
    Attention {
        q: Var,
        kv: Var,
        lens: Vec<usize>,
        probs: Vec<Mat<S>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Mat<S>,
        count: usize,
    },
    LinComb(Vec<(Var, S)>),
}

struct Node<S> {
    value: Mat<S>,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients of one scalar with respect to every node on the tape.
pub struct Grads<S> {
    grads: Vec<Option<Mat<S>>>,
}

impl<S: Scalar> Grads<S> {
    /// `None` when the node does not influence the differentiated scalar.
    pub fn get(&self, v: Var) -> Option<&Mat<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<S>> {
        self.grads[v.0].take()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Tape<S> {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<S> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> S {
        self.nodes[v.0].value.data[0]
    }

    /// Inputs and parameters. Gradients flow into leaves but not past them,
    /// which also makes a leaf copy of a value a detached one.
    pub fn leaf(&mut self, value: Mat<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), false, self.value(b), false);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let mut value = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, value.cols), "bias shape");
        for r in 0..value.rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
        self.push(value, Op::AddBias(a, bias))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x = x.tanh());
        self.push(value, Op::Tanh(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows {
            softmax_in_place(value.row_mut(r));
        }
        self.push(value, Op::Softmax(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows, rows, "concat row mismatch");
            for r in 0..rows {
                value.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols, cols, "stack column mismatch");
            data.extend_from_slice(&m.data);
        }
        let rows = data.len() / cols.max(1);
        self.push(Mat::from_vec(rows, cols, data), Op::StackRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Var {
        let m = self.value(src);
        assert!(start + len <= m.rows, "row slice out of range");
        let data = m.data[start * m.cols..(start + len) * m.cols].to_vec();
        let value = Mat::from_vec(len, m.cols, data);
        self.push(value, Op::SliceRows { src, start })
    }

    /// Embedding lookup: row `i` of the result is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Mat::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// One masked GRU step. `gx` holds input projections (with bias) for
    /// many steps; rows `row0..row0 + B` belong to this step. Rows whose
    /// mask is false carry `h` through unchanged. Gate order is r, z, n.
    pub fn gru_step(&mut self, gx: Var, row0: usize, h: Var, wh: Var, bh: Var, mask: &[bool]) -> Var {
        let hv = self.value(h);
        let (b, hd) = hv.shape();
        assert_eq!(mask.len(), b, "mask length");
        let mut gh = matmul(hv, false, self.value(wh), false);
        let bias = &self.value(bh).data;
        let gxv = self.value(gx);
        assert_eq!(gxv.cols, 3 * hd, "gate width");
        let mut out = Mat::zeros(b, hd);
        let mut r = Mat::zeros(b, hd);
        let mut z = Mat::zeros(b, hd);
        let mut n = Mat::zeros(b, hd);
        let mut ghn = Mat::zeros(b, hd);
        for i in 0..b {
            let ghr = gh.row_mut(i);
            for (x, y) in ghr.iter_mut().zip(bias) {
                *x += *y;
            }
            let ghr = gh.row(i);
            let gxr = gxv.row(row0 + i);
            let hr = hv.row(i);
            for j in 0..hd {
                let rr = sigmoid(gxr[j] + ghr[j]);
                let zz = sigmoid(gxr[hd + j] + ghr[hd + j]);
                let nn = (gxr[2 * hd + j] + rr * ghr[2 * hd + j]).tanh();
                r.data[i * hd + j] = rr;
                z.data[i * hd + j] = zz;
                n.data[i * hd + j] = nn;
                ghn.data[i * hd + j] = ghr[2 * hd + j];
                out.data[i * hd + j] = if mask[i] {
                    (S::one() - zz) * nn + zz * hr[j]
                } else {
                    hr[j]
                };
            }
        }
        self.push(
            out,
            Op::GruStep {
                gx,
                row0,
                h,
                wh,
                bh,
                mask: mask.to_vec(),
                saved: [r, z, n, ghn],
            },
        )
    }

    /// Scaled dot-product attention. `q` is `(Tq*B) x D` and `kv` is
    /// `(Tk*B) x D`, both time-major (row `t*B + b`). Keys at or beyond
    /// `lens[b]` are masked. Keys double as values.
    pub fn attention(&mut self, q: Var, kv: Var, lens: &[usize]) -> Var {
        let bsz = lens.len();
        let qv = self.value(q);
        let kvv = self.value(kv);
        let d = qv.cols;
        assert_eq!(kvv.cols, d, "attention width");
        let tq = qv.rows / bsz;
        let tk = kvv.rows / bsz;
        let scale = S::one() / S::from_f64_lossy(d as f64).sqrt();
        let mut out: Mat<S> = Mat::zeros(qv.rows, d);
        let mut probs = Vec::with_capacity(bsz);
        let stride = (bsz * d) as isize;
        for (b, &len) in lens.iter().enumerate() {
            assert!(len >= 1 && len <= tk, "attention length out of range");
            let mut p = Mat::zeros(tq, len);
            unsafe {
                S::gemm_raw(
                    tq,
                    d,
                    len,
                    qv.data.as_ptr().add(b * d),
                    stride,
                    1,
                    kvv.data.as_ptr().add(b * d),
                    1,
                    stride,
                    S::zero(),
                    p.data.as_mut_ptr(),
                    len as isize,
                    1,
                );
            }
            for r in 0..tq {
                let row = p.row_mut(r);
                row.iter_mut().for_each(|x| *x = *x * scale);
                softmax_in_place(row);
            }
            unsafe {
                S::gemm_raw(
                    tq,
                    len,
                    d,
                    p.data.as_ptr(),
                    len as isize,
                    1,
                    kvv.data.as_ptr().add(b * d),
                    stride,
                    1,
                    S::zero(),
                    out.data.as_mut_ptr().add(b * d),
                    stride,
                    1,
                );
            }
            probs.push(p);
        }
        self.push(
            out,
            Op::Attention {
                q,
                kv,
                lens: lens.to_vec(),
                probs,
            },
        )
    }

    /// Mean token cross-entropy over rows whose mask is true; `1 x 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "target count");
        assert_eq!(lv.rows, mask.len(), "mask length");
        let mut probs = lv.clone();
        let mut total = 0.0f64;
        let mut count = 0;
        for r in 0..probs.rows {
            let row = probs.row_mut(r);
            let lse = log_sum_exp(row);
            if mask[r] {
                total += (lse - row[targets[r]]).as_f64();
                count += 1;
            }
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(
            Mat::from_vec(1, 1, vec![S::from_f64_lossy(loss)]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        )
    }

    /// `sum_i w_i * x_i` over same-shaped nodes.
    pub fn lincomb(&mut self, terms: &[(Var, S)]) -> Var {
        let mut value = Mat::zeros(self.value(terms[0].0).rows, self.value(terms[0].0).cols);
        for (v, w) in terms {
            for (o, x) in value.data.iter_mut().zip(&self.value(*v).data) {
                *o += *w * *x;
            }
        }
        self.push(value, Op::LinComb(terms.to_vec()))
    }

    /// Differentiates the `1 x 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads<S> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![S::one()]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn backprop(&self, i: usize, g: &Mat<S>, grads: &mut [Option<Mat<S>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                matmul_into(g, false, bv, true, slot(grads, *a, av), true);
                matmul_into(av, true, g, false, slot(grads, *b, bv), true);
            }
            Op::Add(a, b) => {
                slot(grads, *a, g).add_assign(g);
                slot(grads, *b, g).add_assign(g);
            }
            Op::AddBias(a, bias) => {
                slot(grads, *a, g).add_assign(g);
                let gb = slot(grads, *bias, self.value(*bias));
                for r in 0..g.rows {
                    for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                        *x += *y;
                    }
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g);
                for ((o, y), gy) in ga.data.iter_mut().zip(&node.value.data).zip(&g.data) {
                    *o += *gy * (S::one() - *y * *y);
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, g);
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot = yr.iter().zip(gr).fold(S::zero(), |acc, (p, q)| acc + *p * *q);
                    for ((o, p), q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += *p * (*q - dot);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let cols = self.value(*p).cols;
                    let gp = slot(grads, *p, self.value(*p));
                    for r in 0..g.rows {
                        for (o, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + cols]) {
                            *o += *x;
                        }
                    }
                    off += cols;
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).data.len();
                    let gp = slot(grads, *p, self.value(*p));
                    for (o, x) in gp.data.iter_mut().zip(&g.data[off..off + n]) {
                        *o += *x;
                    }
                    off += n;
                }
            }
            Op::SliceRows { src, start } => {
                let sv = self.value(*src);
                let gs = slot(grads, *src, sv);
                let off = start * sv.cols;
                for (o, x) in gs.data[off..off + g.data.len()].iter_mut().zip(&g.data) {
                    *o += *x;
                }
            }
            Op::Gather { table, ids } => {
                let gt = slot(grads, *table, self.value(*table));
                for (r, &id) in ids.iter().enumerate() {
                    for (o, x) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += *x;
                    }
                }
            }
            Op::GruStep {
                gx,
                row0,
                h,
                wh,
                bh,
                mask,
                saved,
            } => self.gru_backward(g, *gx, *row0, *h, *wh, *bh, mask, saved, grads),
            Op::Attention { q, kv, lens, probs } => self.attention_backward(g, *q, *kv, lens, probs, grads),
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let scale = g.data[0] / S::from_f64_lossy(*count as f64);
                let gl = slot(grads, *logits, probs);
                for r in 0..probs.rows {
                    if !mask[r] {
                        continue;
                    }
                    let pr = probs.row(r);
                    let gr = gl.row_mut(r);
                    for (o, p) in gr.iter_mut().zip(pr) {
                        *o += scale * *p;
                    }
                    gr[targets[r]] -= scale;
                }
            }
            Op::LinComb(terms) => {
                for (v, w) in terms {
                    let gv = slot(grads, *v, g);
                    for (o, x) in gv.data.iter_mut().zip(&g.data) {
                        *o += *w * *x;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gru_backward(
        &self,
        g: &Mat<S>,
        gx: Var,
        row0: usize,
        h: Var,
        wh: Var,
        bh: Var,
        mask: &[bool],
        saved: &[Mat<S>; 4],
        grads: &mut [Option<Mat<S>>],
    ) {
        let [r, z, n, ghn] = saved;
        let hv = self.value(h);
        let (b, hd) = hv.shape();
        let mut dgates = Mat::zeros(b, 3 * hd);
        let mut dh = Mat::zeros(b, hd);
        for i in 0..b {
            for j in 0..hd {
                let k = i * hd + j;
                let go = g.data[k];
                if !mask[i] {
                    dh.data[k] = go;
                    continue;
                }
                let (rr, zz, nn) = (r.data[k], z.data[k], n.data[k]);
                dh.data[k] = go * zz;
                let dn = go * (S::one() - zz);
                let dz = go * (hv.data[k] - nn);
                let dpre_n = dn * (S::one() - nn * nn);
                let dr = dpre_n * ghn.data[k];
                let row = &mut dgates.data[i * 3 * hd..(i + 1) * 3 * hd];
                row[j] = dr * rr * (S::one() - rr);
                row[hd + j] = dz * zz * (S::one() - zz);
                row[2 * hd + j] = dpre_n;
            }
        }
        // Gradient w.r.t. the input projection: same as dgates.
        {
            let gxv = self.value(gx);
            let ggx = slot(grads, gx, gxv);
            for i in 0..b {
                for (o, x) in ggx.row_mut(row0 + i).iter_mut().zip(dgates.row(i)) {
                    *o += *x;
                }
            }
        }
        // The recurrent n-gate pre-activation is scaled by r.
        for i in 0..b {
            for j in 0..hd {
                let k = i * hd + j;
                dgates.data[i * 3 * hd + 2 * hd + j] = dgates.data[i * 3 * hd + 2 * hd + j] * r.data[k];
            }
        }
        let whv = self.value(wh);
        matmul_into(&dgates, false, whv, true, &mut dh, true);
        slot(grads, h, hv).add_assign(&dh);
        matmul_into(hv, true, &dgates, false, slot(grads, wh, whv), true);
        let gb = slot(grads, bh, self.value(bh));
        for i in 0..b {
            for (o, x) in gb.data.iter_mut().zip(dgates.row(i)) {
                *o += *x;
            }
        }
    }

    fn attention_backward(
        &self,
        g: &Mat<S>,
        q: Var,
        kv: Var,
        lens: &[usize],
        probs: &[Mat<S>],
        grads: &mut [Option<Mat<S>>],
    ) {
        let bsz = lens.len();
        let qv = self.value(q);
        let kvv = self.value(kv);
        let d = qv.cols;
        let tq = qv.rows / bsz;
        let scale = S::one() / S::from_f64_lossy(d as f64).sqrt();
        let stride = (bsz * d) as isize;
        let mut gq: Mat<S> = Mat::zeros(qv.rows, d);
        let mut gk: Mat<S> = Mat::zeros(kvv.rows, d);
        for (b, (&len, p)) in lens.iter().zip(probs).enumerate() {
            let mut dp = Mat::zeros(tq, len);
            unsafe {
                // dP = dctx K^T
                S::gemm_raw(
                    tq,
                    d,
                    len,
                    g.data.as_ptr().add(b * d),
                    stride,
                    1,
                    kvv.data.as_ptr().add(b * d),
                    1,
                    stride,
                    S::zero(),
                    dp.data.as_mut_ptr(),
                    len as isize,
                    1,
                );
                // dK += P^T dctx
                S::gemm_raw(
                    len,
                    tq,
                    d,
                    p.data.as_ptr(),
                    1,
                    len as isize,
                    g.data.as_ptr().add(b * d),
                    stride,
                    1,
                    S::one(),
                    gk.data.as_mut_ptr().add(b * d),
                    stride,
                    1,
                );
            }
            for r in 0..tq {
                let pr = p.row(r);
                let dr = dp.row_mut(r);
                let dot = pr.iter().zip(dr.iter()).fold(S::zero(), |acc, (a, c)| acc + *a * *c);
                for (x, pp) in dr.iter_mut().zip(pr) {
                    *x = *pp * (*x - dot) * scale;
                }
            }
            unsafe {
                // dQ = dS K
                S::gemm_raw(
                    tq,
                    len,
                    d,
                    dp.data.as_ptr(),
                    len as isize,
                    1,
                    kvv.data.as_ptr().add(b * d),
                    stride,
                    1,
                    S::zero(),
                    gq.data.as_mut_ptr().add(b * d),
                    stride,
                    1,
                );
                // dK += dS^T Q
                S::gemm_raw(
                    len,
                    tq,
                    d,
                    dp.data.as_ptr(),
                    1,
                    len as isize,
                    qv.data.as_ptr().add(b * d),
                    stride,
                    1,
                    S::one(),
                    gk.data.as_mut_ptr().add(b * d),
                    stride,
                    1,
                );
            }
        }
        slot(grads, q, qv).add_assign(&gq);
        slot(grads, kv, kvv).add_assign(&gk);
    }
}

fn slot<'g, S: Scalar>(grads: &'g mut [Option<Mat<S>>], v: Var, like: &Mat<S>) -> &'g mut Mat<S> {
    grads[v.0].get_or_insert_with(|| Mat::zeros(like.rows, like.cols))
}

pub(crate) fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().fold(S::neg_infinity(), |m, x| m.max(*x));
    let sum = row.iter().fold(S::zero(), |acc, x| acc + (*x - max).exp());
    max + sum.ln()
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().fold(S::neg_infinity(), |m, x| m.max(*x));
    let mut sum = S::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}
