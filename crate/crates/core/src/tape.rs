//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation eagerly: values are available as soon
//! as a node is pushed, so the same graph-building code serves inference
//! (drop the tape) and training (call [`Tape::backward`]). Parameters enter
//! the tape through [`Tape::param`], which memoizes one leaf per parameter so
//! that gradients accumulate in a single place.

use crate::nn::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn column(data: Vec<f64>) -> Self {
        Matrix {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    /// `a [n×k] · w [m×k]ᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a [n×m] + row [1×m]` broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Recip(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ReplaceRows(Var, Var, Vec<usize>),
    BroadcastRows(Var),
    Transpose(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    PickCols(Var, Vec<usize>),
    Sum(Var),
    TimeEncode {
        deltas: Vec<f64>,
        omega: Var,
        phi: Var,
    },
    SegmentAttention {
        q: Var,
        k: Var,
        v: Var,
        offsets: Vec<usize>,
        heads: usize,
    },
    PairScore {
        a: Var,
        b: Var,
        wf: Var,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every parameter that took part.
pub struct Gradients {
    pub(crate) by_param: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(id.index()).and_then(|g| g.as_ref())
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul_t(&mut self, a: Var, w: Var) -> Var {
        let (av, wv) = (self.value(a), self.value(w));
        assert_eq!(av.cols, wv.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(av.rows, wv.rows);
        for i in 0..av.rows {
            let ar = av.row(i);
            let or = out.row_mut(i);
            for (j, o) in or.iter_mut().enumerate() {
                *o = dot(ar, wv.row(j));
            }
        }
        self.push(out, Op::MatMulT(a, w))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.same_shape(bv), "add shape");
        let mut out = av.clone();
        out.add_assign(bv);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.same_shape(bv), "sub shape");
        let mut out = av.clone();
        for (o, y) in out.data.iter_mut().zip(&bv.data) {
            *o -= y;
        }
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.same_shape(bv), "mul shape");
        let mut out = av.clone();
        for (o, y) in out.data.iter_mut().zip(&bv.data) {
            *o *= y;
        }
        self.push(out, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert!(rv.rows == 1 && rv.cols == av.cols, "add_row shape");
        let mut out = av.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / x);
        self.push(out, Op::Recip(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat_cols rows");
                out.row_mut(r)[c0..c0 + pv.cols].copy_from_slice(pv.row(r));
                c0 += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "slice_cols range");
        let mut out = Matrix::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(idx.len(), av.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(i));
        }
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    /// Copy of `base` with row `idx[r]` replaced by row `r` of `rows`.
    pub fn replace_rows(&mut self, base: Var, rows: Var, idx: &[usize]) -> Var {
        let (bv, rv) = (self.value(base), self.value(rows));
        assert!(rv.rows == idx.len() && rv.cols == bv.cols, "replace_rows shape");
        let mut out = bv.clone();
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(rv.row(r));
        }
        self.push(out, Op::ReplaceRows(base, rows, idx.to_vec()))
    }

    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Var {
        let rv = self.value(row);
        assert_eq!(rv.rows, 1, "broadcast_rows expects a row");
        let mut out = Matrix::zeros(n, rv.cols);
        for r in 0..n {
            out.row_mut(r).copy_from_slice(&rv.data);
        }
        self.push(out, Op::BroadcastRows(row))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.cols, av.rows);
        for r in 0..av.rows {
            for c in 0..av.cols {
                out.set(c, r, av.get(r, c));
            }
        }
        self.push(out, Op::Transpose(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows {
            let lse = log_sum_exp(av.row(r));
            for o in out.row_mut(r) {
                *o -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows).map(|r| log_sum_exp(av.row(r))).collect();
        self.push(Matrix::column(data), Op::LogSumExpRows(a))
    }

    /// Element `idx[r]` of every row `r`, as a column.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, idx.len(), "pick_cols rows");
        let data = idx.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect();
        self.push(Matrix::column(data), Op::PickCols(a, idx.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// `out[r][j] = cos(deltas[r] * omega[j] + phi[j])`
    pub fn time_encode(&mut self, deltas: &[f64], omega: Var, phi: Var) -> Var {
        let (ov, pv) = (self.value(omega), self.value(phi));
        assert!(ov.rows == 1 && pv.rows == 1 && ov.cols == pv.cols, "time_encode params");
        let mut out = Matrix::zeros(deltas.len(), ov.cols);
        for (r, &d) in deltas.iter().enumerate() {
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (d * ov.data[j] + pv.data[j]).cos();
            }
        }
        self.push(
            out,
            Op::TimeEncode {
                deltas: deltas.to_vec(),
                omega,
                phi,
            },
        )
    }

    /// Multi-head scaled dot-product attention where query row `c` attends
    /// over key/value rows `offsets[c]..offsets[c + 1]`. Queries with an
    /// empty segment produce a zero row.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, offsets: &[usize], heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(offsets.len(), qv.rows + 1, "segment offsets");
        assert!(qv.cols == kv.cols && kv.rows == vv.rows, "attention shapes");
        assert!(qv.cols % heads == 0 && vv.cols % heads == 0, "head split");
        let (dk, dv) = (qv.cols / heads, vv.cols / heads);
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = Matrix::zeros(qv.rows, vv.cols);
        let mut weights = Vec::new();
        for c in 0..qv.rows {
            let (lo, hi) = (offsets[c], offsets[c + 1]);
            if lo == hi {
                continue;
            }
            for h in 0..heads {
                attention_weights(qv, kv, c, h, dk, lo, hi, scale, &mut weights);
                let orow = &mut out.row_mut(c)[h * dv..(h + 1) * dv];
                for (j, a) in (lo..hi).zip(&weights) {
                    for (o, x) in orow.iter_mut().zip(&vv.row(j)[h * dv..(h + 1) * dv]) {
                        *o += a * x;
                    }
                }
            }
        }
        self.push(
            out,
            Op::SegmentAttention {
                q,
                k,
                v,
                offsets: offsets.to_vec(),
                heads,
            },
        )
    }

    /// `out[i][c] = Σ_k wf[k] · relu(a[i][k] + b[c][k])`
    pub fn pair_score(&mut self, a: Var, b: Var, wf: Var) -> Var {
        let (av, bv, wv) = (self.value(a), self.value(b), self.value(wf));
        assert!(
            av.cols == bv.cols && wv.rows == 1 && wv.cols == av.cols,
            "pair_score shapes"
        );
        let mut out = Matrix::zeros(av.rows, bv.rows);
        for i in 0..av.rows {
            let ar = av.row(i);
            for c in 0..bv.rows {
                let br = bv.row(c);
                let mut s = 0.0;
                for k in 0..ar.len() {
                    let pre = ar[k] + br[k];
                    if pre > 0.0 {
                        s += wv.data[k] * pre;
                    }
                }
                out.set(i, c, s);
            }
        }
        self.push(out, Op::PairScore { a, b, wf })
    }

    /// Backpropagate from a scalar node and collect parameter gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).data.len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        let mut by_param: Vec<Option<Matrix>> = vec![None; self.params.len()];

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => by_param[id.index()] = Some(g),
                Op::MatMulT(a, w) => {
                    let (av, wv) = (self.value(*a), self.value(*w));
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    let mut gw = Matrix::zeros(wv.rows, wv.cols);
                    for r in 0..av.rows {
                        let gr = g.row(r);
                        let ar = av.row(r);
                        let gar = ga.row_mut(r);
                        for (j, &gj) in gr.iter().enumerate() {
                            if gj == 0.0 {
                                continue;
                            }
                            let wr = wv.row(j);
                            for (x, w) in gar.iter_mut().zip(wr) {
                                *x += gj * w;
                            }
                            for (x, a) in gw.row_mut(j).iter_mut().zip(ar) {
                                *x += gj * a;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *w, gw);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = zip_map(&g, bv, |x, y| x * y);
                    let gb = zip_map(&g, av, |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gr.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| x * c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |x, s| x * s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |x, t| x * (1.0 - t * t));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| x * sigmoid(y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = zip_map(&g, &node.value, |x, e| x * e);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| x / y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| 2.0 * x * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Recip(a) => {
                    let ga = zip_map(&g, &node.value, |x, r| -x * r * r);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        accumulate(&mut grads, p, gp);
                        c0 += cols;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for (r, &src) in idx.iter().enumerate() {
                        for (x, y) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ReplaceRows(base, rows, idx) => {
                    let mut gr = Matrix::zeros(idx.len(), g.cols);
                    let mut gb = g;
                    for (r, &dst) in idx.iter().enumerate() {
                        gr.row_mut(r).copy_from_slice(gb.row(dst));
                        gb.row_mut(dst).iter_mut().for_each(|x| *x = 0.0);
                    }
                    accumulate(&mut grads, *rows, gr);
                    accumulate(&mut grads, *base, gb);
                }
                Op::BroadcastRows(row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gr.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                }
                Op::Transpose(a) => {
                    let mut ga = Matrix::zeros(g.cols, g.rows);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            ga.set(c, r, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for r in 0..g.rows {
                        let gsum: f64 = g.row(r).iter().sum();
                        for (x, y) in ga.row_mut(r).iter_mut().zip(node.value.row(r)) {
                            *x -= y.exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSumExpRows(a) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        let lse = node.value.data[r];
                        let gr = g.data[r];
                        for (x, y) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                            *x = gr * (y - lse).exp();
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::PickCols(a, idx) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for (r, &c) in idx.iter().enumerate() {
                        ga.set(r, c, g.data[r]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let s = g.data[0];
                    accumulate(
                        &mut grads,
                        *a,
                        Matrix::from_vec(av.rows, av.cols, vec![s; av.data.len()]),
                    );
                }
                Op::TimeEncode { deltas, omega, phi } => {
                    let (ov, pv) = (self.value(*omega), self.value(*phi));
                    let mut go = Matrix::zeros(1, ov.cols);
                    let mut gp = Matrix::zeros(1, pv.cols);
                    for (r, &d) in deltas.iter().enumerate() {
                        for j in 0..ov.cols {
                            let s = -(d * ov.data[j] + pv.data[j]).sin() * g.get(r, j);
                            gp.data[j] += s;
                            go.data[j] += s * d;
                        }
                    }
                    accumulate(&mut grads, *omega, go);
                    accumulate(&mut grads, *phi, gp);
                }
                Op::SegmentAttention {
                    q,
                    k,
                    v,
                    offsets,
                    heads,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let heads = *heads;
                    let (dk, dv) = (qv.cols / heads, vv.cols / heads);
                    let scale = 1.0 / (dk as f64).sqrt();
                    let mut gq = Matrix::zeros(qv.rows, qv.cols);
                    let mut gk = Matrix::zeros(kv.rows, kv.cols);
                    let mut gv = Matrix::zeros(vv.rows, vv.cols);
                    let mut weights = Vec::new();
                    let mut dweights = Vec::new();
                    for c in 0..qv.rows {
                        let (lo, hi) = (offsets[c], offsets[c + 1]);
                        if lo == hi {
                            continue;
                        }
                        for h in 0..heads {
                            attention_weights(qv, kv, c, h, dk, lo, hi, scale, &mut weights);
                            let go = &g.row(c)[h * dv..(h + 1) * dv];
                            dweights.clear();
                            for (j, a) in (lo..hi).zip(&weights) {
                                let vr = &vv.row(j)[h * dv..(h + 1) * dv];
                                dweights.push(dot(go, vr));
                                for (x, y) in gv.row_mut(j)[h * dv..(h + 1) * dv].iter_mut().zip(go) {
                                    *x += a * y;
                                }
                            }
                            let inner: f64 = weights.iter().zip(&dweights).map(|(a, d)| a * d).sum();
                            let qr = &qv.row(c)[h * dk..(h + 1) * dk];
                            for (idx, j) in (lo..hi).enumerate() {
                                let ds = weights[idx] * (dweights[idx] - inner) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kr = &kv.row(j)[h * dk..(h + 1) * dk];
                                for (x, y) in gq.row_mut(c)[h * dk..(h + 1) * dk].iter_mut().zip(kr) {
                                    *x += ds * y;
                                }
                                for (x, y) in gk.row_mut(j)[h * dk..(h + 1) * dk].iter_mut().zip(qr) {
                                    *x += ds * y;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
                Op::PairScore { a, b, wf } => {
                    let (av, bv, wv) = (self.value(*a), self.value(*b), self.value(*wf));
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    let mut gb = Matrix::zeros(bv.rows, bv.cols);
                    let mut gw = Matrix::zeros(1, wv.cols);
                    for i in 0..av.rows {
                        let ar = av.row(i);
                        for c in 0..bv.rows {
                            let gic = g.get(i, c);
                            if gic == 0.0 {
                                continue;
                            }
                            let br = bv.row(c);
                            for kk in 0..ar.len() {
                                let pre = ar[kk] + br[kk];
                                if pre > 0.0 {
                                    let d = gic * wv.data[kk];
                                    ga.data[i * av.cols + kk] += d;
                                    gb.data[c * bv.cols + kk] += d;
                                    gw.data[kk] += gic * pre;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *wf, gw);
                }
            }
        }
        Gradients { by_param }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_weights(
    q: &Matrix,
    k: &Matrix,
    c: usize,
    h: usize,
    dk: usize,
    lo: usize,
    hi: usize,
    scale: f64,
    out: &mut Vec<f64>,
) {
    let qr = &q.row(c)[h * dk..(h + 1) * dk];
    out.clear();
    out.extend((lo..hi).map(|j| dot(qr, &k.row(j)[h * dk..(h + 1) * dk]) * scale));
    let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for s in out.iter_mut() {
        *s = (*s - m).exp();
        z += *s;
    }
    for s in out.iter_mut() {
        *s /= z;
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
