//! Minimal reverse-mode automatic differentiation over row-major matrices.
//!
//! Every model in the crate reduces to token-by-feature matrices, so the tape
//! only knows 2-D values. A [`Graph`] is built per forward pass and consumed
//! by [`Graph::backward`]; parameters are ordinary leaves whose gradients are
//! read back from the returned [`Gradients`].

use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn new(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn scalar(v: F) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<G: Real>(&self) -> Matrix<G> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| G::lit(v.f64())).collect() }
    }
}

/// `out = a · b` with `a: m×k`, `b: k×n`.
pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out = a · bᵀ` with `a: m×k`, `b: n×k`.
fn matmul_nt<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `out = aᵀ · b` with `a: k×m`, `b: k×n`.
fn matmul_tn<F: Real>(a: &[F], b: &[F], k: usize, m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, F),
    AddConst(Var),
    Silu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Recip(Var),
    Softmax(Var),
    LayerNorm(Var, Vec<F>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    LogSumExp(Var),
}

struct Node<F> {
    value: Matrix<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// A single forward pass recorded for differentiation.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, m: Matrix<F>) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, m: Matrix<F>) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Matrix<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let m = &self.nodes[v.0].value;
        (m.rows, m.cols)
    }

    /// Scalar value of a `1×1` node.
    pub fn item(&self, v: Var) -> F {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "item() on non-scalar");
        m.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims");
        let out = matmul(&self.value(a).data, &self.value(b).data, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(Matrix::new(m, n, out), Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dims");
        let out = matmul_nt(&self.value(a).data, &self.value(b).data, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(Matrix::new(m, n, out), Op::MatMulT(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shapes");
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Matrix::new(r, c, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn rowwise(&mut self, a: Var, row: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "row broadcast shape");
        let rv = &self.value(row).data;
        let data = self.value(a).data.chunks(c).flat_map(|ch| ch.iter().zip(rv).map(|(&x, &y)| f(x, y))).collect();
        let ng = self.needs(a) || self.needs(row);
        self.push(Matrix::new(r, c, data), op, ng)
    }

    /// Adds a `1×cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.rowwise(a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1×cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.rowwise(a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    /// Multiplies `a` by the `1×1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar expects a scalar");
        let sv = self.item(s);
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|&x| x * sv).collect();
        let ng = self.needs(a) || self.needs(s);
        self.push(Matrix::new(r, c, data), Op::MulScalar(a, s), ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|&x| f(x)).collect();
        let ng = self.needs(a);
        self.push(Matrix::new(r, c, data), op, ng)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, s: F) -> Var {
        self.map(a, |x| x + s, Op::AddConst(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, |x| x.ln(), Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, |x| x.recip(), Op::Recip(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = self.value(a).data.clone();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let ng = self.needs(a);
        self.push(Matrix::new(r, c, data), Op::Softmax(a), ng)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: F) -> Var {
        let (r, c) = self.shape(a);
        let n = F::lit(c as f64);
        let mut data = self.value(a).data.clone();
        let mut rstds = Vec::with_capacity(r);
        for row in data.chunks_mut(c) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
            let rstd = (var + eps).sqrt().recip();
            for v in row.iter_mut() {
                *v = (*v - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let ng = self.needs(a);
        self.push(Matrix::new(r, c, data), Op::LayerNorm(a, rstds), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice_cols out of range");
        let src = &self.value(a).data;
        let data = (0..r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
        let ng = self.needs(a);
        self.push(Matrix::new(r, len, data), Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        assert!(parts.iter().all(|&p| self.shape(p).0 == r), "concat_cols rows");
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Matrix::new(r, c, data), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.shape(parts[0]).1;
        assert!(parts.iter().all(|&p| self.shape(p).1 == c), "concat_rows cols");
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let r = data.len() / c.max(1);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Matrix::new(r, c, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let data = self.value(a).data.clone();
        assert_eq!(data.len(), rows * cols, "reshape element count");
        let ng = self.needs(a);
        self.push(Matrix::new(rows, cols, data), Op::Reshape(a), ng)
    }

    /// `out.data[i] = a.data[index[i]]`, shaped `rows×cols`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length");
        let src = &self.value(a).data;
        let data = index.iter().map(|&i| src[i]).collect();
        let ng = self.needs(a);
        self.push(Matrix::new(rows, cols, data), Op::Gather(a, index), ng)
    }

    /// Contiguous block of rows.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let c = self.shape(a).1;
        let index = (start * c..(start + len) * c).collect();
        self.gather(a, index, len, c)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        let ng = self.needs(a);
        self.push(Matrix::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let s = m.data.iter().copied().sum::<F>() / F::lit(m.len() as f64);
        let ng = self.needs(a);
        self.push(Matrix::scalar(s), Op::Mean(a), ng)
    }

    /// `log Σ exp(a)` over all elements, stabilized by the maximum.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let d = &self.value(a).data;
        let m = d.iter().copied().fold(F::neg_infinity(), F::max);
        let s: F = d.iter().map(|&x| (x - m).exp()).sum();
        let ng = self.needs(a);
        self.push(Matrix::scalar(m + s.ln()), Op::LogSumExp(a), ng)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = self.shape(*b).1;
                    if self.needs(*a) {
                        let da = matmul_nt(&g, &self.value(*b).data, m, n, k);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = matmul_tn(&self.value(*a).data, &g, m, k, n);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = self.shape(*b).0;
                    if self.needs(*a) {
                        let da = matmul(&g, &self.value(*b).data, m, n, k);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = matmul_tn(&g, &self.value(*a).data, m, n, k);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.iter().map(|&x| -x).collect());
                }
                Op::Mul(a, b) => {
                    let av = &self.value(*a).data;
                    let bv = &self.value(*b).data;
                    accumulate(&mut grads, *a, g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
                    accumulate(&mut grads, *b, g.iter().zip(av).map(|(&x, &y)| x * y).collect());
                }
                Op::AddRow(a, row) => {
                    let c = out.cols;
                    let mut dr = vec![F::zero(); c];
                    for ch in g.chunks(c) {
                        for (d, &x) in dr.iter_mut().zip(ch) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, dr);
                }
                Op::MulRow(a, row) => {
                    let c = out.cols;
                    let av = &self.value(*a).data;
                    let rv = &self.value(*row).data;
                    let mut dr = vec![F::zero(); c];
                    let mut da = Vec::with_capacity(g.len());
                    for (gc, ac) in g.chunks(c).zip(av.chunks(c)) {
                        for j in 0..c {
                            dr[j] += gc[j] * ac[j];
                            da.push(gc[j] * rv[j]);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *row, dr);
                }
                Op::MulScalar(a, s) => {
                    let sv = self.item(*s);
                    let av = &self.value(*a).data;
                    let ds: F = g.iter().zip(av).map(|(&x, &y)| x * y).sum();
                    accumulate(&mut grads, *a, g.iter().map(|&x| x * sv).collect());
                    accumulate(&mut grads, *s, vec![ds]);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.iter().map(|&x| x * *s).collect()),
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::Silu(a) => {
                    let av = &self.value(*a).data;
                    let d = g
                        .iter()
                        .zip(av)
                        .map(|(&gy, &x)| {
                            let s = sigmoid(x);
                            gy * (s + x * s * (F::one() - s))
                        })
                        .collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.iter().zip(&out.data).map(|(&gy, &y)| gy * y * (F::one() - y)).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = g.iter().zip(&out.data).map(|(&gy, &y)| gy * y).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Ln(a) => {
                    let av = &self.value(*a).data;
                    accumulate(&mut grads, *a, g.iter().zip(av).map(|(&gy, &x)| gy / x).collect());
                }
                Op::Sqrt(a) => {
                    let half = F::lit(0.5);
                    let d = g.iter().zip(&out.data).map(|(&gy, &y)| gy * half / y).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let av = &self.value(*a).data;
                    let two = F::lit(2.0);
                    accumulate(&mut grads, *a, g.iter().zip(av).map(|(&gy, &x)| gy * two * x).collect());
                }
                Op::Recip(a) => {
                    let d = g.iter().zip(&out.data).map(|(&gy, &y)| -gy * y * y).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let c = out.cols;
                    let mut d = Vec::with_capacity(g.len());
                    for (gc, yc) in g.chunks(c).zip(out.data.chunks(c)) {
                        let dot: F = gc.iter().zip(yc).map(|(&x, &y)| x * y).sum();
                        d.extend(gc.iter().zip(yc).map(|(&x, &y)| y * (x - dot)));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNorm(a, rstds) => {
                    let c = out.cols;
                    let n = F::lit(c as f64);
                    let mut d = Vec::with_capacity(g.len());
                    for ((gc, yc), &r) in g.chunks(c).zip(out.data.chunks(c)).zip(rstds) {
                        let mg = gc.iter().copied().sum::<F>() / n;
                        let mgy = gc.iter().zip(yc).map(|(&x, &y)| x * y).sum::<F>() / n;
                        d.extend(gc.iter().zip(yc).map(|(&x, &y)| r * (x - mg - y * mgy)));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let len = out.cols;
                    let mut d = vec![F::zero(); r * c];
                    for i in 0..r {
                        d[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let r = out.rows;
                    let c = out.cols;
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        if self.needs(p) {
                            let d = (0..r).flat_map(|i| g[i * c + offset..i * c + offset + pc].iter().copied()).collect();
                            accumulate(&mut grads, p, d);
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.needs(p) {
                            accumulate(&mut grads, p, g[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, g),
                Op::Gather(a, index) => {
                    let mut d = vec![F::zero(); self.value(*a).len()];
                    for (&i, &x) in index.iter().zip(&g) {
                        d[i] += x;
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => accumulate(&mut grads, *a, vec![g[0]; self.value(*a).len()]),
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0] / F::lit(n as f64); n]);
                }
                Op::LogSumExp(a) => {
                    let av = &self.value(*a).data;
                    let lse = out.data[0];
                    accumulate(&mut grads, *a, av.iter().map(|&x| g[0] * (x - lse).exp()).collect());
                }
            }
        }
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *slot = None;
            }
        }
        Gradients { grads }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, d: Vec<F>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(d) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// Gradients of a scalar with respect to the tracked leaves.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of a tracked leaf; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central differences on every input element of `f`.
    fn check(inputs: Vec<Matrix<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|m| g.param(m)).collect();
        let loss = f(&mut g, &vars);
        let grads = g.backward(loss);
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            for e in 0..m.len() {
                let eval = |delta: f64| {
                    let mut g = Graph::new();
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, mm)| {
                            let mut mm = mm.clone();
                            if j == k {
                                mm.data[e] += delta;
                            }
                            g.param(mm)
                        })
                        .collect();
                    let l = f(&mut g, &vars);
                    g.item(l)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = grads.get(vars[k]).map_or(0.0, |d| d[e]);
                let err = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-7);
                assert!(err < 1e-5, "input {k} elem {e}: analytic {analytic} numeric {numeric}");
            }
        }
    }

    #[test]
    fn matmul_and_transposed_matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(3, 4, &mut rng);
        let b = random(4, 2, &mut rng);
        let c = random(5, 4, &mut rng);
        check(vec![a, b, c], |g, v| {
            let ab = g.matmul(v[0], v[1]);
            let ac = g.matmul_t(v[0], v[2]);
            let s1 = g.square(ab);
            let s1 = g.sum(s1);
            let s2 = g.sigmoid(ac);
            let s2 = g.mean(s2);
            g.add(s1, s2)
        });
    }

    #[test]
    fn normalization_and_softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(3, 5, &mut rng);
        let w = random(1, 5, &mut rng);
        let b = random(1, 5, &mut rng);
        let t = random(3, 5, &mut rng);
        check(vec![a, w, b, t], |g, v| {
            let n = g.layer_norm(v[0], 1e-5);
            let n = g.mul_row(n, v[1]);
            let n = g.add_row(n, v[2]);
            let s = g.softmax(n);
            let s = g.mul(s, v[3]);
            let x = g.silu(s);
            g.sum(x)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(2, 6, &mut rng);
        let b = random(2, 3, &mut rng);
        check(vec![a, b], |g, v| {
            let s = g.slice_cols(v[0], 1, 3);
            let c = g.concat_cols(&[s, v[1]]);
            let r = g.concat_rows(&[c, v[0]]);
            let r = g.reshape(r, 6, 4);
            let r = g.slice_rows(r, 1, 4);
            let gth = g.gather(r, vec![0, 5, 5, 9, 15, 2], 2, 3);
            let e = g.exp(gth);
            g.log_sum_exp(e)
        });
    }

    #[test]
    fn scalar_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(1, 4, &mut rng);
        let b = random(1, 4, &mut rng);
        check(vec![a, b], |g, v| {
            let ab = g.mul(v[0], v[1]);
            let dot = g.sum(ab);
            let aa = g.square(v[0]);
            let na = g.sum(aa);
            let na = g.add_const(na, 0.5);
            let na = g.sqrt(na);
            let inv = g.recip(na);
            let cos = g.mul_scalar(dot, inv);
            let cos = g.scale(cos, 3.0);
            let e = g.exp(cos);
            let l = g.ln(e);
            let d = g.sub(l, cos);
            let sq = g.square(v[1]);
            let sq = g.sum(sq);
            let t = g.add(d, sq);
            g.add(t, cos)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Matrix::scalar(2.0));
        let p = g.param(Matrix::scalar(3.0));
        let y = g.mul(c, p);
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &[2.0]);
    }
}
