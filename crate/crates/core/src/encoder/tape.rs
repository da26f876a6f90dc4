//! A small reverse-mode autodiff tape over dense row-major matrices.
//!
//! Binary elementwise ops broadcast a dimension of size 1 against the other
//! operand, which covers the row-vector bias and per-row scale patterns the
//! encoder needs. The tape is rebuilt for every training step.

use std::rc::Rc;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape does not match data length");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    fn bidx(&self, r: usize, c: usize) -> usize {
        let r = if self.rows == 1 { 0 } else { r };
        let c = if self.cols == 1 { 0 } else { c };
        r * self.cols + c
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Artanh,
    Sqrt,
    Relu,
    Softplus,
    Exp,
    Ln,
    Square,
    Neg,
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Artanh => x.atanh(),
            Unary::Sqrt => x.sqrt(),
            Unary::Relu => x.max(0.0),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Square => x * x,
            Unary::Neg => -x,
        }
    }

    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Artanh => 1.0 / (1.0 - x * x),
            Unary::Sqrt => 0.5 / y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Square => 2.0 * x,
            Unary::Neg => -1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Map(Var, Unary),
    ClampMax(Var, f64),
    ClampMin(Var, f64),
    RowSum(Var),
    Mean(Var),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    ConcatCols(Var, Var),
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
}

pub struct Gradients(Vec<Option<Matrix>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(like.rows, like.cols))
    }
}

fn broadcast_shape(a: &Matrix, b: &Matrix) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        assert!(x == y || x == 1 || y == 1, "incompatible broadcast {x} vs {y}");
        x.max(y)
    };
    (dim(a.rows, b.rows), dim(a.cols, b.cols))
}

/// Sums `g` (full output shape) down to the shape of `target`.
fn reduce_to(g: &Matrix, target: &Matrix) -> Matrix {
    if g.shape() == target.shape() {
        return g.clone();
    }
    let mut out = Matrix::zeros(target.rows, target.cols);
    for r in 0..g.rows {
        for c in 0..g.cols {
            let i = out.bidx(r, c);
            out.data[i] += g.data[r * g.cols + c];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let (rows, cols) = broadcast_shape(va, vb);
        let mut out = Matrix::zeros(rows, cols);
        if va.shape() == vb.shape() {
            for ((o, x), y) in out.data.iter_mut().zip(&va.data).zip(&vb.data) {
                *o = f(*x, *y);
            }
        } else {
            for r in 0..rows {
                for c in 0..cols {
                    out.data[r * cols + c] = f(va.data[va.bidx(r, c)], vb.data[vb.bidx(r, c)]);
                }
            }
        }
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.0].matmul(&self.values[b.0]);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut v = self.values[a.0].clone();
        v.data.iter_mut().for_each(|x| *x *= k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let mut v = self.values[a.0].clone();
        v.data.iter_mut().for_each(|x| *x += k);
        self.push(v, Op::Offset(a))
    }

    pub fn map(&mut self, a: Var, f: Unary) -> Var {
        let mut v = self.values[a.0].clone();
        v.data.iter_mut().for_each(|x| *x = f.eval(*x));
        self.push(v, Op::Map(a, f))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Unary::Relu)
    }

    pub fn clamp_max(&mut self, a: Var, k: f64) -> Var {
        let mut v = self.values[a.0].clone();
        v.data.iter_mut().for_each(|x| *x = x.min(k));
        self.push(v, Op::ClampMax(a, k))
    }

    pub fn clamp_min(&mut self, a: Var, k: f64) -> Var {
        let mut v = self.values[a.0].clone();
        v.data.iter_mut().for_each(|x| *x = x.max(k));
        self.push(v, Op::ClampMin(a, k))
    }

    /// `[n×m] → [n×1]`
    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let v = Matrix::from_vec(va.rows, 1, (0..va.rows).map(|r| va.row(r).iter().sum()).collect());
        self.push(v, Op::RowSum(a))
    }

    /// Mean of all entries, as a `1×1`.
    pub fn mean(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let v = Matrix::scalar(va.data.iter().sum::<f64>() / va.data.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let va = &self.values[a.0];
        let mut out = Matrix::zeros(idx.len(), va.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(va.row(r));
        }
        self.push(out, Op::Gather(a, idx))
    }

    /// Adds row `i` of `a` into row `idx[i]` of an `n_rows`-row output.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Rc<[usize]>, n_rows: usize) -> Var {
        let va = &self.values[a.0];
        assert_eq!(va.rows, idx.len());
        let mut out = Matrix::zeros(n_rows, va.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(r).iter_mut().zip(va.row(i)).for_each(|(o, x)| *o += x);
        }
        self.push(out, Op::ScatterAdd(a, idx))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(va.rows, vb.rows);
        let cols = va.cols + vb.cols;
        let mut out = Matrix::zeros(va.rows, cols);
        for r in 0..va.rows {
            out.data[r * cols..r * cols + va.cols].copy_from_slice(va.row(r));
            out.data[r * cols + va.cols..(r + 1) * cols].copy_from_slice(vb.row(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.values[output.0].shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));

        let accum = |grads: &mut Vec<Option<Matrix>>, v: Var, g: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let y = &self.values[i];
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, reduce_to(&g, &self.values[a.0]));
                    accum(&mut grads, *b, reduce_to(&g, &self.values[b.0]));
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *a, reduce_to(&g, &self.values[a.0]));
                    let mut gb = reduce_to(&g, &self.values[b.0]);
                    gb.data.iter_mut().for_each(|x| *x = -*x);
                    accum(&mut grads, *b, gb);
                }
                Op::Mul(a, b) | Op::Div(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    let is_div = matches!(self.ops[i], Op::Div(..));
                    let mut ga = Matrix::zeros(g.rows, g.cols);
                    let mut gb = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            let k = r * g.cols + c;
                            let x = va.data[va.bidx(r, c)];
                            let w = vb.data[vb.bidx(r, c)];
                            if is_div {
                                ga.data[k] = g.data[k] / w;
                                gb.data[k] = -g.data[k] * x / (w * w);
                            } else {
                                ga.data[k] = g.data[k] * w;
                                gb.data[k] = g.data[k] * x;
                            }
                        }
                    }
                    accum(&mut grads, *a, reduce_to(&ga, va));
                    accum(&mut grads, *b, reduce_to(&gb, vb));
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    accum(&mut grads, *a, g.matmul(&vb.transpose()));
                    accum(&mut grads, *b, va.transpose().matmul(&g));
                }
                Op::Scale(a, k) => {
                    let mut ga = g;
                    ga.data.iter_mut().for_each(|x| *x *= k);
                    accum(&mut grads, *a, ga);
                }
                Op::Offset(a) => accum(&mut grads, *a, g),
                Op::Map(a, f) => {
                    let x = &self.values[a.0];
                    let mut ga = g;
                    for ((gv, xv), yv) in ga.data.iter_mut().zip(&x.data).zip(&y.data) {
                        *gv *= f.deriv(*xv, *yv);
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::ClampMax(a, k) | Op::ClampMin(a, k) => {
                    let x = &self.values[a.0];
                    let is_max = matches!(self.ops[i], Op::ClampMax(..));
                    let mut ga = g;
                    for (gv, xv) in ga.data.iter_mut().zip(&x.data) {
                        let clamped = if is_max { *xv > *k } else { *xv < *k };
                        if clamped {
                            *gv = 0.0;
                        }
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::RowSum(a) => {
                    let x = &self.values[a.0];
                    let mut ga = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        ga.row_mut(r).iter_mut().for_each(|v| *v = g.data[r]);
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let x = &self.values[a.0];
                    let s = g.data[0] / x.data.len() as f64;
                    accum(&mut grads, *a, Matrix::filled(x.rows, x.cols, s));
                }
                Op::Gather(a, idx) => {
                    let x = &self.values[a.0];
                    let mut ga = Matrix::zeros(x.rows, x.cols);
                    for (k, &r) in idx.iter().enumerate() {
                        ga.row_mut(r).iter_mut().zip(g.row(k)).for_each(|(o, v)| *o += v);
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::ScatterAdd(a, idx) => {
                    let x = &self.values[a.0];
                    let mut ga = Matrix::zeros(x.rows, x.cols);
                    for (k, &r) in idx.iter().enumerate() {
                        ga.row_mut(k).copy_from_slice(g.row(r));
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    let mut gb = Matrix::zeros(vb.rows, vb.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..va.cols]);
                        gb.row_mut(r).copy_from_slice(&g.row(r)[va.cols..]);
                    }
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
            }
        }
        Gradients(grads)
    }
}
