//! Poincaré-ball geometry.
//!
//! All maps are written for a ball of curvature `-c` (radius `1/√c`):
//!
//! ```text
//! x ⊕ y    = ((1 + 2c⟨x,y⟩ + c‖y‖²) x + (1 − c‖x‖²) y) / (1 + 2c⟨x,y⟩ + c²‖x‖²‖y‖²)
//! d(x, y)  = (2/√c) · artanh(√c ‖(−x) ⊕ y‖)
//! exp0(v)  = tanh(√c‖v‖) · v / (√c‖v‖)
//! log0(x)  = artanh(√c‖x‖) · x / (√c‖x‖)
//! ```
//!
//! Every operation that produces a point re-projects it to norm at most
//! `(1 − ε)/√c`, and every `artanh` argument is clamped to `1 − 1e-7`.
//! The functions here work on plain `f64` slices so the encoder can call
//! them row by row; the [`BallPoint`] wrappers check their inputs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Distance of the projection radius from the boundary, in units of `1/√c`.
pub const BALL_EPS: f64 = 1e-5;
/// Upper clamp applied to every `artanh` argument.
pub const ARTANH_CLAMP: f64 = 1.0 - 1e-7;
/// Norms below this are treated as the removable singularity at the origin.
pub const MIN_NORM: f64 = 1e-15;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Self(c))
        } else {
            Err(invalid(format!("curvature must be positive and finite, got {c}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    /// Largest norm a projected point may have.
    pub fn max_norm(self) -> f64 {
        (1.0 - BALL_EPS) / self.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Self(1.0)
    }
}

/// A point strictly inside the Poincaré ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    /// Wraps `coords`, projecting onto the ball if they fall outside it.
    pub fn new(coords: Vec<f64>, c: Curvature) -> Result<Self> {
        check_finite(&coords)?;
        let mut coords = coords;
        project_in_place(&mut coords, c, BALL_EPS);
        Ok(Self(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A vector in the tangent space at the origin (or at a point, for gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords)?;
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Offset and temperature of the Fermi–Dirac link decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FermiDiracParams {
    pub r: f64,
    pub t: f64,
}

impl Default for FermiDiracParams {
    fn default() -> Self {
        Self { r: 2.0, t: 1.0 }
    }
}

impl FermiDiracParams {
    pub fn new(r: f64, t: f64) -> Result<Self> {
        if !(t.is_finite() && t > 0.0 && r.is_finite()) {
            return Err(invalid(format!("fermi-dirac needs finite r and t > 0, got r={r} t={t}")));
        }
        Ok(Self { r, t })
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid("non-finite coordinate"))
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(invalid(format!("dimension mismatch: {a} vs {b}")))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn artanh_clamped(x: f64) -> f64 {
    x.min(ARTANH_CLAMP).atanh()
}

/// Rescales `x` in place to norm `(1 − eps)/√c` when it lies at or beyond that radius.
pub fn project_in_place(x: &mut [f64], c: Curvature, eps: f64) {
    let max = (1.0 - eps) / c.sqrt();
    let n = norm(x);
    if n >= max {
        let s = max / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn mobius_add_raw(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let xy = dot(x, y);
    let x2 = dot(x, x);
    let y2 = dot(y, y);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    x.iter().zip(y).map(|(xi, yi)| (a * xi + b * yi) / den).collect()
}

pub fn exp0_raw(v: &[f64], c: f64) -> Vec<f64> {
    let sc = c.sqrt();
    let n = norm(v);
    if n < MIN_NORM {
        return vec![0.0; v.len()];
    }
    let s = (sc * n).tanh() / (sc * n);
    v.iter().map(|x| x * s).collect()
}

pub fn log0_raw(x: &[f64], c: f64) -> Vec<f64> {
    let sc = c.sqrt();
    let n = norm(x);
    if n < MIN_NORM {
        return vec![0.0; x.len()];
    }
    let s = artanh_clamped(sc * n) / (sc * n);
    x.iter().map(|v| v * s).collect()
}

pub fn dist_raw(x: &[f64], y: &[f64], c: f64) -> f64 {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let diff = mobius_add_raw(&neg, y, c);
    let sc = c.sqrt();
    2.0 / sc * artanh_clamped(sc * norm(&diff))
}

pub fn mobius_add(x: &BallPoint, y: &BallPoint, c: Curvature) -> Result<BallPoint> {
    check_dims(x.dim(), y.dim())?;
    check_finite(x.coords())?;
    check_finite(y.coords())?;
    let mut out = mobius_add_raw(x.coords(), y.coords(), c.value());
    project_in_place(&mut out, c, BALL_EPS);
    Ok(BallPoint(out))
}

pub fn poincare_dist(x: &BallPoint, y: &BallPoint, c: Curvature) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    Ok(dist_raw(x.coords(), y.coords(), c.value()))
}

pub fn exp0(v: &TangentVector, c: Curvature) -> BallPoint {
    let mut out = exp0_raw(v.coords(), c.value());
    project_in_place(&mut out, c, BALL_EPS);
    BallPoint(out)
}

pub fn log0(x: &BallPoint, c: Curvature) -> TangentVector {
    TangentVector(log0_raw(x.coords(), c.value()))
}

/// Möbius matrix-vector product `exp0(M · log0(x))`, with `matrix` row-major `d×d`.
pub fn mobius_matvec(matrix: &[f64], x: &BallPoint, c: Curvature) -> Result<BallPoint> {
    let d = x.dim();
    if matrix.len() != d * d {
        return Err(invalid(format!("matrix has {} entries, expected {}", matrix.len(), d * d)));
    }
    let t = log0_raw(x.coords(), c.value());
    let mt: Vec<f64> = (0..d).map(|i| dot(&matrix[i * d..(i + 1) * d], &t)).collect();
    if mt.iter().all(|v| *v == 0.0) {
        return Ok(BallPoint::origin(d));
    }
    let mut out = exp0_raw(&mt, c.value());
    project_in_place(&mut out, c, BALL_EPS);
    Ok(BallPoint(out))
}

pub fn project_to_ball(x: &[f64], c: Curvature, eps: f64) -> BallPoint {
    let mut out = x.to_vec();
    project_in_place(&mut out, c, eps);
    BallPoint(out)
}

/// `1 / (exp((sq_dist − r)/t) + 1)`, with the exponent clamped to ±700.
pub fn fermi_dirac(sq_dist: f64, p: FermiDiracParams) -> f64 {
    let z = ((sq_dist - p.r) / p.t).clamp(-700.0, 700.0);
    1.0 / (z.exp() + 1.0)
}

/// Inverse squared conformal factor `(1 − c‖x‖²)² / 4`.
pub fn rgrad_scale(x: &[f64], c: f64) -> f64 {
    let k = 1.0 - c * dot(x, x);
    k * k / 4.0
}

pub fn egrad_to_rgrad(x: &BallPoint, g: &TangentVector, c: Curvature) -> TangentVector {
    let s = rgrad_scale(x.coords(), c.value());
    TangentVector(g.coords().iter().map(|v| v * s).collect())
}

/// First and second moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// Accumulates `grad` and returns the Adam direction `−lr · m̂ / (√v̂ + ε)`
    /// for each coordinate. Advances the step counter.
    fn direction(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        grad.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                -lr * m_hat / (v_hat.sqrt() + ADAM_EPS)
            })
            .collect()
    }
}

/// Plain Adam update for Euclidean parameters.
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamMoments, lr: f64) {
    let dir = state.direction(grad, lr);
    param.iter_mut().zip(dir).for_each(|(p, d)| *p += d);
}

/// Riemannian Adam update for a table of ball points stored row-major with
/// `dim` columns. Each row gets the Riemannian gradient, a shared Adam moment
/// update, and the exponential-map retraction `x ⊕ exp0(λ_x·v/2)` followed
/// by projection.
pub fn radam_step_rows(
    param: &mut [f64],
    dim: usize,
    egrad: &[f64],
    state: &mut AdamMoments,
    lr: f64,
    c: Curvature,
) {
    let cv = c.value();
    let mut rgrad = egrad.to_vec();
    for (row, g) in param.chunks(dim).zip(rgrad.chunks_mut(dim)) {
        let s = rgrad_scale(row, cv);
        g.iter_mut().for_each(|v| *v *= s);
    }
    let dir = state.direction(&rgrad, lr);
    for (row, step) in param.chunks_mut(dim).zip(dir.chunks(dim)) {
        if step.iter().all(|v| *v == 0.0) {
            continue;
        }
        let lambda = 2.0 / (1.0 - cv * dot(row, row));
        let scaled: Vec<f64> = step.iter().map(|v| v * lambda / 2.0).collect();
        let mut next = mobius_add_raw(row, &exp0_raw(&scaled, cv), cv);
        project_in_place(&mut next, c, BALL_EPS);
        row.copy_from_slice(&next);
    }
}

/// Riemannian Adam step on a single ball point.
pub fn radam_step(
    param: &mut BallPoint,
    grad: &TangentVector,
    state: &mut AdamMoments,
    lr: f64,
    c: Curvature,
) -> Result<()> {
    check_dims(param.dim(), grad.0.len())?;
    let d = param.dim();
    radam_step_rows(&mut param.0, d, grad.coords(), state, lr, c);
    Ok(())
}
