//! Row-wise Poincaré-ball maps recorded on the tape. Each row of an `n×d`
//! variable is one point; the forward values agree with the slice functions
//! in `hypgeom` up to the origin handling (norms are floored at `MIN_NORM`).

use super::tape::{Matrix, Tape, Unary, Var};
use crate::hypgeom::{Curvature, ARTANH_CLAMP, MIN_NORM};

/// Row norms `[n×1]`, floored at `MIN_NORM`.
pub fn row_norm(t: &mut Tape, x: Var) -> Var {
    let sq = t.map(x, Unary::Square);
    let s = t.row_sum(sq);
    let s = t.clamp_min(s, MIN_NORM * MIN_NORM);
    t.map(s, Unary::Sqrt)
}

pub fn row_dot(t: &mut Tape, a: Var, b: Var) -> Var {
    let p = t.mul(a, b);
    t.row_sum(p)
}

pub fn exp0(t: &mut Tape, v: Var, c: Curvature) -> Var {
    let sc = c.sqrt();
    let n = row_norm(t, v);
    let arg = t.scale(n, sc);
    let th = t.tanh(arg);
    let ratio = t.div(th, arg);
    t.mul(v, ratio)
}

pub fn log0(t: &mut Tape, x: Var, c: Curvature) -> Var {
    let sc = c.sqrt();
    let n = row_norm(t, x);
    let arg = t.scale(n, sc);
    let clamped = t.clamp_max(arg, ARTANH_CLAMP);
    let at = t.map(clamped, Unary::Artanh);
    let ratio = t.div(at, arg);
    t.mul(x, ratio)
}

/// Rescales rows with norm beyond `(1 − ε)/√c` back onto that sphere.
pub fn project(t: &mut Tape, x: Var, c: Curvature) -> Var {
    let n = row_norm(t, x);
    let radius = t.constant(Matrix::scalar(c.max_norm()));
    let factor = t.div(radius, n);
    let factor = t.clamp_max(factor, 1.0);
    t.mul(x, factor)
}

pub fn mobius_add(t: &mut Tape, x: Var, y: Var, c: Curvature) -> Var {
    let cv = c.value();
    let xy = row_dot(t, x, y);
    let xsq = t.map(x, Unary::Square);
    let x2 = t.row_sum(xsq);
    let ysq = t.map(y, Unary::Square);
    let y2 = t.row_sum(ysq);
    // a = 1 + 2c⟨x,y⟩ + c‖y‖²
    let two_cxy = t.scale(xy, 2.0 * cv);
    let cy2 = t.scale(y2, cv);
    let a = t.add(two_cxy, cy2);
    let a = t.offset(a, 1.0);
    // b = 1 − c‖x‖²
    let b = t.scale(x2, -cv);
    let b = t.offset(b, 1.0);
    // den = 1 + 2c⟨x,y⟩ + c²‖x‖²‖y‖²
    let x2y2 = t.mul(x2, y2);
    let x2y2 = t.scale(x2y2, cv * cv);
    let den = t.add(two_cxy, x2y2);
    let den = t.offset(den, 1.0);
    let ax = t.mul(x, a);
    let by = t.mul(y, b);
    let num = t.add(ax, by);
    t.div(num, den)
}

/// Squared Poincaré distance between matching rows, `[n×1]`.
pub fn sq_dist(t: &mut Tape, x: Var, y: Var, c: Curvature) -> Var {
    let sc = c.sqrt();
    let nx = t.map(x, Unary::Neg);
    let diff = mobius_add(t, nx, y, c);
    let n = row_norm(t, diff);
    let arg = t.scale(n, sc);
    let arg = t.clamp_max(arg, ARTANH_CLAMP);
    let at = t.map(arg, Unary::Artanh);
    let d = t.scale(at, 2.0 / sc);
    t.map(d, Unary::Square)
}

/// Fermi–Dirac logit `(r − sq)/t`; the probability is its sigmoid.
pub fn fermi_dirac_logit(t: &mut Tape, sq: Var, r: f64, temp: f64) -> Var {
    let z = t.scale(sq, -1.0 / temp);
    t.offset(z, r / temp)
}
