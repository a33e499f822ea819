//! Projection of a gradient onto the cone `{x : ⟨x, g_k⟩ ≥ margin ∀k}`
//! through its dual quadratic program.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// How [`project`] produced its output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionStatus {
    /// `g` already satisfied every constraint and was returned unchanged.
    Feasible,
    Projected,
    /// The dual solver failed; `g` was returned unchanged.
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub gradient: Vec<Real>,
    pub status: ProjectionStatus,
    pub dual: Vec<Real>,
}

pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_TOL: Real = 1e-12;

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `min ½vᵀQv + bᵀv` over `v ≥ 0` for symmetric positive
/// semidefinite `Q` (row-major `m×m`), with a Lawson–Hanson active set and
/// a coordinate-descent fallback. Stops when the KKT residual is below `tol`
/// relative to the problem scale.
pub fn qp_dual_solve(q: &[Real], b: &[Real], max_iter: usize, tol: Real) -> Result<Vec<Real>> {
    let m = b.len();
    if q.len() != m * m {
        return Err(Error::shape("qp_dual_solve", &[q.len()], &[m, m]));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if q.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dual QP data".into()));
    }
    let scale = q
        .iter()
        .chain(b)
        .fold(0.0 as Real, |a, v| a.max(v.abs()))
        .max(Real::MIN_POSITIVE);
    let tol = tol * scale;
    if let Some(v) = active_set(q, b, max_iter, tol) {
        if kkt_residual(q, b, &v) <= tol * 1e3 {
            return Ok(v);
        }
    }
    let v = coordinate_descent(q, b, max_iter * 100, tol);
    if kkt_residual(q, b, &v) <= tol * 1e3 {
        Ok(v)
    } else {
        Err(Error::NoConvergence(max_iter))
    }
}

fn gradient(q: &[Real], b: &[Real], v: &[Real]) -> Vec<Real> {
    let m = b.len();
    (0..m)
        .map(|i| dot(&q[i * m..(i + 1) * m], v) + b[i])
        .collect()
}

/// Largest violation of `v ≥ 0`, `∇ ≥ 0` and complementary slackness.
pub fn kkt_residual(q: &[Real], b: &[Real], v: &[Real]) -> Real {
    let grad = gradient(q, b, v);
    v.iter()
        .zip(&grad)
        .map(|(&vi, &gi)| (-vi).max(-gi).max(vi.min(gi.abs())))
        .fold(0.0, Real::max)
}

/// Solves `Q_PP s = −b_P` by Cholesky with pivots below `eps` dropped,
/// which yields a particular solution for consistent singular systems.
fn solve_free(q: &[Real], b: &[Real], free: &[usize], eps: Real) -> Vec<Real> {
    let m = b.len();
    let n = free.len();
    let mut l = vec![0.0 as Real; n * n];
    let mut dropped = vec![false; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = q[free[i] * m + free[j]];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= eps || dropped[i] {
                    dropped[i] = true;
                    l[i * n + i] = 1.0;
                } else {
                    l[i * n + i] = s.sqrt();
                }
            } else if dropped[j] {
                l[i * n + j] = 0.0;
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0 as Real; n];
    for i in 0..n {
        if dropped[i] {
            continue;
        }
        let mut s = -b[free[i]];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0 as Real; n];
    for i in (0..n).rev() {
        if dropped[i] {
            continue;
        }
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

fn active_set(q: &[Real], b: &[Real], max_iter: usize, tol: Real) -> Option<Vec<Real>> {
    let m = b.len();
    let eps = tol * 1e-3;
    let mut v = vec![0.0 as Real; m];
    let mut free = vec![false; m];
    let mut iter = 0;
    loop {
        let grad = gradient(q, b, &v);
        let entering = (0..m)
            .filter(|&i| !free[i] && grad[i] < -tol)
            .min_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = entering else { return Some(v) };
        free[j] = true;
        loop {
            iter += 1;
            if iter > max_iter {
                return None;
            }
            let idx: Vec<usize> = (0..m).filter(|&i| free[i]).collect();
            let s = solve_free(q, b, &idx, eps);
            if s.iter().all(|&x| x > 0.0) {
                for (&i, &x) in idx.iter().zip(&s) {
                    v[i] = x;
                }
                break;
            }
            let mut alpha: Real = 1.0;
            for (&i, &x) in idx.iter().zip(&s) {
                if x <= 0.0 {
                    let denom = v[i] - x;
                    if denom > 0.0 {
                        alpha = alpha.min(v[i] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            for (&i, &x) in idx.iter().zip(&s) {
                v[i] += alpha * (x - v[i]);
                if v[i] <= eps {
                    v[i] = 0.0;
                    free[i] = false;
                }
            }
            if !free.iter().any(|&f| f) {
                break;
            }
        }
    }
}

fn coordinate_descent(q: &[Real], b: &[Real], sweeps: usize, tol: Real) -> Vec<Real> {
    let m = b.len();
    let mut v = vec![0.0 as Real; m];
    for _ in 0..sweeps {
        let mut change: Real = 0.0;
        for i in 0..m {
            let qii = q[i * m + i];
            if qii <= 0.0 {
                continue;
            }
            let g = dot(&q[i * m..(i + 1) * m], &v) + b[i];
            let next = (v[i] - g / qii).max(0.0);
            change = change.max((next - v[i]).abs() * qii);
            v[i] = next;
        }
        if change <= tol * 1e-3 {
            break;
        }
    }
    v
}

/// `argmin ½‖x − g‖²` subject to `⟨x, g_k⟩ ≥ margin` for every row of
/// `constraints`. A feasible `g` is returned bit-for-bit without solving.
pub fn project(g: &[Real], constraints: &[Vec<Real>], margin: Real) -> Result<Projection> {
    project_with(g, constraints, margin, DEFAULT_MAX_ITER, DEFAULT_TOL)
}

pub fn project_with(
    g: &[Real],
    constraints: &[Vec<Real>],
    margin: Real,
    max_iter: usize,
    tol: Real,
) -> Result<Projection> {
    if !(margin >= 0.0) {
        return Err(Error::invalid(format!("margin must be >= 0, got {margin}")));
    }
    for row in constraints {
        if row.len() != g.len() {
            return Err(Error::shape("project", &[row.len()], &[g.len()]));
        }
    }
    let gg: Vec<Real> = constraints.iter().map(|row| dot(row, g)).collect();
    if gg.iter().all(|&d| d >= margin) {
        return Ok(Projection {
            gradient: g.to_vec(),
            status: ProjectionStatus::Feasible,
            dual: vec![0.0; constraints.len()],
        });
    }
    let m = constraints.len();
    let mut q = vec![0.0 as Real; m * m];
    for i in 0..m {
        for j in 0..=i {
            let d = dot(&constraints[i], &constraints[j]);
            q[i * m + j] = d;
            q[j * m + i] = d;
        }
    }
    let b: Vec<Real> = gg.iter().map(|d| d - margin).collect();
    match qp_dual_solve(&q, &b, max_iter, tol) {
        Ok(v) => {
            let mut out = g.to_vec();
            for (row, &vi) in constraints.iter().zip(&v) {
                if vi != 0.0 {
                    for (o, r) in out.iter_mut().zip(row) {
                        *o += vi * r;
                    }
                }
            }
            Ok(Projection {
                gradient: out,
                status: ProjectionStatus::Projected,
                dual: v,
            })
        }
        Err(e) => {
            log::warn!("gradient projection failed ({e}); using the unprojected gradient");
            Ok(Projection {
                gradient: g.to_vec(),
                status: ProjectionStatus::Fallback,
                dual: vec![0.0; m],
            })
        }
    }
}
