#![allow(dead_code)]

use srm_core::budget::Grid;
use srm_core::Real;
use statrs::distribution::{ContinuousCDF, Normal};

/// One-sided Wilcoxon signed-rank test of `H1: median(a − b) < 0` using the
/// normal approximation with tie and zero corrections. Returns the p-value.
pub fn wilcoxon_less(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].iter_mut().for_each(|r| *r = avg);
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean + 0.5) / var.sqrt();
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

pub fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Primal oracle: for every subset S of constraints treated as equalities,
/// project g onto {x : G_S x = margin}; keep the nearest feasible result.
pub fn gem_oracle(g: &[Real], rows: &[Vec<Real>], margin: Real) -> Vec<Real> {
    let m = rows.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let s: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let x = if s.is_empty() {
            g.to_vec()
        } else {
            let a: Vec<Vec<f64>> = s
                .iter()
                .map(|&i| s.iter().map(|&j| dot(&rows[i], &rows[j])).collect())
                .collect();
            let rhs: Vec<f64> = s.iter().map(|&i| margin - dot(&rows[i], g)).collect();
            let Some(lam) = solve(a, rhs) else { continue };
            let mut x = g.to_vec();
            for (&i, l) in s.iter().zip(lam) {
                for (xi, r) in x.iter_mut().zip(&rows[i]) {
                    *xi += l * r;
                }
            }
            x
        };
        if rows.iter().all(|r| dot(r, &x) >= margin - 1e-9) {
            let d: f64 = x
                .iter()
                .zip(g)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    best.expect("some subset is feasible").1
}

pub fn norm_diff(a: &[Real], b: &[Real]) -> Real {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<Real>()
        .sqrt()
}

/// Independent enumeration: collect every feasible point, keep the maximal
/// capacity set, then pick the lexicographically smallest (c, l).
pub fn brute_force(
    rate: f64,
    rho: f64,
    grid: &Grid,
    params: impl Fn(usize, usize) -> f64,
) -> Option<(usize, usize)> {
    let mut feasible = Vec::new();
    for c in grid.c_min..=grid.c_max {
        for l in grid.l_min..=grid.l_max {
            let bits = (l as f64).log2().ceil() as usize;
            let k = c * bits;
            if rho * k as f64 + params(c, l) <= rate {
                feasible.push((c, l, c as f64 * (l as f64).ln() / 2f64.ln()));
            }
        }
    }
    let top = feasible
        .iter()
        .map(|p| p.2)
        .fold(f64::NEG_INFINITY, f64::max);
    feasible
        .into_iter()
        .filter(|p| (p.2 - top).abs() <= 1e-9 * top.max(1.0))
        .map(|p| (p.0, p.1))
        .min()
}
