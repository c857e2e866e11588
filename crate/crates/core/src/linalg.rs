//! Small dense helpers shared by the geometry, density and relaxation code.

use nalgebra::{DMatrix, Matrix2, Matrix3x2, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric inverse square root `G^{-1/2}` of an SPD matrix.
pub fn sym_inv_sqrt(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(g.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Model(format!("matrix not positive definite (smallest eigenvalue {min:e})")));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Symmetric square root of an SPD matrix.
pub fn sym_sqrt(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(g.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Model(format!("matrix not positive definite (smallest eigenvalue {min:e})")));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_spectral_radius(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().fold(0.0_f64, |acc, l| acc.max(l.abs()))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Pairwise (cascade) summation; deterministic for a fixed input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Least-squares slope of `ln(value)` against `ln(h)`.
///
/// Returns `None` when fewer than two strictly positive values are available.
pub fn fit_order(hs: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(values)
        .filter(|(h, v)| **h > 0.0 && **v > 0.0 && v.is_finite())
        .map(|(h, v)| (h.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Singular values `(s1 >= s2 >= 0)` of a matrix with two columns, from its Gram entries.
#[inline]
pub fn sv2_from_gram(g11: f64, g12: f64, g22: f64) -> (f64, f64) {
    let tr = g11 + g22;
    let diff = g11 - g22;
    let disc = (diff * diff + 4.0 * g12 * g12).sqrt();
    let l1 = 0.5 * (tr + disc);
    let l2 = (0.5 * (tr - disc)).max(0.0);
    (l1.max(0.0).sqrt(), l2.sqrt())
}

/// Singular values of a 3x2 matrix, descending.
#[inline]
pub fn sv_3x2(a: &Matrix3x2<f64>) -> (f64, f64) {
    let c0 = a.column(0);
    let c1 = a.column(1);
    sv2_from_gram(c0.dot(&c0), c0.dot(&c1), c1.dot(&c1))
}

/// Thin SVD of a 3x2 matrix: `a = u * diag(s) * v^T` with `s` descending.
pub fn svd_3x2(a: &Matrix3x2<f64>) -> (Matrix3x2<f64>, [f64; 2], Matrix2<f64>) {
    let svd = a.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let mut vt = svd.v_t.expect("svd v_t");
    let mut s = [svd.singular_values[0], svd.singular_values[1]];
    if s[0] < s[1] {
        s.swap(0, 1);
        u.swap_columns(0, 1);
        vt.swap_rows(0, 1);
    }
    (u, s, vt.transpose())
}

/// Radical inverse of `index` in `base` (van der Corput / Halton coordinate).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

pub(crate) const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Point on the unit sphere `S^{d-1}` from `d` (or fewer) uniform coordinates.
///
/// `d = 1` gives `±1`, `d = 2` uses the angle, `d = 3` the area-preserving
/// cylinder map; larger dimensions go through Box-Muller.
pub fn unit_vector_from_uniform(d: usize, u: &[f64]) -> Vec<f64> {
    use std::f64::consts::TAU;
    match d {
        1 => vec![if u[0] < 0.5 { -1.0 } else { 1.0 }],
        2 => vec![(TAU * u[0]).cos(), (TAU * u[0]).sin()],
        3 => {
            let z = 1.0 - 2.0 * u[0];
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = TAU * u[1];
            vec![r * phi.cos(), r * phi.sin(), z]
        }
        _ => {
            let mut v: Vec<f64> = (0..d)
                .map(|i| {
                    let a = u[(2 * i) % u.len()].clamp(1e-12, 1.0 - 1e-12);
                    let b = u[(2 * i + 1) % u.len()];
                    (-2.0 * a.ln()).sqrt() * (TAU * b).cos()
                })
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            v
        }
    }
}

/// Number of uniform coordinates consumed by [`unit_vector_from_uniform`].
pub fn sphere_coords(d: usize) -> usize {
    match d {
        1 | 2 => 1,
        3 => 2,
        _ => 2 * d,
    }
}
