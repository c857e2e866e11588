//! Squared distance to the rotation group.

use nalgebra::{DMatrix, Matrix3};

/// `min_{R ∈ SO(n)} |Q − R|²`: `Σ (σ̂_i − 1)²` with the smallest singular value
/// negated when `det Q < 0`.
pub fn dist2_so(q: &DMatrix<f64>) -> f64 {
    assert_eq!(q.nrows(), q.ncols(), "dist2_so needs a square matrix");
    if q.nrows() == 3 {
        return dist2_so3(&Matrix3::from_iterator(q.iter().copied()));
    }
    let sv = q.clone().svd(false, false).singular_values;
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if q.determinant() < 0.0 {
        let last = s.len() - 1;
        s[last] = -s[last];
    }
    s.iter().map(|v| (v - 1.0).powi(2)).sum()
}

/// Gradient of [`dist2_so`]: `2 (Q − R)` with `R` the nearest rotation.
///
/// Where the nearest rotation is not unique (`det Q < 0` with a repeated
/// smallest singular value) the candidates are averaged.
pub fn dist2_so_grad(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let svd = q.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let s = &svd.singular_values;
    let det_uv = (&u * &vt).determinant();
    if det_uv > 0.0 {
        return (q - u * vt) * 2.0;
    }
    // Flip the direction of the smallest singular value; average over ties.
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    let tie_tol = 1e-12 * s.iter().copied().fold(0.0, f64::max).max(1.0);
    let ties: Vec<usize> = (0..n).filter(|&i| (s[i] - smin).abs() <= tie_tol).collect();
    let mut r = DMatrix::zeros(n, n);
    for &k in &ties {
        let mut d = DMatrix::identity(n, n);
        d[(k, k)] = -1.0;
        r += &u * d * &vt;
    }
    r /= ties.len() as f64;
    (q - r) * 2.0
}

/// Fast path of [`dist2_so`] for `3x3` matrices.
#[inline]
pub fn dist2_so3(q: &Matrix3<f64>) -> f64 {
    let s = q.singular_values();
    let mut s = [s[0], s[1], s[2]];
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if q.determinant() < 0.0 {
        s[2] = -s[2];
    }
    s.iter().map(|v| (v - 1.0).powi(2)).sum()
}

/// Value and gradient of [`dist2_so3`].
pub fn dist2_so3_grad(q: &Matrix3<f64>) -> (f64, Matrix3<f64>) {
    let svd = q.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let s = svd.singular_values;
    let det_uv = (u * vt).determinant();
    if det_uv > 0.0 {
        let val = s.iter().map(|v| (v - 1.0).powi(2)).sum();
        return (val, (q - u * vt) * 2.0);
    }
    let smin = s.min();
    let tie_tol = 1e-12 * s.max().max(1.0);
    let mut r = Matrix3::zeros();
    let mut count = 0.0;
    let mut val = 0.0;
    for k in 0..3 {
        if (s[k] - smin).abs() <= tie_tol {
            let mut d = Matrix3::identity();
            d[(k, k)] = -1.0;
            r += u * d * vt;
            count += 1.0;
        }
    }
    let kmin = (0..3).min_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap()).unwrap();
    for k in 0..3 {
        let v = if k == kmin { -s[k] } else { s[k] };
        val += (v - 1.0).powi(2);
    }
    (val, (q - r / count) * 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::test_support::{random_rotation, rotation_search_oracle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn known_values() {
        assert!(dist2_so(&DMatrix::identity(3, 3)).abs() < 1e-15);
        assert!((dist2_so(&(DMatrix::identity(3, 3) * 2.0)) - 3.0).abs() < 1e-13);
        let refl = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0]));
        assert!((dist2_so(&refl) - 4.0).abs() < 1e-13);
        let stretch = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.2, 1.0, 1.0]));
        assert!((dist2_so(&stretch) - 0.04).abs() < 1e-13);
    }

    #[test]
    fn matches_rotation_search_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [
            DMatrix::identity(3, 3) * 2.0,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0])),
            DMatrix::from_row_slice(3, 3, &[0.3, -1.1, 0.2, 0.9, 0.4, -0.6, -0.2, 0.5, -1.3]),
        ];
        for q in cases {
            let oracle = rotation_search_oracle(&q, &mut rng);
            assert!((dist2_so(&q) - oracle).abs() < 1e-9, "{} vs {oracle}", dist2_so(&q));
        }
    }

    #[test]
    fn two_dimensional_case() {
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!((dist2_so(&q) - 2.0).abs() < 1e-14);
        let r = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        assert!(dist2_so(&r) < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q = DMatrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
            let g = dist2_so_grad(&q);
            let q3 = Matrix3::from_iterator(q.iter().copied());
            let (v3, g3) = dist2_so3_grad(&q3);
            assert!((v3 - dist2_so(&q)).abs() < 1e-12);
            let eps = 1e-6;
            for i in 0..3 {
                for j in 0..3 {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[(i, j)] += eps;
                    qm[(i, j)] -= eps;
                    let fd = (dist2_so(&qp) - dist2_so(&qm)) / (2.0 * eps);
                    assert!((fd - g[(i, j)]).abs() < 1e-6, "{fd} vs {}", g[(i, j)]);
                    assert!((g3[(i, j)] - g[(i, j)]).abs() < 1e-10);
                }
            }
        }
        let _ = random_rotation(3, &mut rng);
    }

    #[test]
    fn tie_at_reflection_averages() {
        // -I: det < 0 with a triple tie; the averaged rotation is -I/3, so the gradient is 2(-I + I/3).
        let q = Matrix3::identity() * -1.0;
        let (v, g) = dist2_so3_grad(&q);
        assert!((v - 4.0).abs() < 1e-12);
        assert!((g - Matrix3::identity() * (-4.0 / 3.0)).abs().max() < 1e-12);
    }
}
