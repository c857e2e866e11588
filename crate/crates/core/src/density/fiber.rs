//! Minimization of `W|_S(q ⊕ r)` over the normal column `r`.

use nalgebra::{DMatrix, DVector, Matrix3x2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DensityKind, DensitySpec};
use crate::error::{Error, Result};
use crate::linalg::{sv_3x2, svd_3x2};
use crate::optimize::{lbfgs, LbfgsSettings};

/// Settings of the generic (numeric) fiber minimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberSettings {
    /// Random restarts in addition to the start at `r = 0`.
    pub restarts: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FiberSettings {
    fn default() -> Self {
        FiberSettings { restarts: 3, grad_tol: 1e-10, max_iters: 500, seed: 0x5eed }
    }
}

/// `W₀(q2) = Σ (λ_i − 1)²` for the rotation-distance density, with the
/// completing normal column: the left-singular direction orthogonal to the
/// range of `q2`, oriented so that `det(q2 ⊕ r) ≥ 0`.
pub fn w0_dist2_so(q2: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let (n, m) = q2.shape();
    let mut padded = DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (n, m)).copy_from(q2);
    let svd = padded.clone().svd(true, false);
    let u = svd.u.expect("svd u");
    let s = &svd.singular_values;
    // The padded matrix has at least n - m zero singular values; pick the smallest.
    let k = (0..n).min_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap()).unwrap();
    let mut r: DVector<f64> = u.column(k).into_owned();
    let mut full = padded;
    full.set_column(n - 1, &r);
    if full.determinant() < 0.0 {
        r = -r;
    }
    let mut sv: Vec<f64> = q2.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.resize(m, 0.0);
    (sv.iter().map(|l| (l - 1.0).powi(2)).sum(), r)
}

/// `W₀` for `3x2` tangential blocks from the closed-form singular values.
#[inline]
pub fn w0_3x2(q: &Matrix3x2<f64>) -> f64 {
    let (a, b) = sv_3x2(q);
    (a - 1.0).powi(2) + (b - 1.0).powi(2)
}

/// Value and gradient `2 (q − U Vᵀ)` of [`w0_3x2`].
pub fn w0_3x2_grad(q: &Matrix3x2<f64>) -> (f64, Matrix3x2<f64>) {
    let (u, s, v) = svd_3x2(q);
    let val = (s[0] - 1.0).powi(2) + (s[1] - 1.0).powi(2);
    (val, (q - u * v.transpose()) * 2.0)
}

/// Generic path: quasi-Newton descent over `r` from `r = 0` and seeded random starts.
///
/// Returns the best value over runs that reached `grad_tol`; if none did, a
/// [`Error::NotConverged`] carries the best value found.
pub fn fiber_minimize_generic(spec: &DensitySpec, q2: &DMatrix<f64>, settings: &FiberSettings) -> Result<(f64, DVector<f64>)> {
    let n = spec.n;
    let m = spec.m;
    let mut full = DMatrix::zeros(n, n);
    full.view_mut((0, 0), (n, m)).copy_from(q2);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let lb = LbfgsSettings { max_iters: settings.max_iters, grad_tol: settings.grad_tol, ..Default::default() };

    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for run in 0..=settings.restarts {
        let r0: Vec<f64> = if run == 0 { vec![0.0; n] } else { (0..n).map(|_| rng.random_range(-1.5..1.5)).collect() };
        let mut work = full.clone();
        let mut obj = |r: &[f64], g: &mut [f64]| -> Result<f64> {
            for i in 0..n {
                work[(i, n - 1)] = r[i];
            }
            let v = spec.eval(&work)?;
            let gw = spec.grad(&work)?;
            for i in 0..n {
                g[i] = gw[(i, n - 1)];
            }
            Ok(v)
        };
        let out = lbfgs(&mut obj, &r0, None, &lb)?;
        let better = match &best {
            None => true,
            Some((bv, _, bc)) => (out.converged && !bc) || (out.converged == *bc && out.energy < *bv),
        };
        if better {
            best = Some((out.energy, out.x, out.converged));
        }
    }
    let (value, r, converged) = best.expect("at least one run");
    if !converged {
        return Err(Error::NotConverged { restarts: settings.restarts, best_value: value, best_point: r });
    }
    Ok((value, DVector::from_vec(r)))
}

impl DensitySpec {
    /// `W₀(q2)` and an attaining normal column.
    pub fn w0(&self, q2: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_shape(q2, self.n, self.m)?;
        match self.kind {
            DensityKind::Dist2So => Ok(w0_dist2_so(q2)),
            DensityKind::Custom { .. } => fiber_minimize_generic(self, q2, &FiberSettings::default()),
        }
    }

    /// `W₀(q2)` and its gradient: the tangential block of `∇W` at the minimizing completion.
    pub fn w0_grad(&self, q2: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        if let (DensityKind::Dist2So, (3, 2)) = (&self.kind, q2.shape()) {
            let (v, g) = w0_3x2_grad(&Matrix3x2::from_iterator(q2.iter().copied()));
            return Ok((v, DMatrix::from_iterator(3, 2, g.iter().copied())));
        }
        let (v, r) = self.w0(q2)?;
        let mut full = DMatrix::zeros(self.n, self.n);
        full.view_mut((0, 0), (self.n, self.m)).copy_from(q2);
        full.set_column(self.n - 1, &r);
        Ok((v, self.grad(&full)?.columns(0, self.m).into_owned()))
    }

    /// Value of `W₀` only.
    pub fn w0_value(&self, q2: &DMatrix<f64>) -> Result<f64> {
        if let (DensityKind::Dist2So, (3, 2)) = (&self.kind, q2.shape()) {
            return Ok(w0_3x2(&Matrix3x2::from_iterator(q2.iter().copied())));
        }
        if let DensityKind::Dist2So = self.kind {
            self.check_shape(q2, self.n, self.m)?;
            let sv = q2.clone().svd(false, false).singular_values;
            return Ok(sv.iter().map(|l| (l - 1.0).powi(2)).sum());
        }
        Ok(self.w0(q2)?.0)
    }
}
