//! Energy densities on frame matrices.
//!
//! A linear map is always handled through its matrix in a g-orthonormal
//! adapted frame (columns) and the Euclidean target frame (rows), so `|q|` is
//! the Frobenius norm. The bulk density is defined only through its
//! restriction to the mid-surface plus a choice of frame, which makes it
//! homogeneous over fibers by construction.

mod conditions;
mod fiber;
mod so;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AdaptedFrame, FrameKind, MetricField};

pub use conditions::{verify_density_conditions, ConditionViolation, DensityConditionReport};
pub use fiber::{fiber_minimize_generic, w0_3x2, w0_3x2_grad, w0_dist2_so, FiberSettings};
pub use so::{dist2_so, dist2_so3, dist2_so3_grad, dist2_so_grad};

/// Matrix of a linear map in an orthonormal adapted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix(pub DMatrix<f64>);

impl FrameMatrix {
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Column concatenation `q ⊕ r`.
    pub fn concat(&self, r: &[f64]) -> FrameMatrix {
        let (n, m) = self.0.shape();
        assert_eq!(r.len(), n, "normal column length");
        let mut full = DMatrix::zeros(n, m + 1);
        full.view_mut((0, 0), (n, m)).copy_from(&self.0);
        for (i, v) in r.iter().enumerate() {
            full[(i, m)] = *v;
        }
        FrameMatrix(full)
    }

    /// The tangential block (all columns but the last).
    pub fn tangential(&self) -> FrameMatrix {
        let m = self.0.ncols() - 1;
        FrameMatrix(self.0.columns(0, m).into_owned())
    }
}

type DensityFn = Arc<dyn Fn(&DMatrix<f64>) -> f64 + Send + Sync>;
type DensityGradFn = Arc<dyn Fn(&DMatrix<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum DensityKind {
    /// `W|_S(Q) = dist²(Q, SO(n))`.
    Dist2So,
    /// User supplied `W|_S` on `n x n` matrices; gradient by central differences unless given.
    Custom { id: String, w: DensityFn, grad: Option<DensityGradFn> },
}

impl fmt::Debug for DensityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityKind::Dist2So => write!(f, "Dist2So"),
            DensityKind::Custom { id, grad, .. } => write!(f, "Custom {{ id: {id:?}, analytic_grad: {} }}", grad.is_some()),
        }
    }
}

/// Growth constants `(α, β, C)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
}

/// Bulk density restricted to the mid-surface, with its declared growth data.
#[derive(Clone, Debug)]
pub struct DensitySpec {
    pub kind: DensityKind,
    pub p: f64,
    pub growth: Growth,
    pub frame_indifferent: bool,
    pub m: usize,
    pub n: usize,
}

impl DensitySpec {
    /// Constants that hold for the rotation distance with `p = 2` in every dimension up to three:
    /// `dist² ≥ (|Q| − √n)² ≥ |Q|²/2 − n` and `|∇ dist²| ≤ 2(|Q| + √n)`.
    pub const DIST2_SO_GROWTH: Growth = Growth { alpha: 0.5, beta: 3.0, c: 3.5 };

    pub fn dist2_so(m: usize) -> Self {
        DensitySpec {
            kind: DensityKind::Dist2So,
            p: 2.0,
            growth: Self::DIST2_SO_GROWTH,
            frame_indifferent: true,
            m,
            n: m + 1,
        }
    }

    pub fn custom(id: impl Into<String>, m: usize, w: DensityFn, frame_indifferent: bool) -> Self {
        DensitySpec {
            kind: DensityKind::Custom { id: id.into(), w, grad: None },
            p: 2.0,
            growth: Self::DIST2_SO_GROWTH,
            frame_indifferent,
            m,
            n: m + 1,
        }
    }

    pub fn with_gradient(mut self, g: DensityGradFn) -> Self {
        if let DensityKind::Custom { grad, .. } = &mut self.kind {
            *grad = Some(g);
        }
        self
    }

    pub fn with_growth(mut self, p: f64, growth: Growth) -> Result<Self> {
        self.p = p;
        self.growth = growth;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.growth;
        if !(g.alpha > 0.0 && g.c > 0.0 && g.beta >= 0.0 && g.beta.is_finite() && g.c.is_finite()) {
            return Err(Error::Model(format!("growth constants must satisfy α > 0, β ≥ 0, C > 0, got {g:?}")));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::Model(format!("growth exponent must lie in (1, ∞), got {}", self.p)));
        }
        if !(1..=2).contains(&self.m) || self.n != self.m + 1 {
            return Err(Error::Model(format!("unsupported dimensions m = {}, n = {}", self.m, self.n)));
        }
        Ok(())
    }

    /// Identifier recorded in table metadata.
    pub fn id(&self) -> String {
        match &self.kind {
            DensityKind::Dist2So => format!("dist2_so(n={})", self.n),
            DensityKind::Custom { id, .. } => id.clone(),
        }
    }

    pub(crate) fn check_shape(&self, q: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
        if q.shape() != (rows, cols) {
            return Err(Error::Usage(format!("expected a {rows}x{cols} frame matrix, got {}x{}", q.nrows(), q.ncols())));
        }
        Ok(())
    }

    /// `W|_S(Q)` for a full `n x n` frame matrix.
    pub fn eval(&self, q: &DMatrix<f64>) -> Result<f64> {
        self.check_shape(q, self.n, self.n)?;
        let v = match &self.kind {
            DensityKind::Dist2So => dist2_so(q),
            DensityKind::Custom { w, .. } => w(q),
        };
        if !v.is_finite() {
            return Err(Error::Model(format!("density returned {v} at {q}")));
        }
        Ok(v)
    }

    /// Gradient of `W|_S` with respect to the matrix entries.
    pub fn grad(&self, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape(q, self.n, self.n)?;
        match &self.kind {
            DensityKind::Dist2So => Ok(dist2_so_grad(q)),
            DensityKind::Custom { grad: Some(g), .. } => Ok(g(q)),
            DensityKind::Custom { w, .. } => {
                let eps = 1e-6 * q.norm().max(1.0);
                let mut out = DMatrix::zeros(self.n, self.n);
                let mut work = q.clone();
                for k in 0..q.len() {
                    let orig = work[k];
                    work[k] = orig + eps;
                    let fp = w(&work);
                    work[k] = orig - eps;
                    let fm = w(&work);
                    work[k] = orig;
                    out[k] = (fp - fm) / (2.0 * eps);
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Model(format!("non-finite density gradient at {q}")));
                }
                Ok(out)
            }
        }
    }
}

/// `W|_S` at the mid-surface point `x` for a matrix in the adapted frame at `(x, 0)`.
pub fn eval_w_on_s(spec: &DensitySpec, metric: &MetricField, x: &[f64], q_full: &FrameMatrix) -> Result<f64> {
    metric.check_point(x, 0.0)?;
    spec.eval(&q_full.0)
}

/// Bulk density at `(x, z)` for `q` read in `frame`; the frame must be of the requested kind.
pub fn eval_w_bulk(
    spec: &DensitySpec,
    metric: &MetricField,
    frame: &AdaptedFrame,
    q: &FrameMatrix,
    mode: FrameKind,
) -> Result<f64> {
    if frame.kind != mode {
        return Err(Error::Usage(format!("matrix expressed in a {:?} frame but {mode:?} mode requested", frame.kind)));
    }
    metric.check_point(&frame.x, frame.z)?;
    spec.eval(&q.0)
}

/// `(W₀(q2), r)` with `r` attaining the minimum over the normal column.
pub fn fiber_minimize_w0(spec: &DensitySpec, metric: &MetricField, x: &[f64], q2: &FrameMatrix) -> Result<(f64, Vec<f64>)> {
    metric.check_point(x, 0.0)?;
    let (v, r) = spec.w0(&q2.0)?;
    Ok((v, r.iter().copied().collect()))
}

#[cfg(test)]
pub(crate) mod test_support {
    use nalgebra::{DMatrix, Matrix3, Vector3};
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Haar-distributed rotation from the QR factorization of a Gaussian matrix.
    pub fn random_rotation(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = a.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                let c = -q.column(j);
                q.set_column(j, &c);
            }
        }
        if q.determinant() < 0.0 {
            let c = -q.column(0);
            q.set_column(0, &c);
        }
        q
    }

    fn exp_skew(w: &Vector3<f64>) -> Matrix3<f64> {
        let t = w.norm();
        let k = Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0);
        if t < 1e-14 {
            return Matrix3::identity() + k;
        }
        Matrix3::identity() + k * (t.sin() / t) + k * k * ((1.0 - t.cos()) / (t * t))
    }

    /// `min_R |Q − R|²` by dense rotation sampling followed by ascent of `tr(QᵀR)` on SO(3).
    pub fn rotation_search_oracle(q: &DMatrix<f64>, rng: &mut impl Rng) -> f64 {
        let q3 = Matrix3::from_iterator(q.iter().copied());
        let obj = |r: &Matrix3<f64>| (q3 - r).norm_squared();
        let mut best = Matrix3::identity();
        for _ in 0..4000 {
            let r = random_rotation(3, rng);
            let r = Matrix3::from_iterator(r.iter().copied());
            if obj(&r) < obj(&best) {
                best = r;
            }
        }
        let mut step = 0.5;
        for _ in 0..20000 {
            let a = best.transpose() * q3;
            let s = (a - a.transpose()) * 0.5;
            let w = Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]);
            if w.norm() < 1e-15 {
                break;
            }
            let cand = best * exp_skew(&(w * step));
            if obj(&cand) < obj(&best) {
                best = cand;
                step = (step * 1.2).min(1.0);
            } else {
                step *= 0.5;
                if step < 1e-16 {
                    break;
                }
            }
        }
        obj(&best)
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::random_rotation;
    use super::*;
    use crate::geometry::ChartDomain;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(v))
    }

    #[test]
    fn eval_on_surface_examples() {
        let spec = DensitySpec::dist2_so(2);
        let m = MetricField::spherical_cap(2.0, ChartDomain::unit_square(), 0.3).unwrap();
        let x = [0.4, 0.4];
        assert!(eval_w_on_s(&spec, &m, &x, &FrameMatrix(DMatrix::identity(3, 3))).unwrap().abs() < 1e-15);
        let v = eval_w_on_s(&spec, &m, &x, &FrameMatrix(diag(&[1.2, 1.0, 1.0]))).unwrap();
        assert!((v - 0.04).abs() < 1e-13);
    }

    #[test]
    fn frame_independence_on_surface() {
        // The same map read in two orthonormal frames differs by an orthogonal change of columns.
        let spec = DensitySpec::dist2_so(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
        let o = random_rotation(3, &mut rng);
        let a = spec.eval(&q).unwrap();
        let b = spec.eval(&(&q * &o)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bulk_mode_mismatch_is_usage_error() {
        let spec = DensitySpec::dist2_so(2);
        let m = MetricField::spherical_cap(2.0, ChartDomain::unit_square(), 0.3).unwrap();
        let f = m.split_frame(&[0.5, 0.5], 0.1).unwrap();
        let q = FrameMatrix(DMatrix::identity(3, 3));
        assert!(matches!(eval_w_bulk(&spec, &m, &f, &q, FrameKind::Transported), Err(Error::Usage(_))));
        assert!(eval_w_bulk(&spec, &m, &f, &q, FrameKind::Split).is_ok());
    }

    #[test]
    fn bulk_at_zero_equals_surface_value() {
        let spec = DensitySpec::dist2_so(2);
        let m = MetricField::spherical_cap(2.0, ChartDomain::unit_square(), 0.3).unwrap();
        let q = FrameMatrix(DMatrix::from_fn(3, 3, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 1.0));
        let ft = m.transport_normal(&[0.5, 0.5], 0.0).unwrap();
        let fs = m.split_frame(&[0.5, 0.5], 0.0).unwrap();
        let on_s = eval_w_on_s(&spec, &m, &[0.5, 0.5], &q).unwrap();
        assert_eq!(eval_w_bulk(&spec, &m, &ft, &q, FrameKind::Transported).unwrap(), on_s);
        assert_eq!(eval_w_bulk(&spec, &m, &fs, &q, FrameKind::Split).unwrap(), on_s);
    }

    #[test]
    fn transported_and_split_differ_by_order_h() {
        // A fixed differential read in the two frames: |W(dF·Π) − W(dF·σι)| / (1 + |q|²) ~ h.
        let spec = DensitySpec::dist2_so(2);
        let m = MetricField::spherical_cap(2.0, ChartDomain::unit_square(), 0.4).unwrap();
        let df = DMatrix::from_row_slice(3, 3, &[1.1, 0.2, 0.0, -0.1, 0.9, 0.1, 0.05, 0.0, 1.0]);
        let ratio = |h: f64| {
            let mut worst: f64 = 0.0;
            for &(x0, x1) in &[(0.1, 0.1), (0.5, 0.8), (0.9, 0.3)] {
                let ft = m.transport_normal(&[x0, x1], h).unwrap();
                let fs = m.split_frame(&[x0, x1], h).unwrap();
                let qt = &df * &ft.columns;
                let qs = &df * &fs.columns;
                let d = (spec.eval(&qt).unwrap() - spec.eval(&qs).unwrap()).abs() / (1.0 + qt.norm_squared());
                worst = worst.max(d / h);
            }
            worst
        };
        let (a, b, c) = (ratio(0.1), ratio(0.05), ratio(0.025));
        assert!(b / a > 0.7 && b / a < 1.3 && c / b > 0.7 && c / b < 1.3, "{a} {b} {c}");
    }

    #[test]
    fn invalid_growth_rejected() {
        let spec = DensitySpec::dist2_so(2);
        assert!(spec.clone().with_growth(1.0, Growth { alpha: 0.5, beta: 3.0, c: 2.0 }).is_err());
        assert!(spec.with_growth(2.0, Growth { alpha: 0.0, beta: 3.0, c: 2.0 }).is_err());
    }

    #[test]
    fn custom_density_gradient_by_differences() {
        let w: DensityFn = Arc::new(|q: &DMatrix<f64>| q.norm_squared());
        let spec = DensitySpec::custom("frobenius", 2, w, false);
        let q = DMatrix::from_fn(3, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let g = spec.grad(&q).unwrap();
        assert!((g - &q * 2.0).abs().max() < 1e-7);
        let bad: DensityFn = Arc::new(|_q: &DMatrix<f64>| f64::NAN);
        let spec = DensitySpec::custom("nan", 2, bad, false);
        assert!(matches!(spec.eval(&q), Err(Error::Model(_))));
    }

    fn matrix_strategy(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-scale..scale, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
    }

    proptest! {
        #[test]
        fn dist2_is_left_rotation_invariant(q in matrix_strategy(3, 3, 3.0), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rotation(3, &mut rng);
            prop_assert!((dist2_so(&(&r * &q)) - dist2_so(&q)).abs() < 1e-9);
        }

        #[test]
        fn full_density_dominates_w0(q in matrix_strategy(3, 3, 4.0)) {
            let spec = DensitySpec::dist2_so(2);
            let w = spec.eval(&q).unwrap();
            let w0 = spec.w0_value(&q.columns(0, 2).into_owned()).unwrap();
            prop_assert!(w >= w0 - 1e-12);
        }

        #[test]
        fn dist2_nonnegative_and_zero_on_rotations(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rotation(3, &mut rng);
            prop_assert!(dist2_so(&r) < 1e-20);
        }

        #[test]
        fn w0_locally_lipschitz(q in matrix_strategy(3, 2, 3.0), d in matrix_strategy(3, 2, 1.0), eps in 1e-6..1e-2f64) {
            prop_assume!(d.norm() > 1e-3);
            let d = &d / d.norm();
            let spec = DensitySpec::dist2_so(2);
            let a = spec.w0_value(&q).unwrap();
            let q2 = &q + &d * eps;
            let b = spec.w0_value(&q2).unwrap();
            let g = spec.growth;
            let bound = g.c * (1.0 + q.norm().powf(spec.p - 1.0) + q2.norm().powf(spec.p - 1.0)) * eps;
            prop_assert!((a - b).abs() <= bound);
        }
    }
}
