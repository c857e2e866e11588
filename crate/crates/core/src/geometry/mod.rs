//! Riemannian geometry of the tubular neighborhood in a Fermi chart.
//!
//! A [`MetricField`] stores only the tangential block `g_tan(x, z)` of the
//! metric. The full `n x n` metric is always `block-diag(g_tan, 1)`, so the
//! normal geodesics are the `z`-lines, the exponential map of the normal
//! bundle is the identity on coordinates and the projection onto the
//! mid-surface drops `z`. Codimension is fixed to one.

mod diagnostics;
mod domain;
mod frames;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use diagnostics::{
    chart_quadrature, geometry_diagnostics, geometry_diagnostics_with, reference_integrand,
    rescale_consistency, surface_area, tube_volume, DiagnosticsOptions, DiagnosticsReport,
    DiagnosticsRow,
};
pub use domain::ChartDomain;
pub use frames::{AdaptedFrame, FrameKind, TransportParams};

/// One monomial `coef * x1^a * x2^b * z^c` (exponents listed as `[a, b, c]`,
/// or `[a, c]` when the chart is one-dimensional).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub coef: f64,
    pub powers: Vec<u32>,
}

/// Polynomial in the chart coordinates and `z`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<PolyTerm>,
}

impl Polynomial {
    pub fn new(terms: Vec<(f64, Vec<u32>)>) -> Self {
        Polynomial { terms: terms.into_iter().map(|(coef, powers)| PolyTerm { coef, powers }).collect() }
    }

    pub fn constant(c: f64, vars: usize) -> Self {
        Polynomial::new(vec![(c, vec![0; vars])])
    }

    /// Evaluate at `vars = [x.., z]`.
    pub fn eval(&self, vars: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * t.powers.iter().zip(vars).map(|(&p, v)| v.powi(p as i32)).product::<f64>())
            .sum()
    }

    /// Partial derivative with respect to variable `k` evaluated at `vars`.
    pub fn partial(&self, k: usize, vars: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.powers[k] > 0)
            .map(|t| {
                let mut prod = t.coef * t.powers[k] as f64;
                for (i, (&p, v)) in t.powers.iter().zip(vars).enumerate() {
                    let e = if i == k { p - 1 } else { p };
                    prod *= v.powi(e as i32);
                }
                prod
            })
            .sum()
    }
}

type MetricClosure = Arc<dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync>;

/// Built-in and user supplied tangential metric blocks.
#[derive(Clone)]
pub enum MetricKind {
    /// `g_tan = I`.
    Flat,
    /// Shell around a spherical cap of radius `R`: `g_tan = (1 + z/R)^2 c(x) I` with the
    /// stereographic conformal factor `c(x) = (1 + |x|^2 / 4R^2)^{-2}`.
    SphericalCap { radius: f64 },
    /// `g_tan = exp(2 c z) g0` for a constant SPD `g0`.
    ExponentialGrowth { rate: f64, base: DMatrix<f64> },
    /// Entries of the upper triangle, row-major: `[g11]` for `m = 1`, `[g11, g12, g22]` for `m = 2`.
    CustomPoly { entries: Vec<Polynomial> },
    /// Arbitrary closure; derivatives always by finite differences.
    Closure(MetricClosure),
}

impl fmt::Debug for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Flat => write!(f, "Flat"),
            MetricKind::SphericalCap { radius } => write!(f, "SphericalCap {{ radius: {radius} }}"),
            MetricKind::ExponentialGrowth { rate, .. } => write!(f, "ExponentialGrowth {{ rate: {rate} }}"),
            MetricKind::CustomPoly { entries } => write!(f, "CustomPoly({} entries)", entries.len()),
            MetricKind::Closure(_) => write!(f, "Closure"),
        }
    }
}

/// How metric derivatives are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivMode {
    Analytic,
    FiniteDifference { step: f64 },
}

impl Default for DerivMode {
    fn default() -> Self {
        DerivMode::FiniteDifference { step: 1e-5 }
    }
}

/// Christoffel symbols `Γ^a_{bc}` of the full metric, stored densely.
#[derive(Clone, Debug)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.n + b) * self.n + c]
    }
}

/// Intrinsic metric of the ambient manifold around the mid-surface, in a Fermi chart.
#[derive(Clone, Debug)]
pub struct MetricField {
    kind: MetricKind,
    domain: ChartDomain,
    z_max: f64,
    deriv: DerivMode,
}

impl MetricField {
    /// Builds a metric over `domain` with working normal range `|z| <= z_max`.
    ///
    /// Built-in kinds default to analytic derivatives; closures use finite
    /// differences with the default step.
    pub fn new(kind: MetricKind, domain: ChartDomain, z_max: f64) -> Result<Self> {
        domain.validate()?;
        let m = domain.dim();
        if !(z_max > 0.0) {
            return Err(Error::Domain(format!("working z-range must be positive, got {z_max}")));
        }
        match &kind {
            MetricKind::SphericalCap { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Model(format!("cap radius must be positive, got {radius}")));
                }
                if z_max >= *radius {
                    return Err(Error::Domain(format!(
                        "working z-range {z_max} reaches the focal distance {radius} of the cap"
                    )));
                }
            }
            MetricKind::ExponentialGrowth { base, .. } => {
                if base.nrows() != m || base.ncols() != m {
                    return Err(Error::Model(format!("base metric must be {m}x{m}")));
                }
            }
            MetricKind::CustomPoly { entries } => {
                let want = m * (m + 1) / 2;
                if entries.len() != want {
                    return Err(Error::Model(format!("custom_poly needs {want} entries, got {}", entries.len())));
                }
                for p in entries {
                    if p.terms.iter().any(|t| t.powers.len() != m + 1) {
                        return Err(Error::Model(format!("custom_poly terms need {} exponents", m + 1)));
                    }
                }
            }
            MetricKind::Flat | MetricKind::Closure(_) => {}
        }
        let deriv = match kind {
            MetricKind::Closure(_) => DerivMode::default(),
            _ => DerivMode::Analytic,
        };
        Ok(MetricField { kind, domain, z_max, deriv })
    }

    pub fn flat(domain: ChartDomain, z_max: f64) -> Result<Self> {
        MetricField::new(MetricKind::Flat, domain, z_max)
    }

    pub fn spherical_cap(radius: f64, domain: ChartDomain, z_max: f64) -> Result<Self> {
        MetricField::new(MetricKind::SphericalCap { radius }, domain, z_max)
    }

    /// Switch derivative evaluation; closures cannot use [`DerivMode::Analytic`].
    pub fn with_deriv_mode(mut self, mode: DerivMode) -> Result<Self> {
        if matches!(self.kind, MetricKind::Closure(_)) && mode == DerivMode::Analytic {
            return Err(Error::Usage("closure metrics have no analytic derivatives".into()));
        }
        if let DerivMode::FiniteDifference { step } = mode {
            if !(step > 0.0) {
                return Err(Error::numeric("metric derivative", format!("finite-difference step {step} not positive")));
            }
        }
        self.deriv = mode;
        Ok(self)
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }

    pub fn deriv_mode(&self) -> DerivMode {
        self.deriv
    }

    /// Mid-surface dimension `m`.
    pub fn m(&self) -> usize {
        self.domain.dim()
    }

    /// Ambient dimension `n = m + 1`.
    pub fn n(&self) -> usize {
        self.m() + 1
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, MetricKind::Flat)
    }

    /// Whether `g_tan` is independent of `z`, so parallel transport along fibers is trivial.
    pub fn is_z_independent(&self) -> bool {
        match &self.kind {
            MetricKind::Flat => true,
            MetricKind::ExponentialGrowth { rate, .. } => *rate == 0.0,
            MetricKind::CustomPoly { entries } => {
                let m = self.m();
                entries.iter().all(|p| p.terms.iter().all(|t| t.powers[m] == 0 || t.coef == 0.0))
            }
            _ => false,
        }
    }

    pub(crate) fn check_point(&self, x: &[f64], z: f64) -> Result<()> {
        if x.len() != self.m() {
            return Err(Error::Domain(format!("chart point has {} coordinates, expected {}", x.len(), self.m())));
        }
        if !self.domain.contains(x, 1e-9) {
            return Err(Error::Domain(format!("point {x:?} outside the chart domain")));
        }
        if !(z.abs() <= self.z_max * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("z = {z} outside the working range ±{}", self.z_max)));
        }
        Ok(())
    }

    /// Tangential block without domain checks.
    pub(crate) fn g_tan_raw(&self, x: &[f64], z: f64) -> DMatrix<f64> {
        let m = self.m();
        match &self.kind {
            MetricKind::Flat => DMatrix::identity(m, m),
            MetricKind::SphericalCap { radius } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let u = 1.0 + r2 / (4.0 * radius * radius);
                let s = (1.0 + z / radius).powi(2) / (u * u);
                DMatrix::identity(m, m) * s
            }
            MetricKind::ExponentialGrowth { rate, base } => base * (2.0 * rate * z).exp(),
            MetricKind::CustomPoly { entries } => {
                let vars = vars_of(x, z);
                sym_from_upper(m, |k| entries[k].eval(&vars))
            }
            MetricKind::Closure(f) => f(x, z),
        }
    }

    /// Tangential block `g_tan(x, z)`, checked for domain and symmetric positive-definiteness.
    pub fn g_tan(&self, x: &[f64], z: f64) -> Result<DMatrix<f64>> {
        self.check_point(x, z)?;
        let g = self.g_tan_raw(x, z);
        self.check_spd(&g, x, z)?;
        Ok(g)
    }

    fn check_spd(&self, g: &DMatrix<f64>, x: &[f64], z: f64) -> Result<()> {
        let m = self.m();
        if g.nrows() != m || g.ncols() != m {
            return Err(Error::Model(format!("metric block at ({x:?}, {z}) has shape {}x{}", g.nrows(), g.ncols())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite metric at ({x:?}, {z})")));
        }
        let asym = (g - g.transpose()).abs().max();
        if asym > 1e-12 * g.abs().max().max(1.0) {
            return Err(Error::Model(format!("metric not symmetric at ({x:?}, {z})")));
        }
        if g.clone().cholesky().is_none() {
            return Err(Error::Model(format!("metric not positive definite at ({x:?}, {z})")));
        }
        Ok(())
    }

    /// Full `n x n` metric `block-diag(g_tan(x, z), 1)`.
    pub fn eval_metric(&self, x: &[f64], z: f64) -> Result<DMatrix<f64>> {
        let g = self.g_tan(x, z)?;
        Ok(embed_block(&g, 1.0))
    }

    /// Approximating metric `g~ = block-diag(g_tan(x, 0), 1)` at the point `(x, z)`.
    pub fn approx_metric(&self, x: &[f64], z: f64) -> Result<DMatrix<f64>> {
        self.check_point(x, z)?;
        let g = self.g_tan(x, 0.0)?;
        Ok(embed_block(&g, 1.0))
    }

    /// Partial derivatives of `g_tan` with respect to `x_1..x_m, z` (in that order).
    pub fn g_tan_derivs(&self, x: &[f64], z: f64) -> Result<Vec<DMatrix<f64>>> {
        let m = self.m();
        match self.deriv {
            DerivMode::Analytic => Ok(self.analytic_derivs(x, z)),
            DerivMode::FiniteDifference { step } => {
                let mut out = Vec::with_capacity(m + 1);
                for k in 0..=m {
                    let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                    let (mut zp, mut zm) = (z, z);
                    if k < m {
                        xp[k] += step;
                        xm[k] -= step;
                        if xp[k] == x[k] || xm[k] == x[k] {
                            return Err(Error::numeric("metric derivative", format!("step {step} underflows at x = {x:?}")));
                        }
                    } else {
                        zp += step;
                        zm -= step;
                        if zp == z || zm == z {
                            return Err(Error::numeric("metric derivative", format!("step {step} underflows at z = {z}")));
                        }
                    }
                    let d = (self.g_tan_raw(&xp, zp) - self.g_tan_raw(&xm, zm)) / (2.0 * step);
                    out.push((&d + d.transpose()) * 0.5);
                }
                Ok(out)
            }
        }
    }

    /// Only the `z`-derivative of `g_tan`.
    pub(crate) fn g_tan_dz(&self, x: &[f64], z: f64) -> DMatrix<f64> {
        let m = self.m();
        match (&self.kind, self.deriv) {
            (MetricKind::Flat, _) => DMatrix::zeros(m, m),
            (_, DerivMode::Analytic) => self.analytic_derivs(x, z).pop().expect("z derivative"),
            (_, DerivMode::FiniteDifference { step }) => {
                let d = (self.g_tan_raw(x, z + step) - self.g_tan_raw(x, z - step)) / (2.0 * step);
                (&d + d.transpose()) * 0.5
            }
        }
    }

    fn analytic_derivs(&self, x: &[f64], z: f64) -> Vec<DMatrix<f64>> {
        let m = self.m();
        match &self.kind {
            MetricKind::Flat => vec![DMatrix::zeros(m, m); m + 1],
            MetricKind::SphericalCap { radius } => {
                let r = *radius;
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let u = 1.0 + r2 / (4.0 * r * r);
                let c = 1.0 / (u * u);
                let a = (1.0 + z / r).powi(2);
                let mut out: Vec<DMatrix<f64>> = (0..m)
                    .map(|i| {
                        let dc = -x[i] / (r * r * u * u * u);
                        DMatrix::identity(m, m) * (a * dc)
                    })
                    .collect();
                out.push(DMatrix::identity(m, m) * (2.0 * (1.0 + z / r) / r * c));
                out
            }
            MetricKind::ExponentialGrowth { rate, base } => {
                let mut out = vec![DMatrix::zeros(m, m); m];
                out.push(base * (2.0 * rate * (2.0 * rate * z).exp()));
                out
            }
            MetricKind::CustomPoly { entries } => {
                let vars = vars_of(x, z);
                (0..=m).map(|k| sym_from_upper(m, |e| entries[e].partial(k, &vars))).collect()
            }
            MetricKind::Closure(_) => unreachable!("closure metrics use finite differences"),
        }
    }

    /// Christoffel symbols of the Levi-Civita connection of the full metric at `(x, z)`.
    pub fn christoffel(&self, x: &[f64], z: f64) -> Result<Christoffel> {
        let g = self.eval_metric(x, z)?;
        let n = self.n();
        let m = self.m();
        let ginv = g.clone().try_inverse().ok_or_else(|| Error::Model(format!("singular metric at ({x:?}, {z})")))?;
        let dtan = self.g_tan_derivs(x, z)?;
        // dg[c] = ∂_c g (full n x n); the z-row and z-column are constant in a Fermi chart.
        let dg: Vec<DMatrix<f64>> = dtan.iter().map(|d| embed_block(d, 0.0)).collect();
        let mut data = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in b..n {
                    let mut s = 0.0;
                    for d in 0..n {
                        s += ginv[(a, d)] * (dg[b][(d, c)] + dg[c][(d, b)] - dg[d][(b, c)]);
                    }
                    data[(a * n + b) * n + c] = 0.5 * s;
                    data[(a * n + c) * n + b] = 0.5 * s;
                }
            }
        }
        debug_assert_eq!(dg.len(), m + 1);
        Ok(Christoffel { n, data })
    }

    /// The matrix `K^a_b = Γ^a_{z b}` driving parallel transport along the normal fiber.
    ///
    /// In Fermi form `∂_b g_{dz}` and `∂_d g_{zb}` vanish, leaving `½ g^{ad} ∂_z g_{db}`.
    pub(crate) fn normal_connection(&self, x: &[f64], z: f64) -> Result<DMatrix<f64>> {
        let n = self.n();
        if self.is_z_independent() {
            return Ok(DMatrix::zeros(n, n));
        }
        let g = self.g_tan_raw(x, z);
        let dz = self.g_tan_dz(x, z);
        let chol = g.cholesky().ok_or_else(|| Error::Model(format!("metric not positive definite at ({x:?}, {z})")))?;
        let k = chol.solve(&dz) * 0.5;
        Ok(embed_block(&k, 0.0))
    }

    /// True and approximating volume densities `(√det g_tan(x, z), √det g_tan(x, 0))`.
    pub fn volume_density(&self, x: &[f64], z: f64) -> Result<(f64, f64)> {
        let g = self.g_tan(x, z)?;
        let g0 = self.g_tan(x, 0.0)?;
        Ok((g.determinant().sqrt(), g0.determinant().sqrt()))
    }
}

fn vars_of(x: &[f64], z: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    v.push(z);
    v
}

fn sym_from_upper(m: usize, f: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        for j in i..m {
            let v = f(k);
            g[(i, j)] = v;
            g[(j, i)] = v;
            k += 1;
        }
    }
    g
}

/// `block-diag(a, corner)` with one extra trailing row and column.
pub(crate) fn embed_block(a: &DMatrix<f64>, corner: f64) -> DMatrix<f64> {
    let m = a.nrows();
    let mut g = DMatrix::zeros(m + 1, m + 1);
    g.view_mut((0, 0), (m, m)).copy_from(a);
    g[(m, m)] = corner;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square() -> ChartDomain {
        ChartDomain::unit_square()
    }

    fn poly_1pz_sq() -> Polynomial {
        Polynomial::new(vec![(1.0, vec![0, 0, 0]), (2.0, vec![0, 0, 1]), (1.0, vec![0, 0, 2])])
    }

    #[test]
    fn flat_metric_is_identity() {
        let m = MetricField::flat(square(), 0.5).unwrap();
        let g = m.eval_metric(&[0.3, 0.7], 0.2).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
    }

    #[test]
    fn cap_metric_restricts_to_surface_metric() {
        let r = 2.0;
        let m = MetricField::spherical_cap(r, square(), 0.5).unwrap();
        let x = [0.4, 0.9];
        let g = m.eval_metric(&x, 0.0).unwrap();
        let u = 1.0 + (0.16 + 0.81) / (4.0 * r * r);
        assert_relative_eq!(g[(0, 0)], 1.0 / (u * u), epsilon = 1e-15);
        assert_relative_eq!(g[(1, 1)], 1.0 / (u * u), epsilon = 1e-15);
        assert_eq!(g[(2, 2)], 1.0);
        assert_eq!(g[(0, 2)], 0.0);
    }

    #[test]
    fn custom_poly_substitution() {
        let p = poly_1pz_sq();
        let kind = MetricKind::CustomPoly { entries: vec![p.clone(), Polynomial::constant(0.0, 3), p] };
        let m = MetricField::new(kind, square(), 0.6).unwrap();
        let g = m.eval_metric(&[0.5, 0.5], 0.5).unwrap();
        assert_relative_eq!(g, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.25, 2.25, 1.0])), epsilon = 1e-14);
    }

    #[test]
    fn out_of_domain_and_non_spd_are_rejected() {
        let m = MetricField::flat(square(), 0.5).unwrap();
        assert!(matches!(m.eval_metric(&[1.5, 0.5], 0.0), Err(Error::Domain(_))));
        assert!(matches!(m.eval_metric(&[0.5, 0.5], 0.7), Err(Error::Domain(_))));
        let bad = MetricKind::Closure(Arc::new(|_x: &[f64], _z: f64| DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])));
        let m = MetricField::new(bad, square(), 0.5).unwrap();
        assert!(matches!(m.eval_metric(&[0.5, 0.5], 0.0), Err(Error::Model(_))));
    }

    #[test]
    fn flat_christoffel_vanishes() {
        let m = MetricField::flat(square(), 0.5).unwrap();
        let c = m.christoffel(&[0.2, 0.3], 0.1).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                for d in 0..3 {
                    assert_eq!(c.get(a, b, d), 0.0);
                }
            }
        }
    }

    #[test]
    fn exponential_growth_christoffel() {
        // g_tan = e^{2z} I: Γ^x_{xz} = ½ g^{xx} ∂_z g_xx = 1, Γ^z_{xx} = -e^{2z}.
        let kind = MetricKind::ExponentialGrowth { rate: 1.0, base: DMatrix::identity(2, 2) };
        let m = MetricField::new(kind, square(), 0.5).unwrap();
        let z = 0.3;
        for mode in [DerivMode::Analytic, DerivMode::FiniteDifference { step: 1e-5 }] {
            let mm = m.clone().with_deriv_mode(mode).unwrap();
            let c = mm.christoffel(&[0.5, 0.5], z).unwrap();
            assert_relative_eq!(c.get(0, 0, 2), 1.0, epsilon = 1e-8);
            assert_relative_eq!(c.get(1, 1, 2), 1.0, epsilon = 1e-8);
            assert_relative_eq!(c.get(2, 0, 0), -(2.0 * z).exp(), epsilon = 1e-8);
            assert_relative_eq!(c.get(0, 1, 2), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn finite_difference_christoffel_converges_quadratically_on_cap() {
        let m = MetricField::spherical_cap(1.5, square(), 0.5).unwrap();
        let x = [0.6, 0.3];
        let z = 0.2;
        let exact = m.christoffel(&x, z).unwrap();
        let err = |step: f64| {
            let fd = m.clone().with_deriv_mode(DerivMode::FiniteDifference { step }).unwrap();
            let c = fd.christoffel(&x, z).unwrap();
            (0..27).map(|i| (c.data[i] - exact.data[i]).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        // Richardson: halving the step quarters the error.
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn fd_step_underflow_is_reported() {
        let m = MetricField::spherical_cap(1.5, square(), 0.5).unwrap();
        let m = m.with_deriv_mode(DerivMode::FiniteDifference { step: 1e-300 }).unwrap();
        assert!(matches!(m.christoffel(&[0.5, 0.5], 0.1), Err(Error::Numeric { .. })));
    }

    #[test]
    fn volume_density_of_diagonal_metric() {
        let p = poly_1pz_sq();
        let kind = MetricKind::CustomPoly { entries: vec![p.clone(), Polynomial::constant(0.0, 3), p] };
        let m = MetricField::new(kind, square(), 0.5).unwrap();
        let (v, v0) = m.volume_density(&[0.5, 0.5], 0.1).unwrap();
        assert_relative_eq!(v, 1.21, epsilon = 1e-14);
        assert_relative_eq!(v0, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn one_dimensional_chart() {
        let m = MetricField::spherical_cap(2.0, ChartDomain::Interval { a: 0.0, b: 1.0 }, 0.5).unwrap();
        assert_eq!(m.n(), 2);
        let g = m.eval_metric(&[0.5], 0.1).unwrap();
        assert_eq!(g.nrows(), 2);
        assert_eq!(g[(1, 1)], 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn christoffel_symmetric_in_lower_indices(x0 in 0.0..1.0f64, x1 in 0.0..1.0f64, z in -0.4..0.4f64, r in 1.0..5.0f64) {
                let m = MetricField::spherical_cap(r, square(), 0.5).unwrap()
                    .with_deriv_mode(DerivMode::FiniteDifference { step: 1e-5 }).unwrap();
                let c = m.christoffel(&[x0, x1], z).unwrap();
                for a in 0..3 { for b in 0..3 { for d in 0..3 {
                    prop_assert_eq!(c.get(a, b, d), c.get(a, d, b));
                }}}
            }

            #[test]
            fn cap_metric_is_spd(x0 in 0.0..1.0f64, x1 in 0.0..1.0f64, z in -0.5..0.5f64, r in 1.0..5.0f64) {
                let m = MetricField::spherical_cap(r, square(), 0.5).unwrap();
                let g = m.eval_metric(&[x0, x1], z).unwrap();
                let eig = nalgebra::SymmetricEigen::new(g).eigenvalues;
                prop_assert!(eig.iter().all(|l| *l > 0.0));
            }
        }
    }
}
