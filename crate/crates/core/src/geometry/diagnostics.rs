//! Order-of-accuracy diagnostics for the thin-neighborhood approximations.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChartDomain, MetricField};
use crate::error::{Error, Result};
use crate::linalg::{fit_order, gauss_legendre, pairwise_sum, sym_spectral_radius, sym_sqrt};

/// Sampling and quadrature resolution for [`geometry_diagnostics_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    /// Chart samples per direction for the sup-norm quantities.
    pub grid: usize,
    /// Number of equispaced z-levels in `[-h, h]`.
    pub z_levels: usize,
    /// Quadrature cells per direction on the chart.
    pub quad_cells: usize,
    /// Gauss points per cell direction.
    pub quad_order: usize,
    /// Gauss points along the fiber.
    pub z_quad: usize,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions { grid: 20, z_levels: 5, quad_cells: 8, quad_order: 4, z_quad: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub h: f64,
    /// `sup |(σ⊕ι − Π) v|_g / |v|`.
    pub transport_deviation: f64,
    /// `sup |g~(u, v) − g(u, v)|` over g-unit pairs.
    pub metric_deviation: f64,
    /// `| |Ω_h| − 2h|S| |`.
    pub volume_deviation: f64,
    /// Relative discrepancy of the rescaled-average identity.
    pub rescale_discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub rows: Vec<DiagnosticsRow>,
    /// Least-squares log-log slopes for the four quantities; `None` when they vanish.
    pub orders: [Option<f64>; 4],
    /// Ratios of successive `transport_deviation / h` values.
    pub transport_ratio_of_ratios: Vec<f64>,
}

impl DiagnosticsReport {
    pub fn quantities(&self, k: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match k {
                0 => r.transport_deviation,
                1 => r.metric_deviation,
                2 => r.volume_deviation,
                _ => r.rescale_discrepancy,
            })
            .collect()
    }
}

/// Fixed smooth integrand used for the rescaling check; it has an odd part in `z`.
pub fn reference_integrand(x: &[f64], z: f64) -> f64 {
    let x1 = x.get(1).copied().unwrap_or(0.0);
    1.0 + x[0] * x[0] + 0.5 * x1 + z + z * z
}

/// Composite Gauss quadrature on the chart domain: `(point, weight)` pairs.
pub fn chart_quadrature(domain: &ChartDomain, cells: usize, order: usize) -> Vec<(Vec<f64>, f64)> {
    let (gx, gw) = gauss_legendre(order);
    let cells = cells.max(1);
    let hcell = 1.0 / cells as f64;
    let one_d: Vec<(f64, f64)> = (0..cells)
        .flat_map(|c| {
            let gx = &gx;
            let gw = &gw;
            (0..order).map(move |q| ((c as f64 + 0.5 * (gx[q] + 1.0)) * hcell, 0.5 * gw[q] * hcell))
        })
        .collect();
    match domain.dim() {
        1 => one_d
            .iter()
            .map(|&(u, w)| {
                let (x, j) = domain.map_unit(&[u]);
                (x, w * j)
            })
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(one_d.len() * one_d.len());
            for &(u, wu) in &one_d {
                for &(v, wv) in &one_d {
                    let (x, j) = domain.map_unit(&[u, v]);
                    out.push((x, wu * wv * j));
                }
            }
            out
        }
    }
}

/// `|S| = ∫_U √det g_tan(x, 0) dx`.
pub fn surface_area(metric: &MetricField) -> Result<f64> {
    let o = DiagnosticsOptions::default();
    surface_area_with(metric, &o)
}

fn surface_area_with(metric: &MetricField, o: &DiagnosticsOptions) -> Result<f64> {
    let pts = chart_quadrature(metric.domain(), o.quad_cells, o.quad_order);
    let vals: Vec<f64> = pts
        .par_iter()
        .map(|(x, w)| Ok(w * metric.g_tan(x, 0.0)?.determinant().sqrt()))
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&vals))
}

/// Integral over `U × [-h, h]` of `f(x, z)` against the density `rho(x, z)`.
fn tube_integral(
    metric: &MetricField,
    h: f64,
    o: &DiagnosticsOptions,
    integrand: &(dyn Fn(&[f64], f64) -> Result<f64> + Sync),
) -> Result<f64> {
    let pts = chart_quadrature(metric.domain(), o.quad_cells, o.quad_order);
    let (zx, zw) = gauss_legendre(o.z_quad);
    let vals: Vec<f64> = pts
        .par_iter()
        .map(|(x, w)| {
            let mut s = 0.0;
            for (zq, wq) in zx.iter().zip(&zw) {
                s += wq * h * integrand(x, zq * h)?;
            }
            Ok(w * s)
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&vals))
}

/// `|Ω_h| = ∫_U ∫_{-h}^{h} √det g_tan(x, z) dz dx`.
pub fn tube_volume(metric: &MetricField, h: f64) -> Result<f64> {
    tube_volume_with(metric, h, &DiagnosticsOptions::default())
}

fn tube_volume_with(metric: &MetricField, h: f64, o: &DiagnosticsOptions) -> Result<f64> {
    tube_integral(metric, h, o, &|x, z| Ok(metric.g_tan(x, z)?.determinant().sqrt()))
}

/// Relative discrepancy between the `dvol_g` average of `f` over `Ω_{h0 h}` and
/// the rescaled `η∧ω` integral over `Ω_{h0}` normalized by `2 h0 |S|`.
pub fn rescale_consistency(
    metric: &MetricField,
    h0: f64,
    h: f64,
    f: &(dyn Fn(&[f64], f64) -> f64 + Sync),
) -> Result<f64> {
    rescale_consistency_with(metric, h0, h, f, &DiagnosticsOptions::default())
}

fn rescale_consistency_with(
    metric: &MetricField,
    h0: f64,
    h: f64,
    f: &(dyn Fn(&[f64], f64) -> f64 + Sync),
    o: &DiagnosticsOptions,
) -> Result<f64> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Domain(format!("rescaling factor {h} outside (0, 1]")));
    }
    if !(h0 > 0.0 && h0 <= metric.z_max()) {
        return Err(Error::Domain(format!("h0 = {h0} outside the working range")));
    }
    let hh = h0 * h;
    let num = tube_integral(metric, hh, o, &|x, z| Ok(f(x, z) * metric.g_tan(x, z)?.determinant().sqrt()))?;
    let vol = tube_volume_with(metric, hh, o)?;
    let lhs = num / vol;
    let area = surface_area_with(metric, o)?;
    let rescaled = tube_integral(metric, h0, o, &|x, zeta| Ok(f(x, h * zeta) * metric.g_tan(x, 0.0)?.determinant().sqrt()))?;
    let rhs = rescaled / (2.0 * h0 * area);
    let diff = (lhs - rhs).abs();
    Ok(if lhs.abs() > 1e-300 { diff / lhs.abs() } else { diff })
}

/// Diagnostics with the default resolution.
pub fn geometry_diagnostics(metric: &MetricField, h_list: &[f64]) -> Result<DiagnosticsReport> {
    geometry_diagnostics_with(metric, h_list, &DiagnosticsOptions::default())
}

pub fn geometry_diagnostics_with(metric: &MetricField, h_list: &[f64], o: &DiagnosticsOptions) -> Result<DiagnosticsReport> {
    if h_list.len() < 2 {
        return Err(Error::Usage(format!("diagnostics need at least two h values, got {}", h_list.len())));
    }
    for w in h_list.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::Usage("h values must be strictly decreasing".into()));
        }
    }
    if !(h_list[h_list.len() - 1] > 0.0) || h_list[0] > metric.z_max() {
        return Err(Error::Domain(format!("h values must lie in (0, {}]", metric.z_max())));
    }

    let samples = sample_points(metric.domain(), o.grid);
    let area = surface_area_with(metric, o)?;
    let h0 = h_list[0];
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let zs: Vec<f64> = (0..o.z_levels)
            .map(|k| if o.z_levels == 1 { h } else { -h + 2.0 * h * k as f64 / (o.z_levels - 1) as f64 })
            .collect();
        let per_point: Vec<(f64, f64)> = samples
            .par_iter()
            .map(|x| {
                let mut a: f64 = 0.0;
                let mut b: f64 = 0.0;
                for &z in &zs {
                    let (da, db) = pointwise_deviation(metric, x, z)?;
                    a = a.max(da);
                    b = b.max(db);
                }
                Ok((a, b))
            })
            .collect::<Result<_>>()?;
        let transport_deviation = per_point.iter().fold(0.0_f64, |acc, p| acc.max(p.0));
        let metric_deviation = per_point.iter().fold(0.0_f64, |acc, p| acc.max(p.1));
        let volume_deviation = (tube_volume_with(metric, h, o)? - 2.0 * h * area).abs();
        let rescale_discrepancy = rescale_consistency_with(metric, h0, h / h0, &reference_integrand, o)?;
        rows.push(DiagnosticsRow { h, transport_deviation, metric_deviation, volume_deviation, rescale_discrepancy });
    }

    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let mut report = DiagnosticsReport { rows, orders: [None; 4], transport_ratio_of_ratios: Vec::new() };
    for k in 0..4 {
        report.orders[k] = fit_order(&hs, &report.quantities(k));
    }
    report.transport_ratio_of_ratios = report
        .rows
        .windows(2)
        .filter(|w| w[0].transport_deviation > 0.0)
        .map(|w| w[1].transport_deviation / w[0].transport_deviation)
        .collect();
    Ok(report)
}

/// `(sup_v |(S − P) v|_g / |v|, sup_{|u|_g=|v|_g=1} |g~(u,v) − g(u,v)|)` at one point.
fn pointwise_deviation(metric: &MetricField, x: &[f64], z: f64) -> Result<(f64, f64)> {
    let g = metric.eval_metric(x, z)?;
    let gt = metric.approx_metric(x, z)?;
    let p = metric.transport_normal(x, z)?;
    let s = metric.split_frame(x, z)?;
    let gh = sym_sqrt(&g)?;
    let d = gh * (&s.columns - &p.columns);
    let a = d.singular_values().max();
    let chol = g.cholesky().ok_or_else(|| Error::Model(format!("metric not positive definite at ({x:?}, {z})")))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| Error::Model("singular Cholesky factor".into()))?;
    let diff: DMatrix<f64> = &linv * (gt - metric.eval_metric(x, z)?) * linv.transpose();
    Ok((a, sym_spectral_radius(&diff)))
}

fn sample_points(domain: &ChartDomain, grid: usize) -> Vec<Vec<f64>> {
    let grid = grid.max(2);
    let t = |i: usize| i as f64 / (grid - 1) as f64;
    match domain.dim() {
        1 => (0..grid).map(|i| domain.map_unit(&[t(i)]).0).collect(),
        _ => (0..grid).flat_map(|i| (0..grid).map(move |j| domain.map_unit(&[t(i), t(j)]).0)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MetricKind, Polynomial};

    #[test]
    fn flat_metric_has_no_deviation() {
        let m = MetricField::flat(ChartDomain::unit_square(), 0.5).unwrap();
        let r = geometry_diagnostics(&m, &[0.2, 0.1]).unwrap();
        for row in &r.rows {
            assert_eq!(row.transport_deviation, 0.0);
            assert_eq!(row.metric_deviation, 0.0);
            assert!(row.volume_deviation < 1e-13);
            assert!(row.rescale_discrepancy < 1e-13);
        }
    }

    #[test]
    fn fiber_integral_matches_closed_form() {
        // g_tan = (1 - κ z)^2 I on the unit square: |Ω_h| = 2h + 2κ²h³/3.
        let kappa: f64 = 0.7;
        let p = Polynomial::new(vec![(1.0, vec![0, 0, 0]), (-2.0 * kappa, vec![0, 0, 1]), (kappa * kappa, vec![0, 0, 2])]);
        let kind = MetricKind::CustomPoly { entries: vec![p.clone(), Polynomial::constant(0.0, 3), p] };
        let m = MetricField::new(kind, ChartDomain::unit_square(), 0.5).unwrap();
        for h in [0.2, 0.1, 0.05] {
            let r = geometry_diagnostics(&m, &[0.4, h]).unwrap();
            let exact = 2.0 * kappa * kappa * h * h * h / 3.0;
            assert!((r.rows[1].volume_deviation - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_integrand_rescales_exactly() {
        let m = MetricField::spherical_cap(2.0, ChartDomain::unit_square(), 0.5).unwrap();
        let d = rescale_consistency(&m, 0.2, 0.5, &|_x: &[f64], _z: f64| 1.0).unwrap();
        assert!(d < 1e-13, "{d}");
    }

    #[test]
    fn rescale_factor_out_of_range() {
        let m = MetricField::flat(ChartDomain::unit_square(), 0.5).unwrap();
        assert!(rescale_consistency(&m, 0.2, 1.5, &reference_integrand).is_err());
    }

    #[test]
    fn too_few_h_values() {
        let m = MetricField::flat(ChartDomain::unit_square(), 0.5).unwrap();
        assert!(matches!(geometry_diagnostics(&m, &[0.1]), Err(Error::Usage(_))));
        assert!(matches!(geometry_diagnostics(&m, &[0.1, 0.2]), Err(Error::Usage(_))));
    }

    #[test]
    fn cap_orders_are_at_least_one() {
        let m = MetricField::spherical_cap(2.0, ChartDomain::unit_square(), 0.5).unwrap();
        let opts = DiagnosticsOptions { grid: 6, ..Default::default() };
        let r = geometry_diagnostics_with(&m, &[0.2, 0.1, 0.05], &opts).unwrap();
        for o in r.orders {
            assert!(o.unwrap() >= 0.9, "{:?}", r);
        }
        for q in &r.transport_ratio_of_ratios {
            assert!(*q >= 0.35 && *q <= 0.65);
        }
    }
}
