//! Volume-averaged bulk and membrane energies with analytic gradients.

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix3x2, Matrix4x3};
use rayon::prelude::*;

use super::mesh::{BulkMesh, SurfaceMesh, TET_QUAD, TRI_QUAD};
use super::ConfigurationField;
use crate::density::{dist2_so3_grad, w0_3x2_grad, DensityKind, DensitySpec};
use crate::error::{Error, Result};
use crate::geometry::{FrameKind, MetricField};
use crate::linalg::{pairwise_sum, sym_inv_sqrt};
use crate::optimize::EnergyFunction;
use crate::relaxation::{EnvelopeTable, TableMode};

const CHUNK: usize = 256;

/// Energy, full-length gradient (zero on fixed DOFs) and clamp count.
#[derive(Clone, Debug)]
pub struct EnergyEval {
    pub energy: f64,
    pub gradient: Vec<f64>,
    /// Quadrature points whose singular values left the envelope table.
    pub clamped: usize,
}

/// One quadrature point: `q = (nodal values) · d`, weighted by `w`.
#[derive(Clone, Debug)]
struct QuadPoint<D> {
    d: D,
    w: f64,
}

#[derive(Clone, Debug)]
struct Element<const K: usize, D> {
    nodes: [usize; K],
    qps: Vec<QuadPoint<D>>,
}

/// Merges quadrature points that carry the same operator (frames constant over the element).
fn collapse<D: PartialEq>(mut qps: Vec<QuadPoint<D>>) -> Vec<QuadPoint<D>> {
    if qps.iter().all(|q| q.d == qps[0].d) {
        let w = qps.iter().map(|q| q.w).sum();
        qps.truncate(1);
        qps[0].w = w;
    }
    qps
}

fn sum_energies(parts: &[f64], reproducible: bool) -> f64 {
    if reproducible {
        pairwise_sum(parts)
    } else {
        parts.iter().sum()
    }
}

/// Bulk functional `I_h` on a fixed mesh.
pub struct BulkEnergy<'a> {
    spec: &'a DensitySpec,
    mesh_id: u64,
    nodes: usize,
    elements: Vec<Element<4, Matrix4x3<f64>>>,
    volume: f64,
    mask: Vec<bool>,
    pub reproducible: bool,
}

impl<'a> BulkEnergy<'a> {
    /// Precomputes per-quadrature-point operators `∇φ · frame` and weights `w |T| √det g`.
    pub fn new(metric: &MetricField, spec: &'a DensitySpec, mesh: &BulkMesh, field: &ConfigurationField, mode: FrameKind) -> Result<Self> {
        if spec.n != 3 || metric.m() != 2 || field.n != 3 {
            return Err(Error::Usage("bulk energy is implemented for two-dimensional mid-surfaces in R^3".into()));
        }
        field.check_host(mesh.id, mesh.node_count(), "bulk")?;
        let elements: Vec<Element<4, Matrix4x3<f64>>> = (0..mesh.tets.len())
            .into_par_iter()
            .map(|e| {
                let g = mesh.hat_gradients(e);
                let vol = mesh.tet_volume(e).abs();
                let mut qps = Vec::with_capacity(4);
                for (lam, w) in TET_QUAD.iter() {
                    let p = mesh.point(e, lam);
                    let frame = match mode {
                        FrameKind::Transported => metric.transport_normal(&p[..2], p[2])?,
                        FrameKind::Split => metric.split_frame(&p[..2], p[2])?,
                    };
                    let fr = Matrix3::from_iterator(frame.columns.iter().copied());
                    let sqrt_det = metric.volume_density(&p[..2], p[2])?.0;
                    qps.push(QuadPoint { d: g * fr, w: w * vol * sqrt_det });
                }
                Ok(Element { nodes: mesh.tets[e], qps: collapse(qps) })
            })
            .collect::<Result<_>>()?;
        let volume = elements.iter().flat_map(|e| e.qps.iter().map(|q| q.w)).sum();
        Ok(BulkEnergy { spec, mesh_id: mesh.id, nodes: mesh.node_count(), elements, volume, mask: field.fixed.clone(), reproducible: true })
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    #[inline]
    fn density(&self, q: &Matrix3<f64>, e: usize) -> Result<(f64, Matrix3<f64>)> {
        let (v, g) = match self.spec.kind {
            DensityKind::Dist2So => dist2_so3_grad(q),
            DensityKind::Custom { .. } => {
                let dq = DMatrix::from_iterator(3, 3, q.iter().copied());
                let v = self.spec.eval(&dq).map_err(|err| Error::numeric("bulk energy", format!("element {e}: {err}")))?;
                let g = self.spec.grad(&dq)?;
                (v, Matrix3::from_iterator(g.iter().copied()))
            }
        };
        if !v.is_finite() {
            return Err(Error::numeric("bulk energy", format!("non-finite density at element {e}")));
        }
        Ok((v, g))
    }

    fn local(&self, x: &[f64], e: usize) -> Matrix3x4 {
        let el = &self.elements[e];
        Matrix3x4::from_fn(|c, k| x[el.nodes[k] * 3 + c])
    }

    /// Energy and optionally the gradient with respect to all nodal values.
    pub fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<EnergyEval> {
        if x.len() != self.nodes * 3 {
            return Err(Error::Usage("configuration length does not match the bulk mesh".into()));
        }
        let want_grad = grad.is_some();
        let chunks: Vec<(Vec<f64>, Vec<(usize, [f64; 12])>)> = (0..self.elements.len().div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(self.elements.len());
                let mut energies = Vec::with_capacity(range.len());
                let mut grads = Vec::new();
                for e in range {
                    let fl = self.local(x, e);
                    let mut acc = 0.0;
                    let mut ge = nalgebra::Matrix3x4::<f64>::zeros();
                    for qp in &self.elements[e].qps {
                        let q = fl * qp.d;
                        let (v, g) = self.density(&q, e)?;
                        acc += qp.w * v;
                        if want_grad {
                            ge += (g * qp.d.transpose()) * qp.w;
                        }
                    }
                    energies.push(acc);
                    if want_grad {
                        let mut flat = [0.0; 12];
                        flat.copy_from_slice(ge.as_slice());
                        grads.push((e, flat));
                    }
                }
                Ok((energies, grads))
            })
            .collect::<Result<_>>()?;
        let parts: Vec<f64> = chunks.iter().flat_map(|c| c.0.iter().copied()).collect();
        let energy = sum_energies(&parts, self.reproducible) / self.volume;
        let mut gradient = Vec::new();
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            for (e, ge) in chunks.iter().flat_map(|c| c.1.iter()) {
                for (k, &node) in self.elements[*e].nodes.iter().enumerate() {
                    for c in 0..3 {
                        g[node * 3 + c] += ge[k * 3 + c] / self.volume;
                    }
                }
            }
            for (v, fixed) in g.iter_mut().zip(&self.mask) {
                if *fixed {
                    *v = 0.0;
                }
            }
            gradient = g.to_vec();
        }
        Ok(EnergyEval { energy, gradient, clamped: 0 })
    }

    /// Averaged density per element (energy over element volume).
    pub fn element_densities(&self, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.elements.len())
            .map(|e| {
                let fl = self.local(x, e);
                let mut acc = 0.0;
                let mut w = 0.0;
                for qp in &self.elements[e].qps {
                    acc += qp.w * self.density(&(fl * qp.d), e)?.0;
                    w += qp.w;
                }
                Ok(acc / w)
            })
            .collect()
    }
}

type Matrix3x4 = nalgebra::Matrix3x4<f64>;

impl EnergyFunction for BulkEnergy<'_> {
    fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        Ok(self.eval(x, grad)?.energy)
    }

    fn host_id(&self) -> Option<u64> {
        Some(self.mesh_id)
    }
}

/// `I_h(f)` and its gradient for a one-off evaluation.
pub fn bulk_energy(metric: &MetricField, spec: &DensitySpec, mesh: &BulkMesh, f: &ConfigurationField, mode: FrameKind) -> Result<EnergyEval> {
    let e = BulkEnergy::new(metric, spec, mesh, f, mode)?;
    let mut g = vec![0.0; f.values.len()];
    e.eval(&f.values, Some(&mut g))
}

/// Membrane integrand choice.
#[derive(Clone, Copy, Debug)]
pub enum MembraneDensity<'a> {
    /// `W₀`.
    Unrelaxed,
    /// Envelope table; `smoothed` selects the quadratic B-spline used for optimization,
    /// otherwise the bilinear lookup used for reporting.
    Relaxed { table: &'a EnvelopeTable, smoothed: bool },
}

/// Membrane functional `I` on a fixed surface mesh.
pub struct MembraneEnergy<'a> {
    spec: &'a DensitySpec,
    density: MembraneDensity<'a>,
    mesh_id: u64,
    nodes: usize,
    elements: Vec<Element<3, Matrix3x2<f64>>>,
    area: f64,
    mask: Vec<bool>,
    pub reproducible: bool,
}

impl<'a> MembraneEnergy<'a> {
    pub fn new(
        metric: &MetricField,
        spec: &'a DensitySpec,
        density: MembraneDensity<'a>,
        mesh: &SurfaceMesh,
        field: &ConfigurationField,
    ) -> Result<Self> {
        if spec.n != 3 || metric.m() != 2 || field.n != 3 {
            return Err(Error::Usage("membrane energy is implemented for two-dimensional mid-surfaces in R^3".into()));
        }
        if let MembraneDensity::Relaxed { table, .. } = density {
            if table.mode != TableMode::SingularValue || (table.n, table.m) != (3, 2) {
                return Err(Error::Usage("relaxed membrane energy needs a singular-value table for 3x2 blocks".into()));
            }
        }
        field.check_host(mesh.id, mesh.node_count(), "surface")?;
        let mut elements = Vec::with_capacity(mesh.triangles.len());
        for t in 0..mesh.triangles.len() {
            let g = mesh.hat_gradients(t);
            let area = mesh.triangle_area(t);
            let mut qps = Vec::with_capacity(3);
            for (lam, w) in TRI_QUAD.iter() {
                let x = mesh.point(t, lam);
                let g0 = metric.g_tan(&x, 0.0)?;
                let s = sym_inv_sqrt(&g0)?;
                let s = Matrix2::from_iterator(s.iter().copied());
                qps.push(QuadPoint { d: g * s, w: w * area * g0.determinant().sqrt() });
            }
            elements.push(Element { nodes: mesh.triangles[t], qps: collapse(qps) });
        }
        let area = elements.iter().flat_map(|e| e.qps.iter().map(|q| q.w)).sum();
        Ok(MembraneEnergy {
            spec,
            density,
            mesh_id: mesh.id,
            nodes: mesh.node_count(),
            elements,
            area,
            mask: field.fixed.clone(),
            reproducible: true,
        })
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// `ρ(q)`, its gradient, and whether the table lookup was clamped.
    #[inline]
    fn rho(&self, q: &Matrix3x2<f64>) -> Result<(f64, Matrix3x2<f64>, bool)> {
        match self.density {
            MembraneDensity::Unrelaxed => match self.spec.kind {
                DensityKind::Dist2So => {
                    let (v, g) = w0_3x2_grad(q);
                    Ok((v, g, false))
                }
                DensityKind::Custom { .. } => {
                    let (v, g) = self.spec.w0_grad(&DMatrix::from_iterator(3, 2, q.iter().copied()))?;
                    Ok((v, Matrix3x2::from_iterator(g.iter().copied()), false))
                }
            },
            MembraneDensity::Relaxed { table, smoothed: true } => Ok(table.smoothed_3x2(q)),
            MembraneDensity::Relaxed { table, smoothed: false } => {
                let (v, g, c) = table.eval_grad(&DMatrix::from_iterator(3, 2, q.iter().copied()))?;
                Ok((v, Matrix3x2::from_iterator(g.iter().copied()), c))
            }
        }
    }

    fn local(&self, x: &[f64], e: usize) -> Matrix3<f64> {
        let el = &self.elements[e];
        Matrix3::from_fn(|c, k| x[el.nodes[k] * 3 + c])
    }

    pub fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<EnergyEval> {
        if x.len() != self.nodes * 3 {
            return Err(Error::Usage("configuration length does not match the surface mesh".into()));
        }
        let want_grad = grad.is_some();
        let chunks: Vec<(Vec<f64>, Vec<(usize, Matrix3<f64>)>, usize)> = (0..self.elements.len().div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(self.elements.len());
                let mut energies = Vec::with_capacity(range.len());
                let mut grads = Vec::new();
                let mut clamped = 0;
                for e in range {
                    let fl = self.local(x, e);
                    let mut acc = 0.0;
                    let mut ge = Matrix3::zeros();
                    for qp in &self.elements[e].qps {
                        let (v, g, cl) = self.rho(&(fl * qp.d))?;
                        if !v.is_finite() {
                            return Err(Error::numeric("membrane energy", format!("non-finite density at element {e}")));
                        }
                        clamped += cl as usize;
                        acc += qp.w * v;
                        if want_grad {
                            ge += (g * qp.d.transpose()) * qp.w;
                        }
                    }
                    energies.push(acc);
                    if want_grad {
                        grads.push((e, ge));
                    }
                }
                Ok((energies, grads, clamped))
            })
            .collect::<Result<_>>()?;
        let parts: Vec<f64> = chunks.iter().flat_map(|c| c.0.iter().copied()).collect();
        let energy = sum_energies(&parts, self.reproducible) / self.area;
        let clamped = chunks.iter().map(|c| c.2).sum();
        let mut gradient = Vec::new();
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            for (e, ge) in chunks.iter().flat_map(|c| c.1.iter()) {
                for (k, &node) in self.elements[*e].nodes.iter().enumerate() {
                    for c in 0..3 {
                        g[node * 3 + c] += ge[(c, k)] / self.area;
                    }
                }
            }
            for (v, fixed) in g.iter_mut().zip(&self.mask) {
                if *fixed {
                    *v = 0.0;
                }
            }
            gradient = g.to_vec();
        }
        Ok(EnergyEval { energy, gradient, clamped })
    }

    pub fn element_densities(&self, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.elements.len())
            .map(|e| {
                let fl = self.local(x, e);
                let mut acc = 0.0;
                let mut w = 0.0;
                for qp in &self.elements[e].qps {
                    acc += qp.w * self.rho(&(fl * qp.d))?.0;
                    w += qp.w;
                }
                Ok(acc / w)
            })
            .collect()
    }
}

impl EnergyFunction for MembraneEnergy<'_> {
    fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        Ok(self.eval(x, grad)?.energy)
    }

    fn clamp_count(&self, x: &[f64]) -> usize {
        self.eval(x, None).map_or(0, |e| e.clamped)
    }

    fn host_id(&self) -> Option<u64> {
        Some(self.mesh_id)
    }
}

/// `I(F)` and its gradient. With `relaxed`, the energy uses the bilinear table
/// and the gradient is its a.e. derivative; optimization uses
/// [`MembraneDensity::Relaxed`] with `smoothed: true` instead.
pub fn membrane_energy(
    metric: &MetricField,
    spec: &DensitySpec,
    table: Option<&EnvelopeTable>,
    mesh: &SurfaceMesh,
    f: &ConfigurationField,
    relaxed: bool,
) -> Result<EnergyEval> {
    let density = if relaxed {
        let table = table.ok_or_else(|| Error::Usage("relaxed membrane energy needs an envelope table".into()))?;
        MembraneDensity::Relaxed { table, smoothed: false }
    } else {
        MembraneDensity::Unrelaxed
    };
    let e = MembraneEnergy::new(metric, spec, density, mesh, f)?;
    let mut g = vec![0.0; f.values.len()];
    let out = e.eval(&f.values, Some(&mut g))?;
    if out.clamped > 0 {
        log::warn!("{} quadrature points outside the envelope table were clamped", out.clamped);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{apply_boundary_conditions, extrude_bulk_mesh, triangulate_chart, BoundaryData, MeshRef};
    use crate::geometry::ChartDomain;
    use crate::relaxation::{build_envelope_table, LaminationParams};
    use std::sync::OnceLock;

    fn affine(a: [f64; 6], b: [f64; 3]) -> BoundaryData {
        BoundaryData::affine(DMatrix::from_row_slice(3, 2, &a), b.to_vec())
    }

    fn table() -> &'static EnvelopeTable {
        static T: OnceLock<EnvelopeTable> = OnceLock::new();
        T.get_or_init(|| {
            let p = LaminationParams { n_directions: 24, n_t: 9, n_amplitudes: 10, grid_n: 61, ..Default::default() };
            build_envelope_table(&DensitySpec::dist2_so(2), &p).unwrap()
        })
    }

    fn flat() -> MetricField {
        MetricField::flat(ChartDomain::unit_square(), 0.5).unwrap()
    }

    #[test]
    fn bulk_constant_strain_values() {
        let spec = DensitySpec::dist2_so(2);
        let s = triangulate_chart(&ChartDomain::unit_square(), 3).unwrap();
        let b = extrude_bulk_mesh(&s, 0.1, 2).unwrap();
        let iso = apply_boundary_conditions(MeshRef::Bulk(&b), &affine([0.0, -1.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0]), 3).unwrap();
        let out = bulk_energy(&flat(), &spec, &b, &iso, FrameKind::Transported).unwrap();
        assert!(out.energy.abs() < 1e-14);
        assert!(out.gradient.iter().all(|g| g.abs() < 1e-13));
        let st = apply_boundary_conditions(MeshRef::Bulk(&b), &affine([1.2, 0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0]), 3).unwrap();
        let out = bulk_energy(&flat(), &spec, &b, &st, FrameKind::Split).unwrap();
        assert!((out.energy - 0.04).abs() < 1e-12);
    }

    #[test]
    fn membrane_constant_strain_values() {
        let spec = DensitySpec::dist2_so(2);
        let s = triangulate_chart(&ChartDomain::unit_square(), 4).unwrap();
        let st = apply_boundary_conditions(MeshRef::Surface(&s), &affine([1.2, 0.0, 0.0, 1.0, 0.0, 0.0], [0.0; 3]), 3).unwrap();
        assert!((membrane_energy(&flat(), &spec, None, &s, &st, false).unwrap().energy - 0.04).abs() < 1e-12);
        let iso = apply_boundary_conditions(MeshRef::Surface(&s), &affine([0.6, 0.8, -0.8, 0.6, 0.0, 0.0], [0.0; 3]), 3).unwrap();
        assert!(membrane_energy(&flat(), &spec, None, &s, &iso, false).unwrap().energy < 1e-14);
        let short = apply_boundary_conditions(MeshRef::Surface(&s), &affine([0.8, 0.0, 0.0, 0.9, 0.0, 0.0], [0.0; 3]), 3).unwrap();
        let r = membrane_energy(&flat(), &spec, Some(table()), &s, &short, true).unwrap();
        assert!(r.energy <= 1e-3 && r.clamped == 0);
        assert!(membrane_energy(&flat(), &spec, None, &s, &short, true).is_err());
    }

    #[test]
    fn bulk_zero_strain_equals_pointwise_density_on_cap() {
        // f = (x, z) in a g-orthonormal frame is not zero strain on a curved metric, but
        // the volume average of a constant density is that constant on any metric.
        let dom = ChartDomain::Rectangle { min: [-0.4, -0.4], max: [0.4, 0.4] };
        let cap = MetricField::spherical_cap(2.0, dom.clone(), 0.5).unwrap();
        let w: std::sync::Arc<dyn Fn(&DMatrix<f64>) -> f64 + Send + Sync> = std::sync::Arc::new(|_q: &DMatrix<f64>| 0.37);
        let spec = DensitySpec::custom("constant", 2, w, true);
        let s = triangulate_chart(&dom, 3).unwrap();
        let b = extrude_bulk_mesh(&s, 0.1, 2).unwrap();
        let f = apply_boundary_conditions(MeshRef::Bulk(&b), &affine([1.0, 0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0]), 3).unwrap();
        let out = bulk_energy(&cap, &spec, &b, &f, FrameKind::Transported).unwrap();
        assert!((out.energy - 0.37).abs() < 1e-14);
    }

    fn fd_check(e: &dyn EnergyFunction, x: &[f64], mask: &[bool], tol: f64) {
        let mut g = vec![0.0; x.len()];
        e.evaluate(x, Some(&mut g)).unwrap();
        for k in (0..x.len()).step_by(7) {
            if mask[k] {
                assert_eq!(g[k], 0.0);
                continue;
            }
            let eps = 1e-6;
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] += eps;
            m[k] -= eps;
            let fd = (e.evaluate(&p, None).unwrap() - e.evaluate(&m, None).unwrap()) / (2.0 * eps);
            assert!((fd - g[k]).abs() < tol, "dof {k}: {fd} vs {}", g[k]);
        }
    }

    fn perturbed(f: &ConfigurationField, amp: f64) -> Vec<f64> {
        f.values
            .iter()
            .zip(&f.fixed)
            .enumerate()
            .map(|(i, (v, fx))| if *fx { *v } else { v + amp * ((i as f64 * 1.7).sin()) })
            .collect()
    }

    #[test]
    fn bulk_gradient_matches_differences_on_cap() {
        let dom = ChartDomain::Rectangle { min: [-0.4, -0.4], max: [0.4, 0.4] };
        let cap = MetricField::spherical_cap(2.0, dom.clone(), 0.5).unwrap();
        let spec = DensitySpec::dist2_so(2);
        let s = triangulate_chart(&dom, 3).unwrap();
        let b = extrude_bulk_mesh(&s, 0.1, 2).unwrap();
        let f = apply_boundary_conditions(MeshRef::Bulk(&b), &affine([1.1, 0.1, 0.0, 0.9, 0.0, 0.2], [0.0, 0.1, 1.0]), 3).unwrap();
        let e = BulkEnergy::new(&cap, &spec, &b, &f, FrameKind::Transported).unwrap();
        fd_check(&e, &perturbed(&f, 0.05), &f.fixed, 1e-7);
    }

    #[test]
    fn membrane_gradients_match_differences() {
        let dom = ChartDomain::Rectangle { min: [-0.4, -0.4], max: [0.4, 0.4] };
        let cap = MetricField::spherical_cap(2.0, dom.clone(), 0.5).unwrap();
        let spec = DensitySpec::dist2_so(2);
        let s = triangulate_chart(&dom, 4).unwrap();
        let f = apply_boundary_conditions(MeshRef::Surface(&s), &affine([1.3, 0.1, 0.0, 0.7, 0.2, 0.1], [0.0; 3]), 3).unwrap();
        let x = perturbed(&f, 0.05);
        let e = MembraneEnergy::new(&cap, &spec, MembraneDensity::Unrelaxed, &s, &f).unwrap();
        fd_check(&e, &x, &f.fixed, 1e-7);
        let e = MembraneEnergy::new(&cap, &spec, MembraneDensity::Relaxed { table: table(), smoothed: true }, &s, &f).unwrap();
        fd_check(&e, &x, &f.fixed, 1e-6);
    }

    #[test]
    fn transported_and_split_bulk_energies_differ_by_order_h_squared() {
        let dom = ChartDomain::Rectangle { min: [-0.4, -0.4], max: [0.4, 0.4] };
        let cap = MetricField::spherical_cap(2.0, dom.clone(), 0.5).unwrap();
        let spec = DensitySpec::dist2_so(2);
        let s = triangulate_chart(&dom, 3).unwrap();
        let mut diffs = Vec::new();
        for h in [0.2, 0.1, 0.05] {
            let b = extrude_bulk_mesh(&s, h, 2).unwrap();
            let f = apply_boundary_conditions(MeshRef::Bulk(&b), &affine([1.1, 0.0, 0.0, 0.95, 0.0, 0.0], [0.0, 0.0, 1.0]), 3).unwrap();
            let t = bulk_energy(&cap, &spec, &b, &f, FrameKind::Transported).unwrap().energy;
            let sp = bulk_energy(&cap, &spec, &b, &f, FrameKind::Split).unwrap().energy;
            diffs.push((t - sp).abs());
        }
        // The odd-in-z part cancels over the symmetric thickness.
        assert!(diffs[0] > 0.0);
        for w in diffs.windows(2) {
            let r = w[1] / w[0];
            assert!(r > 0.2 && r < 0.3, "{diffs:?}");
        }
    }

    #[test]
    fn mesh_refinement_is_consistent() {
        let dom = ChartDomain::Rectangle { min: [-0.4, -0.4], max: [0.4, 0.4] };
        let cap = MetricField::spherical_cap(2.0, dom.clone(), 0.5).unwrap();
        let spec = DensitySpec::dist2_so(2);
        let bc = BoundaryData::Functions {
            f_bc: std::sync::Arc::new(|x: &[f64]| vec![x[0] + 0.2 * x[1] * x[1], x[1], 0.3 * x[0] * x[1]]),
            b: std::sync::Arc::new(|_| vec![0.0, 0.0, 1.0]),
        };
        let energy_at = |r: usize| {
            let s = triangulate_chart(&dom, r).unwrap();
            let mut f = apply_boundary_conditions(MeshRef::Surface(&s), &bc, 3).unwrap();
            for i in 0..s.node_count() {
                let v = bc.f_bc(&s.nodes[i]);
                f.values[i * 3..i * 3 + 3].copy_from_slice(&v);
            }
            membrane_energy(&cap, &spec, None, &s, &f, false).unwrap().energy
        };
        let (e4, e8, e16) = (energy_at(4), energy_at(8), energy_at(16));
        assert!((e8 - e16).abs() <= 0.6 * (e4 - e8).abs(), "{e4} {e8} {e16}");
    }
}
