//! Meshes of the chart and of the thin body, boundary data, and the assembled
//! bulk and membrane energies.

mod energy;
mod mesh;

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MetricField;

pub use crate::geometry::rescale_consistency;
pub use energy::{bulk_energy, membrane_energy, BulkEnergy, EnergyEval, MembraneDensity, MembraneEnergy};
pub use mesh::{extrude_bulk_mesh, triangulate_chart, BulkMesh, SurfaceMesh, TET_QUAD, TRI_QUAD};

/// Nodal map into `Rⁿ` with its fixed-DOF mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationField {
    /// Target dimension.
    pub n: usize,
    /// `n` values per node.
    pub values: Vec<f64>,
    /// One flag per DOF.
    pub fixed: Vec<bool>,
    /// Id of the hosting mesh.
    pub mesh_id: u64,
}

impl ConfigurationField {
    pub fn zeros(mesh_id: u64, nodes: usize, n: usize) -> Self {
        ConfigurationField { n, values: vec![0.0; nodes * n], fixed: vec![false; nodes * n], mesh_id }
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn free_mask(&self) -> Vec<bool> {
        self.fixed.iter().map(|f| !f).collect()
    }

    pub fn free_count(&self) -> usize {
        self.fixed.iter().filter(|f| !**f).count()
    }

    pub(crate) fn check_host(&self, mesh_id: u64, nodes: usize, what: &str) -> Result<()> {
        if self.mesh_id != mesh_id || self.values.len() != nodes * self.n || self.fixed.len() != self.values.len() {
            return Err(Error::Usage(format!("configuration field is not hosted on this {what} mesh")));
        }
        Ok(())
    }
}

type BoundaryFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Boundary values `F_bc` on `∂S` and the normal slope `b`; a bulk ring node
/// over `x` at height `z` is fixed to `F_bc(x) + z b(x)`.
#[derive(Clone)]
pub enum BoundaryData {
    /// `F_bc(x) = A x + c`, constant `b`.
    Affine { a: DMatrix<f64>, c: Vec<f64>, b: Vec<f64> },
    Functions { f_bc: BoundaryFn, b: BoundaryFn },
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryData::Affine { a, c, b } => write!(f, "Affine {{ a: {a:?}, c: {c:?}, b: {b:?} }}"),
            BoundaryData::Functions { .. } => write!(f, "Functions"),
        }
    }
}

impl BoundaryData {
    /// `F_bc(x) = A x`, slope `b`.
    pub fn affine(a: DMatrix<f64>, b: Vec<f64>) -> Self {
        let n = a.nrows();
        BoundaryData::Affine { a, c: vec![0.0; n], b }
    }

    pub fn f_bc(&self, x: &[f64]) -> Vec<f64> {
        match self {
            BoundaryData::Affine { a, c, .. } => (0..a.nrows()).map(|i| c[i] + (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum::<f64>()).collect(),
            BoundaryData::Functions { f_bc, .. } => f_bc(x),
        }
    }

    pub fn b(&self, x: &[f64]) -> Vec<f64> {
        match self {
            BoundaryData::Affine { b, .. } => b.clone(),
            BoundaryData::Functions { b, .. } => b(x),
        }
    }

    /// `F_bc(x) + z b(x)`, checked for length and finiteness.
    pub fn value(&self, x: &[f64], z: f64, n: usize) -> Result<Vec<f64>> {
        let f = self.f_bc(x);
        let b = self.b(x);
        if f.len() != n || b.len() != n {
            return Err(Error::Data(format!("boundary data at {x:?} has the wrong length (expected {n})")));
        }
        let v: Vec<f64> = f.iter().zip(&b).map(|(f, b)| f + z * b).collect();
        if v.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("boundary data is not finite at x = {x:?}, z = {z}")));
        }
        Ok(v)
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, BoundaryData::Affine { .. })
    }
}

/// Either mesh kind, for [`apply_boundary_conditions`].
#[derive(Clone, Copy, Debug)]
pub enum MeshRef<'a> {
    Surface(&'a SurfaceMesh),
    Bulk(&'a BulkMesh),
}

/// Fixes the boundary DOFs (`∂S` for a surface mesh, `Γ_h` for a bulk mesh) to
/// their exact values. Free DOFs get the same formula when the data is affine
/// and zero otherwise.
pub fn apply_boundary_conditions(mesh: MeshRef, bc: &BoundaryData, n: usize) -> Result<ConfigurationField> {
    let (id, nodes) = match mesh {
        MeshRef::Surface(s) => (s.id, s.node_count()),
        MeshRef::Bulk(b) => (b.id, b.node_count()),
    };
    let mut field = ConfigurationField::zeros(id, nodes, n);
    for node in 0..nodes {
        let (x, z, on_boundary) = match mesh {
            MeshRef::Surface(s) => (s.nodes[node], 0.0, s.boundary[node]),
            MeshRef::Bulk(b) => {
                let c = b.coords(node);
                ([c[0], c[1]], c[2], b.on_ring(node))
            }
        };
        if on_boundary || bc.is_affine() {
            let v = bc.value(&x, z, n)?;
            field.values[node * n..(node + 1) * n].copy_from_slice(&v);
        }
        if on_boundary {
            field.fixed[node * n..(node + 1) * n].iter_mut().for_each(|f| *f = true);
        }
    }
    Ok(field)
}

/// `(avg_{Ω_h} |f − F∘π|^p dvol_g)^{1/p}` by the tetrahedral quadrature.
pub fn lp_distance(metric: &MetricField, mesh: &BulkMesh, f: &ConfigurationField, surface_field: &ConfigurationField, p: f64) -> Result<f64> {
    f.check_host(mesh.id, mesh.node_count(), "bulk")?;
    surface_field.check_host(mesh.surface.id, mesh.surface.node_count(), "surface")?;
    if f.n != surface_field.n {
        return Err(Error::Usage("bulk and surface fields have different target dimensions".into()));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Usage(format!("p must be at least 1, got {p}")));
    }
    let n = f.n;
    let mut num = 0.0;
    let mut vol = 0.0;
    let mut diff = vec![0.0; n];
    for (e, tet) in mesh.tets.iter().enumerate() {
        let v = mesh.tet_volume(e).abs();
        for (lam, w) in TET_QUAD.iter() {
            diff.iter_mut().for_each(|d| *d = 0.0);
            for (k, &node) in tet.iter().enumerate() {
                let a = f.node(node);
                let b = surface_field.node(mesh.pi(node));
                for c in 0..n {
                    diff[c] += lam[k] * (a[c] - b[c]);
                }
            }
            let pt = mesh.point(e, lam);
            let wt = w * v * metric.volume_density(&pt[..2], pt[2])?.0;
            num += wt * diff.iter().map(|d| d * d).sum::<f64>().sqrt().powf(p);
            vol += wt;
        }
    }
    Ok((num / vol).powf(1.0 / p))
}

/// Mesh and nodal values for plotting and archiving.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldSnapshot {
    /// `surface` or `bulk`.
    pub kind: String,
    pub mesh_id: u64,
    pub nodes: Vec<Vec<f64>>,
    pub elements: Vec<Vec<usize>>,
    pub n: usize,
    pub values: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl FieldSnapshot {
    pub fn surface(mesh: &SurfaceMesh, f: &ConfigurationField) -> Self {
        FieldSnapshot {
            kind: "surface".into(),
            mesh_id: mesh.id,
            nodes: mesh.nodes.iter().map(|p| p.to_vec()).collect(),
            elements: mesh.triangles.iter().map(|t| t.to_vec()).collect(),
            n: f.n,
            values: f.values.clone(),
            fixed: f.fixed.clone(),
        }
    }

    pub fn bulk(mesh: &BulkMesh, f: &ConfigurationField) -> Self {
        FieldSnapshot {
            kind: "bulk".into(),
            mesh_id: mesh.id,
            nodes: (0..mesh.node_count()).map(|i| mesh.coords(i).to_vec()).collect(),
            elements: mesh.tets.iter().map(|t| t.to_vec()).collect(),
            n: f.n,
            values: f.values.clone(),
            fixed: f.fixed.clone(),
        }
    }
}

/// CSV `element,x1,x2[,z],energy_density` from per-element densities and centroids.
pub fn element_density_csv(centroids: &[Vec<f64>], densities: &[f64]) -> String {
    let dim = centroids.first().map_or(2, |c| c.len());
    let mut out = String::from(if dim == 3 { "element,x1,x2,z,energy_density\n" } else { "element,x1,x2,energy_density\n" });
    for (e, (c, d)) in centroids.iter().zip(densities).enumerate() {
        let _ = write!(out, "{e}");
        for v in c {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{d}");
    }
    out
}
