//! Structured triangulations of the chart and their prism extrusion.

use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::{Matrix2, Matrix3, Matrix4x3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChartDomain, MetricField};

/// Degree-2 rule on the reference triangle: barycentric points, weights summing to 1.
pub const TRI_QUAD: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

const TET_A: f64 = 0.5854101966249685;
const TET_B: f64 = 0.1381966011250105;

/// Degree-2 rule on the reference tetrahedron.
pub const TET_QUAD: [([f64; 4], f64); 4] = [
    ([TET_A, TET_B, TET_B, TET_B], 0.25),
    ([TET_B, TET_A, TET_B, TET_B], 0.25),
    ([TET_B, TET_B, TET_A, TET_B], 0.25),
    ([TET_B, TET_B, TET_B, TET_A], 0.25),
];

fn hash_f64s<H: Hasher>(xs: impl Iterator<Item = f64>, h: &mut H) {
    for x in xs {
        x.to_bits().hash(h);
    }
}

/// Triangulation of a two-dimensional chart domain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub id: u64,
    pub resolution: usize,
    /// Chart coordinates.
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
}

impl SurfaceMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Chart area of triangle `t`.
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    /// Constant gradients of the three hat functions on triangle `t`, as rows.
    pub fn hat_gradients(&self, t: usize) -> nalgebra::Matrix3x2<f64> {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        let j = Matrix2::new(b[0] - a[0], c[0] - a[0], b[1] - a[1], c[1] - a[1]);
        let jinv = j.try_inverse().expect("non-degenerate triangle");
        // Reference gradients (-1,-1), (1,0), (0,1) as rows, mapped by J^{-T}.
        let r = nalgebra::Matrix3x2::new(-1.0, -1.0, 1.0, 0.0, 0.0, 1.0);
        r * jinv
    }

    /// Physical location of barycentric point `lam` in triangle `t`.
    pub fn point(&self, t: usize, lam: &[f64; 3]) -> [f64; 2] {
        let tri = self.triangles[t];
        let mut p = [0.0; 2];
        for (k, &i) in tri.iter().enumerate() {
            p[0] += lam[k] * self.nodes[i][0];
            p[1] += lam[k] * self.nodes[i][1];
        }
        p
    }

    /// `∫_S dvol_{g|_S}` by the mesh quadrature.
    pub fn metric_area(&self, metric: &MetricField) -> Result<f64> {
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            let area = self.triangle_area(t);
            for (lam, w) in TRI_QUAD.iter() {
                let x = self.point(t, lam);
                total += w * area * metric.volume_density(&x, 0.0)?.1;
            }
        }
        Ok(total)
    }

    fn compute_id(&self) -> u64 {
        let mut h = DefaultHasher::new();
        "surface".hash(&mut h);
        hash_f64s(self.nodes.iter().flatten().copied(), &mut h);
        self.triangles.hash(&mut h);
        h.finish()
    }
}

/// Structured triangulation of a rectangle or convex quadrilateral:
/// `resolution²` cells, each split into two triangles.
pub fn triangulate_chart(domain: &ChartDomain, resolution: usize) -> Result<SurfaceMesh> {
    if resolution < 2 {
        return Err(Error::Usage(format!("resolution must be at least 2, got {resolution}")));
    }
    domain.validate()?;
    if domain.dim() != 2 {
        return Err(Error::Usage("the finite-element layer needs a two-dimensional chart".into()));
    }
    let side = resolution + 1;
    let mut nodes = Vec::with_capacity(side * side);
    let mut boundary = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let u = [i as f64 / resolution as f64, j as f64 / resolution as f64];
            let (x, _) = domain.map_unit(&u);
            nodes.push([x[0], x[1]]);
            boundary.push(i == 0 || j == 0 || i == resolution || j == resolution);
        }
    }
    let id = |i: usize, j: usize| i * side + j;
    let mut triangles = Vec::with_capacity(2 * resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut mesh = SurfaceMesh { id: 0, resolution, nodes, triangles, boundary };
    for t in 0..mesh.triangles.len() {
        if mesh.triangle_area(t) <= 1e-14 {
            return Err(Error::Domain(format!("degenerate triangle {t} in chart triangulation")));
        }
    }
    mesh.id = mesh.compute_id();
    Ok(mesh)
}

/// Extrusion of a surface mesh to `[-h, h]` in `n_layers` equal layers, each
/// prism split into three tetrahedra.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BulkMesh {
    pub id: u64,
    pub surface: SurfaceMesh,
    pub h: f64,
    pub n_layers: usize,
    /// Tetrahedra as node indices; node `layer * N + i` sits over surface node `i`.
    pub tets: Vec<[usize; 4]>,
    /// Surface triangle under each tetrahedron.
    pub tet_triangle: Vec<usize>,
}

impl BulkMesh {
    pub fn node_count(&self) -> usize {
        self.surface.node_count() * (self.n_layers + 1)
    }

    /// Surface node below bulk node `node`.
    #[inline]
    pub fn pi(&self, node: usize) -> usize {
        node % self.surface.node_count()
    }

    pub fn layer(&self, node: usize) -> usize {
        node / self.surface.node_count()
    }

    pub fn z(&self, node: usize) -> f64 {
        -self.h + 2.0 * self.h * self.layer(node) as f64 / self.n_layers as f64
    }

    /// `(x1, x2, z)` of a node.
    pub fn coords(&self, node: usize) -> [f64; 3] {
        let x = self.surface.nodes[self.pi(node)];
        [x[0], x[1], self.z(node)]
    }

    /// Nodes on `Γ_h`: those over boundary nodes of the surface.
    pub fn on_ring(&self, node: usize) -> bool {
        self.surface.boundary[self.pi(node)]
    }

    /// Signed volume of tetrahedron `e` in chart coordinates.
    pub fn tet_volume(&self, e: usize) -> f64 {
        let p = self.tets[e].map(|i| Vector3::from(self.coords(i)));
        Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]).determinant() / 6.0
    }

    /// Constant gradients of the four hat functions on tetrahedron `e`, as rows.
    pub fn hat_gradients(&self, e: usize) -> Matrix4x3<f64> {
        let p = self.tets[e].map(|i| Vector3::from(self.coords(i)));
        let j = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        let jinv = j.try_inverse().expect("non-degenerate tetrahedron");
        let r = Matrix4x3::new(-1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        r * jinv
    }

    pub fn point(&self, e: usize, lam: &[f64; 4]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (k, &i) in self.tets[e].iter().enumerate() {
            let c = self.coords(i);
            for d in 0..3 {
                p[d] += lam[k] * c[d];
            }
        }
        p
    }

    /// `∫_{Ω_h} dvol_g` by the mesh quadrature.
    pub fn metric_volume(&self, metric: &MetricField) -> Result<f64> {
        let mut total = 0.0;
        for e in 0..self.tets.len() {
            let v = self.tet_volume(e).abs();
            for (lam, w) in TET_QUAD.iter() {
                let p = self.point(e, lam);
                total += w * v * metric.volume_density(&p[..2], p[2])?.0;
            }
        }
        Ok(total)
    }
}

/// Extrudes `surface` over `[-h, h]`.
///
/// Prisms are split by the global vertex order: every lateral quad face is cut
/// along the diagonal joining the bottom of its larger vertex to the top of its
/// smaller one, so neighbouring prisms agree.
pub fn extrude_bulk_mesh(surface: &SurfaceMesh, h: f64, n_layers: usize) -> Result<BulkMesh> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("thickness must be positive, got {h}")));
    }
    if n_layers < 2 || n_layers % 2 != 0 {
        return Err(Error::Usage(format!("n_layers must be even and at least 2, got {n_layers}")));
    }
    let nn = surface.node_count();
    let mut tets = Vec::with_capacity(3 * n_layers * surface.triangles.len());
    let mut tet_triangle = Vec::with_capacity(tets.capacity());
    for layer in 0..n_layers {
        for (t, tri) in surface.triangles.iter().enumerate() {
            let mut s = *tri;
            s.sort_unstable();
            let [a, b, c] = s;
            let bot = |i: usize| layer * nn + i;
            let top = |i: usize| (layer + 1) * nn + i;
            for tet in [
                [bot(a), bot(b), bot(c), top(a)],
                [top(a), bot(b), bot(c), top(b)],
                [top(a), top(b), bot(c), top(c)],
            ] {
                tets.push(tet);
                tet_triangle.push(t);
            }
        }
    }
    let mut mesh = BulkMesh { id: 0, surface: surface.clone(), h, n_layers, tets, tet_triangle };
    let expected = 2.0 * h * surface.triangles.iter().enumerate().map(|(t, _)| surface.triangle_area(t)).sum::<f64>();
    let total: f64 = (0..mesh.tets.len()).map(|e| mesh.tet_volume(e).abs()).sum();
    assert!(
        (0..mesh.tets.len()).all(|e| mesh.tet_volume(e).abs() > 0.0) && (total - expected).abs() <= 1e-10 * expected,
        "inconsistent prism splitting"
    );
    let mut hs = DefaultHasher::new();
    "bulk".hash(&mut hs);
    surface.id.hash(&mut hs);
    h.to_bits().hash(&mut hs);
    n_layers.hash(&mut hs);
    mesh.id = hs.finish();
    Ok(mesh)
}
