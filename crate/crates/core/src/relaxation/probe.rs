//! Numerical test of the quasiconvexity inequality on the unit square.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EnvelopeTable;
use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::optimize::{lbfgs, LbfgsSettings};

/// Function on `n x m` matrices tested by the probe.
#[derive(Clone, Copy)]
pub enum ProbeDensity<'a> {
    /// `W₀` of a density.
    W0(&'a DensitySpec),
    /// Bilinear lookup in an envelope table, continued beyond the table with `W₀` of `spec`.
    Envelope { table: &'a EnvelopeTable, spec: &'a DensitySpec },
}

impl ProbeDensity<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            ProbeDensity::W0(s) => (s.n, s.m),
            ProbeDensity::Envelope { table, .. } => (table.n, table.m),
        }
    }

    /// Value and gradient with respect to the matrix entries.
    pub fn value_grad(&self, q: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        match *self {
            ProbeDensity::W0(spec) => spec.w0_grad(q),
            ProbeDensity::Envelope { table, spec } => {
                let (v, g, _) = table.eval_grad_continued(q, spec)?;
                Ok((v, g))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    /// Cells per side of the unit square (or the unit interval for `m = 1`).
    pub probe_n: usize,
    /// Random starts.
    pub starts: usize,
    /// Standard deviation of the random nodal values at the starts.
    pub start_amplitude: f64,
    pub seed: u64,
    /// Reported violations must exceed this margin.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { probe_n: 12, starts: 4, start_amplitude: 0.3, seed: 0x9b0e, tol: 1e-4, max_iters: 3000 }
    }
}

/// Nodal values of a piecewise-affine `φ` vanishing on the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeWitness {
    pub probe_n: usize,
    pub m: usize,
    pub n: usize,
    /// `n` values per node, nodes row-major over `(probe_n + 1)^m` points.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub violated: bool,
    /// `U(A) − avg U(A + dφ)` for the best `φ` found.
    pub margin: f64,
    pub base_value: f64,
    pub best_value: f64,
    pub witness: ProbeWitness,
}

/// Structured P1 discretization of `[0, 1]^m`.
struct ProbeMesh {
    k: usize,
    m: usize,
    n: usize,
    /// Free node -> first unknown, or `None` on the boundary.
    slot: Vec<Option<usize>>,
    unknowns: usize,
    /// Per element: node indices `(base, e1 partner, e2 partner)` so that
    /// `∂_i φ = (φ(partner_i) − φ(base_i)) / h`.
    elems: Vec<[(usize, usize); 2]>,
}

impl ProbeMesh {
    fn new(k: usize, m: usize, n: usize) -> Self {
        let side = k + 1;
        let nodes = side.pow(m as u32);
        let mut slot = vec![None; nodes];
        let mut unknowns = 0;
        for (idx, s) in slot.iter_mut().enumerate() {
            let (i, j) = if m == 2 { (idx / side, idx % side) } else { (idx, 1) };
            let interior = i > 0 && i < k && (m == 1 || (j > 0 && j < k));
            if interior {
                *s = Some(unknowns);
                unknowns += n;
            }
        }
        let mut elems = Vec::new();
        if m == 1 {
            for i in 0..k {
                elems.push([(i, i + 1), (0, 0)]);
            }
        } else {
            let id = |i: usize, j: usize| i * side + j;
            for i in 0..k {
                for j in 0..k {
                    // Lower triangle (i,j),(i+1,j),(i,j+1); upper (i+1,j+1),(i,j+1),(i+1,j).
                    elems.push([(id(i, j), id(i + 1, j)), (id(i, j), id(i, j + 1))]);
                    elems.push([(id(i, j + 1), id(i + 1, j + 1)), (id(i + 1, j), id(i + 1, j + 1))]);
                }
            }
        }
        ProbeMesh { k, m, n, slot, unknowns, elems }
    }

    fn nodal(&self, x: &[f64], node: usize, c: usize) -> f64 {
        self.slot[node].map_or(0.0, |s| x[s + c])
    }

    /// Average of `U(A + dφ)` over the elements, with gradient in the unknowns.
    fn average(&self, u: &ProbeDensity, a: &DMatrix<f64>, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        let h = 1.0 / self.k as f64;
        let mut total = 0.0;
        let mut gsum = grad;
        if let Some(g) = gsum.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let w = 1.0 / self.elems.len() as f64;
        let mut q = a.clone();
        for e in &self.elems {
            for (col, &(b, p)) in e.iter().take(self.m).enumerate() {
                for c in 0..self.n {
                    q[(c, col)] = a[(c, col)] + (self.nodal(x, p, c) - self.nodal(x, b, c)) / h;
                }
            }
            let (v, gq) = u.value_grad(&q)?;
            if !v.is_finite() {
                return Err(Error::numeric("quasiconvexity probe", format!("non-finite density value {v}")));
            }
            total += w * v;
            if let Some(g) = gsum.as_deref_mut() {
                for (col, &(b, p)) in e.iter().take(self.m).enumerate() {
                    for c in 0..self.n {
                        let d = w * gq[(c, col)] / h;
                        if let Some(s) = self.slot[p] {
                            g[s + c] += d;
                        }
                        if let Some(s) = self.slot[b] {
                            g[s + c] -= d;
                        }
                    }
                }
            }
        }
        Ok(total)
    }

    fn witness(&self, x: &[f64]) -> ProbeWitness {
        let mut values = vec![0.0; self.slot.len() * self.n];
        for node in 0..self.slot.len() {
            for c in 0..self.n {
                values[node * self.n + c] = self.nodal(x, node, c);
            }
        }
        ProbeWitness { probe_n: self.k, m: self.m, n: self.n, values }
    }
}

/// Re-evaluates `avg_D U(A + dφ)` for a witness returned by the probe.
pub fn probe_average(u: ProbeDensity, a: &DMatrix<f64>, witness: &ProbeWitness) -> Result<f64> {
    let mesh = ProbeMesh::new(witness.probe_n, witness.m, witness.n);
    if a.shape() != (witness.n, witness.m) || witness.values.len() != mesh.slot.len() * mesh.n {
        return Err(Error::Usage("witness does not match the matrix shape".into()));
    }
    let mut x = vec![0.0; mesh.unknowns];
    for (node, s) in mesh.slot.iter().enumerate() {
        if let Some(s) = s {
            x[*s..*s + mesh.n].copy_from_slice(&witness.values[node * mesh.n..(node + 1) * mesh.n]);
        }
    }
    mesh.average(&u, a, &x, None)
}

/// Minimizes `φ ↦ avg U(A + dφ)` over piecewise-affine `φ` vanishing on the
/// boundary of the unit square, from seeded random starts. A violation is
/// reported when the best average undercuts `U(A)` by more than `tol`.
pub fn quasiconvexity_probe(u: ProbeDensity, a: &DMatrix<f64>, opts: &ProbeOptions) -> Result<ProbeOutcome> {
    let (n, m) = u.shape();
    if a.shape() != (n, m) {
        return Err(Error::Usage(format!("expected a {n}x{m} matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if opts.probe_n < 2 || opts.starts < 1 {
        return Err(Error::Usage("probe needs probe_n ≥ 2 and at least one start".into()));
    }
    let mesh = ProbeMesh::new(opts.probe_n, m, n);
    let base_value = u.value_grad(a)?.0;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let settings = LbfgsSettings { max_iters: opts.max_iters, grad_tol: 1e-9, ..Default::default() };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..opts.starts {
        let x0: Vec<f64> =
            (0..mesh.unknowns).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); opts.start_amplitude * z / opts.probe_n as f64 }).collect();
        let mut f = |x: &[f64], g: &mut [f64]| mesh.average(&u, a, x, Some(g));
        let out = lbfgs(&mut f, &x0, None, &settings)?;
        if !out.energy.is_finite() {
            return Err(Error::numeric("quasiconvexity probe", "optimizer diverged"));
        }
        if best.as_ref().is_none_or(|(v, _)| out.energy < *v) {
            best = Some((out.energy, out.x));
        }
    }
    let (_, x) = best.expect("one start");
    let witness = mesh.witness(&x);
    // Report the re-evaluated average so the witness certifies the margin.
    let best_value = probe_average(u, a, &witness)?;
    let margin = base_value - best_value;
    Ok(ProbeOutcome { violated: margin > opts.tol, margin, base_value, best_value, witness })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 2, v)
    }

    #[test]
    fn w0_is_violated_at_zero() {
        let spec = DensitySpec::dist2_so(2);
        let a = DMatrix::zeros(3, 2);
        let out = quasiconvexity_probe(ProbeDensity::W0(&spec), &a, &ProbeOptions::default()).unwrap();
        assert!(out.violated);
        assert!(out.margin >= 0.5, "{}", out.margin);
        let again = probe_average(ProbeDensity::W0(&spec), &a, &out.witness).unwrap();
        assert!((out.base_value - again - out.margin).abs() < 1e-8);
    }

    #[test]
    fn isometry_is_not_violated() {
        let spec = DensitySpec::dist2_so(2);
        let a = cols(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let out = quasiconvexity_probe(ProbeDensity::W0(&spec), &a, &ProbeOptions { starts: 2, ..Default::default() }).unwrap();
        assert!(!out.violated);
        assert!(out.margin <= 0.0);
    }

    #[test]
    fn gradient_of_average_matches_differences() {
        let spec = DensitySpec::dist2_so(2);
        let mesh = ProbeMesh::new(4, 2, 3);
        let a = cols(&[0.7, 0.1, 0.0, -0.2, 1.1, 0.3]);
        let x: Vec<f64> = (0..mesh.unknowns).map(|i| 0.05 * ((i * 7 % 11) as f64 - 5.0)).collect();
        let mut g = vec![0.0; mesh.unknowns];
        mesh.average(&ProbeDensity::W0(&spec), &a, &x, Some(&mut g)).unwrap();
        for k in 0..mesh.unknowns {
            let mut p = x.clone();
            let mut q = x.clone();
            p[k] += 1e-6;
            q[k] -= 1e-6;
            let u = ProbeDensity::W0(&spec);
            let fd = (mesh.average(&u, &a, &p, None).unwrap() - mesh.average(&u, &a, &q, None).unwrap()) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn generic_fiber_gradient_path_for_planar_density() {
        // n = 2, m = 1: W₀(q) = (|q| − 1)², which is not convex at 0.
        let spec = DensitySpec::dist2_so(1);
        let (v, g) = ProbeDensity::W0(&spec).value_grad(&DMatrix::from_column_slice(2, 1, &[0.6, 0.8])).unwrap();
        assert!(v.abs() < 1e-12 && g.norm() < 1e-6);
        let out = quasiconvexity_probe(ProbeDensity::W0(&spec), &DMatrix::zeros(2, 1), &ProbeOptions { starts: 2, ..Default::default() })
            .unwrap();
        assert!(out.violated);
    }
}
