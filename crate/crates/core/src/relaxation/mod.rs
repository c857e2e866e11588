//! Rank-one lamination envelope of `W₀`, its lookup table, and a numerical
//! quasiconvexity probe.

mod grid;
mod laminate;
mod probe;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3x2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DensitySpec, FrameMatrix};
use crate::error::{Error, Result};
use crate::linalg::svd_3x2;
use grid::{Grid, LowerEnd};
use laminate::{Laminator, Small};

pub use probe::{probe_average, quasiconvexity_probe, ProbeDensity, ProbeOptions, ProbeOutcome, ProbeWitness};

/// Largest number of nodes a table may hold.
pub const MAX_TABLE_NODES: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaminationParams {
    /// Number of lamination levels.
    pub depth: usize,
    /// Sampled rank-one directions per node, in addition to the singular frame directions.
    pub n_directions: usize,
    /// Interior samples `t = k / (n_t + 1)` of the split parameter.
    pub n_t: usize,
    /// Geometric amplitude samples in `[0.05, 2 λ_max]`.
    pub n_amplitudes: usize,
    pub seed: u64,
    pub lambda_max: f64,
    /// Nodes per table axis.
    pub grid_n: usize,
    /// Best sampled candidates per node refined by a simplex search.
    pub polish_candidates: usize,
    /// Tolerance of the quasiconvexity probe on averaged energies.
    pub tol_probe: f64,
}

impl Default for LaminationParams {
    fn default() -> Self {
        LaminationParams {
            depth: 3,
            n_directions: 64,
            n_t: 17,
            n_amplitudes: 12,
            seed: 0x1a31,
            lambda_max: 3.0,
            grid_n: 121,
            polish_candidates: 4,
            tol_probe: 1e-4,
        }
    }
}

impl LaminationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(field, msg));
        if self.depth < 1 {
            return bad("depth", "must be at least 1");
        }
        if self.n_directions < 1 || self.n_t < 1 || self.n_amplitudes < 1 {
            return bad("n_directions", "direction, split and amplitude counts must be positive");
        }
        if !(self.lambda_max.is_finite() && self.lambda_max > 0.0) {
            return bad("lambda_max", "must be positive and finite");
        }
        if self.grid_n < 3 {
            return bad("grid_n", "need at least 3 nodes per axis");
        }
        if !(self.tol_probe >= 0.0) {
            return bad("tol_probe", "must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMode {
    /// Coordinates are the singular values (frame-indifferent densities).
    SingularValue,
    /// Coordinates are the matrix entries, column-major.
    MatrixGrid,
}

/// Sidecar metadata written next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeMeta {
    pub mode: TableMode,
    pub params: LaminationParams,
    pub density_id: String,
    pub m: usize,
    pub n: usize,
    pub depth: usize,
    pub axis_min: f64,
    pub axis_max: f64,
    pub grid_n: usize,
}

/// Lamination levels on a tensor grid. Level 0 holds `W₀` at the nodes, the
/// last level is the envelope.
#[derive(Clone, Debug)]
pub struct EnvelopeTable {
    pub mode: TableMode,
    pub params: LaminationParams,
    pub density_id: String,
    pub m: usize,
    pub n: usize,
    levels: Vec<Grid>,
}

/// Value of a table lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeValue {
    pub value: f64,
    /// Some coordinate fell outside the grid and was clamped.
    pub clamped: bool,
}

fn node_matrix(mode: TableMode, n: usize, m: usize, coords: &[f64]) -> Small {
    let mut q = Small::zeros(n, m);
    match mode {
        TableMode::SingularValue => {
            for (i, &l) in coords.iter().enumerate() {
                q.set(i, i, l);
            }
        }
        TableMode::MatrixGrid => q.a[..n * m].copy_from_slice(coords),
    }
    q
}

fn swap_mirror(g: &Grid, idx: usize) -> usize {
    let (i, j) = (idx / g.n, idx % g.n);
    j * g.n + i
}

/// Builds the envelope table for `spec`.
///
/// Frame-indifferent densities get a singular-value table; in that mode only
/// nodes with `λ₁ ≥ λ₂` are laminated and the mirror half is copied, so the
/// table is exactly symmetric.
pub fn build_envelope_table(spec: &DensitySpec, params: &LaminationParams) -> Result<EnvelopeTable> {
    build_levels(spec, params, params.depth)
}

fn build_levels(spec: &DensitySpec, params: &LaminationParams, depth: usize) -> Result<EnvelopeTable> {
    params.validate()?;
    spec.validate()?;
    let (n, m) = (spec.n, spec.m);
    let mode = if spec.frame_indifferent { TableMode::SingularValue } else { TableMode::MatrixGrid };
    let (d, lo, lower) = match mode {
        TableMode::SingularValue => (m, 0.0, LowerEnd::Reflect),
        TableMode::MatrixGrid => (n * m, -params.lambda_max, LowerEnd::Linear),
    };
    if mode == TableMode::MatrixGrid && n * m > 6 {
        return Err(Error::Capacity(format!(
            "matrix grid over {n}x{m} entries is too large to tabulate; evaluate lamination_envelope on demand"
        )));
    }
    let nodes = (params.grid_n as f64).powi(d as i32);
    if nodes > MAX_TABLE_NODES as f64 {
        return Err(Error::Capacity(format!(
            "table would need {nodes} nodes (limit {MAX_TABLE_NODES}); lower grid_n or evaluate lamination_envelope on demand"
        )));
    }

    let mut base = Grid::new(d, lo, params.lambda_max, params.grid_n, lower);
    let coords_of = |g: &Grid, idx: usize| -> Vec<f64> {
        let mut ks = vec![0; g.d];
        g.multi_index(idx, &mut ks);
        ks.iter().map(|&k| g.coord(k)).collect()
    };
    let w0: Vec<f64> = (0..base.values.len())
        .into_par_iter()
        .map(|idx| spec.w0_value(&node_matrix(mode, n, m, &coords_of(&base, idx)).to_dmatrix()))
        .collect::<Result<_>>()?;
    base.values = w0;

    let lam = Laminator::new(spec, mode, params);
    let mut levels = vec![base];
    for level in 1..=depth {
        let prev = &levels[level - 1];
        let half = mode == TableMode::SingularValue && d == 2;
        let values: Vec<Option<f64>> = (0..prev.values.len())
            .into_par_iter()
            .map(|idx| {
                if half && idx % prev.n > idx / prev.n {
                    return None;
                }
                let a = node_matrix(mode, n, m, &coords_of(prev, idx));
                Some(lam.laminate(prev, level == 1, &a, prev.values[idx]))
            })
            .collect();
        let mut next = prev.clone();
        for (idx, v) in values.iter().enumerate() {
            if let Some(v) = v {
                next.values[idx] = *v;
            }
        }
        if half {
            for idx in 0..next.values.len() {
                if values[idx].is_none() {
                    next.values[idx] = next.values[swap_mirror(&next, idx)];
                }
            }
        }
        log::debug!("lamination level {level} done ({} nodes)", next.values.len());
        levels.push(next);
    }

    Ok(EnvelopeTable { mode, params: params.clone(), density_id: spec.id(), m, n, levels })
}

/// One explicit lamination step at `a` on top of a table with `depth − 1`
/// levels; returns `min(W₀(A), last level)`.
pub fn lamination_envelope(spec: &DensitySpec, a: &FrameMatrix, params: &LaminationParams) -> Result<f64> {
    params.validate()?;
    spec.check_shape(&a.0, spec.n, spec.m)?;
    let table = build_levels(spec, params, params.depth - 1)?;
    let w0 = spec.w0_value(&a.0)?;
    let q = Small::from_dmatrix(&a.0);
    let prev = table.levels.last().expect("level 0");
    let lam = Laminator::new(spec, table.mode, params);
    let mut current = w0;
    if params.depth > 1 {
        let mut c = [0.0; 6];
        let dims = lam.coords(&q, &mut c);
        if let Some(v) = prev.interp(&c[..dims]) {
            current = current.min(v);
        }
    }
    Ok(lam.laminate(prev, params.depth == 1, &q, current).min(w0))
}

/// Bilinear lookup of the envelope at `a`.
pub fn eval_envelope(table: &EnvelopeTable, a: &FrameMatrix) -> Result<EnvelopeValue> {
    table.eval(&a.0)
}

impl EnvelopeTable {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn grid_n(&self) -> usize {
        self.levels[0].n
    }

    pub fn node_count(&self) -> usize {
        self.levels[0].values.len()
    }

    /// Envelope values at the nodes.
    pub fn values(&self) -> &[f64] {
        &self.levels[self.depth()].values
    }

    /// `W₀` at the nodes.
    pub fn w0_values(&self) -> &[f64] {
        &self.levels[0].values
    }

    /// Node values of lamination level `j` (`0` is `W₀`).
    pub fn level(&self, j: usize) -> &[f64] {
        &self.levels[j].values
    }

    /// Coordinates of node `idx` (singular values or entries).
    pub fn node_coords(&self, idx: usize) -> Vec<f64> {
        let g = &self.levels[0];
        let mut ks = vec![0; g.d];
        g.multi_index(idx, &mut ks);
        ks.iter().map(|&k| g.coord(k)).collect()
    }

    /// Flat index of the node with the given per-axis indices.
    pub fn node_index(&self, ks: &[usize]) -> usize {
        self.levels[0].flat(ks)
    }

    fn top(&self) -> &Grid {
        &self.levels[self.depth()]
    }

    fn coords(&self, q: &DMatrix<f64>) -> Result<Vec<f64>> {
        if q.shape() != (self.n, self.m) {
            return Err(Error::Usage(format!("expected a {}x{} matrix, got {}x{}", self.n, self.m, q.nrows(), q.ncols())));
        }
        Ok(match self.mode {
            TableMode::SingularValue => {
                let s = Small::from_dmatrix(q).singular_values();
                s[..self.m].to_vec()
            }
            TableMode::MatrixGrid => q.iter().copied().collect(),
        })
    }

    /// Multilinear lookup with clamping to the grid box.
    pub fn eval(&self, q: &DMatrix<f64>) -> Result<EnvelopeValue> {
        let c = self.coords(q)?;
        let mut g = [0.0; 6];
        let (value, clamped) = self.top().interp_grad(&c, &mut g);
        Ok(EnvelopeValue { value, clamped })
    }

    /// Lookup for `3x2` blocks of a singular-value table.
    pub fn eval_3x2(&self, q: &Matrix3x2<f64>) -> EnvelopeValue {
        let (s1, s2) = crate::linalg::sv_3x2(q);
        let mut g = [0.0; 2];
        let (value, clamped) = self.top().interp_grad(&[s1, s2], &mut g);
        EnvelopeValue { value, clamped }
    }

    /// Smoothed value `ρ` and its gradient for `3x2` blocks of a singular-value table.
    pub fn smoothed_3x2(&self, q: &Matrix3x2<f64>) -> (f64, Matrix3x2<f64>, bool) {
        debug_assert_eq!(self.mode, TableMode::SingularValue);
        let (u, s, v) = svd_3x2(q);
        let mut g = [0.0; 2];
        let (value, clamped) = self.top().smoothed(&s, &mut g);
        let grad = u * nalgebra::Matrix2::from_diagonal(&nalgebra::Vector2::new(g[0], g[1])) * v.transpose();
        (value, grad, clamped)
    }

    /// Smoothed value and gradient for any table shape.
    pub fn smoothed(&self, q: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>, bool)> {
        if self.mode == TableMode::SingularValue && (self.n, self.m) == (3, 2) && q.shape() == (3, 2) {
            let (v, g, c) = self.smoothed_3x2(&Matrix3x2::from_iterator(q.iter().copied()));
            return Ok((v, DMatrix::from_iterator(3, 2, g.iter().copied()), c));
        }
        self.lookup_with_grad(q, |g, x, out| g.smoothed(x, out))
    }

    /// Multilinear value with its a.e. gradient, coordinates clamped to the box.
    pub fn eval_grad(&self, q: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>, bool)> {
        self.lookup_with_grad(q, |g, x, out| g.interp_grad(x, out))
    }

    /// Like [`EnvelopeTable::eval_grad`], but beyond `λ_max` singular-value tables are
    /// continued by `ρ(c(λ)) + W₀(λ) − W₀(c(λ))` with `c` the clamp, which keeps the
    /// growth of `W₀` instead of flattening out. Matrix-grid tables fall back to clamping.
    pub fn eval_grad_continued(&self, q: &DMatrix<f64>, spec: &DensitySpec) -> Result<(f64, DMatrix<f64>, bool)> {
        let hi = self.top().hi;
        if self.mode != TableMode::SingularValue || self.coords(q)?.iter().all(|&s| s <= hi) {
            return self.eval_grad(q);
        }
        if (spec.n, spec.m) != (self.n, self.m) {
            return Err(Error::Usage("density shape does not match the table".into()));
        }
        // W₀ and its singular-value derivatives at a diagonal embedding.
        let w0_sv = |s: &[f64]| -> Result<(f64, Vec<f64>)> {
            let d = DMatrix::from_fn(self.n, self.m, |i, j| if i == j { s[j] } else { 0.0 });
            let (w, g) = spec.w0_grad(&d)?;
            Ok((w, (0..self.m).map(|j| g[(j, j)]).collect()))
        };
        let (sv, frame): (Vec<f64>, Option<(Matrix3x2<f64>, nalgebra::Matrix2<f64>)>) = if self.m == 2 {
            let (u, s, v) = svd_3x2(&Matrix3x2::from_iterator(q.iter().copied()));
            (s.to_vec(), Some((u, v)))
        } else {
            (vec![q.norm()], None)
        };
        let cs: Vec<f64> = sv.iter().map(|&s| s.min(hi)).collect();
        let mut tg = [0.0; 6];
        let (tv, _) = self.top().interp_grad(&cs, &mut tg);
        let (w_s, g_s) = w0_sv(&sv)?;
        let (w_c, g_c) = w0_sv(&cs)?;
        let value = tv + w_s - w_c;
        let dl: Vec<f64> = (0..self.m).map(|i| if sv[i] > hi { g_s[i] } else { tg[i] + g_s[i] - g_c[i] }).collect();
        let grad = match frame {
            Some((u, v)) => {
                let g = u * nalgebra::Matrix2::from_diagonal(&nalgebra::Vector2::new(dl[0], dl[1])) * v.transpose();
                DMatrix::from_iterator(3, 2, g.iter().copied())
            }
            None => q * (dl[0] / sv[0]),
        };
        Ok((value, grad, true))
    }

    fn lookup_with_grad(
        &self,
        q: &DMatrix<f64>,
        f: impl Fn(&Grid, &[f64], &mut [f64]) -> (f64, bool),
    ) -> Result<(f64, DMatrix<f64>, bool)> {
        let c = self.coords(q)?;
        let mut g = [0.0; 6];
        match (self.mode, self.m) {
            (TableMode::SingularValue, 2) => {
                let qs = Matrix3x2::from_iterator(q.iter().copied());
                let (u, s, v) = svd_3x2(&qs);
                let (value, clamped) = f(self.top(), &s, &mut g);
                let grad = u * nalgebra::Matrix2::from_diagonal(&nalgebra::Vector2::new(g[0], g[1])) * v.transpose();
                Ok((value, DMatrix::from_iterator(3, 2, grad.iter().copied()), clamped))
            }
            (TableMode::SingularValue, _) => {
                // m = 1: ρ(|q|), gradient ρ' q / |q|.
                let (value, clamped) = f(self.top(), &c, &mut g);
                let norm = q.norm();
                let grad = if norm > 0.0 { q * (g[0] / norm) } else { DMatrix::zeros(self.n, self.m) };
                Ok((value, grad, clamped))
            }
            (TableMode::MatrixGrid, _) => {
                let (value, clamped) = f(self.top(), &c, &mut g);
                Ok((value, DMatrix::from_column_slice(self.n, self.m, &g[..self.n * self.m]), clamped))
            }
        }
    }

    pub fn meta(&self) -> EnvelopeMeta {
        let g = &self.levels[0];
        EnvelopeMeta {
            mode: self.mode,
            params: self.params.clone(),
            density_id: self.density_id.clone(),
            m: self.m,
            n: self.n,
            depth: self.depth(),
            axis_min: g.lo,
            axis_max: g.hi,
            grid_n: g.n,
        }
    }

    fn header(&self) -> Vec<String> {
        let mut cols: Vec<String> = match self.mode {
            TableMode::SingularValue => (1..=self.m).map(|i| format!("lambda{i}")).collect(),
            TableMode::MatrixGrid => {
                let mut v = Vec::new();
                for j in 0..self.m {
                    for i in 0..self.n {
                        v.push(format!("q{}{}", i + 1, j + 1));
                    }
                }
                v
            }
        };
        cols.push("qw0".into());
        cols.push("w0".into());
        cols
    }

    /// CSV with one row per node, first coordinate slowest.
    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        let (top, w0) = (self.values(), self.w0_values());
        for idx in 0..self.node_count() {
            for c in self.node_coords(idx) {
                let _ = write!(out, "{c},");
            }
            let _ = writeln!(out, "{},{}", top[idx], w0[idx]);
        }
        out
    }

    /// Sidecar path for a CSV path: `envelope.csv` → `envelope.meta.json`.
    pub fn meta_path(csv: &Path) -> PathBuf {
        csv.with_extension("meta.json")
    }

    /// Writes the CSV and its metadata sidecar.
    pub fn write(&self, csv: &Path) -> Result<PathBuf> {
        let meta = Self::meta_path(csv);
        crate::io::write_atomic(csv, self.to_csv().as_bytes())?;
        crate::io::write_atomic(&meta, serde_json::to_string_pretty(&self.meta())?.as_bytes())?;
        Ok(meta)
    }

    /// Reads a table written by [`EnvelopeTable::write`]. Only the envelope
    /// and `W₀` levels are restored.
    pub fn read(csv: &Path) -> Result<EnvelopeTable> {
        let meta: EnvelopeMeta = serde_json::from_str(&std::fs::read_to_string(Self::meta_path(csv))?)?;
        let text = std::fs::read_to_string(csv)?;
        let d = match meta.mode {
            TableMode::SingularValue => meta.m,
            TableMode::MatrixGrid => meta.n * meta.m,
        };
        let lower = match meta.mode {
            TableMode::SingularValue => LowerEnd::Reflect,
            TableMode::MatrixGrid => LowerEnd::Linear,
        };
        let mut top = Grid::new(d, meta.axis_min, meta.axis_max, meta.grid_n, lower);
        let mut w0 = top.clone();
        let mut rows = text.lines();
        rows.next().ok_or_else(|| Error::Data("empty envelope csv".into()))?;
        let mut count = 0;
        for (idx, line) in rows.enumerate() {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Data(format!("row {}: {e}", idx + 2))))
                .collect::<Result<_>>()?;
            if fields.len() != d + 2 || idx >= top.values.len() {
                return Err(Error::Data(format!("row {} does not match the table shape", idx + 2)));
            }
            top.values[idx] = fields[d];
            w0.values[idx] = fields[d + 1];
            count += 1;
        }
        if count != top.values.len() {
            return Err(Error::Data(format!("expected {} rows, found {count}", top.values.len())));
        }
        let table = EnvelopeTable {
            mode: meta.mode,
            params: meta.params,
            density_id: meta.density_id,
            m: meta.m,
            n: meta.n,
            levels: vec![w0, top],
        };
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensitySpec;
    use std::sync::{Arc, OnceLock};

    fn small_params(depth: usize) -> LaminationParams {
        LaminationParams { depth, n_directions: 24, n_t: 9, n_amplitudes: 10, grid_n: 31, ..Default::default() }
    }

    fn table() -> &'static EnvelopeTable {
        static T: OnceLock<EnvelopeTable> = OnceLock::new();
        T.get_or_init(|| build_envelope_table(&DensitySpec::dist2_so(2), &small_params(3)).unwrap())
    }

    fn true_qw0(l1: f64, l2: f64) -> f64 {
        (l1 - 1.0).max(0.0).powi(2) + (l2 - 1.0).max(0.0).powi(2)
    }

    #[test]
    fn table_is_below_w0_symmetric_and_monotone() {
        let t = table();
        let n = t.grid_n();
        for idx in 0..t.node_count() {
            let v = t.values()[idx];
            assert!(v <= t.w0_values()[idx] + 1e-12);
            assert!(v >= -1e-12);
            let (i, j) = (idx / n, idx % n);
            assert_eq!(v, t.values()[j * n + i]);
            for lv in 1..=t.depth() {
                assert!(t.level(lv)[idx] <= t.level(lv - 1)[idx] + 1e-12);
            }
            // The lamination envelope cannot drop below the quasiconvex one.
            let c = t.node_coords(idx);
            assert!(v >= true_qw0(c[0], c[1]) - 1e-9, "node {c:?}: {v}");
        }
    }

    #[test]
    fn short_region_relaxes_to_zero() {
        let t = table();
        for idx in 0..t.node_count() {
            let c = t.node_coords(idx);
            if c[0] <= 1.0 + 1e-12 && c[1] <= 1.0 + 1e-12 {
                assert!(t.values()[idx] <= 1e-3, "node {c:?}: {}", t.values()[idx]);
            }
        }
        let at_one = t.node_index(&[10, 10]);
        assert_eq!(t.node_coords(at_one), vec![1.0, 1.0]);
        assert_eq!(t.values()[at_one], 0.0);
    }

    #[test]
    fn stretched_region_tracks_exact_envelope() {
        let t = table();
        let q = DMatrix::from_column_slice(3, 2, &[1.2, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let v = t.eval(&q).unwrap();
        assert!(!v.clamped);
        assert!((v.value - 0.04).abs() < 1e-3, "{}", v.value);
    }

    #[test]
    fn zero_laminates_to_at_most_one() {
        let spec = DensitySpec::dist2_so(2);
        let p = LaminationParams { depth: 1, ..small_params(1) };
        let v = lamination_envelope(&spec, &FrameMatrix(DMatrix::zeros(3, 2)), &p).unwrap();
        assert!(v <= 1.0 + 1e-6, "{v}");
        let e = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(lamination_envelope(&spec, &FrameMatrix(e), &p).unwrap(), 0.0);
    }

    #[test]
    fn short_matrix_relaxes_on_demand() {
        let spec = DensitySpec::dist2_so(2);
        let a = DMatrix::from_column_slice(3, 2, &[0.8, 0.0, 0.0, 0.0, 0.9, 0.0]);
        let v = lamination_envelope(&spec, &FrameMatrix(a), &small_params(3)).unwrap();
        assert!(v <= 1e-3, "{v}");
    }

    #[test]
    fn lookup_is_rotation_invariant_and_bounded_by_corners() {
        let t = table();
        let q = DMatrix::from_column_slice(3, 2, &[1.05, 0.0, 0.0, 0.0, 0.95, 0.0]);
        let v = t.eval(&q).unwrap().value;
        let mut rng = rand::rng();
        let r = crate::density::test_support::random_rotation(3, &mut rng);
        assert!((t.eval(&(&r * &q)).unwrap().value - v).abs() < 1e-12);
        let h = 0.1;
        let corners: Vec<f64> = [(1.0, 0.9), (1.1, 0.9), (1.0, 1.0), (1.1, 1.0)]
            .iter()
            .map(|&(a, b)| t.values()[t.node_index(&[(a / h as f64).round() as usize, (b / h as f64).round() as usize])])
            .collect();
        let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(v >= lo - 1e-14 && v <= hi + 1e-14);
        let big = DMatrix::from_column_slice(3, 2, &[4.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(t.eval(&big).unwrap().clamped);
    }

    #[test]
    fn continuation_beyond_the_table_keeps_w0_growth() {
        let t = table();
        let spec = DensitySpec::dist2_so(2);
        let at = |l1: f64, l2: f64| DMatrix::from_column_slice(3, 2, &[l1, 0.0, 0.0, 0.0, l2, 0.0]);
        // Inside the box nothing changes.
        let q = at(1.3, 0.6);
        assert_eq!(t.eval_grad_continued(&q, &spec).unwrap().0, t.eval_grad(&q).unwrap().0);
        // Continuous at the edge, exact W₀ increment beyond it.
        let edge = t.eval_grad(&at(3.0, 0.6)).unwrap().0;
        let (v, _, clamped) = t.eval_grad_continued(&at(3.5, 0.6), &spec).unwrap();
        assert!(clamped);
        assert!((v - (edge + 2.5f64.powi(2) - 2.0f64.powi(2))).abs() < 1e-12);
        assert!((t.eval_grad_continued(&at(3.0 + 1e-9, 0.6), &spec).unwrap().0 - edge).abs() < 1e-8);
        // Gradient against differences off the axes.
        let q = DMatrix::from_column_slice(3, 2, &[3.4, 0.2, -0.1, 0.1, 0.63, 0.4]);
        let (_, g, _) = t.eval_grad_continued(&q, &spec).unwrap();
        for k in 0..6 {
            let (mut p, mut m) = (q.clone(), q.clone());
            p[k] += 1e-7;
            m[k] -= 1e-7;
            let fd = (t.eval_grad_continued(&p, &spec).unwrap().0 - t.eval_grad_continued(&m, &spec).unwrap().0) / 2e-7;
            assert!((fd - g[k]).abs() < 1e-5, "entry {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn smoothed_gradient_is_consistent() {
        let t = table();
        let q = DMatrix::from_column_slice(3, 2, &[1.3, 0.2, -0.1, 0.1, 0.7, 0.4]);
        let (_, g, _) = t.smoothed(&q).unwrap();
        let eps = 1e-6;
        for k in 0..6 {
            let mut p = q.clone();
            let mut m = q.clone();
            p[k] += eps;
            m[k] -= eps;
            let fd = (t.smoothed(&p).unwrap().0 - t.smoothed(&m).unwrap().0) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-5, "entry {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = DensitySpec::dist2_so(2);
        let p = LaminationParams { grid_n: 9, ..small_params(2) };
        let a = build_envelope_table(&spec, &p).unwrap();
        let b = build_envelope_table(&spec, &p).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("envelope.csv");
        let spec = DensitySpec::dist2_so(2);
        let t = build_envelope_table(&spec, &LaminationParams { grid_n: 7, ..small_params(1) }).unwrap();
        let meta = t.write(&path).unwrap();
        assert!(meta.ends_with("envelope.meta.json"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("lambda1,lambda2,qw0,w0\n"));
        assert_eq!(text.lines().count(), 50);
        let back = EnvelopeTable::read(&path).unwrap();
        assert_eq!(back.values(), t.values());
        assert_eq!(back.w0_values(), t.w0_values());
        assert_eq!(back.meta().params, t.params);
    }

    #[test]
    fn matrix_grid_for_generic_planar_density() {
        // Not frame-indifferent: W(Q) = |Q − I|² on 2x2 matrices, so W₀(q) = |q − e₁|², already convex.
        let w: Arc<dyn Fn(&DMatrix<f64>) -> f64 + Send + Sync> = Arc::new(|q: &DMatrix<f64>| (q - DMatrix::identity(2, 2)).norm_squared());
        let spec = DensitySpec::custom("shifted_square", 1, w, false);
        let p = LaminationParams { grid_n: 13, lambda_max: 2.0, ..small_params(1) };
        let t = build_envelope_table(&spec, &p).unwrap();
        assert_eq!(t.mode, TableMode::MatrixGrid);
        for idx in 0..t.node_count() {
            let c = t.node_coords(idx);
            let exact = (c[0] - 1.0).powi(2) + c[1].powi(2);
            assert!((t.w0_values()[idx] - exact).abs() < 1e-8);
            assert!((t.values()[idx] - exact).abs() < 1e-6, "{c:?}");
        }
        assert!(t.to_csv().starts_with("q11,q21,qw0,w0\n"));
    }

    #[test]
    fn oversized_grid_is_a_capacity_error() {
        let w: Arc<dyn Fn(&DMatrix<f64>) -> f64 + Send + Sync> = Arc::new(|q: &DMatrix<f64>| q.norm_squared());
        let spec = DensitySpec::custom("sq", 2, w, false);
        assert!(matches!(build_envelope_table(&spec, &small_params(1)), Err(Error::Capacity(_))));
    }
}
