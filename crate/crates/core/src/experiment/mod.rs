//! Configured experiments: single minimizations, the thickness sweep, and verification batteries.

mod config;
mod verify;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{
    apply_boundary_conditions, element_density_csv, extrude_bulk_mesh, lp_distance, triangulate_chart, BulkEnergy, BulkMesh,
    ConfigurationField, FieldSnapshot, MembraneDensity, MembraneEnergy, MeshRef, SurfaceMesh,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::fit_order;
use crate::optimize::{minimize_energy, MinimizeResult};
use crate::relaxation::{build_envelope_table, EnvelopeTable};

pub use config::{BoundarySpec, DensityConfig, ExperimentConfig, MeshConfig, MetricSpec, OutputConfig, Preset, SCHEMA_VERSION};
pub use verify::{run_verify, VerifyCheck, VerifyReport, VerifySuite};

/// Which functional a case minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CaseMode {
    Membrane,
    Bulk { h: f64 },
}

/// Loads the configured table when present, otherwise builds it (and writes it
/// to the configured path, if any).
pub fn load_or_build_table(cfg: &ExperimentConfig) -> Result<EnvelopeTable> {
    let spec = cfg.density_spec()?;
    if let Some(path) = &cfg.output.envelope_table {
        if path.exists() {
            let t = EnvelopeTable::read(path)?;
            if t.params != cfg.envelope || t.density_id != spec.id() {
                return Err(Error::config(
                    "output.envelope_table",
                    format!("{} was built with different parameters or density", path.display()),
                ));
            }
            return Ok(t);
        }
    }
    let t = build_envelope_table(&spec, &cfg.envelope)?;
    if let Some(path) = &cfg.output.envelope_table {
        t.write(path)?;
    }
    Ok(t)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseReport {
    /// `membrane` or `bulk`.
    pub mode: String,
    pub h: Option<f64>,
    pub relaxed: bool,
    /// Optimized objective (smoothed table for relaxed membrane runs).
    pub energy: f64,
    /// Value reported against oracles: bilinear table lookup for relaxed membrane runs, `energy` otherwise.
    pub reported_energy: f64,
    pub nodes: usize,
    pub elements: usize,
    pub free_dofs: usize,
    pub result: MinimizeResult,
}

/// A finished case with everything needed for its artifacts.
pub struct CaseRun {
    pub report: CaseReport,
    pub field: ConfigurationField,
    pub surface: SurfaceMesh,
    pub bulk: Option<BulkMesh>,
    pub element_densities: Vec<f64>,
}

impl CaseRun {
    pub fn snapshot(&self) -> FieldSnapshot {
        match &self.bulk {
            Some(b) => FieldSnapshot::bulk(b, &self.field),
            None => FieldSnapshot::surface(&self.surface, &self.field),
        }
    }

    pub fn centroids(&self) -> Vec<Vec<f64>> {
        match &self.bulk {
            Some(b) => (0..b.tets.len()).map(|e| b.point(e, &[0.25; 4]).to_vec()).collect(),
            None => (0..self.surface.triangles.len()).map(|t| self.surface.point(t, &[1.0 / 3.0; 3]).to_vec()).collect(),
        }
    }

    /// Writes `result.json`, `field.json`, `iterations.csv` and `element_density.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            ("result.json", serde_json::to_string_pretty(&self.report)?),
            ("field.json", serde_json::to_string(&self.snapshot())?),
            ("iterations.csv", self.report.result.log_csv()),
            ("element_density.csv", element_density_csv(&self.centroids(), &self.element_densities)),
        ];
        let mut out = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            write_atomic(&p, body.as_bytes())?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Minimizes the membrane functional (`mode = Membrane`) or `I_h` (`mode = Bulk`).
///
/// Relaxed membrane runs need `table`; bulk runs always use the unrelaxed density.
pub fn run_case(cfg: &ExperimentConfig, mode: CaseMode, table: Option<&EnvelopeTable>) -> Result<CaseRun> {
    cfg.validate()?;
    let metric = cfg.metric_field()?;
    let spec = cfg.density_spec()?;
    let bc = cfg.boundary.boundary_data();
    let params = cfg.optimizer_params();
    let surface = triangulate_chart(&cfg.domain, cfg.mesh.resolution)?;
    match mode {
        CaseMode::Membrane => {
            let f0 = apply_boundary_conditions(MeshRef::Surface(&surface), &bc, 3)?;
            let density = if cfg.relaxed {
                let table = table.ok_or_else(|| Error::Usage("relaxed membrane case needs an envelope table".into()))?;
                MembraneDensity::Relaxed { table, smoothed: true }
            } else {
                MembraneDensity::Unrelaxed
            };
            let mut energy = MembraneEnergy::new(&metric, &spec, density, &surface, &f0)?;
            energy.reproducible = cfg.reproducible;
            let (field, result) = minimize_energy(&energy, &f0, &params)?;
            let (reported_energy, element_densities) = if let MembraneDensity::Relaxed { table, .. } = density {
                let mut plain = MembraneEnergy::new(&metric, &spec, MembraneDensity::Relaxed { table, smoothed: false }, &surface, &f0)?;
                plain.reproducible = cfg.reproducible;
                (plain.eval(&field.values, None)?.energy, plain.element_densities(&field.values)?)
            } else {
                (result.energy, energy.element_densities(&field.values)?)
            };
            let report = CaseReport {
                mode: "membrane".into(),
                h: None,
                relaxed: cfg.relaxed,
                energy: result.energy,
                reported_energy,
                nodes: surface.node_count(),
                elements: surface.triangles.len(),
                free_dofs: f0.free_count(),
                result,
            };
            Ok(CaseRun { report, field, surface, bulk: None, element_densities })
        }
        CaseMode::Bulk { h } => {
            if !(h > 0.0 && h <= metric.z_max()) {
                return Err(Error::config("h", format!("thickness {h} outside (0, {}]", metric.z_max())));
            }
            let bulk = extrude_bulk_mesh(&surface, h, cfg.mesh.n_layers)?;
            let f0 = apply_boundary_conditions(MeshRef::Bulk(&bulk), &bc, 3)?;
            let mut energy = BulkEnergy::new(&metric, &spec, &bulk, &f0, cfg.frame)?;
            energy.reproducible = cfg.reproducible;
            let (field, result) = minimize_energy(&energy, &f0, &params)?;
            let element_densities = energy.element_densities(&field.values)?;
            let report = CaseReport {
                mode: "bulk".into(),
                h: Some(h),
                relaxed: false,
                energy: result.energy,
                reported_energy: result.energy,
                nodes: bulk.node_count(),
                elements: bulk.tets.len(),
                free_dofs: f0.free_count(),
                result,
            };
            Ok(CaseRun { report, field, surface, bulk: Some(bulk), element_densities })
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: f64,
    pub inf_ih: f64,
    pub gap: Option<f64>,
    pub grad_norm: f64,
    pub lp_distance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFailure {
    /// `None` for the membrane case.
    pub h: Option<f64>,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub h_list: Vec<f64>,
    pub n_layers: usize,
    /// Layer count is held fixed for every h (constant resolution in the rescaled fiber).
    pub layer_rule: String,
    pub resolution: usize,
    pub relaxed_membrane: bool,
    pub min_i: Option<f64>,
    pub membrane: Option<CaseReport>,
    /// Ordered by decreasing h.
    pub rows: Vec<SweepRow>,
    pub gaps_strictly_decreasing: bool,
    pub lp_strictly_decreasing: bool,
    /// Least-squares slope of `ln gap` against `ln h`.
    pub fitted_order: Option<f64>,
    pub incomplete: bool,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    /// `h,inf_Ih,min_I,gap,grad_norm,lp_distance,converged`; missing values are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,inf_Ih,min_I,gap,grad_norm,lp_distance,converged\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.h,
                r.inf_ih,
                opt(self.min_i),
                opt(r.gap),
                r.grad_norm,
                r.lp_distance,
                r.converged
            );
        }
        s
    }

    /// Writes `sweep.csv` and `sweep.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let csv = dir.join("sweep.csv");
        let json = dir.join("sweep.json");
        write_atomic(&csv, self.to_csv().as_bytes())?;
        write_atomic(&json, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(vec![csv, json])
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.len() >= 2 && v.windows(2).all(|w| w[1] < w[0])
}

/// Membrane case once, then a bulk case per h (in parallel), with gaps and
/// `L²` distances between the bulk minimizers and the membrane minimizer.
///
/// Failed cases are listed in `failures` and mark the report incomplete.
pub fn run_gamma_sweep(cfg: &ExperimentConfig, table: Option<&EnvelopeTable>) -> Result<SweepReport> {
    cfg.validate()?;
    let metric = cfg.metric_field()?;
    let p = cfg.density_spec()?.p;
    let mut failures = Vec::new();
    let membrane = match run_case(cfg, CaseMode::Membrane, table) {
        Ok(run) => Some(run),
        Err(e) => {
            log::error!("membrane case failed: {e}");
            failures.push(SweepFailure { h: None, error: e.to_string() });
            None
        }
    };
    let min_i = membrane.as_ref().map(|m| m.report.reported_energy);
    let cases: Vec<(f64, Result<SweepRow>)> = cfg
        .h_list
        .par_iter()
        .map(|&h| {
            let row = (|| {
                let start = Instant::now();
                let run = run_case(cfg, CaseMode::Bulk { h }, None)?;
                let bulk = run.bulk.as_ref().expect("bulk case has a bulk mesh");
                let lp = match &membrane {
                    Some(m) => lp_distance(&metric, bulk, &run.field, &m.field, p)?,
                    None => f64::NAN,
                };
                let r = &run.report.result;
                Ok(SweepRow {
                    h,
                    inf_ih: r.energy,
                    gap: min_i.map(|m| (r.energy - m).abs()),
                    grad_norm: r.grad_norm,
                    lp_distance: lp,
                    converged: r.converged,
                    iterations: r.iterations,
                    wall_time_s: start.elapsed().as_secs_f64(),
                })
            })();
            (h, row)
        })
        .collect();
    let mut rows = Vec::new();
    for (h, row) in cases {
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                log::error!("bulk case h = {h} failed: {e}");
                failures.push(SweepFailure { h: Some(h), error: e.to_string() });
            }
        }
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
    let lps: Vec<f64> = rows.iter().map(|r| r.lp_distance).collect();
    Ok(SweepReport {
        h_list: cfg.h_list.clone(),
        n_layers: cfg.mesh.n_layers,
        layer_rule: "constant_per_h".into(),
        resolution: cfg.mesh.resolution,
        relaxed_membrane: cfg.relaxed,
        min_i,
        membrane: membrane.map(|m| m.report),
        gaps_strictly_decreasing: gaps.len() == hs.len() && strictly_decreasing(&gaps),
        lp_strictly_decreasing: strictly_decreasing(&lps),
        fitted_order: if gaps.len() == hs.len() { fit_order(&hs, &gaps) } else { None },
        incomplete: !failures.is_empty(),
        failures,
        rows,
    })
}
