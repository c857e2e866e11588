use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{load_or_build_table, ExperimentConfig};
use crate::density::{fiber_minimize_generic, verify_density_conditions, w0_dist2_so, DensitySpec, FiberSettings, FrameMatrix};
use crate::discretization::{
    apply_boundary_conditions, extrude_bulk_mesh, triangulate_chart, BulkEnergy, ConfigurationField, MembraneDensity, MembraneEnergy, MeshRef,
};
use crate::error::{Error, Result};
use crate::geometry::{geometry_diagnostics, ChartDomain, MetricField};
use crate::optimize::gradient_check;
use crate::relaxation::{eval_envelope, quasiconvexity_probe, EnvelopeTable, ProbeDensity, ProbeOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifySuite {
    Geometry,
    Density,
    Envelope,
    Gradient,
}

impl FromStr for VerifySuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(VerifySuite::Geometry),
            "density" => Ok(VerifySuite::Density),
            "envelope" => Ok(VerifySuite::Envelope),
            "gradient" => Ok(VerifySuite::Gradient),
            other => Err(Error::Usage(format!("unknown suite `{other}` (expected geometry, density, envelope or gradient)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: VerifySuite,
    pub passed: bool,
    pub checks: Vec<VerifyCheck>,
}

struct Checks(Vec<VerifyCheck>);

impl Checks {
    fn at_most(&mut self, name: impl Into<String>, value: f64, threshold: f64) {
        self.0.push(VerifyCheck { name: name.into(), value, threshold, passed: value <= threshold });
    }

    fn at_least(&mut self, name: impl Into<String>, value: f64, threshold: f64) {
        self.0.push(VerifyCheck { name: name.into(), value, threshold, passed: value >= threshold });
    }
}

/// Runs one invariant battery. `table` avoids rebuilding the envelope when the caller has it.
pub fn run_verify(suite: VerifySuite, cfg: &ExperimentConfig, table: Option<&EnvelopeTable>) -> Result<VerifyReport> {
    let mut c = Checks(Vec::new());
    match suite {
        VerifySuite::Geometry => geometry_suite(&mut c)?,
        VerifySuite::Density => density_suite(&mut c, cfg)?,
        VerifySuite::Envelope => {
            let owned;
            let t = match table {
                Some(t) => t,
                None => {
                    owned = load_or_build_table(cfg)?;
                    &owned
                }
            };
            envelope_suite(&mut c, cfg, t)?
        }
        VerifySuite::Gradient => {
            let owned;
            let t = match table {
                Some(t) => t,
                None => {
                    owned = load_or_build_table(cfg)?;
                    &owned
                }
            };
            gradient_suite(&mut c, cfg, t)?
        }
    }
    let passed = c.0.iter().all(|k| k.passed);
    Ok(VerifyReport { suite, passed, checks: c.0 })
}

fn geometry_suite(c: &mut Checks) -> Result<()> {
    let hs = [0.2, 0.1, 0.05];
    let flat = MetricField::flat(ChartDomain::unit_square(), 0.5)?;
    let r = geometry_diagnostics(&flat, &hs)?;
    let worst = r
        .rows
        .iter()
        .flat_map(|row| [row.transport_deviation, row.metric_deviation, row.volume_deviation, row.rescale_discrepancy])
        .fold(0.0f64, f64::max);
    c.at_most("flat: largest deviation", worst, 1e-12);
    let cap = MetricField::spherical_cap(2.0, ChartDomain::unit_square(), 0.5)?;
    let r = geometry_diagnostics(&cap, &hs)?;
    let names = ["transport", "metric", "volume", "rescale"];
    for (name, o) in names.iter().zip(r.orders) {
        c.at_least(format!("cap: {name} order"), o.unwrap_or(f64::NAN), 0.9);
    }
    Ok(())
}

/// Random `3 x 2` matrices with Frobenius norm uniform in `[0, max_norm]`.
pub(crate) fn random_tangential(rng: &mut ChaCha8Rng, max_norm: f64) -> DMatrix<f64> {
    let q: DMatrix<f64> = DMatrix::from_fn(3, 2, |_, _| StandardNormal.sample(&mut *rng));
    let scale = rng.random_range(0.0..=max_norm) / q.norm().max(1e-300);
    q * scale
}

fn density_suite(c: &mut Checks, cfg: &ExperimentConfig) -> Result<()> {
    let spec = cfg.density_spec()?;
    let seed = cfg.seed.unwrap_or(7);
    let report = verify_density_conditions(&spec, 10_000, seed)?;
    c.at_most("growth/coercivity/Lipschitz violations", report.violations.len() as f64, 0.0);
    c.at_most("empirical growth constant", report.empirical_growth_c, report.declared_c);
    c.at_most("empirical Lipschitz constant", report.empirical_lipschitz_c, report.declared_c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = random_tangential(&mut rng, 5.0);
        let closed = w0_dist2_so(&q).0;
        let generic = fiber_minimize_generic(&spec, &q, &FiberSettings::default())?.0;
        worst = worst.max((closed - generic).abs());
    }
    c.at_most("closed form vs generic fiber minimum", worst, 1e-8);
    Ok(())
}

fn envelope_suite(c: &mut Checks, cfg: &ExperimentConfig, t: &EnvelopeTable) -> Result<()> {
    let w0 = t.w0_values();
    let vals = t.values();
    let above = vals.iter().zip(w0).map(|(v, w)| v - w).fold(f64::NEG_INFINITY, f64::max);
    c.at_most("envelope - W0 on grid", above, 1e-9);
    if t.depth() >= 2 {
        let (top, prev) = (t.level(t.depth()), t.level(t.depth() - 1));
        let worst = top.iter().zip(prev).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        c.at_most("top level - previous level", worst, 1e-9);
    }
    let n = t.grid_n();
    let (mut asym, mut short) = (0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            let idx = t.node_index(&[i, j]);
            if t.m == 2 {
                asym = asym.max((vals[idx] - vals[t.node_index(&[j, i])]).abs());
            }
            if t.node_coords(idx).iter().all(|&x| x <= 1.0 + 1e-12) {
                short = short.max(vals[idx]);
            }
        }
    }
    c.at_most("swap asymmetry", asym, 0.0);
    c.at_most("short-map region maximum", short, 1e-3);
    let id = FrameMatrix(DMatrix::from_fn(3, 2, |i, j| f64::from(i == j)));
    c.at_most("value at identity", eval_envelope(t, &id)?.value.abs(), 0.0);

    let spec = DensitySpec::dist2_so(2);
    let opts = ProbeOptions { tol: cfg.envelope.tol_probe, ..Default::default() };
    let zero = quasiconvexity_probe(ProbeDensity::W0(&spec), &DMatrix::zeros(3, 2), &opts)?;
    c.at_least("W0 probe margin at 0", if zero.violated { zero.margin } else { 0.0 }, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.envelope.seed);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let a = random_tangential(&mut rng, 0.8 * t.params.lambda_max);
        let out = quasiconvexity_probe(ProbeDensity::Envelope { table: t, spec: &DensitySpec::dist2_so(2) }, &a, &opts)?;
        worst = worst.max(out.margin);
    }
    c.at_most("envelope probe margin", worst, cfg.envelope.tol_probe);
    Ok(())
}

fn perturbed(f: &ConfigurationField, amp: f64, rng: &mut ChaCha8Rng) -> ConfigurationField {
    let mut g = f.clone();
    for (v, fixed) in g.values.iter_mut().zip(&f.fixed) {
        if !fixed {
            let z: f64 = StandardNormal.sample(&mut *rng);
            *v += amp * z;
        }
    }
    g
}

fn gradient_suite(c: &mut Checks, cfg: &ExperimentConfig, t: &EnvelopeTable) -> Result<()> {
    let metric = cfg.metric_field()?;
    let spec = cfg.density_spec()?;
    let bc = cfg.boundary.boundary_data();
    let surface = triangulate_chart(&cfg.domain, cfg.mesh.resolution.min(6))?;
    let h = *cfg.h_list.last().expect("validated non-empty");
    let bulk = extrude_bulk_mesh(&surface, h, cfg.mesh.n_layers)?;
    let fb = apply_boundary_conditions(MeshRef::Bulk(&bulk), &bc, 3)?;
    let fm = apply_boundary_conditions(MeshRef::Surface(&surface), &bc, 3)?;
    let eb = BulkEnergy::new(&metric, &spec, &bulk, &fb, cfg.frame)?;
    let eu = MembraneEnergy::new(&metric, &spec, MembraneDensity::Unrelaxed, &surface, &fm)?;
    let er = MembraneEnergy::new(&metric, &spec, MembraneDensity::Relaxed { table: t, smoothed: true }, &surface, &fm)?;
    let seed = cfg.seed.unwrap_or(11);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut wb, mut wu, mut wr) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..3 {
        let s = seed.wrapping_add(k);
        wb = wb.max(gradient_check(&eb, &perturbed(&fb, 0.1 * h, &mut rng), 5, s)?);
        let x = perturbed(&fm, 0.05, &mut rng);
        wu = wu.max(gradient_check(&eu, &x, 5, s)?);
        wr = wr.max(gradient_check(&er, &x, 5, s)?);
    }
    c.at_most("bulk gradient error", wb, 1e-5);
    c.at_most("membrane gradient error", wu, 1e-5);
    c.at_most("relaxed membrane gradient error", wr, 1e-3);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_a_usage_error() {
        assert!(matches!("mesh".parse::<VerifySuite>(), Err(Error::Usage(_))));
        assert_eq!("density".parse::<VerifySuite>().unwrap(), VerifySuite::Density);
    }

    #[test]
    fn geometry_suite_passes() {
        let r = run_verify(VerifySuite::Geometry, &ExperimentConfig::default(), None).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn density_suite_passes() {
        let r = run_verify(VerifySuite::Density, &ExperimentConfig::default(), None).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
