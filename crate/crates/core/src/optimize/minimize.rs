use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lbfgs::{lbfgs, IterateRecord, LbfgsSettings};
use crate::discretization::ConfigurationField;
use crate::error::{Error, Result};

/// A re-entrant energy over a flat vector of nodal values.
pub trait EnergyFunction: Sync {
    /// Value; when `grad` is given it receives the full gradient with fixed entries zeroed.
    fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64>;

    /// Number of quadrature points clamped by a table lookup at `x`.
    fn clamp_count(&self, _x: &[f64]) -> usize {
        0
    }

    /// Mesh id the energy was assembled on, if any.
    fn host_id(&self) -> Option<u64> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub memory: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    /// Extra perturbed starts after the unperturbed one.
    pub restarts: usize,
    pub seed: u64,
    /// Perturbation amplitude relative to the diameter of the boundary data.
    pub perturbation: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            max_iters: 2000,
            grad_tol: 1e-7,
            memory: 10,
            armijo_c: 1e-4,
            shrink: 0.5,
            restarts: 3,
            seed: 0x5eed,
            perturbation: 0.05,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("optimizer.{f}"), m));
        if self.max_iters == 0 {
            return bad("max_iters", "must be positive");
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return bad("grad_tol", "must be positive and finite");
        }
        if self.memory == 0 {
            return bad("memory", "must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c", "must lie in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink", "must lie in (0, 1)");
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return bad("perturbation", "must be non-negative and finite");
        }
        Ok(())
    }

    fn lbfgs_settings(&self) -> LbfgsSettings {
        LbfgsSettings {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            memory: self.memory,
            armijo_c: self.armijo_c,
            shrink: self.shrink,
            ..LbfgsSettings::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub energy: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub best_restart: usize,
    pub wall_time_s: f64,
    pub clamp_warnings: usize,
    pub converged: bool,
    /// Iterate log of the best run.
    #[serde(skip)]
    pub log: Vec<IterateRecord>,
}

impl MinimizeResult {
    /// `iter,energy,grad_norm,step` rows of the best run.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iter,energy,grad_norm,step\n");
        for r in &self.log {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", r.iter, r.energy, r.grad_norm, r.step));
        }
        s
    }
}

/// Bounding-box diagonal of the fixed values, per component.
fn boundary_diameter(f: &ConfigurationField) -> f64 {
    let mut lo = vec![f64::INFINITY; f.n];
    let mut hi = vec![f64::NEG_INFINITY; f.n];
    for i in 0..f.node_count() {
        for c in 0..f.n {
            if f.fixed[i * f.n + c] {
                let v = f.values[i * f.n + c];
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
    }
    let d2: f64 = lo.iter().zip(&hi).filter(|(l, _)| l.is_finite()).map(|(l, h)| (h - l) * (h - l)).sum();
    d2.sqrt()
}

/// Multi-start L-BFGS over the free entries of `f0`; run 0 starts unperturbed.
pub fn minimize_energy(energy: &dyn EnergyFunction, f0: &ConfigurationField, p: &OptimizerParams) -> Result<(ConfigurationField, MinimizeResult)> {
    p.validate()?;
    if let Some(id) = energy.host_id() {
        if id != f0.mesh_id {
            return Err(Error::Usage("configuration field lives on a different mesh than the energy".into()));
        }
    }
    let start = Instant::now();
    let free = f0.free_mask();
    let amp = p.perturbation * boundary_diameter(f0);
    let settings = p.lbfgs_settings();
    let runs: Vec<Result<_>> = (0..=p.restarts)
        .into_par_iter()
        .map(|r| {
            let mut x0 = f0.values.clone();
            if r > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(r as u64));
                for (v, fr) in x0.iter_mut().zip(&free) {
                    if *fr {
                        *v += amp * rng.random_range(-1.0..=1.0);
                    }
                }
            }
            let mut f = |x: &[f64], g: &mut [f64]| energy.evaluate(x, Some(g));
            lbfgs(&mut f, &x0, Some(&free), &settings)
        })
        .collect();
    let mut best: Option<(usize, super::LbfgsOutcome)> = None;
    let mut first_err = None;
    for (r, out) in runs.into_iter().enumerate() {
        match out {
            Ok(o) => {
                if best.as_ref().is_none_or(|(_, b)| o.energy < b.energy) {
                    best = Some((r, o));
                }
            }
            Err(e) => {
                log::warn!("restart {r} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((best_restart, out)) = best else {
        return Err(first_err.unwrap_or_else(|| Error::numeric("optimizer", "no run completed")));
    };
    let clamp_warnings = energy.clamp_count(&out.x);
    let mut field = f0.clone();
    // Fixed entries are copied back bit for bit.
    for ((v, x), fr) in field.values.iter_mut().zip(&out.x).zip(&free) {
        if *fr {
            *v = *x;
        }
    }
    let result = MinimizeResult {
        energy: out.energy,
        grad_norm: out.grad_norm,
        iterations: out.iterations,
        best_restart,
        wall_time_s: start.elapsed().as_secs_f64(),
        clamp_warnings,
        converged: out.converged,
        log: out.log,
    };
    Ok((field, result))
}

/// Max over `n_dirs` random unit free-subspace directions of
/// `|∇E·d − (E(x+εd) − E(x−εd))/2ε| / max(1, |∇E|)`.
pub fn gradient_check(energy: &dyn EnergyFunction, f: &ConfigurationField, n_dirs: usize, seed: u64) -> Result<f64> {
    if n_dirs < 5 {
        return Err(Error::Usage("gradient_check needs at least 5 directions".into()));
    }
    let free = f.free_mask();
    let x = &f.values;
    let mut g = vec![0.0; x.len()];
    energy.evaluate(x, Some(&mut g))?;
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let eps = 1e-6 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_dirs {
        let mut d: Vec<f64> = free
            .iter()
            .map(|&fr| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if fr {
                    z
                } else {
                    0.0
                }
            })
            .collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        d.iter_mut().for_each(|v| *v /= norm);
        let shifted = |s: f64| -> Vec<f64> { x.iter().zip(&d).map(|(a, b)| a + s * b).collect() };
        let fd = (energy.evaluate(&shifted(eps), None)? - energy.evaluate(&shifted(-eps), None)?) / (2.0 * eps);
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max((an - fd).abs() / gnorm.max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        target: Vec<f64>,
    }

    impl EnergyFunction for Quadratic {
        fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
            if let Some(g) = grad {
                for i in 0..x.len() {
                    g[i] = 2.0 * (x[i] - self.target[i]);
                }
            }
            Ok(x.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum())
        }
    }

    fn field(n: usize) -> ConfigurationField {
        let mut f = ConfigurationField::zeros(7, n, 3);
        f.fixed[0] = true;
        f.fixed[1] = true;
        f.values[1] = 0.25;
        f
    }

    #[test]
    fn quadratic_reaches_target() {
        let mut target: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        target[0] = 0.0;
        target[1] = 0.25;
        let q = Quadratic { target: target.clone() };
        let (f, r) = minimize_energy(&q, &field(10), &OptimizerParams::default()).unwrap();
        assert!(r.energy < 1e-12 && r.iterations < 50 && r.converged);
        assert_eq!(f.values[1].to_bits(), 0.25f64.to_bits());
        for w in r.log.windows(2) {
            assert!(w[1].energy <= w[0].energy);
        }
        assert!(r.log_csv().starts_with("iter,energy,grad_norm,step\n"));
    }

    #[test]
    fn gradient_check_flags_wrong_gradients() {
        let q = Quadratic { target: vec![0.3; 30] };
        assert!(gradient_check(&q, &field(10), 5, 1).unwrap() < 1e-8);
        struct Wrong;
        impl EnergyFunction for Wrong {
            fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
                if let Some(g) = grad {
                    g.iter_mut().for_each(|v| *v = 1.0);
                }
                Ok(x.iter().map(|v| v * v).sum())
            }
        }
        assert!(gradient_check(&Wrong, &field(10), 5, 1).unwrap() > 0.01);
        assert!(gradient_check(&q, &field(10), 4, 1).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        let p = OptimizerParams { shrink: 1.5, ..Default::default() };
        assert!(matches!(p.validate(), Err(Error::Config { .. })));
    }
}
