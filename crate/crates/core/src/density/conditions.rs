//! Sampled checks of the growth, coercivity and Lipschitz conditions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DensitySpec;
use crate::error::{Error, Result};

/// Worst sample of a violated inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionViolation {
    pub condition: String,
    /// Column-major entries of the witness matrix.
    pub witness: Vec<f64>,
    /// Second matrix for two-point conditions.
    pub partner: Option<Vec<f64>>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityConditionReport {
    pub density: String,
    pub samples: usize,
    pub seed: u64,
    pub p: f64,
    pub declared_alpha: f64,
    pub declared_beta: f64,
    pub declared_c: f64,
    /// Smallest `C` with `|W| ≤ C (1 + |q|^p)` on the samples.
    pub empirical_growth_c: f64,
    /// Smallest `β` with `W ≥ α |q|^p − β` for the declared `α`.
    pub empirical_beta: f64,
    /// Smallest `C` in the Lipschitz inequality over sampled pairs.
    pub empirical_lipschitz_c: f64,
    pub w0_growth_c: f64,
    pub w0_beta: f64,
    /// Largest `W₀(tangential block) − W(Q)`; nonpositive when the fiber minimum is below `W`.
    pub max_w0_excess: f64,
    pub violations: Vec<ConditionViolation>,
    pub passed: bool,
}

impl DensityConditionReport {
    /// Turns a failed report into [`Error::Verification`].
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            let names: Vec<&str> = self.violations.iter().map(|v| v.condition.as_str()).collect();
            Err(Error::Verification(format!("density conditions violated: {}", names.join(", "))))
        }
    }
}

struct SampleEval {
    growth: f64,
    beta: f64,
    lip: f64,
    w0_growth: f64,
    w0_beta: f64,
    w0_excess: f64,
    w: f64,
    w_pair: f64,
    w0: f64,
}

/// Samples frame matrices with norms in `[0, 10]` (plus a few fixed matrices
/// such as `0` and `-I`) and measures the conditions against the declared
/// constants of `spec`.
pub fn verify_density_conditions(spec: &DensitySpec, sample_count: usize, seed: u64) -> Result<DensityConditionReport> {
    if sample_count < 100 {
        return Err(Error::Usage(format!("need at least 100 samples, got {sample_count}")));
    }
    spec.validate()?;
    let n = spec.n;
    let m = spec.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(DMatrix<f64>, DMatrix<f64>)> = Vec::with_capacity(sample_count);

    let eye = DMatrix::<f64>::identity(n, n);
    let mut refl = eye.clone();
    refl[(n - 1, n - 1)] = -1.0;
    let fixed = [DMatrix::zeros(n, n), eye.clone(), -eye.clone(), refl, eye * 2.0];
    for q in fixed.iter() {
        pairs.push((q.clone(), q + DMatrix::from_element(n, n, 1e-3)));
    }
    while pairs.len() < sample_count {
        let a = random_with_norm(n, rng.random_range(0.0..10.0), &mut rng);
        let b = if rng.random_bool(0.5) {
            random_with_norm(n, rng.random_range(0.0..10.0), &mut rng)
        } else {
            let scale = 10f64.powf(rng.random_range(-4.0..0.0));
            &a + random_with_norm(n, scale, &mut rng)
        };
        pairs.push((a, b));
    }

    let p = spec.p;
    let g = spec.growth;
    let evals: Vec<SampleEval> = pairs
        .par_iter()
        .map(|(a, b)| {
            let wa = spec.eval(a)?;
            let wb = spec.eval(b)?;
            let na = a.norm();
            let nb = b.norm();
            let dist = (a - b).norm();
            let lip = if dist > 0.0 {
                (wa - wb).abs() / ((1.0 + na.powf(p - 1.0) + nb.powf(p - 1.0)) * dist)
            } else {
                0.0
            };
            let q2 = a.columns(0, m).into_owned();
            let w0 = spec.w0_value(&q2)?;
            let n2 = q2.norm();
            Ok(SampleEval {
                growth: wa.abs() / (1.0 + na.powf(p)),
                beta: g.alpha * na.powf(p) - wa,
                lip,
                w0_growth: w0.abs() / (1.0 + n2.powf(p)),
                w0_beta: g.alpha * n2.powf(p) - w0,
                w0_excess: w0 - wa,
                w: wa,
                w_pair: wb,
                w0,
            })
        })
        .collect::<Result<_>>()?;

    let argmax = |f: &dyn Fn(&SampleEval) -> f64| -> (usize, f64) {
        evals.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, e)| if f(e) > acc.1 { (i, f(e)) } else { acc })
    };
    let (ig, growth) = argmax(&|e| e.growth);
    let (ib, beta) = argmax(&|e| e.beta);
    let (il, lip) = argmax(&|e| e.lip);
    let (_, w0_growth) = argmax(&|e| e.w0_growth);
    let (_, w0_beta) = argmax(&|e| e.w0_beta);
    let (ie, excess) = argmax(&|e| e.w0_excess);

    let slack = 1e-12;
    let mut violations = Vec::new();
    let flat = |q: &DMatrix<f64>| q.iter().copied().collect::<Vec<f64>>();
    if growth > g.c * (1.0 + slack) {
        let (a, _) = &pairs[ig];
        violations.push(ConditionViolation {
            condition: "growth".into(),
            witness: flat(a),
            partner: None,
            lhs: evals[ig].w.abs(),
            rhs: g.c * (1.0 + a.norm().powf(p)),
        });
    }
    if beta > g.beta + slack {
        let (a, _) = &pairs[ib];
        violations.push(ConditionViolation {
            condition: "coercivity".into(),
            witness: flat(a),
            partner: None,
            lhs: evals[ib].w,
            rhs: g.alpha * a.norm().powf(p) - g.beta,
        });
    }
    if lip > g.c * (1.0 + slack) {
        let (a, b) = &pairs[il];
        violations.push(ConditionViolation {
            condition: "lipschitz".into(),
            witness: flat(a),
            partner: Some(flat(b)),
            lhs: (evals[il].w - evals[il].w_pair).abs(),
            rhs: g.c * (1.0 + a.norm().powf(p - 1.0) + b.norm().powf(p - 1.0)) * (a - b).norm(),
        });
    }
    if excess > slack {
        let (a, _) = &pairs[ie];
        violations.push(ConditionViolation {
            condition: "fiber_minimum_above_density".into(),
            witness: flat(a),
            partner: None,
            lhs: evals[ie].w,
            rhs: evals[ie].w0,
        });
    }
    if !(w0_growth.is_finite() && w0_beta.is_finite()) {
        violations.push(ConditionViolation {
            condition: "w0_growth".into(),
            witness: Vec::new(),
            partner: None,
            lhs: w0_growth,
            rhs: f64::INFINITY,
        });
    }

    Ok(DensityConditionReport {
        density: spec.id(),
        samples: pairs.len(),
        seed,
        p,
        declared_alpha: g.alpha,
        declared_beta: g.beta,
        declared_c: g.c,
        empirical_growth_c: growth,
        empirical_beta: beta.max(0.0),
        empirical_lipschitz_c: lip,
        w0_growth_c: w0_growth,
        w0_beta: w0_beta.max(0.0),
        max_w0_excess: excess,
        passed: violations.is_empty(),
        violations,
    })
}

fn random_with_norm(n: usize, norm: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let d = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let len = d.norm();
    if len == 0.0 {
        return DMatrix::zeros(n, n);
    }
    d * (norm / len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Growth;

    #[test]
    fn default_constants_pass() {
        let spec = DensitySpec::dist2_so(2);
        let r = verify_density_conditions(&spec, 2000, 1).unwrap();
        assert!(r.passed, "{:?}", r.violations);
        assert!(r.empirical_growth_c <= 3.0 + 1e-12);
        assert!(r.max_w0_excess <= 1e-12);
        assert!(r.w0_growth_c.is_finite());
    }

    #[test]
    fn too_large_alpha_fails_with_witness() {
        let spec = DensitySpec::dist2_so(2).with_growth(2.0, Growth { alpha: 1.5, beta: 3.0, c: 3.5 }).unwrap();
        let r = verify_density_conditions(&spec, 500, 2).unwrap();
        assert!(!r.passed);
        let v = r.violations.iter().find(|v| v.condition == "coercivity").unwrap();
        assert!(v.lhs < v.rhs);
        assert!(r.clone().into_result().is_err());
    }

    #[test]
    fn growth_constant_two_is_too_small_near_zero() {
        // dist²(0, SO(3)) = 3 > 2 (1 + 0).
        let spec = DensitySpec::dist2_so(2).with_growth(2.0, Growth { alpha: 0.5, beta: 3.0, c: 2.0 }).unwrap();
        let r = verify_density_conditions(&spec, 100, 3).unwrap();
        let v = r.violations.iter().find(|v| v.condition == "growth").unwrap();
        assert!(v.witness.iter().all(|x| *x == 0.0));
        assert!((v.lhs - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sample_count_floor() {
        assert!(matches!(verify_density_conditions(&DensitySpec::dist2_so(2), 50, 0), Err(Error::Usage(_))));
    }
}
