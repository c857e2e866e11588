//! Limited-memory BFGS with backtracking Armijo line search over a masked variable set.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One accepted iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsSettings {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub memory: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Stop after this many consecutive accepted steps with no relative energy change above `1e-15`.
    pub stall_iters: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            max_iters: 2000,
            grad_tol: 1e-7,
            memory: 10,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            stall_iters: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub energy: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<IterateRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mask_in_place(v: &mut [f64], free: Option<&[bool]>) {
    if let Some(mask) = free {
        v.iter_mut().zip(mask).filter(|(_, f)| !**f).for_each(|(x, _)| *x = 0.0);
    }
}

/// Minimizes `f` starting at `x0`; entries with `free[i] == false` are never modified.
///
/// `f` writes the full gradient into its second argument and returns the value.
/// Non-finite trial values are treated as rejected steps.
pub fn lbfgs(
    f: &mut dyn FnMut(&[f64], &mut [f64]) -> Result<f64>,
    x0: &[f64],
    free: Option<&[bool]>,
    s: &LbfgsSettings,
) -> Result<LbfgsOutcome> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut e = f(&x, &mut g)?;
    mask_in_place(&mut g, free);
    let mut gnorm = dot(&g, &g).sqrt();
    let mut log = vec![IterateRecord { iter: 0, energy: e, grad_norm: gnorm, step: 0.0 }];
    if !e.is_finite() {
        return Err(crate::Error::numeric("optimizer", format!("non-finite initial energy {e}")));
    }

    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(s.memory);
    let mut d = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut alpha = vec![0.0; s.memory];
    let mut stall = 0;
    let mut iterations = 0;

    while iterations < s.max_iters && gnorm > s.grad_tol {
        // Two-loop recursion for d = -H g.
        d.copy_from_slice(&g);
        for (k, (sk, yk, rho)) in hist.iter().enumerate().rev() {
            alpha[k] = rho * dot(sk, &d);
            d.iter_mut().zip(yk).for_each(|(di, yi)| *di -= alpha[k] * yi);
        }
        let gamma = match hist.back() {
            Some((sk, yk, _)) => dot(sk, yk) / dot(yk, yk),
            None => 1.0 / gnorm.max(1e-300),
        };
        d.iter_mut().for_each(|v| *v *= gamma);
        for (k, (sk, yk, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(yk, &d);
            d.iter_mut().zip(sk).for_each(|(di, si)| *di += (alpha[k] - beta) * si);
        }
        d.iter_mut().for_each(|v| *v = -*v);
        mask_in_place(&mut d, free);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi / gnorm.max(1e-300));
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..s.max_backtracks {
            xt.iter_mut().zip(x.iter().zip(&d)).for_each(|(t, (xi, di))| *t = xi + step * di);
            let et = f(&xt, &mut gt)?;
            if et.is_finite() && et <= e + s.armijo_c * step * slope {
                accepted = Some(et);
                break;
            }
            step *= s.shrink;
        }
        let Some(et) = accepted else {
            break;
        };
        mask_in_place(&mut gt, free);
        let sk: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sk, &yk);
        if sy > 1e-12 * dot(&sk, &sk).sqrt() * dot(&yk, &yk).sqrt() && sy > 0.0 {
            if hist.len() == s.memory {
                hist.pop_front();
            }
            hist.push_back((sk, yk, 1.0 / sy));
        }
        let rel_change = (e - et).abs() / e.abs().max(1e-300);
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        e = et;
        gnorm = dot(&g, &g).sqrt();
        iterations += 1;
        log.push(IterateRecord { iter: iterations, energy: e, grad_norm: gnorm, step });
        stall = if rel_change <= 1e-15 { stall + 1 } else { 0 };
        if stall >= s.stall_iters {
            break;
        }
    }
    Ok(LbfgsOutcome { x, energy: e, grad_norm: gnorm, iterations, converged: gnorm <= s.grad_tol, log })
}
