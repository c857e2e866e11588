//! Rank-one lamination on tabulated levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::Grid;
use super::{LaminationParams, TableMode};
use crate::density::{DensityKind, DensitySpec};
use crate::linalg::{radical_inverse, sphere_coords, sv2_from_gram, unit_vector_from_uniform, PRIMES};

/// Column-major `n x m` matrix with `n <= 3`, `m <= 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Small {
    pub n: usize,
    pub m: usize,
    pub a: [f64; 6],
}

impl Small {
    pub fn zeros(n: usize, m: usize) -> Self {
        Small { n, m, a: [0.0; 6] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[j * self.n + i] = v;
    }

    /// `self + c * (u ⊗ v)`.
    #[inline]
    pub fn add_rank_one(&self, c: f64, u: &[f64; 3], v: &[f64; 2]) -> Small {
        let mut out = *self;
        for j in 0..self.m {
            for i in 0..self.n {
                out.a[j * self.n + i] += c * u[i] * v[j];
            }
        }
        out
    }

    /// Singular values, descending (one or two of them).
    #[inline]
    pub fn singular_values(&self) -> [f64; 2] {
        let n = self.n;
        let c0 = &self.a[0..n];
        let n00: f64 = c0.iter().map(|x| x * x).sum();
        if self.m == 1 {
            return [n00.sqrt(), 0.0];
        }
        let c1 = &self.a[n..2 * n];
        let n01: f64 = c0.iter().zip(c1).map(|(x, y)| x * y).sum();
        let n11: f64 = c1.iter().map(|x| x * x).sum();
        let (s1, s2) = sv2_from_gram(n00, n01, n11);
        [s1, s2]
    }

    pub fn from_dmatrix(q: &nalgebra::DMatrix<f64>) -> Small {
        let mut s = Small::zeros(q.nrows(), q.ncols());
        for j in 0..q.ncols() {
            for i in 0..q.nrows() {
                s.set(i, j, q[(i, j)]);
            }
        }
        s
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.m, |i, j| self.get(i, j))
    }
}

/// Rank-one directions `a ⊗ b`: a Halton point set on the product of spheres
/// with a seeded Cranley-Patterson rotation.
pub(crate) fn halton_directions(n: usize, m: usize, count: usize, seed: u64) -> Vec<([f64; 3], [f64; 2])> {
    let da = sphere_coords(n);
    let db = sphere_coords(m);
    let dims = da + db;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            let u: Vec<f64> = (0..dims).map(|k| (radical_inverse(i, PRIMES[k]) + shift[k]).fract()).collect();
            let av = unit_vector_from_uniform(n, &u[..da]);
            let bv = unit_vector_from_uniform(m, &u[da..]);
            let mut a = [0.0; 3];
            let mut b = [0.0; 2];
            a[..n].copy_from_slice(&av);
            b[..m].copy_from_slice(&bv);
            (a, b)
        })
        .collect()
}

/// Left and right singular frames `(u_1..u_n, v_1..v_m)` of `q`.
fn singular_frames(q: &Small) -> (Vec<[f64; 3]>, Vec<[f64; 2]>) {
    let (n, m) = (q.n, q.m);
    let dm = q.to_dmatrix();
    let mut padded = nalgebra::DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (n, m)).copy_from(&dm);
    let svd = padded.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let us = order
        .iter()
        .map(|&k| {
            let mut c = [0.0; 3];
            for i in 0..n {
                c[i] = u[(i, k)];
            }
            c
        })
        .collect();
    // Right vectors live in R^n for the padded matrix; restrict to the first m coordinates.
    let mut vs = Vec::new();
    for &k in &order {
        let mut c = [0.0; 2];
        let mut norm = 0.0;
        for j in 0..m {
            c[j] = vt[(k, j)];
            norm += c[j] * c[j];
        }
        if norm > 1e-12 {
            let norm = norm.sqrt();
            c.iter_mut().for_each(|x| *x /= norm);
            if !vs.iter().any(|w: &[f64; 2]| (w[0] * c[0] + w[1] * c[1]).abs() > 1.0 - 1e-9) {
                vs.push(c);
            }
        }
        if vs.len() == m {
            break;
        }
    }
    while vs.len() < m {
        let mut c = [0.0; 2];
        c[vs.len()] = 1.0;
        vs.push(c);
    }
    (us, vs)
}

/// Shared state of one lamination pass.
pub(crate) struct Laminator {
    pub mode: TableMode,
    pub n: usize,
    pub m: usize,
    pub closed_form: bool,
    pub dirs: Vec<([f64; 3], [f64; 2])>,
    pub ts: Vec<f64>,
    pub ss: Vec<f64>,
    pub polish: usize,
}

impl Laminator {
    pub fn new(spec: &DensitySpec, mode: TableMode, p: &LaminationParams) -> Self {
        let (n, m) = (spec.n, spec.m);
        let ts = (1..=p.n_t).map(|k| k as f64 / (p.n_t + 1) as f64).collect();
        let (s_lo, s_hi) = (0.05, 2.0 * p.lambda_max);
        let ss = if p.n_amplitudes == 1 {
            vec![s_lo]
        } else {
            (0..p.n_amplitudes)
                .map(|k| s_lo * (s_hi / s_lo).powf(k as f64 / (p.n_amplitudes - 1) as f64))
                .collect()
        };
        Laminator {
            mode,
            n,
            m,
            closed_form: matches!(spec.kind, DensityKind::Dist2So),
            dirs: halton_directions(n, m, p.n_directions, p.seed),
            ts,
            ss,
            polish: p.polish_candidates,
        }
    }

    #[inline]
    pub fn w0_closed(sv: &[f64; 2], m: usize) -> f64 {
        sv[..m].iter().map(|l| (l - 1.0).powi(2)).sum()
    }

    /// Table coordinates of a matrix: singular values or entries.
    #[inline]
    pub fn coords(&self, q: &Small, out: &mut [f64; 6]) -> usize {
        match self.mode {
            TableMode::SingularValue => {
                let s = q.singular_values();
                out[0] = s[0];
                out[1] = s[1];
                self.m
            }
            TableMode::MatrixGrid => {
                let d = self.n * self.m;
                out[..d].copy_from_slice(&q.a[..d]);
                d
            }
        }
    }

    /// Previous level at `q`: exact `W₀` on level 0 when a closed form exists,
    /// else the table, falling back to the closed form outside the box.
    #[inline]
    pub fn prev(&self, prev: &Grid, level0: bool, q: &Small) -> Option<f64> {
        if self.closed_form && (level0 || self.mode == TableMode::SingularValue) {
            let sv = q.singular_values();
            if level0 {
                return Some(Self::w0_closed(&sv, self.m));
            }
            let c = [sv[0], sv[1]];
            return prev.interp(&c[..self.m]).or_else(|| Some(Self::w0_closed(&sv, self.m)));
        }
        let mut c = [0.0; 6];
        let d = self.coords(q, &mut c);
        prev.interp(&c[..d])
    }

    #[inline]
    fn candidate(&self, prev: &Grid, level0: bool, a: &Small, u: &[f64; 3], v: &[f64; 2], t: f64, s: f64) -> Option<f64> {
        let p1 = a.add_rank_one((1.0 - t) * s, u, v);
        let p2 = a.add_rank_one(-t * s, u, v);
        Some(t * self.prev(prev, level0, &p1)? + (1.0 - t) * self.prev(prev, level0, &p2)?)
    }

    /// One lamination step at `a` against `prev`; never exceeds `current`.
    pub fn laminate(&self, prev: &Grid, level0: bool, a: &Small, current: f64) -> f64 {
        let mut dirs = self.dirs.clone();
        let (us, vs) = match self.mode {
            TableMode::SingularValue => singular_frames(a),
            TableMode::MatrixGrid => (
                (0..self.n).map(|i| { let mut c = [0.0; 3]; c[i] = 1.0; c }).collect(),
                (0..self.m).map(|j| { let mut c = [0.0; 2]; c[j] = 1.0; c }).collect(),
            ),
        };
        for u in &us {
            for v in &vs {
                dirs.push((*u, *v));
            }
        }

        // Keep the `polish` best (value, dir, t, s) candidates.
        let mut top: Vec<(f64, usize, f64, f64)> = Vec::with_capacity(self.polish + 1);
        let mut best = current;
        for (di, (u, v)) in dirs.iter().enumerate() {
            for &s in &self.ss {
                for &t in &self.ts {
                    let Some(val) = self.candidate(prev, level0, a, u, v, t, s) else { continue };
                    if val < best {
                        best = val;
                    }
                    if self.polish > 0 && (top.len() < self.polish || val < top[top.len() - 1].0) {
                        let pos = top.partition_point(|c| c.0 <= val);
                        top.insert(pos, (val, di, t, s));
                        top.truncate(self.polish);
                    }
                }
            }
        }
        for &(_, di, t, s) in &top {
            let (u, v) = dirs[di];
            let polished = self.polish_candidate(prev, level0, a, u, v, t, s);
            if polished < best {
                best = polished;
            }
        }
        best.min(current)
    }

    /// Nelder-Mead over `(a, b, logit t, ln s)` starting from a sampled candidate.
    fn polish_candidate(&self, prev: &Grid, level0: bool, a: &Small, u: [f64; 3], v: [f64; 2], t: f64, s: f64) -> f64 {
        let (n, m) = (self.n, self.m);
        let dim = n + m + 2;
        let unpack = |x: &[f64]| -> Option<([f64; 3], [f64; 2], f64, f64)> {
            let mut uu = [0.0; 3];
            let mut vv = [0.0; 2];
            uu[..n].copy_from_slice(&x[..n]);
            vv[..m].copy_from_slice(&x[n..n + m]);
            let nu = uu.iter().map(|z| z * z).sum::<f64>().sqrt();
            let nv = vv.iter().map(|z| z * z).sum::<f64>().sqrt();
            if nu < 1e-12 || nv < 1e-12 {
                return None;
            }
            uu.iter_mut().for_each(|z| *z /= nu);
            vv.iter_mut().for_each(|z| *z /= nv);
            let tt = 1.0 / (1.0 + (-x[n + m]).exp());
            let ss = x[n + m + 1].exp();
            Some((uu, vv, tt, ss))
        };
        let f = |x: &[f64]| -> f64 {
            match unpack(x) {
                Some((uu, vv, tt, ss)) if tt > 0.0 && tt < 1.0 => {
                    self.candidate(prev, level0, a, &uu, &vv, tt, ss).unwrap_or(f64::INFINITY)
                }
                _ => f64::INFINITY,
            }
        };
        let mut x0 = vec![0.0; dim];
        x0[..n].copy_from_slice(&u[..n]);
        x0[n..n + m].copy_from_slice(&v[..m]);
        x0[n + m] = (t / (1.0 - t)).ln();
        x0[n + m + 1] = s.ln();
        nelder_mead(&f, &x0, 0.1, 60 * dim, 1e-13)
    }
}

/// Minimal Nelder-Mead; returns the best value found.
pub(crate) fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize, ftol: f64) -> f64 {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = d + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let (fb, fw) = (simplex[0].1, simplex[d].1);
        if fw.is_finite() && (fw - fb).abs() <= ftol * (1.0 + fb.abs()) {
            break;
        }
        let mut c = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            c.iter_mut().zip(x).for_each(|(ci, xi)| *ci += xi / d as f64);
        }
        let along = |coef: f64| -> Vec<f64> { c.iter().zip(&simplex[d].0).map(|(ci, wi)| ci + coef * (wi - ci)).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let xc = if fr < fw { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            evals += 1;
            if fc < fw.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, fx) in simplex.iter_mut().skip(1) {
                    x.iter_mut().zip(&best).for_each(|(xi, bi)| *xi = bi + 0.5 * (*xi - bi));
                    *fx = f(x);
                }
                evals += d;
            }
        }
    }
    simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min)
}
