//! Tensor grids with multilinear and quadratic B-spline evaluation.

/// How node values are extended past the first node of each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LowerEnd {
    /// Even reflection about the first node (singular-value axes start at 0).
    Reflect,
    /// Linear extrapolation.
    Linear,
}

/// Values on `axis^d`, row-major with the first coordinate slowest.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Grid {
    pub d: usize,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub values: Vec<f64>,
    pub lower: LowerEnd,
}

impl Grid {
    pub fn new(d: usize, lo: f64, hi: f64, n: usize, lower: LowerEnd) -> Self {
        Grid { d, lo, hi, n, values: vec![0.0; n.pow(d as u32)], lower }
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    #[inline]
    pub fn coord(&self, k: usize) -> f64 {
        self.lo + self.spacing() * k as f64
    }

    /// Multi-index of flat node `idx`.
    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.d).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
    }

    #[inline]
    pub fn flat(&self, ks: &[usize]) -> usize {
        ks.iter().fold(0, |acc, &k| acc * self.n + k)
    }

    /// Multilinear interpolation; `None` outside the box.
    #[inline]
    pub fn interp(&self, x: &[f64]) -> Option<f64> {
        let h = self.spacing();
        let tol = 1e-12 * (self.hi - self.lo);
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for a in 0..self.d {
            let v = x[a];
            if v < self.lo - tol || v > self.hi + tol {
                return None;
            }
            let u = ((v - self.lo) / h).clamp(0.0, (self.n - 1) as f64);
            let k = (u.floor() as usize).min(self.n - 2);
            base[a] = k;
            frac[a] = u - k as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.d) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..self.d {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx = idx * self.n + base[a] + bit;
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        Some(acc)
    }

    /// Multilinear interpolation with its a.e. gradient; coordinates clamped to the box.
    pub fn interp_grad(&self, x: &[f64], grad: &mut [f64]) -> (f64, bool) {
        let h = self.spacing();
        let mut clamped = false;
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        let mut inside = [true; 8];
        for a in 0..self.d {
            let mut v = x[a];
            if v < self.lo || v > self.hi {
                clamped |= v < self.lo - 1e-12 || v > self.hi + 1e-12;
                v = v.clamp(self.lo, self.hi);
                inside[a] = false;
            }
            let u = (v - self.lo) / h;
            let k = (u.floor() as usize).min(self.n - 2);
            base[a] = k;
            frac[a] = u - k as f64;
        }
        let mut acc = 0.0;
        grad[..self.d].iter_mut().for_each(|g| *g = 0.0);
        for corner in 0..(1usize << self.d) {
            let mut idx = 0;
            for a in 0..self.d {
                idx = idx * self.n + base[a] + ((corner >> a) & 1);
            }
            let val = self.values[idx];
            let mut w = 1.0;
            for a in 0..self.d {
                w *= if (corner >> a) & 1 == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * val;
            for a in 0..self.d {
                if !inside[a] {
                    continue;
                }
                let mut dw = if (corner >> a) & 1 == 1 { 1.0 / h } else { -1.0 / h };
                for b in 0..self.d {
                    if b != a {
                        dw *= if (corner >> b) & 1 == 1 { frac[b] } else { 1.0 - frac[b] };
                    }
                }
                grad[a] += dw * val;
            }
        }
        (acc, clamped)
    }

    /// Node value with the boundary extension: index `-1` by the lower rule, index `n` linearly.
    #[inline]
    fn ext_value(&self, ks: &[isize; 8]) -> f64 {
        // Resolve one axis at a time; at most two axes can be outside in a 3-point stencil per axis.
        let mut k = [0usize; 8];
        for a in 0..self.d {
            let v = ks[a];
            if v < 0 {
                let mut inner = *ks;
                match self.lower {
                    LowerEnd::Reflect => {
                        inner[a] = -v;
                        return self.ext_value(&inner);
                    }
                    LowerEnd::Linear => {
                        inner[a] = 0;
                        let f0 = self.ext_value(&inner);
                        inner[a] = 1;
                        let f1 = self.ext_value(&inner);
                        return 2.0 * f0 - f1;
                    }
                }
            }
            if v >= self.n as isize {
                let mut inner = *ks;
                inner[a] = self.n as isize - 1;
                let f0 = self.ext_value(&inner);
                inner[a] = self.n as isize - 2;
                let f1 = self.ext_value(&inner);
                return 2.0 * f0 - f1;
            }
            k[a] = v as usize;
        }
        self.values[self.flat(&k[..self.d])]
    }

    /// Quadratic B-spline with the node values as coefficients, which equals the
    /// multilinear interpolant averaged over a one-cell box. Returns value,
    /// gradient (into `grad`) and whether any coordinate was clamped.
    pub fn smoothed(&self, x: &[f64], grad: &mut [f64]) -> (f64, bool) {
        let h = self.spacing();
        let mut clamped = false;
        let mut center = [0isize; 8];
        let mut w = [[0.0f64; 3]; 8];
        let mut dw = [[0.0f64; 3]; 8];
        for a in 0..self.d {
            let mut v = x[a];
            let mut frozen = false;
            if v < self.lo || v > self.hi {
                clamped |= v < self.lo - 1e-12 || v > self.hi + 1e-12;
                v = v.clamp(self.lo, self.hi);
                frozen = true;
            }
            let u = (v - self.lo) / h;
            let i = u.round();
            let t = u - i;
            center[a] = i as isize;
            w[a] = [0.5 * (0.5 - t).powi(2), 0.75 - t * t, 0.5 * (0.5 + t).powi(2)];
            dw[a] = if frozen { [0.0; 3] } else { [-(0.5 - t) / h, -2.0 * t / h, (0.5 + t) / h] };
        }
        let mut acc = 0.0;
        grad[..self.d].iter_mut().for_each(|g| *g = 0.0);
        let stencil = 3usize.pow(self.d as u32);
        let mut ks = [0isize; 8];
        let mut off = [0usize; 8];
        for s in 0..stencil {
            let mut r = s;
            for a in (0..self.d).rev() {
                off[a] = r % 3;
                r /= 3;
                ks[a] = center[a] + off[a] as isize - 1;
            }
            let c = self.ext_value(&ks);
            let mut prod = 1.0;
            for a in 0..self.d {
                prod *= w[a][off[a]];
            }
            acc += prod * c;
            for a in 0..self.d {
                let mut g = dw[a][off[a]];
                if g == 0.0 {
                    continue;
                }
                for b in 0..self.d {
                    if b != a {
                        g *= w[b][off[b]];
                    }
                }
                grad[a] += g * c;
            }
        }
        (acc, clamped)
    }
}
