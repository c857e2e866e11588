//! Parallel transport along normal fibers and the split frame.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{embed_block, MetricField};
use crate::error::{Error, Result};
use crate::linalg::sym_inv_sqrt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// Parallel transport of the surface frame along the normal geodesic.
    Transported,
    /// Coordinate-constant lift of the surface frame plus `∂z`.
    Split,
}

/// A frame `E_1..E_m, ν` at `(x, z)`; columns hold chart components.
#[derive(Clone, Debug)]
pub struct AdaptedFrame {
    pub x: Vec<f64>,
    pub z: f64,
    pub columns: DMatrix<f64>,
    pub kind: FrameKind,
}

impl AdaptedFrame {
    /// Tangential columns `E_1..E_m`.
    pub fn tangential(&self) -> DMatrix<f64> {
        let m = self.columns.ncols() - 1;
        self.columns.columns(0, m).into_owned()
    }

    /// Normal column `ν`.
    pub fn normal(&self) -> Vec<f64> {
        let m = self.columns.ncols() - 1;
        self.columns.column(m).iter().copied().collect()
    }

    /// Gram matrix `F^T G F` with respect to the metric `g`.
    pub fn gram(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        self.columns.transpose() * g * &self.columns
    }
}

/// Controls for the fixed-step RK4 transport integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportParams {
    /// Initial number of steps per unit of `|z|`.
    pub steps_per_unit: usize,
    /// Accept once two successive step counts agree to this max-entry difference.
    pub tol: f64,
    /// Upper bound on the number of steps.
    pub max_substeps: usize,
}

impl Default for TransportParams {
    fn default() -> Self {
        TransportParams { steps_per_unit: 32, tol: 1e-12, max_substeps: 1 << 16 }
    }
}

impl MetricField {
    /// g-orthonormal frame on the surface: `block-diag(g_tan(x,0)^{-1/2}, 1)`.
    pub fn surface_frame(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g0 = self.g_tan(x, 0.0)?;
        Ok(embed_block(&sym_inv_sqrt(&g0)?, 1.0))
    }

    /// Parallel transport of the surface frame at `x` to `(x, z)` with default integrator settings.
    pub fn transport_normal(&self, x: &[f64], z: f64) -> Result<AdaptedFrame> {
        self.transport_normal_with(x, z, &TransportParams::default())
    }

    pub fn transport_normal_with(&self, x: &[f64], z: f64, params: &TransportParams) -> Result<AdaptedFrame> {
        self.check_point(x, z)?;
        let p0 = self.surface_frame(x)?;
        let columns = if z == 0.0 || self.is_z_independent() {
            p0
        } else {
            self.integrate_transport(x, z, p0, params)?
        };
        Ok(AdaptedFrame { x: x.to_vec(), z, columns, kind: FrameKind::Transported })
    }

    /// Solves `dP/dt = -K(t) P` on `[0, z]`, doubling the step count until two runs agree.
    fn integrate_transport(&self, x: &[f64], z: f64, p0: DMatrix<f64>, params: &TransportParams) -> Result<DMatrix<f64>> {
        let mut steps = ((params.steps_per_unit as f64 * z.abs()).ceil() as usize).max(2);
        let mut prev = self.rk4(x, z, &p0, steps)?;
        loop {
            steps *= 2;
            if steps > params.max_substeps {
                return Err(Error::numeric(
                    "parallel transport",
                    format!("no agreement to {:e} within {} substeps at x = {x:?}, z = {z}", params.tol, params.max_substeps),
                ));
            }
            let next = self.rk4(x, z, &p0, steps)?;
            let diff = (&next - &prev).abs().max();
            if !diff.is_finite() {
                return Err(Error::numeric("parallel transport", format!("non-finite frame at x = {x:?}, z = {z}")));
            }
            if diff <= params.tol {
                return Ok(next);
            }
            prev = next;
        }
    }

    fn rk4(&self, x: &[f64], z: f64, p0: &DMatrix<f64>, steps: usize) -> Result<DMatrix<f64>> {
        let dt = z / steps as f64;
        let mut p = p0.clone();
        let mut k_prev = self.normal_connection(x, 0.0)?;
        for i in 0..steps {
            let t = i as f64 * dt;
            let k_mid = self.normal_connection(x, t + 0.5 * dt)?;
            let k_end = self.normal_connection(x, t + dt)?;
            let f1 = -(&k_prev * &p);
            let f2 = -(&k_mid * (&p + &f1 * (0.5 * dt)));
            let f3 = -(&k_mid * (&p + &f2 * (0.5 * dt)));
            let f4 = -(&k_end * (&p + &f3 * dt));
            p += (f1 + f2 * 2.0 + f3 * 2.0 + f4) * (dt / 6.0);
            k_prev = k_end;
        }
        Ok(p)
    }

    /// The `σ ⊕ ι` frame at `(x, z)`: the surface frame's chart components, unchanged.
    pub fn split_frame(&self, x: &[f64], z: f64) -> Result<AdaptedFrame> {
        self.check_point(x, z)?;
        Ok(AdaptedFrame { x: x.to_vec(), z, columns: self.surface_frame(x)?, kind: FrameKind::Split })
    }
}
