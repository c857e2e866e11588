use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chart domain `U ⊂ R^m` of the mid-surface.
///
/// Two-dimensional domains are parametrized over the unit square by the
/// bilinear map through their corners, which is what the meshing and the
/// quadrature use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ChartDomain {
    /// `[a, b]` for a curve (`m = 1`).
    Interval { a: f64, b: f64 },
    /// Axis-aligned rectangle.
    Rectangle { min: [f64; 2], max: [f64; 2] },
    /// Convex quadrilateral, corners in counter-clockwise order.
    Quadrilateral { corners: [[f64; 2]; 4] },
}

impl ChartDomain {
    pub fn unit_square() -> Self {
        ChartDomain::Rectangle { min: [0.0, 0.0], max: [1.0, 1.0] }
    }

    pub fn dim(&self) -> usize {
        match self {
            ChartDomain::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Rejects empty or degenerate domains and clockwise / non-convex quadrilaterals.
    pub fn validate(&self) -> Result<()> {
        match self {
            ChartDomain::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return Err(Error::Domain(format!("degenerate interval [{a}, {b}]")));
                }
            }
            ChartDomain::Rectangle { min, max } => {
                if !(min.iter().chain(max).all(|v| v.is_finite()) && max[0] > min[0] && max[1] > min[1]) {
                    return Err(Error::Domain(format!("degenerate rectangle {min:?}..{max:?}")));
                }
            }
            ChartDomain::Quadrilateral { corners } => {
                if corners.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("non-finite polygon corner".into()));
                }
                let scale = self.diameter().max(f64::MIN_POSITIVE);
                for i in 0..4 {
                    let (p, q, r) = (corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]);
                    let cross = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0]);
                    if !(cross > 1e-12 * scale * scale) {
                        return Err(Error::Domain(format!(
                            "polygon must be convex, non-degenerate and counter-clockwise (corner {})",
                            (i + 1) % 4
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        match self {
            ChartDomain::Rectangle { min, max } => [[min[0], min[1]], [max[0], min[1]], [max[0], max[1]], [min[0], max[1]]],
            ChartDomain::Quadrilateral { corners } => *corners,
            ChartDomain::Interval { .. } => unreachable!("interval has no corners"),
        }
    }

    /// Largest distance between two corners (or the interval length).
    pub fn diameter(&self) -> f64 {
        match self {
            ChartDomain::Interval { a, b } => b - a,
            _ => {
                let c = self.corners();
                let mut d: f64 = 0.0;
                for i in 0..4 {
                    for j in i + 1..4 {
                        d = d.max(((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt());
                    }
                }
                d
            }
        }
    }

    /// Maps reference coordinates `u ∈ [0,1]^m` to the chart; returns the point and the Jacobian determinant.
    pub fn map_unit(&self, u: &[f64]) -> (Vec<f64>, f64) {
        match self {
            ChartDomain::Interval { a, b } => (vec![a + (b - a) * u[0]], b - a),
            _ => {
                let c = self.corners();
                let (s, t) = (u[0], u[1]);
                let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
                let ds = [-(1.0 - t), 1.0 - t, t, -t];
                let dt = [-(1.0 - s), -s, s, 1.0 - s];
                let mut x = [0.0; 2];
                let mut js = [0.0; 2];
                let mut jt = [0.0; 2];
                for k in 0..4 {
                    for d in 0..2 {
                        x[d] += w[k] * c[k][d];
                        js[d] += ds[k] * c[k][d];
                        jt[d] += dt[k] * c[k][d];
                    }
                }
                (x.to_vec(), js[0] * jt[1] - js[1] * jt[0])
            }
        }
    }

    /// Whether `x` lies in the closed domain, with absolute slack `tol` scaled by the diameter.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let slack = tol * self.diameter().max(1.0);
        match self {
            ChartDomain::Interval { a, b } => x[0] >= a - slack && x[0] <= b + slack,
            ChartDomain::Rectangle { min, max } => {
                (0..2).all(|d| x[d] >= min[d] - slack && x[d] <= max[d] + slack)
            }
            ChartDomain::Quadrilateral { corners } => (0..4).all(|i| {
                let (p, q) = (corners[i], corners[(i + 1) % 4]);
                let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
                let len = (ex * ex + ey * ey).sqrt();
                (ex * (x[1] - p[1]) - ey * (x[0] - p[0])) / len >= -slack
            }),
        }
    }

    /// Lebesgue measure of the chart domain.
    pub fn area(&self) -> f64 {
        match self {
            ChartDomain::Interval { a, b } => b - a,
            _ => {
                let c = self.corners();
                0.5 * (0..4).map(|i| c[i][0] * c[(i + 1) % 4][1] - c[(i + 1) % 4][0] * c[i][1]).sum::<f64>()
            }
        }
    }
}
