use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::{DensitySpec, Growth};
use crate::discretization::BoundaryData;
use crate::error::{Error, Result};
use crate::geometry::{ChartDomain, FrameKind, MetricField, MetricKind, Polynomial};
use crate::optimize::OptimizerParams;
use crate::relaxation::LaminationParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Flat,
    SphericalCap { radius: f64 },
    /// `g_tan = exp(2 rate z) base`.
    ExponentialGrowth { rate: f64, base: [[f64; 2]; 2] },
    /// Polynomial entries `[g11, g12, g22]` in `(x1, x2, z)`.
    Polynomial { entries: Vec<Polynomial> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Dist2So {
        #[serde(default)]
        growth: Option<Growth>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `A = diag(1.2, 1)`, `b = 0.95 e3`.
    Stretch,
    /// `A = diag(0.8, 0.9)`, `b = e3`.
    Short,
    /// `A = I`, `b = e3`.
    Isometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Preset { name: Preset },
    /// `F_bc(x) = A x + c` with `A` given row by row (3 x 2), constant slope `b`.
    Affine {
        a: [[f64; 2]; 3],
        #[serde(default)]
        c: [f64; 3],
        b: [f64; 3],
    },
}

impl BoundarySpec {
    pub fn resolve(&self) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let (a, c, b) = match self {
            BoundarySpec::Preset { name: Preset::Stretch } => ([[1.2, 0.0], [0.0, 1.0], [0.0, 0.0]], [0.0; 3], [0.0, 0.0, 0.95]),
            BoundarySpec::Preset { name: Preset::Short } => ([[0.8, 0.0], [0.0, 0.9], [0.0, 0.0]], [0.0; 3], [0.0, 0.0, 1.0]),
            BoundarySpec::Preset { name: Preset::Isometric } => ([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], [0.0; 3], [0.0, 0.0, 1.0]),
            BoundarySpec::Affine { a, c, b } => (*a, *c, *b),
        };
        (DMatrix::from_fn(3, 2, |i, j| a[i][j]), c.to_vec(), b.to_vec())
    }

    pub fn boundary_data(&self) -> BoundaryData {
        let (a, c, b) = self.resolve();
        BoundaryData::Affine { a, c, b }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Chart subdivisions per side.
    pub resolution: usize,
    /// Layers through the thickness, the same for every h.
    pub n_layers: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { resolution: 12, n_layers: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Precomputed envelope table; built and written here when missing.
    pub envelope_table: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), envelope_table: None }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_h_list() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}

fn default_true() -> bool {
    true
}

fn default_domain() -> ChartDomain {
    ChartDomain::unit_square()
}

fn default_metric() -> MetricSpec {
    MetricSpec::Flat
}

fn default_density() -> DensityConfig {
    DensityConfig::Dist2So { growth: None }
}

fn default_boundary() -> BoundarySpec {
    BoundarySpec::Preset { name: Preset::Stretch }
}

fn default_frame() -> FrameKind {
    FrameKind::Transported
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    #[serde(default = "default_metric")]
    pub metric: MetricSpec,
    #[serde(default = "default_domain")]
    pub domain: ChartDomain,
    #[serde(default = "default_density")]
    pub density: DensityConfig,
    #[serde(default = "default_boundary")]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default = "default_h_list")]
    pub h_list: Vec<f64>,
    /// Membrane runs use the envelope table when set, `W₀` otherwise.
    #[serde(default = "default_true")]
    pub relaxed: bool,
    /// Frame used to pull the bulk density back to the chart.
    #[serde(default = "default_frame")]
    pub frame: FrameKind,
    #[serde(default)]
    pub envelope: LaminationParams,
    #[serde(default)]
    pub optimizer: OptimizerParams,
    #[serde(default)]
    pub output: OutputConfig,
    /// Overrides the optimizer seed when present.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Pairwise summation in energy assembly.
    #[serde(default)]
    pub reproducible: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the JSON path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { ".".to_string() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::config("schema", format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if self.domain.dim() != 2 {
            return Err(Error::config("domain", "experiments need a two-dimensional chart"));
        }
        self.domain.validate().map_err(|e| Error::config("domain", e.to_string()))?;
        if self.h_list.is_empty() {
            return Err(Error::config("h_list", "must not be empty"));
        }
        for (i, h) in self.h_list.iter().enumerate() {
            if !(*h > 0.0 && h.is_finite()) {
                return Err(Error::config(format!("h_list[{i}]"), format!("thickness {h} must be positive")));
            }
        }
        for (i, w) in self.h_list.windows(2).enumerate() {
            if !(w[1] < w[0]) {
                return Err(Error::config(format!("h_list[{}]", i + 1), "h_list must be strictly decreasing"));
            }
        }
        if self.mesh.resolution < 2 {
            return Err(Error::config("mesh.resolution", "must be at least 2"));
        }
        if self.mesh.n_layers < 2 || self.mesh.n_layers % 2 != 0 {
            return Err(Error::config("mesh.n_layers", "must be even and at least 2"));
        }
        match &self.metric {
            MetricSpec::SphericalCap { radius } if !(*radius > self.h_list[0]) => {
                return Err(Error::config("metric.radius", "radius must exceed the largest h"));
            }
            MetricSpec::Polynomial { entries } if entries.len() != 3 => {
                return Err(Error::config("metric.entries", "need [g11, g12, g22]"));
            }
            _ => {}
        }
        self.envelope.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("envelope.{path}"), message),
            other => other,
        })?;
        self.optimizer.validate()?;
        self.density_spec().map_err(|e| Error::config("density", e.to_string()))?;
        for (name, v) in [("a", self.boundary.resolve().0.as_slice().to_vec()), ("b", self.boundary.resolve().2)] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(format!("boundary.{name}"), "non-finite entry"));
            }
        }
        Ok(())
    }

    /// Metric with working range up to the largest h.
    pub fn metric_field(&self) -> Result<MetricField> {
        let kind = match &self.metric {
            MetricSpec::Flat => MetricKind::Flat,
            MetricSpec::SphericalCap { radius } => MetricKind::SphericalCap { radius: *radius },
            MetricSpec::ExponentialGrowth { rate, base } => {
                MetricKind::ExponentialGrowth { rate: *rate, base: DMatrix::from_fn(2, 2, |i, j| base[i][j]) }
            }
            MetricSpec::Polynomial { entries } => MetricKind::CustomPoly { entries: entries.clone() },
        };
        MetricField::new(kind, self.domain.clone(), self.h_list[0])
    }

    pub fn density_spec(&self) -> Result<DensitySpec> {
        match &self.density {
            DensityConfig::Dist2So { growth: None } => Ok(DensitySpec::dist2_so(2)),
            DensityConfig::Dist2So { growth: Some(g) } => DensitySpec::dist2_so(2).with_growth(2.0, *g),
        }
    }

    pub fn optimizer_params(&self) -> OptimizerParams {
        let mut p = self.optimizer.clone();
        if let Some(s) = self.seed {
            p.seed = s;
        }
        p
    }
}
