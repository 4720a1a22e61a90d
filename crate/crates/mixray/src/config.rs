//! Experiment configuration: JSON schema, validation, and constructors
//! for the objects a run needs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MixrayError, Result};
use crate::fields::{named_field, parse_mixing, read_grid_csv};
use crate::geometry::MetricField;
use crate::tensor::{mixing_for_mixed, Mixing, TensorField};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBlock {
    /// "euclidean" | "constant_curvature"
    pub kind: String,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldBlock {
    /// Named analytic field; mutually exclusive with `path`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub params: Option<HashMap<String, f64>>,
    /// Grid tensor field CSV.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Geodesic,
    Mixing,
    Mixed,
    Transverse,
    /// Stacked I and I_⊥ data; reconstruction only.
    Combined,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformBlock {
    pub kind: TransformKind,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub l: Option<usize>,
    /// Slot specs for kind = mixing: "identity" | "star" |
    /// "constant:a,b,c,d" | "near_singular".
    #[serde(default)]
    pub mixing: Option<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaysBlock {
    pub n_beta: usize,
    pub n_alpha: usize,
    pub h: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub n: usize,
    #[serde(default = "default_reg")]
    pub reg: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_maxiter")]
    pub maxiter: usize,
}

fn default_reg() -> f64 {
    1e-8
}
fn default_tol() -> f64 {
    1e-12
}
fn default_maxiter() -> usize {
    20000
}

fn default_grid() -> GridBlock {
    GridBlock {
        n: 33,
        reg: default_reg(),
        tol: default_tol(),
        maxiter: default_maxiter(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub metric: MetricBlock,
    pub field: FieldBlock,
    pub transform: TransformBlock,
    pub rays: RaysBlock,
    #[serde(default = "default_grid")]
    pub grid: GridBlock,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MixrayError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| MixrayError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.metric.kind.as_str() {
            "euclidean" => {}
            "constant_curvature" => {
                let kappa = self
                    .metric
                    .kappa
                    .ok_or_else(|| MixrayError::Config("constant_curvature needs kappa".into()))?;
                if kappa > 0.0 {
                    return Err(MixrayError::Config("kappa must be <= 0".into()));
                }
            }
            other => {
                return Err(MixrayError::Config(format!("unknown metric kind '{other}'")));
            }
        }
        if self.metric.radius <= 0.0 {
            return Err(MixrayError::Config("radius must be positive".into()));
        }
        if self.field.name.is_some() == self.field.path.is_some() {
            return Err(MixrayError::Config(
                "field block needs exactly one of name, path".into(),
            ));
        }
        match self.transform.kind {
            TransformKind::Mixing => {
                if self.transform.mixing.is_none() {
                    return Err(MixrayError::Config("mixing transform needs slots".into()));
                }
            }
            TransformKind::Mixed => {
                if self.transform.k.is_none() || self.transform.l.is_none() {
                    return Err(MixrayError::Config("mixed transform needs k and l".into()));
                }
            }
            _ => {}
        }
        if self.rays.n_beta == 0 || self.rays.n_alpha == 0 {
            return Err(MixrayError::Config("ray counts must be positive".into()));
        }
        if !(self.rays.h > 0.0) {
            return Err(MixrayError::Config("ray step h must be positive".into()));
        }
        if self.grid.n < 3 {
            return Err(MixrayError::Config("grid n must be >= 3".into()));
        }
        Ok(())
    }

    pub fn metric(&self) -> Result<MetricField> {
        match self.metric.kind.as_str() {
            "euclidean" => Ok(MetricField::euclidean(self.metric.radius)),
            "constant_curvature" => {
                MetricField::constant_curvature(self.metric.kappa.unwrap_or(0.0), self.metric.radius)
            }
            other => Err(MixrayError::Config(format!("unknown metric kind '{other}'"))),
        }
    }

    pub fn field(&self) -> Result<TensorField> {
        if let Some(path) = &self.field.path {
            return read_grid_csv(path);
        }
        let name = self
            .field
            .name
            .as_deref()
            .ok_or_else(|| MixrayError::Config("field block needs name or path".into()))?;
        let mut params = self.field.params.clone().unwrap_or_default();
        params.entry("radius".into()).or_insert(self.metric.radius);
        named_field(name, &params)
    }

    /// Resolves the mixing driving the configured transform on the given
    /// field rank. Geodesic/transverse/combined map to their canonical
    /// mixings; `mixed` uses A_{k,l}.
    pub fn mixing(&self, g: &MetricField, rank: usize) -> Result<Mixing> {
        match self.transform.kind {
            TransformKind::Geodesic | TransformKind::Combined => Ok(Mixing::identity(rank)),
            TransformKind::Transverse => mixing_for_mixed(rank, 0, g),
            TransformKind::Mixed => {
                let (k, l) = (self.transform.k.unwrap_or(0), self.transform.l.unwrap_or(0));
                if k + l != rank {
                    return Err(MixrayError::RankMismatch {
                        expected: rank,
                        got: k + l,
                    });
                }
                mixing_for_mixed(k, l, g)
            }
            TransformKind::Mixing => {
                let slots = self
                    .transform
                    .mixing
                    .as_ref()
                    .ok_or_else(|| MixrayError::Config("mixing transform needs slots".into()))?;
                let m = parse_mixing(slots)?;
                if m.degree() != rank {
                    return Err(MixrayError::RankMismatch {
                        expected: rank,
                        got: m.degree(),
                    });
                }
                Ok(m)
            }
        }
    }
}
