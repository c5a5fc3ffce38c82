//! Experiment configuration (JSON). Unknown keys are rejected; omitted
//! optional fields are filled by [`ExperimentConfig::resolve`] so that the
//! written-back config is fully explicit.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use drmksd::dgp::DgpKind;
use drmksd::estimator::{FitSpec, FoldRule, NuisanceSpec, OptimizerSettings, Variant};
use drmksd::kernels::KernelConfig;
use drmksd::nuisance::{LogisticFeatures, OutcomeWeightsKind, PropensityKind, DEFAULT_CLIP};
use drmksd::score::{GaussianLocation, LinearExponentialFamily, RbmMarginal, ScoreModel, ThetaBox};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// N(θ, I_dim)
    GaussianLocation { dim: usize },
    /// The 5-d energy model with two free natural parameters.
    Intractable5d {},
    /// Visible marginal of the Gaussian-Bernoulli RBM.
    Rbm2d {},
}

impl ModelSpec {
    pub fn for_dgp(dgp: &DgpKind) -> Self {
        match dgp {
            DgpKind::Gaussian1d {} => Self::GaussianLocation { dim: 1 },
            DgpKind::Intractable5d {} => Self::Intractable5d {},
            DgpKind::Rbm2d { .. } => Self::Rbm2d {},
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ScoreModel>, CliError> {
        Ok(match self {
            Self::GaussianLocation { dim } => Arc::new(GaussianLocation::new(*dim)?),
            Self::Intractable5d {} => Arc::new(LinearExponentialFamily::intractable5d()),
            Self::Rbm2d {} => Arc::new(RbmMarginal),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Imq { c: f64, lengthscale: f64, beta: f64 },
    Rbf { lengthscale: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::Imq { c: 1.0, lengthscale: 0.1, beta: -0.5 }
    }
}

impl KernelSpec {
    pub fn build(&self) -> Result<KernelConfig, CliError> {
        Ok(match *self {
            Self::Imq { c, lengthscale, beta } => KernelConfig::imq(c, lengthscale, beta)?,
            Self::Rbf { lengthscale } => KernelConfig::rbf(lengthscale)?,
        })
    }
}

/// Per-axis (min, max, step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<[f64; 3]>,
}

fn default_theta_bound() -> f64 {
    10.0
}

fn default_level() -> f64 {
    0.95
}

fn default_replications() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dgp: DgpKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_theta_bound")]
    pub theta_bound: f64,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub nuisance: Option<NuisanceSpec>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub folds: FoldRule,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Logistic propensity (on squares for the 5-d design) and CME outcome weights.
pub fn default_nuisance(dgp: &DgpKind) -> NuisanceSpec {
    let features = match dgp {
        DgpKind::Intractable5d {} => LogisticFeatures::Squares,
        _ => LogisticFeatures::Identity,
    };
    NuisanceSpec {
        propensity: PropensityKind::logistic(features),
        clip: DEFAULT_CLIP,
        weights: OutcomeWeightsKind::cme(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str::<Self>(text).map_err(|e| {
            CliError::usage(format!("invalid config: {e}"))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fill every optional field and validate the result.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::usage(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.model.is_none() {
            self.model = Some(ModelSpec::for_dgp(&self.dgp));
        }
        if self.nuisance.is_none() {
            self.nuisance = Some(default_nuisance(&self.dgp));
        }
        if self.n == 0 {
            return Err(CliError::usage("n must be at least 1"));
        }
        if self.replications == 0 {
            return Err(CliError::usage("replications must be at least 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::usage(format!("level must lie in (0, 1), got {}", self.level)));
        }
        ThetaBox::new(self.theta_bound)?;
        self.kernel.build()?;
        let model = self.model()?;
        if model.dim_y() != self.dgp.dim_y() {
            return Err(CliError::usage(format!(
                "model expects {}-dimensional outcomes but the dgp produces {}",
                model.dim_y(),
                self.dgp.dim_y()
            )));
        }
        if let Some(t0) = &self.optimizer.theta0 {
            if t0.len() != model.dim_theta() {
                return Err(CliError::usage(format!("optimizer.theta0 needs {} entries", model.dim_theta())));
            }
        }
        if let Some(grid) = &self.grid {
            if grid.axes.len() != model.dim_theta() {
                return Err(CliError::usage(format!("grid needs {} axes", model.dim_theta())));
            }
        }
        Ok(self)
    }

    pub fn model(&self) -> Result<Arc<dyn ScoreModel>, CliError> {
        self.model.clone().unwrap_or_else(|| ModelSpec::for_dgp(&self.dgp)).build()
    }

    /// Fit settings for one dataset; `fold_seed` drives the cross-fitting split.
    pub fn fit_spec(&self, fold_seed: u64) -> FitSpec {
        FitSpec {
            nuisance: self.nuisance.clone().unwrap_or_else(|| default_nuisance(&self.dgp)),
            variant: self.variant,
            folds: self.folds,
            fold_seed,
            theta_bound: self.theta_bound,
            optimizer: self.optimizer.clone(),
            level: self.level,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
