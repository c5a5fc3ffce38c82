use serde::{Deserialize, Serialize};

use super::crossfit::{cross_fit, AssembledWeights, CrossFitPlan, FoldRule, NuisanceSpec, Variant};
use super::minimize::{minimize, FitResult, OptimizerSettings};
use super::objective::Objective;
use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::inference::{confidence_interval, sandwich, SandwichEstimate};
use crate::kernels::KernelConfig;
use crate::score::{ScoreModel, ThetaBox};

/// Everything needed to go from a dataset to θ_n and its intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub nuisance: NuisanceSpec,
    pub variant: Variant,
    pub folds: FoldRule,
    pub fold_seed: u64,
    pub theta_bound: f64,
    pub optimizer: OptimizerSettings,
    pub level: f64,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub fit: FitResult,
    pub sandwich: Option<SandwichEstimate>,
    pub ci: Option<Vec<[f64; 2]>>,
    /// Condition number of Γ_n, also reported when inference is unavailable.
    pub gamma_condition_number: Option<f64>,
    pub warnings: Vec<String>,
}

impl FitSpec {
    pub fn theta_box(&self) -> Result<ThetaBox> {
        ThetaBox::new(self.theta_bound)
    }

    /// Cross-fitted nuisances for `dataset`.
    pub fn assemble(&self, dataset: &Dataset) -> Result<AssembledWeights> {
        let plan = CrossFitPlan::new(dataset.n(), self.folds, self.fold_seed)?;
        cross_fit(dataset, &plan, &self.nuisance)
    }
}

/// Algorithm end to end: cross-fit, minimize g_n, then the sandwich intervals.
pub fn fit_dataset(
    dataset: &Dataset,
    model: &dyn ScoreModel,
    kernel: &KernelConfig,
    spec: &FitSpec,
) -> Result<FitReport> {
    if dataset.dim_y() != model.dim_y() {
        return Err(Error::DimensionMismatch { expected: model.dim_y(), found: dataset.dim_y() });
    }
    let theta_box = spec.theta_box()?;
    let weights = spec.assemble(dataset)?;
    if weights.support().is_empty() {
        return Err(Error::EstimationImpossible("no outcome receives non-zero weight".into()));
    }
    let objective = Objective::new(model, kernel, &weights, spec.variant, &dataset.y)?;
    let fit = minimize(&objective, &spec.optimizer, &theta_box)?;
    let mut warnings = fit.warnings.clone();
    let gram = objective.gram(&fit.theta, 2)?;
    let (est, ci, cond) = match sandwich(&weights, spec.variant, &gram) {
        Ok(est) => {
            let ci = confidence_interval(&fit.theta, &est, spec.level)?;
            let cond = est.condition_number;
            (Some(est), Some(ci), Some(cond))
        }
        Err(Error::InferenceUnavailable { condition_number, .. }) => {
            warnings.push(format!("inference unavailable: Γ_n condition number {condition_number:e}"));
            (None, None, Some(condition_number))
        }
        Err(e) => return Err(e),
    };
    Ok(FitReport { fit, sandwich: est, ci, gamma_condition_number: cond, warnings })
}
