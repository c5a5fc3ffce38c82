//! Nuisance estimators: the propensity π̂ and the weight-form outcome
//! embedding regressor β̂.

mod logistic;
mod propensity;
mod weights;

pub use logistic::{fit_logistic, LogisticFeatures, LogisticFit};
pub use propensity::{Distortion, PropensityKind, PropensityModel, DEFAULT_CLIP};
pub use weights::{OutcomeWeights, OutcomeWeightsKind};
