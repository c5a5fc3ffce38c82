use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, LogisticFeatures, LogisticFit};
use crate::dgp::{sigmoid, PropensityTruth};
use crate::error::{Error, Result};

/// How a corrupted propensity model departs from its base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distortion {
    /// Ignore the base model and report a fixed probability.
    Constant { value: f64 },
    /// Add a fixed offset to the base model's log odds.
    LogitShift { shift: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PropensityKind {
    Logistic {
        features: LogisticFeatures,
        /// Inverse of the regularization strength C.
        #[serde(default = "default_l2")]
        l2: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    Constant { value: f64 },
    /// The data-generating process's own π(x).
    Oracle { truth: PropensityTruth },
    Corrupted { base: Box<PropensityKind>, distortion: Distortion },
}

fn default_l2() -> f64 {
    1e-5
}

fn default_max_iter() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-8
}

impl PropensityKind {
    /// Logistic regression with C = 1e5 and up to 1000 Newton iterations.
    pub fn logistic(features: LogisticFeatures) -> Self {
        Self::Logistic { features, l2: default_l2(), max_iter: default_max_iter(), tol: default_tol() }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Logistic { l2, .. } if !(*l2 >= 0.0) => {
                Err(Error::InvalidArgument(format!("l2 must be non-negative, got {l2}")))
            }
            Self::Constant { value } if !(*value > 0.0 && *value < 1.0) => {
                Err(Error::InvalidArgument(format!("constant propensity must lie in (0, 1), got {value}")))
            }
            Self::Corrupted { base, distortion } => {
                if let Distortion::Constant { value } = distortion {
                    if !(*value > 0.0 && *value < 1.0) {
                        return Err(Error::InvalidArgument(format!(
                            "constant propensity must lie in (0, 1), got {value}"
                        )));
                    }
                }
                base.validate()
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
enum State {
    Unfitted,
    Logistic(LogisticFit),
    Ready,
    Corrupted(Box<PropensityModel>),
}

/// A propensity estimator π̂ whose outputs are clipped to [ε, 1 − ε].
#[derive(Clone, Debug)]
pub struct PropensityModel {
    kind: PropensityKind,
    clip: f64,
    state: State,
}

pub const DEFAULT_CLIP: f64 = 0.01;

impl PropensityModel {
    pub fn new(kind: PropensityKind, clip: f64) -> Result<Self> {
        if !(clip > 0.0 && clip < 0.5) {
            return Err(Error::InvalidArgument(format!("clip level must lie in (0, 0.5), got {clip}")));
        }
        kind.validate()?;
        let state = match &kind {
            PropensityKind::Constant { .. } | PropensityKind::Oracle { .. } => State::Ready,
            _ => State::Unfitted,
        };
        Ok(Self { kind, clip, state })
    }

    pub fn kind(&self) -> &PropensityKind {
        &self.kind
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn is_fitted(&self) -> bool {
        !matches!(self.state, State::Unfitted)
    }

    /// Train on covariates `x` (rows are units) and treatment indicators `a`.
    pub fn fit(&mut self, x: &DMatrix<f64>, a: &[bool]) -> Result<()> {
        self.state = match &self.kind {
            PropensityKind::Logistic { features, l2, max_iter, tol } => {
                State::Logistic(fit_logistic(&features.apply(x), a, *l2, *max_iter, *tol)?)
            }
            PropensityKind::Constant { .. } | PropensityKind::Oracle { .. } => State::Ready,
            PropensityKind::Corrupted { base, .. } => {
                let mut inner = PropensityModel::new((**base).clone(), self.clip)?;
                inner.fit(x, a)?;
                State::Corrupted(Box::new(inner))
            }
        };
        Ok(())
    }

    /// Unclipped probability.
    fn raw(&self, x: &[f64]) -> Result<f64> {
        match (&self.kind, &self.state) {
            (_, State::Unfitted) => Err(Error::NotFitted),
            (PropensityKind::Constant { value }, _) => Ok(*value),
            (PropensityKind::Oracle { truth }, _) => Ok(truth.eval(x)),
            (PropensityKind::Logistic { features, .. }, State::Logistic(fit)) => {
                let row = DMatrix::from_row_slice(1, x.len(), x);
                let feats = features.apply(&row);
                Ok(fit.predict(feats.as_slice()))
            }
            (PropensityKind::Corrupted { distortion, .. }, State::Corrupted(inner)) => match distortion {
                Distortion::Constant { value } => Ok(*value),
                Distortion::LogitShift { shift } => {
                    let p = inner.raw(x)?.clamp(1e-300, 1.0 - 1e-16);
                    Ok(sigmoid((p / (1.0 - p)).ln() + shift))
                }
            },
            _ => Err(Error::NotFitted),
        }
    }

    /// π̂(x) clipped to [ε, 1 − ε].
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.raw(x)?.clamp(self.clip, 1.0 - self.clip))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::sample_gaussian1d;

    #[test]
    fn constant_and_oracle() {
        let c = PropensityModel::new(PropensityKind::Constant { value: 0.5 }, DEFAULT_CLIP).unwrap();
        assert_eq!(c.predict(&[3.0]).unwrap(), 0.5);
        let o = PropensityModel::new(
            PropensityKind::Oracle { truth: PropensityTruth::LinearLogit },
            DEFAULT_CLIP,
        )
        .unwrap();
        assert_eq!(o.predict(&[0.0]).unwrap(), 0.5);
        assert_eq!(o.predict(&[50.0]).unwrap(), 0.99);
    }

    #[test]
    fn clipping_applies_to_fitted_models() {
        // raw logistic prediction ≈ 0.001 at x = 0
        let mut m = PropensityModel::new(PropensityKind::logistic(LogisticFeatures::Identity), 0.01).unwrap();
        let x = DMatrix::from_column_slice(2000, 1, &(0..2000).map(|i| (i % 2) as f64 * 20.0).collect::<Vec<_>>());
        let a: Vec<bool> = (0..2000).map(|i| i % 2 == 1 || i % 1000 == 0).collect();
        m.fit(&x, &a).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), 0.01);
        assert_eq!(m.predict(&[20.0]).unwrap(), 0.99);
    }

    #[test]
    fn clipping_holds_over_a_dataset() {
        let ds = sample_gaussian1d(2000, 4).unwrap();
        let mut m = PropensityModel::new(PropensityKind::logistic(LogisticFeatures::Identity), 0.05).unwrap();
        m.fit(&ds.x, &ds.a).unwrap();
        let preds: Vec<f64> = (0..ds.n()).map(|i| m.predict(&[ds.x[(i, 0)]]).unwrap()).collect();
        assert!(preds.iter().all(|p| (0.05..=0.95).contains(p)));
        assert!(preds.iter().any(|p| *p == 0.95) || preds.iter().any(|p| *p == 0.05));
    }

    #[test]
    fn unfitted_model_is_a_state_error() {
        let m = PropensityModel::new(PropensityKind::logistic(LogisticFeatures::Squares), 0.01).unwrap();
        assert!(matches!(m.predict(&[0.0]), Err(Error::NotFitted)));
        assert!(!m.is_fitted());
    }

    #[test]
    fn corrupted_models() {
        let ds = sample_gaussian1d(500, 9).unwrap();
        let base = Box::new(PropensityKind::logistic(LogisticFeatures::Identity));
        let mut constant = PropensityModel::new(
            PropensityKind::Corrupted { base: base.clone(), distortion: Distortion::Constant { value: 0.5 } },
            0.01,
        )
        .unwrap();
        constant.fit(&ds.x, &ds.a).unwrap();
        assert_eq!(constant.predict(&[2.0]).unwrap(), 0.5);
        let mut shifted = PropensityModel::new(
            PropensityKind::Corrupted { base, distortion: Distortion::LogitShift { shift: 1.0 } },
            0.01,
        )
        .unwrap();
        assert!(shifted.predict(&[0.0]).is_err());
        shifted.fit(&ds.x, &ds.a).unwrap();
        let mut plain = PropensityModel::new(PropensityKind::logistic(LogisticFeatures::Identity), 0.01).unwrap();
        plain.fit(&ds.x, &ds.a).unwrap();
        let lo = |p: f64| (p / (1.0 - p)).ln();
        let diff = lo(shifted.predict(&[0.3]).unwrap()) - lo(plain.predict(&[0.3]).unwrap());
        assert!((diff - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn invalid_configuration() {
        assert!(PropensityModel::new(PropensityKind::Constant { value: 0.5 }, 0.5).is_err());
        assert!(PropensityModel::new(PropensityKind::Constant { value: 0.5 }, 0.0).is_err());
        assert!(PropensityModel::new(PropensityKind::Constant { value: 1.0 }, 0.01).is_err());
    }
}
