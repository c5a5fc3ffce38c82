//! Weight-form regressors for the conditional embedding β(x) = E[k(·, Y) | A = 1, X = x]:
//! each prediction is a weight vector over the treated training outcomes.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, row_vec, sq_dist, KernelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutcomeWeightsKind {
    /// Conditional mean embedding: kernel ridge regression with an RBF kernel on
    /// standardized covariates. `bandwidth: None` selects the median heuristic.
    Cme {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    /// Uniform weight over the k nearest treated neighbours.
    Knn { k: usize },
    /// β̂ ≡ 0; a deliberately inconsistent regressor.
    Zero,
}

fn default_lambda() -> f64 {
    1e-3
}

impl OutcomeWeightsKind {
    pub fn cme() -> Self {
        Self::Cme { lambda: default_lambda(), bandwidth: None }
    }
}

#[derive(Clone, Debug)]
enum Fitted {
    Cme {
        kernel: KernelConfig,
        mean: DVector<f64>,
        scale: DVector<f64>,
        train: Vec<Vec<f64>>,
        system: Cholesky<f64, Dyn>,
    },
    Knn {
        k: usize,
        train: Vec<Vec<f64>>,
    },
    Zero,
}

/// A fitted weight-form regressor. Weight rows are indexed by position in the
/// treated training set; [`OutcomeWeights::indices`] maps them back to the
/// caller's unit indices.
#[derive(Clone, Debug)]
pub struct OutcomeWeights {
    indices: Vec<usize>,
    fitted: Fitted,
}

impl OutcomeWeights {
    /// Fit on the covariates of the treated training units. `indices[r]` is the
    /// dataset index of row r of `x_treated`.
    pub fn fit(kind: &OutcomeWeightsKind, x_treated: &DMatrix<f64>, indices: Vec<usize>) -> Result<Self> {
        let m = x_treated.nrows();
        if m == 0 {
            return Err(Error::EstimationImpossible("no treated units in the training fold".into()));
        }
        if indices.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: indices.len() });
        }
        let fitted = match kind {
            OutcomeWeightsKind::Cme { lambda, bandwidth } => {
                if !(*lambda > 0.0) {
                    return Err(Error::InvalidArgument(format!("CME ridge must be positive, got {lambda}")));
                }
                let dx = x_treated.ncols();
                let mean = DVector::from_fn(dx, |j, _| x_treated.column(j).mean());
                let scale = DVector::from_fn(dx, |j, _| {
                    let sd = if m > 1 { x_treated.column(j).variance().sqrt() } else { 0.0 };
                    if sd > 0.0 { sd } else { 1.0 }
                });
                let standardized = DMatrix::from_fn(m, dx, |i, j| (x_treated[(i, j)] - mean[j]) / scale[j]);
                let bw = match bandwidth {
                    Some(b) => *b,
                    None => median_heuristic(&standardized)?,
                };
                let kernel = KernelConfig::rbf(bw)?;
                let mut system = kernel.gram(&standardized);
                for i in 0..m {
                    system[(i, i)] += m as f64 * lambda;
                }
                let system = system
                    .cholesky()
                    .ok_or_else(|| Error::Numerical("CME system is not positive definite".into()))?;
                let train = (0..m).map(|i| row_vec(&standardized, i)).collect();
                Fitted::Cme { kernel, mean, scale, train, system }
            }
            OutcomeWeightsKind::Knn { k } => {
                if *k == 0 {
                    return Err(Error::InvalidArgument("k must be at least 1".into()));
                }
                Fitted::Knn { k: (*k).min(m), train: (0..m).map(|i| row_vec(x_treated, i)).collect() }
            }
            OutcomeWeightsKind::Zero => Fitted::Zero,
        };
        Ok(Self { indices, fitted })
    }

    /// Dataset indices of the treated training units, in weight-row order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Weight rows for each row of `x` (n_eval × m).
    pub fn weight_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.indices.len();
        let n_eval = x.nrows();
        match &self.fitted {
            Fitted::Cme { kernel, mean, scale, train, system } => {
                if x.ncols() != mean.len() {
                    return Err(Error::DimensionMismatch { expected: mean.len(), found: x.ncols() });
                }
                // columns are k_X(x_e) over the training set
                let mut kx = DMatrix::zeros(m, n_eval);
                for e in 0..n_eval {
                    let z: Vec<f64> = (0..mean.len()).map(|j| (x[(e, j)] - mean[j]) / scale[j]).collect();
                    for (i, t) in train.iter().enumerate() {
                        kx[(i, e)] = kernel.eval(t, &z)?;
                    }
                }
                Ok(system.solve(&kx).transpose())
            }
            Fitted::Knn { k, train } => {
                let mut w = DMatrix::zeros(n_eval, m);
                for e in 0..n_eval {
                    let xe = row_vec(x, e);
                    if xe.len() != train[0].len() {
                        return Err(Error::DimensionMismatch { expected: train[0].len(), found: xe.len() });
                    }
                    let mut order: Vec<(f64, usize)> =
                        train.iter().enumerate().map(|(i, t)| (sq_dist(t, &xe), i)).collect();
                    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    for &(_, i) in order.iter().take(*k) {
                        w[(e, i)] = 1.0 / *k as f64;
                    }
                }
                Ok(w)
            }
            Fitted::Zero => Ok(DMatrix::zeros(n_eval, m)),
        }
    }

    /// Weight row ŵ(x) over the treated training units.
    pub fn weight_row(&self, x: &[f64]) -> Result<DVector<f64>> {
        let rows = self.weight_rows(&DMatrix::from_row_slice(1, x.len(), x))?;
        Ok(rows.row(0).transpose())
    }
}
