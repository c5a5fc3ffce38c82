//! Penalized logistic regression by damped Newton (IRLS) iterations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dgp::sigmoid;
use crate::error::{Error, Result};

/// Feature expansion applied to covariates before the linear predictor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogisticFeatures {
    Identity,
    /// Elementwise squares x_i².
    Squares,
}

impl LogisticFeatures {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Identity => x.clone(),
            Self::Squares => x.map(|v| v * v),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    /// Intercept first, then one slope per feature column.
    pub coef: DVector<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl LogisticFit {
    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        self.coef[0] + features.iter().zip(self.coef.iter().skip(1)).map(|(x, b)| x * b).sum::<f64>()
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(features))
    }
}

/// log(1 + e^t) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

struct Problem<'a> {
    design: DMatrix<f64>,
    labels: &'a [bool],
    l2: f64,
}

impl Problem<'_> {
    /// Penalized negative log-likelihood.
    fn loss(&self, coef: &DVector<f64>) -> f64 {
        let eta = &self.design * coef;
        let nll: f64 = eta
            .iter()
            .zip(self.labels)
            .map(|(e, &y)| if y { softplus(-e) } else { softplus(*e) })
            .sum();
        nll + 0.5 * self.l2 * coef.norm_squared()
    }

    fn gradient_and_hessian(&self, coef: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let eta = &self.design * coef;
        let q = self.design.ncols();
        let mut resid = DVector::zeros(eta.len());
        let mut weighted = self.design.clone();
        for (i, e) in eta.iter().enumerate() {
            let p = sigmoid(*e);
            resid[i] = p - if self.labels[i] { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            weighted.row_mut(i).scale_mut(w);
        }
        let grad = self.design.tr_mul(&resid) + coef * self.l2;
        let hess = self.design.tr_mul(&weighted) + DMatrix::identity(q, q) * self.l2;
        (grad, hess)
    }
}

/// Maximize the log-likelihood penalized by (l2/2)‖coef‖² (intercept included,
/// C = 1/l2). Stops when the gradient norm is at most `tol · m` for m rows; hitting
/// `max_iter` first returns the current iterate with `converged = false`.
pub fn fit_logistic(
    features: &DMatrix<f64>,
    labels: &[bool],
    l2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LogisticFit> {
    let m = features.nrows();
    if m != labels.len() {
        return Err(Error::DimensionMismatch { expected: m, found: labels.len() });
    }
    if m < 2 {
        return Err(Error::InvalidArgument(format!("logistic regression needs at least 2 rows, got {m}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features contain NaN or infinite values".into()));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::InvalidArgument(format!("l2 penalty must be non-negative, got {l2}")));
    }
    let positives = labels.iter().filter(|y| **y).count();
    if l2 == 0.0 && (positives == 0 || positives == m) {
        return Err(Error::NonConvergence(
            "single-class labels have no unpenalized maximum likelihood estimate".into(),
        ));
    }

    let q = features.ncols() + 1;
    let mut design = DMatrix::from_element(m, q, 1.0);
    design.columns_mut(1, q - 1).copy_from(features);
    let problem = Problem { design, labels, l2 };

    let threshold = tol * m as f64;
    let mut coef = DVector::zeros(q);
    let mut loss = problem.loss(&coef);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..max_iter {
        let (grad, hess) = problem.gradient_and_hessian(&coef);
        grad_norm = grad.norm();
        if grad_norm <= threshold {
            return Ok(LogisticFit { coef, iterations: iter, grad_norm, converged: true });
        }
        let step = hess
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| Error::NonConvergence("singular Hessian in Newton step".into()))?;
        // backtracking on the penalized loss
        let mut t = 1.0;
        loop {
            let candidate = &coef - &step * t;
            let cand_loss = problem.loss(&candidate);
            if cand_loss <= loss - 1e-4 * t * grad.dot(&step) || t < 1e-10 {
                coef = candidate;
                loss = cand_loss;
                break;
            }
            t *= 0.5;
        }
        if !loss.is_finite() {
            return Err(Error::NonConvergence("loss diverged".into()));
        }
    }
    let (grad, _) = problem.gradient_and_hessian(&coef);
    grad_norm = grad.norm().min(grad_norm);
    Ok(LogisticFit { coef, iterations: max_iter, grad_norm, converged: grad_norm <= threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn antisymmetric_data_gives_zero_coefficients() {
        let x = DMatrix::from_column_slice(4, 1, &[-1.0, 1.0, -1.0, 1.0]);
        let y = [false, true, true, false];
        let fit = fit_logistic(&x, &y, 0.0, 100, 1e-10).unwrap();
        assert!(fit.converged);
        assert!(fit.coef.amax() <= 1e-10);
    }

    #[test]
    fn separated_data_converges_with_small_penalty() {
        let x = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let y = [false, true];
        let l2 = 1e-5;
        let fit = fit_logistic(&x, &y, l2, 1000, 1e-9).unwrap();
        assert!(fit.converged);
        // by symmetry the intercept vanishes; the slope minimizes
        // 2·log(1 + e^{−s}) + l2·s²/2, located here by a grid search
        let objective = |s: f64| 2.0 * softplus(-s) + 0.5 * l2 * s * s;
        let (mut best, mut best_val) = (0.0, f64::INFINITY);
        let mut s = 0.0;
        while s < 40.0 {
            if objective(s) < best_val {
                best_val = objective(s);
                best = s;
            }
            s += 1e-3;
        }
        assert!(fit.coef[0].abs() <= 1e-6);
        assert!((fit.coef[1] - best).abs() <= 2e-3, "{} vs {best}", fit.coef[1]);
        assert!(fit.coef[1] > 5.0 && fit.coef[1] < 40.0);
    }

    #[test]
    fn recovers_unit_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 5000;
        let x = DMatrix::from_fn(m, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<bool> = (0..m).map(|i| rng.random::<f64>() < sigmoid(x[(i, 0)])).collect();
        let fit = fit_logistic(&x, &y, 1e-5, 1000, 1e-8).unwrap();
        assert!(fit.converged);
        assert!((fit.coef[1] - 1.0).abs() <= 0.15, "{}", fit.coef[1]);
    }

    #[test]
    fn error_paths() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(matches!(fit_logistic(&x, &[true; 3], 0.0, 50, 1e-8), Err(Error::NonConvergence(_))));
        // single class is fine once penalized
        let fit = fit_logistic(&x, &[true; 3], 1.0, 50, 1e-8).unwrap();
        assert!(fit.converged && fit.predict(&[1.0]) > 0.5);
        let bad = DMatrix::from_column_slice(2, 1, &[f64::NAN, 1.0]);
        assert!(matches!(fit_logistic(&bad, &[true, false], 0.0, 50, 1e-8), Err(Error::InvalidArgument(_))));
        assert!(fit_logistic(&x, &[true, false], 0.0, 50, 1e-8).is_err());
        let one = DMatrix::from_column_slice(1, 1, &[0.0]);
        assert!(fit_logistic(&one, &[true], 1.0, 50, 1e-8).is_err());
    }

    #[test]
    fn squares_features() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]);
        assert_eq!(LogisticFeatures::Squares.apply(&x), DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 9.0, 0.25]));
        assert_eq!(LogisticFeatures::Identity.apply(&x), x);
    }
}
