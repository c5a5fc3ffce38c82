//! Sandwich covariance 4Γ⁻¹ΣΓ⁻¹/n and Wald intervals for θ_n.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_dim, Error, Result};
use crate::estimator::{AssembledWeights, Variant};
use crate::stein::SteinGram;

pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct SandwichEstimate {
    pub gamma: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub condition_number: f64,
    pub n: usize,
}

impl SandwichEstimate {
    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Centered covariance with 1/n normalization; rows are observations.
pub fn empirical_covariance(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let mean = v.row_mean();
    let mut centered = v.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = centered.tr_mul(&centered) / n as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    cov
}

fn condition_number(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> f64 {
    let abs = eig.eigenvalues.map(f64::abs);
    let (lo, hi) = (abs.min(), abs.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of Γ through its eigendecomposition, guarded by the condition number.
fn guarded_inverse(gamma: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(gamma.clone());
    let cond = condition_number(&eig);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::InferenceUnavailable { condition_number: cond, gamma: gamma.clone() });
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    Ok((&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose(), cond))
}

/// Sandwich estimate from a gram of order 2 at θ_n, over all n outcomes or
/// over the support of the weights.
pub fn sandwich(weights: &AssembledWeights, variant: Variant, gram: &SteinGram) -> Result<SandwichEstimate> {
    gram.require_order(2)?;
    let n = weights.n();
    let m = gram.n();
    let p = gram.dim_theta();
    let c = weights.coefficients_for(variant, m)?;
    let rows = weights.row_map_for(variant, m)?;
    let nn = (n * n) as f64;

    let mut gamma = DMatrix::zeros(p, p);
    for k in 0..p {
        for l in k..p {
            let v = (gram.d2h(k, l).unwrap() * &c).dot(&c) / nn;
            gamma[(k, l)] = v;
            gamma[(l, k)] = v;
        }
    }
    // v_i = (1/n)(M ∂H c)_i, the row sums of M ∂H Mᵀ
    let mut v = DMatrix::zeros(n, p);
    for k in 0..p {
        let col = &rows * (gram.dh(k).unwrap() * &c) / n as f64;
        v.set_column(k, &col);
    }
    let sigma = empirical_covariance(&v);
    let (gamma_inv, condition_number) = guarded_inverse(&gamma)?;
    let mut covariance = &gamma_inv * &sigma * &gamma_inv * (4.0 / n as f64);
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(SandwichEstimate { gamma, sigma, covariance, condition_number, n })
}

/// z such that P(|N(0,1)| ≤ z) = level.
pub fn normal_multiplier(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 * (1.0 + level)))
}

/// Per-coordinate intervals θ_k ± z √cov_kk.
pub fn confidence_interval(theta: &[f64], est: &SandwichEstimate, level: f64) -> Result<Vec<[f64; 2]>> {
    check_dim(est.covariance.nrows(), theta.len())?;
    let z = normal_multiplier(level)?;
    Ok(theta
        .iter()
        .zip(est.std_errors().iter())
        .map(|(t, se)| [t - z * se, t + z * se])
        .collect())
}

/// Σ^{-1/2} Γ (θ* − θ_n) √n / 2, approximately N(0, I) under the asymptotics.
pub fn standardize(theta_n: &[f64], theta_star: &[f64], est: &SandwichEstimate) -> Result<DVector<f64>> {
    let p = est.gamma.nrows();
    check_dim(p, theta_n.len())?;
    check_dim(p, theta_star.len())?;
    let eig = SymmetricEigen::new(est.sigma.clone());
    let top = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|l| *l <= 1e-14 * top) || top == 0.0 {
        return Err(Error::Numerical("Σ_n is singular; cannot standardize".into()));
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let diff = DVector::from_fn(p, |k, _| theta_star[k] - theta_n[k]);
    Ok(inv_sqrt * (&est.gamma * diff) * ((est.n as f64).sqrt() / 2.0))
}
