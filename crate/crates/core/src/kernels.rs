//! Radial base kernels on ℝ^d with the analytic derivatives needed by the
//! Stein kernel.
//!
//! Both families are functions of the squared distance ρ = ‖x − y‖², so every
//! derivative follows from the profile f(ρ) and its first two derivatives:
//!
//! * ∇_y k(x, y) = 2 f'(ρ) (y − x)
//! * Σ_i ∂²k / ∂x_i ∂y_i = −4 f''(ρ) ρ − 2 d f'(ρ)

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// k(x, y) = (c² + ‖x − y‖² / l²)^β
    Imq,
    /// k(x, y) = exp(−‖x − y‖² / (2 l²))
    Rbf,
}

/// Immutable kernel configuration. Construct through [`KernelConfig::imq`] or
/// [`KernelConfig::rbf`], which validate the parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    family: KernelFamily,
    c: f64,
    lengthscale: f64,
    beta: f64,
}

/// f(ρ), f'(ρ), f''(ρ) for a radial profile.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RadialProfile {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl KernelConfig {
    pub fn imq(c: f64, lengthscale: f64, beta: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("IMQ offset c must be positive, got {c}")));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        if !(beta > -1.0 && beta < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "IMQ exponent must lie in (-1, 0), got {beta}"
            )));
        }
        Ok(Self { family: KernelFamily::Imq, c, lengthscale, beta })
    }

    pub fn rbf(lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        Ok(Self { family: KernelFamily::Rbf, c: 1.0, lengthscale, beta: 0.0 })
    }

    /// IMQ with c = 1, l = 0.1, β = −0.5, the setting used throughout the experiments.
    pub fn experiment_default() -> Self {
        Self { family: KernelFamily::Imq, c: 1.0, lengthscale: 0.1, beta: -0.5 }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub(crate) fn profile(&self, rho: f64) -> RadialProfile {
        let l2 = self.lengthscale * self.lengthscale;
        match self.family {
            KernelFamily::Imq => {
                let u = self.c * self.c + rho / l2;
                let b = self.beta;
                let value = u.powf(b);
                RadialProfile {
                    value,
                    d1: b * value / u / l2,
                    d2: b * (b - 1.0) * value / (u * u) / (l2 * l2),
                }
            }
            KernelFamily::Rbf => {
                let value = (-rho / (2.0 * l2)).exp();
                RadialProfile {
                    value,
                    d1: -value / (2.0 * l2),
                    d2: value / (4.0 * l2 * l2),
                }
            }
        }
    }

    /// Σ_i ∂²k/∂x_i∂y_i from the profile, for a d-dimensional pair at squared distance ρ.
    pub(crate) fn trace_from_profile(p: &RadialProfile, rho: f64, d: usize) -> f64 {
        -4.0 * p.d2 * rho - 2.0 * d as f64 * p.d1
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        non_empty(x)?;
        Ok(self.profile(sq_dist(x, y)).value)
    }

    /// ∇_y k(x, y): gradient in the second argument.
    pub fn grad_second(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), y.len())?;
        non_empty(x)?;
        let p = self.profile(sq_dist(x, y));
        Ok(x.iter().zip(y).map(|(xi, yi)| 2.0 * p.d1 * (yi - xi)).collect())
    }

    /// Trace of the mixed second-derivative matrix, Σ_i ∂²k/∂x_i∂y_i.
    pub fn mixed_trace(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        non_empty(x)?;
        let rho = sq_dist(x, y);
        let p = self.profile(rho);
        Ok(Self::trace_from_profile(&p, rho, x.len()))
    }

    /// Gram matrix over the rows of `points`.
    pub fn gram(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let n = points.nrows();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| row_vec(points, i)).collect();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.profile(0.0).value;
            for j in 0..i {
                let v = self.profile(sq_dist(&rows[i], &rows[j])).value;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn non_empty(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        Err(Error::InvalidArgument("points must have dimension at least 1".into()))
    } else {
        Ok(())
    }
}

/// Median of the pairwise Euclidean distances between the rows of `points`.
pub fn median_heuristic(points: &DMatrix<f64>) -> Result<f64> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "median heuristic needs at least 2 points, got {n}"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row_vec(points, i)).collect();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median > 0.0 {
        Ok(median)
    } else if dists[m - 1] > 0.0 {
        // more than half the pairs coincide; fall back to the smallest positive distance
        Ok(dists.iter().copied().find(|d| *d > 0.0).unwrap_or(dists[m - 1]))
    } else {
        Err(Error::DegenerateBandwidth)
    }
}
