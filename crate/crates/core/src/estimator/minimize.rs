use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::crossfit::Variant;
use super::objective::{Objective, QuadraticForm};
use crate::error::{Error, Result};
use crate::score::ThetaBox;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Closed form when the score is affine in θ, gradient descent otherwise.
    #[default]
    Auto,
    Quadratic,
    GradientDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub solver: Solver,
    pub step: f64,
    pub max_iter: usize,
    /// Starting point; zeros when absent.
    pub theta0: Option<Vec<f64>>,
    /// Gradient descent stops once the projected step is shorter than this.
    pub tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { solver: Solver::Auto, step: 1e-2, max_iter: 1000, theta0: None, tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<TraceStep>,
    pub converged: bool,
    pub variant: Variant,
    pub warnings: Vec<String>,
}

/// Unconstrained minimizer −½P⁺q. Returns the point and whether P was singular.
pub fn quadratic_minimizer(qf: &QuadraticForm) -> Result<(DVector<f64>, bool)> {
    let eig = SymmetricEigen::new(qf.p.clone());
    let scale = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if !scale.is_finite() || !qf.q.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("quadratic form has non-finite coefficients".into()));
    }
    if min < -1e-8 * scale {
        return Err(Error::InternalConsistency(format!(
            "quadratic form has eigenvalue {min:e} with spectral scale {scale:e}; H should be PSD"
        )));
    }
    let cutoff = 1e-12 * scale;
    let mut singular = scale == 0.0;
    let rotated = eig.eigenvectors.tr_mul(&qf.q);
    let mut coords = DVector::zeros(qf.dim());
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda > cutoff {
            coords[k] = -0.5 * rotated[k] / lambda;
        } else {
            singular = true;
        }
    }
    Ok((&eig.eigenvectors * coords, singular))
}

fn step_record(theta: &[f64], objective: f64, grad: &DVector<f64>) -> TraceStep {
    TraceStep { theta: theta.to_vec(), objective, grad_norm: grad.norm() }
}

/// θ_n ∈ argmin g_n over the box.
pub fn minimize(objective: &Objective<'_>, settings: &OptimizerSettings, theta_box: &ThetaBox) -> Result<FitResult> {
    let p = objective.dim_theta();
    let use_quadratic = match settings.solver {
        Solver::Auto => objective.quadratic().is_some(),
        Solver::Quadratic => {
            if objective.quadratic().is_none() {
                return Err(Error::InvalidArgument("closed-form solver needs a score affine in θ".into()));
            }
            true
        }
        Solver::GradientDescent => false,
    };
    let mut theta = settings.theta0.clone().unwrap_or_else(|| vec![0.0; p]);
    if theta.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: theta.len() });
    }
    theta_box.project(&mut theta);
    let (f0, g0) = objective.value_and_gradient(&theta)?;
    if !f0.is_finite() || !g0.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("objective is not finite at the starting point ({f0})")));
    }
    let mut trace = vec![step_record(&theta, f0, &g0)];
    let mut warnings = Vec::new();

    if use_quadratic {
        let qf = objective.quadratic().unwrap();
        let (opt, singular) = quadratic_minimizer(qf)?;
        if singular {
            warnings.push("quadratic form is singular; pseudo-inverse minimizer used".to_string());
        }
        let mut theta: Vec<f64> = opt.iter().copied().collect();
        if !theta_box.contains(&theta) {
            warnings.push("unconstrained minimizer lies outside Θ; projected onto the box".to_string());
            theta_box.project(&mut theta);
        }
        let (f, g) = objective.value_and_gradient(&theta)?;
        trace.push(step_record(&theta, f, &g));
        return Ok(FitResult { theta, objective: f, trace, converged: true, variant: objective.variant(), warnings });
    }

    if !(settings.step > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {}", settings.step)));
    }
    let mut grad = g0;
    let mut value = f0;
    let mut converged = false;
    for _ in 0..settings.max_iter {
        let mut next: Vec<f64> = theta.iter().zip(grad.iter()).map(|(t, g)| t - settings.step * g).collect();
        theta_box.project(&mut next);
        let moved = next.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        theta = next;
        (value, grad) = objective.value_and_gradient(&theta)?;
        if !value.is_finite() {
            return Err(Error::Numerical("objective became non-finite during gradient descent".into()));
        }
        trace.push(step_record(&theta, value, &grad));
        if moved <= settings.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("gradient descent stopped after {} iterations", settings.max_iter));
    }
    Ok(FitResult { theta, objective: value, trace, converged, variant: objective.variant(), warnings })
}

/// g_n at every grid point.
pub fn evaluate_grid(objective: &Objective<'_>, grid: &[Vec<f64>]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    grid.par_iter().map(|theta| objective.value(theta)).collect()
}

/// Argmin of g_n over a finite grid; ties go to the lowest index.
pub fn minimize_grid(objective: &Objective<'_>, grid: &[Vec<f64>], theta_box: &ThetaBox) -> Result<FitResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|t| !theta_box.contains(t)) {
        return Err(Error::InvalidArgument(format!("grid point {bad:?} lies outside Θ")));
    }
    let values = evaluate_grid(objective, grid)?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("objective is not finite at grid point {:?}", grid[i])));
        }
        if *v < values[best] {
            best = i;
        }
    }
    let theta = grid[best].clone();
    let trace = grid
        .iter()
        .zip(&values)
        .map(|(t, v)| TraceStep { theta: t.clone(), objective: *v, grad_norm: f64::NAN })
        .collect();
    Ok(FitResult {
        theta,
        objective: values[best],
        trace,
        converged: true,
        variant: objective.variant(),
        warnings: Vec::new(),
    })
}

/// Rectangular grid from per-axis (min, max, step); points are ordered with the
/// last axis varying fastest.
pub fn rectangular_grid(axes: &[(f64, f64, f64)]) -> Result<Vec<Vec<f64>>> {
    let mut ticks = Vec::with_capacity(axes.len());
    for &(lo, hi, step) in axes {
        if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("bad grid axis ({lo}, {hi}, {step})")));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        ticks.push((0..count).map(|i| lo + i as f64 * step).collect::<Vec<_>>());
    }
    let mut grid = vec![Vec::new()];
    for axis in &ticks {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    Ok(grid)
}
