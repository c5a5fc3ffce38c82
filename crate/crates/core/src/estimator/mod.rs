//! Cross-fitted doubly robust statistic g_n, its ablations, and its minimization.

mod crossfit;
mod minimize;
mod objective;
mod pipeline;

pub use crossfit::{cross_fit, AssembledWeights, CrossFitPlan, FoldRule, NuisanceSpec, Variant};
pub use minimize::{
    evaluate_grid, minimize, minimize_grid, quadratic_minimizer, rectangular_grid, FitResult, OptimizerSettings,
    Solver, TraceStep,
};
pub use objective::{g_n, g_n_variant, grad_g_n, Objective, QuadraticForm};
pub use pipeline::{fit_dataset, FitReport, FitSpec};
