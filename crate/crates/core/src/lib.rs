pub mod error;
pub mod kernels;
pub mod score;
pub mod stein;
pub mod dgp;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod nuisance;
