//! The Stein kernel
//!
//! h_θ(y, ỹ) = ⟨s_θ(y), s_θ(ỹ)⟩ k(y, ỹ) + ⟨s_θ(ỹ), ∇_y k(y, ỹ)⟩
//!           + ⟨s_θ(y), ∇_ỹ k(y, ỹ)⟩ + Σ_i ∂²k/∂y_i∂ỹ_i
//!
//! together with dense Gram matrices, their θ-derivative stacks, and the
//! V-/U-statistics built from them.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kernels::{row_vec, sq_dist, KernelConfig};
use crate::score::{ScoreModel, ThetaHessian};

/// Literal four-term evaluation of h_θ(y, ỹ).
pub fn stein_kernel(
    model: &dyn ScoreModel,
    kernel: &KernelConfig,
    theta: &[f64],
    y: &[f64],
    y_tilde: &[f64],
) -> Result<f64> {
    let s = model.score(theta, y)?;
    let s_tilde = model.score(theta, y_tilde)?;
    let k = kernel.eval(y, y_tilde)?;
    // ∇_y k(y, ỹ) is the second-argument gradient with the arguments swapped
    let grad_first = kernel.grad_second(y_tilde, y)?;
    let grad_second = kernel.grad_second(y, y_tilde)?;
    let trace = kernel.mixed_trace(y, y_tilde)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    Ok(s.dot(&s_tilde) * k
        + dot(s_tilde.as_slice(), &grad_first)
        + dot(s.as_slice(), &grad_second)
        + trace)
}

/// Gram matrix of h_θ over a sample, optionally with first and second
/// θ-derivative stacks. All matrices are exactly symmetric.
#[derive(Clone, Debug)]
pub struct SteinGram {
    theta: Vec<f64>,
    h: DMatrix<f64>,
    dh: Vec<DMatrix<f64>>,
    d2h: Vec<DMatrix<f64>>,
    order: u8,
}

/// Index of (k, l) in the packed upper triangle of a p × p symmetric layout.
pub(crate) fn packed_index(k: usize, l: usize, p: usize) -> usize {
    let (a, b) = if k <= l { (k, l) } else { (l, k) };
    a * p - a * (a + 1) / 2 + b
}

impl SteinGram {
    /// Assemble from explicit matrices. Used by tests and by callers that
    /// already hold h_θ values.
    pub fn from_parts(
        theta: Vec<f64>,
        h: DMatrix<f64>,
        dh: Vec<DMatrix<f64>>,
        d2h: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = h.nrows();
        check_dim(n, h.ncols())?;
        let p = theta.len();
        let order = if !d2h.is_empty() {
            check_dim(p * (p + 1) / 2, d2h.len())?;
            check_dim(p, dh.len())?;
            2
        } else if !dh.is_empty() {
            check_dim(p, dh.len())?;
            1
        } else {
            0
        };
        for m in dh.iter().chain(&d2h) {
            check_dim(n, m.nrows())?;
            check_dim(n, m.ncols())?;
        }
        Ok(Self { theta, h, dh, d2h, order })
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// ∂H/∂θ_k, present when order ≥ 1.
    pub fn dh(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.dh.get(k)
    }

    /// ∂²H/∂θ_k∂θ_l, present when order ≥ 2.
    pub fn d2h(&self, k: usize, l: usize) -> Option<&DMatrix<f64>> {
        let p = self.dim_theta();
        if k >= p || l >= p {
            return None;
        }
        self.d2h.get(packed_index(k, l, p))
    }

    pub(crate) fn require_order(&self, order: u8) -> Result<()> {
        if self.order >= order {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "gram built with order {} but order {order} is required",
                self.order
            )))
        }
    }

    /// Reconstruct H at `theta` from a gram built at θ = 0 with order 2. Exact
    /// for linear-in-θ families, where h_θ is a quadratic polynomial in θ.
    pub fn quadratic_at(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.require_order(2)?;
        let p = self.dim_theta();
        check_dim(p, theta.len())?;
        if self.theta.iter().any(|t| *t != 0.0) {
            return Err(Error::InvalidArgument("quadratic reconstruction needs a gram at θ = 0".into()));
        }
        let mut h = self.h.clone();
        for k in 0..p {
            h += &self.dh[k] * theta[k];
            for l in k..p {
                let w = if k == l { 0.5 } else { 1.0 } * theta[k] * theta[l];
                h += &self.d2h[packed_index(k, l, p)] * w;
            }
        }
        Ok(h)
    }
}

struct PointTerms {
    y: Vec<f64>,
    score: Vec<f64>,
    /// d × p Jacobian, column-major: jac[k * d + a].
    jac: Vec<f64>,
    hess: Option<ThetaHessian>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Build the Stein Gram matrix of `ys` (rows are observations) at `theta`.
/// `order` selects how many θ-derivative stacks are materialized (0, 1 or 2).
pub fn stein_gram(
    model: &dyn ScoreModel,
    kernel: &KernelConfig,
    theta: &[f64],
    ys: &DMatrix<f64>,
    order: u8,
) -> Result<SteinGram> {
    if order > 2 {
        return Err(Error::InvalidArgument(format!("gram order must be 0, 1 or 2, got {order}")));
    }
    let n = ys.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("gram needs at least one observation".into()));
    }
    let d = model.dim_y();
    let p = model.dim_theta();
    check_dim(d, ys.ncols())?;
    check_dim(p, theta.len())?;
    let need_hess = order >= 2 && !model.linear_in_theta();

    let points = (0..n)
        .map(|i| {
            let y = row_vec(ys, i);
            let score = model.score(theta, &y)?;
            let jac = if order >= 1 { model.score_jac_theta(theta, &y)? } else { DMatrix::zeros(d, 0) };
            let hess = if need_hess { Some(model.score_hess_theta(theta, &y)?) } else { None };
            if score.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite score at observation {i}")));
            }
            Ok(PointTerms { y, score: score.as_slice().to_vec(), jac: jac.as_slice().to_vec(), hess })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_d1 = if order >= 1 { p } else { 0 };
    let n_d2 = if order >= 2 { p * (p + 1) / 2 } else { 0 };
    let width = 1 + n_d1 + n_d2;

    // upper triangle, row by row: rows[i][(j - i) * width + slot]
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = &points[i];
            let mut out = vec![0.0; (n - i) * width];
            let mut diff = vec![0.0; d];
            for j in i..n {
                let pj = &points[j];
                for a in 0..d {
                    diff[a] = pi.y[a] - pj.y[a];
                }
                let rho = sq_dist(&pi.y, &pj.y);
                let prof = kernel.profile(rho);
                let f = prof.value;
                let two_f1 = 2.0 * prof.d1;
                let trace = KernelConfig::trace_from_profile(&prof, rho, d);
                // ∇_y k = 2f'(y − ỹ), ∇_ỹ k = −2f'(y − ỹ)
                let si_diff = dot(&pi.score, &diff);
                let sj_diff = dot(&pj.score, &diff);
                let slot = &mut out[(j - i) * width..(j - i + 1) * width];
                slot[0] = dot(&pi.score, &pj.score) * f + two_f1 * (sj_diff - si_diff) + trace;
                if order >= 1 {
                    for k in 0..p {
                        let ji = &pi.jac[k * d..(k + 1) * d];
                        let jj = &pj.jac[k * d..(k + 1) * d];
                        slot[1 + k] = f * (dot(ji, &pj.score) + dot(&pi.score, jj))
                            + two_f1 * (dot(jj, &diff) - dot(ji, &diff));
                    }
                }
                if order >= 2 {
                    for k in 0..p {
                        for l in k..p {
                            let jik = &pi.jac[k * d..(k + 1) * d];
                            let jil = &pi.jac[l * d..(l + 1) * d];
                            let jjk = &pj.jac[k * d..(k + 1) * d];
                            let jjl = &pj.jac[l * d..(l + 1) * d];
                            let mut v = f * (dot(jik, jjl) + dot(jil, jjk));
                            if let (Some(hi), Some(hj)) = (&pi.hess, &pj.hess) {
                                let hik = hi.get(k, l);
                                let hjk = hj.get(k, l);
                                v += f * (dot(hik, &pj.score) + dot(&pi.score, hjk))
                                    + two_f1 * (dot(hjk, &diff) - dot(hik, &diff));
                            }
                            slot[1 + n_d1 + packed_index(k, l, p)] = v;
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut mats: Vec<DMatrix<f64>> = (0..width).map(|_| DMatrix::zeros(n, n)).collect();
    for (i, row) in rows.iter().enumerate() {
        for j in i..n {
            let slot = &row[(j - i) * width..(j - i + 1) * width];
            for (m, v) in mats.iter_mut().zip(slot) {
                m[(i, j)] = *v;
                m[(j, i)] = *v;
            }
        }
    }
    let mut iter = mats.into_iter();
    let h = iter.next().expect("width >= 1");
    let dh: Vec<_> = iter.by_ref().take(n_d1).collect();
    let d2h: Vec<_> = iter.collect();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Stein kernel value".into()));
    }
    Ok(SteinGram { theta: theta.to_vec(), h, dh, d2h, order })
}

/// V_n(θ) = (1/n²) Σ_ij H_ij.
pub fn v_statistic(gram: &SteinGram) -> f64 {
    let n = gram.n() as f64;
    gram.h.sum() / (n * n)
}

/// U_n(θ) = (1/(n(n−1))) Σ_{i≠j} H_ij.
pub fn u_statistic(gram: &SteinGram) -> Result<f64> {
    let n = gram.n();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("U-statistic needs n >= 2, got {n}")));
    }
    let off = gram.h.sum() - gram.h.trace();
    Ok(off / (n * (n - 1)) as f64)
}
