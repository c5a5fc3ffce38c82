//! Parametric families known up to a normalizing constant, exposed only
//! through the score s_θ(y) = ∇_y log q_θ(y) and its θ-derivatives.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Second θ-derivatives of the score: for each pair (k, l) a d-vector
/// ∂²s_θ(y)/∂θ_k∂θ_l.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaHessian {
    p: usize,
    d: usize,
    data: Vec<f64>,
}

impl ThetaHessian {
    pub fn zeros(p: usize, d: usize) -> Self {
        Self { p, d, data: vec![0.0; p * p * d] }
    }

    pub fn get(&self, k: usize, l: usize) -> &[f64] {
        let start = (k * self.p + l) * self.d;
        &self.data[start..start + self.d]
    }

    pub fn get_mut(&mut self, k: usize, l: usize) -> &mut [f64] {
        let start = (k * self.p + l) * self.d;
        &mut self.data[start..start + self.d]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }
}

/// A family {q_θ} represented solely through its score.
pub trait ScoreModel: Send + Sync + fmt::Debug {
    fn dim_y(&self) -> usize;
    fn dim_theta(&self) -> usize;
    /// True when s_θ(y) is affine in θ, in which case the Stein kernel is
    /// exactly quadratic in θ.
    fn linear_in_theta(&self) -> bool;

    fn score(&self, theta: &[f64], y: &[f64]) -> Result<DVector<f64>>;

    /// ∂s_θ(y)/∂θ as a d × p matrix.
    fn score_jac_theta(&self, theta: &[f64], y: &[f64]) -> Result<DMatrix<f64>>;

    fn score_hess_theta(&self, theta: &[f64], y: &[f64]) -> Result<ThetaHessian> {
        self.check(theta, y)?;
        Ok(ThetaHessian::zeros(self.dim_theta(), self.dim_y()))
    }

    fn check(&self, theta: &[f64], y: &[f64]) -> Result<()> {
        check_dim(self.dim_theta(), theta.len())?;
        check_dim(self.dim_y(), y.len())
    }
}

/// Θ as the box [−bound, bound]^p.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaBox {
    pub bound: f64,
}

impl Default for ThetaBox {
    fn default() -> Self {
        Self { bound: 10.0 }
    }
}

impl ThetaBox {
    pub fn new(bound: f64) -> Result<Self> {
        if bound > 0.0 && bound.is_finite() {
            Ok(Self { bound })
        } else {
            Err(Error::InvalidArgument(format!("box bound must be positive, got {bound}")))
        }
    }

    pub fn project(&self, theta: &mut [f64]) {
        for t in theta {
            *t = t.clamp(-self.bound, self.bound);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.iter().all(|t| t.abs() <= self.bound)
    }
}

/// N(θ, I_d): s_θ(y) = θ − y.
#[derive(Clone, Copy, Debug)]
pub struct GaussianLocation {
    dim: usize,
}

impl GaussianLocation {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        Ok(Self { dim })
    }
}

impl ScoreModel for GaussianLocation {
    fn dim_y(&self) -> usize {
        self.dim
    }

    fn dim_theta(&self) -> usize {
        self.dim
    }

    fn linear_in_theta(&self) -> bool {
        true
    }

    fn score(&self, theta: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check(theta, y)?;
        Ok(DVector::from_iterator(self.dim, theta.iter().zip(y).map(|(t, v)| t - v)))
    }

    fn score_jac_theta(&self, theta: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta, y)?;
        Ok(DMatrix::identity(self.dim, self.dim))
    }
}

/// Visible marginal of the two-dimensional RBM with energy
/// −(h + ⟨θ, y⟩ − 2‖y‖²). The hidden unit enters additively, so the
/// marginal score is θ − 4y.
#[derive(Clone, Copy, Debug, Default)]
pub struct RbmMarginal;

impl ScoreModel for RbmMarginal {
    fn dim_y(&self) -> usize {
        2
    }

    fn dim_theta(&self) -> usize {
        2
    }

    fn linear_in_theta(&self) -> bool {
        true
    }

    fn score(&self, theta: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check(theta, y)?;
        Ok(DVector::from_fn(2, |i, _| theta[i] - 4.0 * y[i]))
    }

    fn score_jac_theta(&self, theta: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta, y)?;
        Ok(DMatrix::identity(2, 2))
    }
}

/// A differentiable feature map ℝ^d → ℝ^m.
pub trait FeatureMap: Send + Sync + fmt::Debug {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, y: &[f64]) -> DVector<f64>;
    /// m × d Jacobian ∂J/∂y.
    fn jacobian(&self, y: &[f64]) -> DMatrix<f64>;
}

type EvalFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Feature map from a pair of closures (value, Jacobian).
pub struct FnFeatureMap {
    dim_in: usize,
    dim_out: usize,
    eval: Box<EvalFn>,
    jacobian: Box<JacFn>,
}

impl FnFeatureMap {
    pub fn new(
        dim_in: usize,
        dim_out: usize,
        eval: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { dim_in, dim_out, eval: Box::new(eval), jacobian: Box::new(jacobian) }
    }
}

impl fmt::Debug for FnFeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnFeatureMap")
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .finish_non_exhaustive()
    }
}

impl FeatureMap for FnFeatureMap {
    fn dim_in(&self) -> usize {
        self.dim_in
    }

    fn dim_out(&self) -> usize {
        self.dim_out
    }

    fn eval(&self, y: &[f64]) -> DVector<f64> {
        (self.eval)(y)
    }

    fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(y)
    }
}

/// J(y) = (Σ y_i², y₁y₂, Σ_{i≥3} y₁y_i, tanh(y₁), …, tanh(y₅)) on ℝ⁵.
#[derive(Clone, Copy, Debug, Default)]
pub struct IntractableFeatures;

impl FeatureMap for IntractableFeatures {
    fn dim_in(&self) -> usize {
        5
    }

    fn dim_out(&self) -> usize {
        8
    }

    fn eval(&self, y: &[f64]) -> DVector<f64> {
        let mut j = DVector::zeros(8);
        j[0] = y.iter().map(|v| v * v).sum();
        j[1] = y[0] * y[1];
        j[2] = y[0] * (y[2] + y[3] + y[4]);
        for i in 0..5 {
            j[3 + i] = y[i].tanh();
        }
        j
    }

    fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(8, 5);
        for i in 0..5 {
            jac[(0, i)] = 2.0 * y[i];
        }
        jac[(1, 0)] = y[1];
        jac[(1, 1)] = y[0];
        jac[(2, 0)] = y[2] + y[3] + y[4];
        for i in 2..5 {
            jac[(2, i)] = y[0];
        }
        for i in 0..5 {
            let t = y[i].tanh();
            jac[(3 + i, i)] = 1.0 - t * t;
        }
        jac
    }
}

/// log q_θ(y) = ⟨η(θ), J(y)⟩ + const, with η(θ) equal to a fixed base vector
/// whose entries at `theta_slots` are replaced by θ.
#[derive(Clone, Debug)]
pub struct LinearExponentialFamily {
    eta_base: DVector<f64>,
    theta_slots: Vec<usize>,
    features: Arc<dyn FeatureMap>,
}

impl LinearExponentialFamily {
    pub fn new(
        eta_base: DVector<f64>,
        theta_slots: Vec<usize>,
        features: Arc<dyn FeatureMap>,
    ) -> Result<Self> {
        check_dim(features.dim_out(), eta_base.len())?;
        if theta_slots.is_empty() {
            return Err(Error::InvalidArgument("at least one θ slot is required".into()));
        }
        for (i, &s) in theta_slots.iter().enumerate() {
            if s >= eta_base.len() || theta_slots[..i].contains(&s) {
                return Err(Error::InvalidArgument(format!("invalid θ slot {s}")));
            }
        }
        let mut eta_base = eta_base;
        for &s in &theta_slots {
            eta_base[s] = 0.0;
        }
        Ok(Self { eta_base, theta_slots, features })
    }

    /// η(θ) = (−0.5, 0.6, 0.2, 0, 0, 0, θ₁, θ₂) paired with [`IntractableFeatures`].
    /// At θ = 0 this is N(0, Σ) with the precision matrix of
    /// [`crate::dgp::intractable_precision`].
    pub fn intractable5d() -> Self {
        let eta = DVector::from_vec(vec![-0.5, 0.6, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0]);
        Self::new(eta, vec![6, 7], Arc::new(IntractableFeatures)).expect("static family is valid")
    }

    pub fn eta(&self, theta: &[f64]) -> DVector<f64> {
        let mut eta = self.eta_base.clone();
        for (&s, t) in self.theta_slots.iter().zip(theta) {
            eta[s] = *t;
        }
        eta
    }

    /// Unnormalized log density ⟨η(θ), J(y)⟩.
    pub fn potential(&self, theta: &[f64], y: &[f64]) -> Result<f64> {
        self.check(theta, y)?;
        Ok(self.eta(theta).dot(&self.features.eval(y)))
    }
}

impl ScoreModel for LinearExponentialFamily {
    fn dim_y(&self) -> usize {
        self.features.dim_in()
    }

    fn dim_theta(&self) -> usize {
        self.theta_slots.len()
    }

    fn linear_in_theta(&self) -> bool {
        true
    }

    fn score(&self, theta: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check(theta, y)?;
        Ok(self.features.jacobian(y).tr_mul(&self.eta(theta)))
    }

    fn score_jac_theta(&self, theta: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta, y)?;
        let jac = self.features.jacobian(y);
        let d = self.dim_y();
        Ok(DMatrix::from_fn(d, self.theta_slots.len(), |i, k| jac[(self.theta_slots[k], i)]))
    }
}

/// q_θ(y) ∝ exp(⟨T(y), θ⟩) for a user-supplied differentiable T: ℝ^d → ℝ^p.
#[derive(Clone, Debug)]
pub struct NaturalParamFamily {
    features: Arc<dyn FeatureMap>,
}

impl NaturalParamFamily {
    pub fn new(features: Arc<dyn FeatureMap>) -> Self {
        Self { features }
    }
}

impl ScoreModel for NaturalParamFamily {
    fn dim_y(&self) -> usize {
        self.features.dim_in()
    }

    fn dim_theta(&self) -> usize {
        self.features.dim_out()
    }

    fn linear_in_theta(&self) -> bool {
        true
    }

    fn score(&self, theta: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check(theta, y)?;
        Ok(self.features.jacobian(y).tr_mul(&DVector::from_column_slice(theta)))
    }

    fn score_jac_theta(&self, theta: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta, y)?;
        Ok(self.features.jacobian(y).transpose())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// A score that is quadratic in θ, used to exercise the second-derivative paths.
    /// s_θ(y) = θ₀ y + θ₀ θ₁ 1 − y.
    #[derive(Debug)]
    pub(crate) struct BilinearScore;

    impl ScoreModel for BilinearScore {
        fn dim_y(&self) -> usize {
            2
        }
        fn dim_theta(&self) -> usize {
            2
        }
        fn linear_in_theta(&self) -> bool {
            false
        }
        fn score(&self, t: &[f64], y: &[f64]) -> Result<DVector<f64>> {
            self.check(t, y)?;
            Ok(DVector::from_fn(2, |i, _| t[0] * y[i] + t[0] * t[1] - y[i]))
        }
        fn score_jac_theta(&self, t: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
            self.check(t, y)?;
            Ok(DMatrix::from_fn(2, 2, |i, k| if k == 0 { y[i] + t[1] } else { t[0] }))
        }
        fn score_hess_theta(&self, t: &[f64], y: &[f64]) -> Result<ThetaHessian> {
            self.check(t, y)?;
            let mut h = ThetaHessian::zeros(2, 2);
            h.get_mut(0, 1).copy_from_slice(&[1.0, 1.0]);
            h.get_mut(1, 0).copy_from_slice(&[1.0, 1.0]);
            Ok(h)
        }
    }

    fn natural_family() -> NaturalParamFamily {
        // T(y) = (y₁, y₂², sin(y₁ y₂))
        let t = FnFeatureMap::new(
            2,
            3,
            |y| DVector::from_vec(vec![y[0], y[1] * y[1], (y[0] * y[1]).sin()]),
            |y| {
                let c = (y[0] * y[1]).cos();
                DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0 * y[1], c * y[1], c * y[0]])
            },
        );
        NaturalParamFamily::new(Arc::new(t))
    }

    fn families() -> Vec<Box<dyn ScoreModel>> {
        vec![
            Box::new(GaussianLocation::new(3).unwrap()),
            Box::new(RbmMarginal),
            Box::new(LinearExponentialFamily::intractable5d()),
            Box::new(natural_family()),
            Box::new(BilinearScore),
        ]
    }

    fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn score_examples() {
        let g = GaussianLocation::new(1).unwrap();
        assert_eq!(g.score(&[0.5], &[2.0]).unwrap()[0], -1.5);
        assert_eq!(g.score_jac_theta(&[0.5], &[2.0]).unwrap(), DMatrix::identity(1, 1));
        assert!(g.score_hess_theta(&[0.5], &[2.0]).unwrap().is_zero());
        let r = RbmMarginal;
        assert_eq!(r.score(&[1.0, 1.0], &[0.25, 0.25]).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(r.score_hess_theta(&[1.0, 1.0], &[0.0, 0.0]).unwrap().is_zero());
        assert!(matches!(g.score(&[0.0, 1.0], &[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(GaussianLocation::new(0).is_err());
    }

    #[test]
    fn intractable_score_at_zero_is_gaussian() {
        let m = LinearExponentialFamily::intractable5d();
        let precision = crate::dgp::intractable_precision();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let y = normal_vec(&mut rng, 5);
            let s = m.score(&[0.0, 0.0], &y).unwrap();
            let expected = -(&precision * DVector::from_column_slice(&y));
            assert_relative_eq!(s, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn intractable_jacobian_columns_are_sech_squared() {
        let m = LinearExponentialFamily::intractable5d();
        let y = [0.3, -0.1, 0.7, 1.2, -0.4];
        let j = m.score_jac_theta(&[0.2, -0.3], &y).unwrap();
        for k in 0..2 {
            for i in 0..5 {
                let expected = if i == 3 + k { 1.0 / y[i].cosh().powi(2) } else { 0.0 };
                assert_relative_eq!(j[(i, k)], expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn natural_param_jacobian_is_feature_jacobian() {
        let m = natural_family();
        let y = [0.4, -1.1];
        let a = m.score_jac_theta(&[0.0, 0.0, 0.0], &y).unwrap();
        let b = m.score_jac_theta(&[3.0, -2.0, 1.0], &y).unwrap();
        assert_eq!(a, b);
        assert!(m.score_hess_theta(&[1.0, 1.0, 1.0], &y).unwrap().is_zero());
    }

    #[test]
    fn jacobian_and_hessian_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for model in families() {
            let (p, d) = (model.dim_theta(), model.dim_y());
            for _ in 0..50 {
                let theta = normal_vec(&mut rng, p);
                let y = normal_vec(&mut rng, d);
                let jac = model.score_jac_theta(&theta, &y).unwrap();
                let hess = model.score_hess_theta(&theta, &y).unwrap();
                for k in 0..p {
                    let mut tp = theta.clone();
                    let mut tm = theta.clone();
                    tp[k] += h;
                    tm[k] -= h;
                    let fd = (model.score(&tp, &y).unwrap() - model.score(&tm, &y).unwrap()) / (2.0 * h);
                    let scale = jac.column(k).amax().max(1.0);
                    assert!((jac.column(k) - &fd).amax() / scale <= 1e-5);
                    let fd2 = (model.score_jac_theta(&tp, &y).unwrap()
                        - model.score_jac_theta(&tm, &y).unwrap())
                        / (2.0 * h);
                    for l in 0..p {
                        for i in 0..d {
                            assert!((hess.get(l, k)[i] - fd2[(i, l)]).abs() <= 1e-5);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn exponential_family_score_is_potential_gradient() {
        let m = LinearExponentialFamily::intractable5d();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-5;
        for _ in 0..30 {
            let theta = normal_vec(&mut rng, 2);
            let y = normal_vec(&mut rng, 5);
            let s = m.score(&theta, &y).unwrap();
            for i in 0..5 {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i] += h;
                ym[i] -= h;
                let fd = (m.potential(&theta, &yp).unwrap() - m.potential(&theta, &ym).unwrap()) / (2.0 * h);
                assert!((s[i] - fd).abs() <= 1e-4 * s[i].abs().max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn linear_families_are_affine_in_theta(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            t1 in prop::collection::vec(-2.0f64..2.0, 2),
            t2 in prop::collection::vec(-2.0f64..2.0, 2),
            y in prop::collection::vec(-2.0f64..2.0, 5),
        ) {
            let models: Vec<(Box<dyn ScoreModel>, Vec<f64>)> = vec![
                (Box::new(RbmMarginal), y[..2].to_vec()),
                (Box::new(LinearExponentialFamily::intractable5d()), y.clone()),
                (Box::new(GaussianLocation::new(2).unwrap()), y[..2].to_vec()),
            ];
            for (m, y) in models {
                prop_assert!(m.linear_in_theta());
                let zero = m.score(&[0.0, 0.0], &y).unwrap();
                let combo: Vec<f64> = t1.iter().zip(&t2).map(|(u, v)| a * u + b * v).collect();
                let lhs = m.score(&combo, &y).unwrap() - &zero;
                let rhs = (m.score(&t1, &y).unwrap() - &zero) * a + (m.score(&t2, &y).unwrap() - &zero) * b;
                prop_assert!((lhs - rhs).amax() <= 1e-10);
            }
        }
    }

    #[test]
    fn theta_box_projects() {
        let b = ThetaBox::default();
        let mut t = [12.0, -0.5, -30.0];
        b.project(&mut t);
        assert_eq!(t, [10.0, -0.5, -10.0]);
        assert!(b.contains(&t));
        assert!(ThetaBox::new(0.0).is_err());
    }
}
