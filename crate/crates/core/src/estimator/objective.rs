use nalgebra::{DMatrix, DVector};

use super::crossfit::{AssembledWeights, Variant};
use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelConfig;
use crate::score::ScoreModel;
use crate::stein::{stein_gram, SteinGram};

fn quad(c: &DVector<f64>, m: &DMatrix<f64>, n: usize) -> f64 {
    (m * c).dot(c) / (n * n) as f64
}

/// g_n = cᵀHc / n² for the doubly robust embedding. The gram may cover all
/// n outcomes or only the support of the weights.
pub fn g_n(weights: &AssembledWeights, gram: &SteinGram) -> Result<f64> {
    g_n_variant(weights, Variant::Dr, gram)
}

pub fn g_n_variant(weights: &AssembledWeights, variant: Variant, gram: &SteinGram) -> Result<f64> {
    let c = weights.coefficients_for(variant, gram.n())?;
    Ok(quad(&c, gram.h(), weights.n()))
}

/// ∂g_n/∂θ_k = cᵀ(∂H/∂θ_k)c / n² with the nuisances held fixed.
pub fn grad_g_n(weights: &AssembledWeights, variant: Variant, gram: &SteinGram) -> Result<DVector<f64>> {
    gram.require_order(1)?;
    let c = weights.coefficients_for(variant, gram.n())?;
    let n = weights.n();
    Ok(DVector::from_fn(gram.dim_theta(), |k, _| quad(&c, gram.dh(k).unwrap(), n)))
}

/// g_n(θ) = θᵀPθ + qᵀθ + r, exact for scores affine in θ.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub r: f64,
}

impl QuadraticForm {
    /// Read off the coefficients from a gram built at θ = 0 with order 2.
    pub fn from_gram(weights: &AssembledWeights, variant: Variant, gram0: &SteinGram) -> Result<Self> {
        gram0.require_order(2)?;
        if gram0.theta().iter().any(|t| *t != 0.0) {
            return Err(Error::InvalidArgument("quadratic form needs a gram at θ = 0".into()));
        }
        let c = weights.coefficients_for(variant, gram0.n())?;
        let n = weights.n();
        let dim = gram0.dim_theta();
        let r = quad(&c, gram0.h(), n);
        let q = DVector::from_fn(dim, |k, _| quad(&c, gram0.dh(k).unwrap(), n));
        let mut p = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            for l in k..dim {
                let v = 0.5 * quad(&c, gram0.d2h(k, l).unwrap(), n);
                p[(k, l)] = v;
                p[(l, k)] = v;
            }
        }
        Ok(Self { p, q, r })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        (&self.p * &t).dot(&t) + self.q.dot(&t) + self.r
    }

    pub fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        let t = DVector::from_column_slice(theta);
        &self.p * &t * 2.0 + &self.q
    }
}

/// g_n(θ) as a function of θ for fixed data and nuisances. Only outcomes on
/// the support of the weights are held.
#[derive(Debug)]
pub struct Objective<'a> {
    model: &'a dyn ScoreModel,
    kernel: &'a KernelConfig,
    weights: &'a AssembledWeights,
    variant: Variant,
    ys: DMatrix<f64>,
    quadratic: Option<QuadraticForm>,
}

impl<'a> Objective<'a> {
    /// `y` holds all n outcome rows; rows off the support are never read.
    pub fn new(
        model: &'a dyn ScoreModel,
        kernel: &'a KernelConfig,
        weights: &'a AssembledWeights,
        variant: Variant,
        y: &DMatrix<f64>,
    ) -> Result<Self> {
        check_dim(model.dim_y(), y.ncols())?;
        let ys = weights.support_outcomes(y)?;
        let quadratic = if model.linear_in_theta() {
            let gram0 = stein_gram(model, kernel, &vec![0.0; model.dim_theta()], &ys, 2)?;
            Some(QuadraticForm::from_gram(weights, variant, &gram0)?)
        } else {
            None
        };
        Ok(Self { model, kernel, weights, variant, ys, quadratic })
    }

    pub fn dim_theta(&self) -> usize {
        self.model.dim_theta()
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn weights(&self) -> &AssembledWeights {
        self.weights
    }

    /// Present when the score is affine in θ.
    pub fn quadratic(&self) -> Option<&QuadraticForm> {
        self.quadratic.as_ref()
    }

    /// Stein gram over the support outcomes.
    pub fn gram(&self, theta: &[f64], order: u8) -> Result<SteinGram> {
        stein_gram(self.model, self.kernel, theta, &self.ys, order)
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim_theta(), theta.len())?;
        match &self.quadratic {
            Some(qf) => Ok(qf.eval(theta)),
            None => g_n_variant(self.weights, self.variant, &self.gram(theta, 0)?),
        }
    }

    pub fn gradient(&self, theta: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim_theta(), theta.len())?;
        match &self.quadratic {
            Some(qf) => Ok(qf.gradient(theta)),
            None => grad_g_n(self.weights, self.variant, &self.gram(theta, 1)?),
        }
    }

    /// Value and gradient from one gram evaluation.
    pub fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, DVector<f64>)> {
        check_dim(self.dim_theta(), theta.len())?;
        match &self.quadratic {
            Some(qf) => Ok((qf.eval(theta), qf.gradient(theta))),
            None => {
                let gram = self.gram(theta, 1)?;
                Ok((
                    g_n_variant(self.weights, self.variant, &gram)?,
                    grad_g_n(self.weights, self.variant, &gram)?,
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::tests::BilinearScore;
    use crate::score::GaussianLocation;
    use crate::stein::{stein_kernel, v_statistic};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// The expanded triple and quadruple sums, term by term, with h evaluated
    /// pointwise.
    fn literal_g_n(
        model: &dyn ScoreModel,
        kernel: &KernelConfig,
        theta: &[f64],
        treated: &[bool],
        pi_hat: &[f64],
        w: &DMatrix<f64>,
        y: &DMatrix<f64>,
    ) -> f64 {
        let n = treated.len();
        let yrow = |i: usize| -> Vec<f64> { y.row(i).iter().copied().collect() };
        let h = |i: usize, j: usize| stein_kernel(model, kernel, theta, &yrow(i), &yrow(j)).unwrap();
        let a = |i: usize| if treated[i] { 1.0 / pi_hat[i] } else { 0.0 };
        let nn = (n * n) as f64;
        let mut first = 0.0;
        let mut second = 0.0;
        let mut third = 0.0;
        for i in 0..n {
            for j in 0..n {
                first += a(i) * a(j) * h(i, j);
                for ip in 0..n {
                    second += a(i) * (1.0 - a(j)) * w[(j, ip)] * h(ip, i);
                    for jp in 0..n {
                        third += (1.0 - a(i)) * (1.0 - a(j)) * w[(i, ip)] * w[(j, jp)] * h(ip, jp);
                    }
                }
            }
        }
        first / nn + 2.0 * second / nn + third / nn
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<bool>, Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let treated: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.6).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let w = DMatrix::from_fn(n, n, |_, j| if treated[j] { rng.random_range(-0.5..1.0) } else { 0.0 });
        let y = DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
        (treated, pi, w, y)
    }

    #[test]
    fn matches_literal_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kernel = KernelConfig::imq(1.0, 0.7, -0.5).unwrap();
        let model = GaussianLocation::new(2).unwrap();
        for _ in 0..5 {
            let n = rng.random_range(2..=8);
            let (treated, pi, w, y) = random_instance(&mut rng, n, 2);
            let theta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let aw = AssembledWeights::from_parts(&treated, &pi, w.clone()).unwrap();
            let full = stein_gram(&model, &kernel, &theta, &y, 0).unwrap();
            let g = g_n(&aw, &full).unwrap();
            let lit = literal_g_n(&model, &kernel, &theta, &treated, &pi, &w, &y);
            assert!((g - lit).abs() <= 1e-10 * (1.0 + g.abs()), "{g} vs {lit}");
            if !aw.support().is_empty() {
                let restricted = stein_gram(&model, &kernel, &theta, &aw.support_outcomes(&y).unwrap(), 0).unwrap();
                assert!((g_n(&aw, &restricted).unwrap() - g).abs() <= 1e-12 * (1.0 + g.abs()));
            }
        }
    }

    #[test]
    fn all_treated_reduces_to_v_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = DMatrix::from_fn(15, 1, |_, _| rng.sample(StandardNormal));
        let model = GaussianLocation::new(1).unwrap();
        let kernel = KernelConfig::experiment_default();
        let w = DMatrix::from_fn(15, 15, |_, _| rng.random::<f64>());
        let aw = AssembledWeights::from_parts(&[true; 15], &[1.0; 15], w).unwrap();
        let gram = stein_gram(&model, &kernel, &[0.3], &y, 0).unwrap();
        let v = v_statistic(&gram);
        assert!((g_n(&aw, &gram).unwrap() - v).abs() <= 1e-12);
        assert!((g_n_variant(&aw, Variant::Ipw, &gram).unwrap() - v).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kernel = KernelConfig::imq(1.0, 0.8, -0.5).unwrap();
        let model = BilinearScore;
        for _ in 0..5 {
            let (treated, pi, w, y) = random_instance(&mut rng, 20, 2);
            let aw = AssembledWeights::from_parts(&treated, &pi, w).unwrap();
            let theta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            for variant in [Variant::Dr, Variant::Ipw, Variant::Pi] {
                let obj = Objective::new(&model, &kernel, &aw, variant, &y).unwrap();
                let grad = obj.gradient(&theta).unwrap();
                let eps = 1e-5;
                for k in 0..2 {
                    let mut tp = theta;
                    let mut tm = theta;
                    tp[k] += eps;
                    tm[k] -= eps;
                    let fd = (obj.value(&tp).unwrap() - obj.value(&tm).unwrap()) / (2.0 * eps);
                    assert!((grad[k] - fd).abs() <= 1e-6 * grad[k].abs().max(1e-3), "{} vs {fd}", grad[k]);
                }
            }
        }
    }

    #[test]
    fn quadratic_form_agrees_with_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (treated, pi, w, y) = random_instance(&mut rng, 12, 2);
        let aw = AssembledWeights::from_parts(&treated, &pi, w).unwrap();
        let model = GaussianLocation::new(2).unwrap();
        let kernel = KernelConfig::experiment_default();
        let obj = Objective::new(&model, &kernel, &aw, Variant::Dr, &y).unwrap();
        let qf = obj.quadratic().unwrap();
        for _ in 0..5 {
            let theta = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let direct = g_n(&aw, &obj.gram(&theta, 0).unwrap()).unwrap();
            assert!((qf.eval(&theta) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
            let g1 = qf.gradient(&theta);
            let g2 = qf.gradient(&[-theta[0], -theta[1]]);
            let mid = qf.gradient(&[0.0, 0.0]);
            assert!(((g1 + g2) * 0.5 - mid).amax() <= 1e-10);
        }
    }

    #[test]
    fn non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = BilinearScore;
        let kernel = KernelConfig::experiment_default();
        for _ in 0..20 {
            let (treated, pi, w, y) = random_instance(&mut rng, 10, 2);
            let aw = AssembledWeights::from_parts(&treated, &pi, w).unwrap();
            let theta = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let gram = stein_gram(&model, &kernel, &theta, &y, 0).unwrap();
            for variant in [Variant::Dr, Variant::Ipw, Variant::Pi] {
                assert!(g_n_variant(&aw, variant, &gram).unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn wrong_gram_size_is_rejected() {
        let aw = AssembledWeights::from_parts(&[true, false, true], &[0.5; 3], DMatrix::zeros(3, 3)).unwrap();
        let gram = SteinGram::from_parts(vec![0.0], DMatrix::identity(1, 1), vec![], vec![]).unwrap();
        assert!(g_n(&aw, &gram).is_err());
        let gram2 = SteinGram::from_parts(vec![0.0], DMatrix::identity(2, 2), vec![], vec![]).unwrap();
        assert!(grad_g_n(&aw, Variant::Dr, &gram2).is_err());
        assert_eq!(g_n(&aw, &gram2).unwrap(), 8.0 / 9.0);
    }
}
