use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::nuisance::{OutcomeWeights, OutcomeWeightsKind, PropensityKind, PropensityModel};

/// Which embedding of Z enters the statistic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// (a/π̂)(ξ − β̂) + β̂
    #[default]
    Dr,
    /// (a/π̂)ξ
    Ipw,
    /// β̂
    Pi,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dr => "dr",
            Self::Ipw => "ipw",
            Self::Pi => "pi",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dr" => Ok(Self::Dr),
            "ipw" => Ok(Self::Ipw),
            "pi" => Ok(Self::Pi),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldRule {
    /// Seeded random permutation; the first ⌈n/2⌉ permuted indices form fold 0.
    #[default]
    Random,
    /// Fold 0 is the first ⌈n/2⌉ indices in dataset order.
    Sequential,
}

/// Two-fold partition of {0..n}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossFitPlan {
    fold_of: Vec<u8>,
}

impl CrossFitPlan {
    pub fn new(n: usize, rule: FoldRule, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("cross-fitting needs at least 2 units, got {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        if rule == FoldRule::Random {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let mut fold_of = vec![1u8; n];
        for &i in &order[..n.div_ceil(2)] {
            fold_of[i] = 0;
        }
        Ok(Self { fold_of })
    }

    pub fn from_folds(fold_of: Vec<u8>) -> Result<Self> {
        if fold_of.iter().any(|f| *f > 1) {
            return Err(Error::InvalidArgument("fold labels must be 0 or 1".into()));
        }
        if !fold_of.contains(&0) || !fold_of.contains(&1) {
            return Err(Error::InvalidArgument("both folds must be non-empty".into()));
        }
        Ok(Self { fold_of })
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn fold(&self, i: usize) -> u8 {
        self.fold_of[i]
    }

    /// Indices of fold `f`, ascending.
    pub fn members(&self, f: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == f).collect()
    }
}

/// Nuisance configuration shared by both folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSpec {
    pub propensity: PropensityKind,
    #[serde(default = "default_clip")]
    pub clip: f64,
    pub weights: OutcomeWeightsKind,
}

fn default_clip() -> f64 {
    crate::nuisance::DEFAULT_CLIP
}

/// The linear maps taking ξ_θ(·, Y_1..Y_n) to the estimated embeddings:
/// φ̂(Z_i) = Σ_j M_ij ξ_θ(·, Y_j) and P_n φ̂ = (1/n) Σ_j c_j ξ_θ(·, Y_j).
#[derive(Clone, Debug)]
pub struct AssembledWeights {
    a: DVector<f64>,
    b: DVector<f64>,
    w: DMatrix<f64>,
    c: DVector<f64>,
    support: Vec<usize>,
}

impl AssembledWeights {
    /// Build from treatment indicators, propensities and the n × n weight
    /// matrix W (W_ij = ŵ_j(X_i)).
    pub fn from_parts(treated: &[bool], pi_hat: &[f64], w: DMatrix<f64>) -> Result<Self> {
        let n = treated.len();
        check_dim(n, pi_hat.len())?;
        check_dim(n, w.nrows())?;
        check_dim(n, w.ncols())?;
        if pi_hat.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument("propensities must be positive and finite".into()));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("outcome weights must be finite".into()));
        }
        let a = DVector::from_fn(n, |i, _| if treated[i] { 1.0 / pi_hat[i] } else { 0.0 });
        let b = a.map(|v| 1.0 - v);
        let c = &a + w.tr_mul(&b);
        // columns of M that can be non-zero; Y_j outside this set is never read
        let support =
            (0..n).filter(|&j| a[j] != 0.0 || w.column(j).iter().any(|v| *v != 0.0)).collect();
        Ok(Self { a, b, w, c, support })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// c = a + Wᵀb.
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Indices whose outcomes can influence the statistic (ascending).
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// M for the variant: diag(a) + diag(b)W (DR), diag(a) (IPW) or W (PI).
    pub fn row_map(&self, variant: Variant) -> DMatrix<f64> {
        match variant {
            Variant::Dr => {
                let mut m = self.w.clone();
                for (i, mut row) in m.row_iter_mut().enumerate() {
                    row *= self.b[i];
                }
                for i in 0..self.n() {
                    m[(i, i)] += self.a[i];
                }
                m
            }
            Variant::Ipw => DMatrix::from_diagonal(&self.a),
            Variant::Pi => self.w.clone(),
        }
    }

    /// Coefficients of P_n φ̂ over all n outcomes.
    pub fn coefficients(&self, variant: Variant) -> DVector<f64> {
        match variant {
            Variant::Dr => self.c.clone(),
            Variant::Ipw => self.a.clone(),
            Variant::Pi => self.w.row_sum().transpose(),
        }
    }

    /// Coefficients restricted to the index set of a gram with `m` rows: all
    /// n units, or the support.
    pub(crate) fn coefficients_for(&self, variant: Variant, m: usize) -> Result<DVector<f64>> {
        let full = self.coefficients(variant);
        if m == self.n() {
            Ok(full)
        } else if m == self.support.len() {
            Ok(DVector::from_iterator(m, self.support.iter().map(|&j| full[j])))
        } else {
            Err(Error::DimensionMismatch { expected: self.n(), found: m })
        }
    }

    /// Row map with columns restricted like [`Self::coefficients_for`].
    pub(crate) fn row_map_for(&self, variant: Variant, m: usize) -> Result<DMatrix<f64>> {
        let full = self.row_map(variant);
        if m == self.n() {
            Ok(full)
        } else if m == self.support.len() {
            Ok(full.select_columns(&self.support))
        } else {
            Err(Error::DimensionMismatch { expected: self.n(), found: m })
        }
    }

    /// Outcome rows on the support.
    pub fn support_outcomes(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n(), y.nrows())?;
        Ok(y.select_rows(&self.support))
    }
}

/// Fit the nuisances on each fold and evaluate them on the other one.
pub fn cross_fit(dataset: &Dataset, plan: &CrossFitPlan, spec: &NuisanceSpec) -> Result<AssembledWeights> {
    let n = dataset.n();
    check_dim(n, plan.n())?;
    let mut pi_hat = vec![0.0; n];
    let mut w = DMatrix::zeros(n, n);
    for train_fold in 0..2u8 {
        let train = plan.members(train_fold);
        let eval = plan.members(1 - train_fold);
        let treated: Vec<usize> = train.iter().copied().filter(|&i| dataset.a[i]).collect();
        if treated.is_empty() {
            return Err(Error::EstimationImpossible(format!("fold {} has no treated units", train_fold + 1)));
        }
        let x_train = dataset.x.select_rows(&train);
        let a_train: Vec<bool> = train.iter().map(|&i| dataset.a[i]).collect();
        let mut propensity = PropensityModel::new(spec.propensity.clone(), spec.clip)?;
        propensity.fit(&x_train, &a_train)?;
        let regressor = OutcomeWeights::fit(&spec.weights, &dataset.x.select_rows(&treated), treated.clone())?;
        let x_eval = dataset.x.select_rows(&eval);
        let rows = regressor.weight_rows(&x_eval)?;
        for (r, &i) in eval.iter().enumerate() {
            let xi: Vec<f64> = dataset.x.row(i).iter().copied().collect();
            pi_hat[i] = propensity.predict(&xi)?;
            for (col, &j) in treated.iter().enumerate() {
                w[(i, j)] = rows[(r, col)];
            }
        }
    }
    AssembledWeights::from_parts(&dataset.a, &pi_hat, w)
}
