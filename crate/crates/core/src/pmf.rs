//! Gaussian beliefs over a respondent's latent factors.
//!
//! With question factors held fixed, the user factor posterior under the
//! Gaussian response model is a Bayesian linear regression: the rows of `V`
//! for answered questions form the design, `1/alpha` is the noise variance.
//! Beliefs are stored in precision form because every update adds
//! `alpha * v v^T` to the precision.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::completion::FactorModel;
use crate::data::ResponseMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, add_outer, check_finite_vec};

pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        if precision.nrows() != mean.len() || !precision.is_square() {
            return Err(Error::Dimension(format!(
                "mean of length {} with precision {:?}",
                mean.len(),
                precision.shape()
            )));
        }
        check_finite_vec(&mean, "belief mean")?;
        if !linalg::is_symmetric(&precision, linalg::SYMMETRY_TOL) {
            return Err(Error::NotPositiveDefinite);
        }
        linalg::cholesky(&precision)?;
        Ok(Self { mean, precision })
    }

    /// `N(0, scale^-1 I)`.
    pub fn isotropic(rank: usize, precision_scale: f64) -> Result<Self> {
        Self::new(DVector::zeros(rank), DMatrix::identity(rank, rank) * precision_scale)
    }

    pub fn rank(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        linalg::spd_inverse(&self.precision).expect("belief precision is SPD")
    }

    /// Re-checks the invariants, for values that came from deserialization.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.mean.clone(), self.precision.clone()).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Response precision; the noise variance is `1 / alpha`.
    pub alpha: f64,
}

impl Default for NoiseModel {
    /// `alpha = 1`: the largest variance a response in `[-1, 1]` can have.
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

impl NoiseModel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} must be positive")));
        }
        Ok(Self { alpha })
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.alpha
    }

    /// `1/alpha` set to the mean squared training residual of `model`.
    pub fn from_residuals(data: &ResponseMatrix, model: &FactorModel) -> Result<Self> {
        let z = model.reconstruct();
        let (sum, count) =
            data.observed_entries().fold((0.0, 0usize), |(s, c), (i, j, r)| (s + (r - z[(i, j)]).powi(2), c + 1));
        if count == 0 || sum == 0.0 {
            return Err(Error::InvalidArgument("no residual variance to estimate alpha from".into()));
        }
        Self::new(count as f64 / sum)
    }
}

/// Prior from the sample mean and covariance of the implied user factors `U D`.
pub fn empirical_bayes_prior(model: &FactorModel, jitter: f64) -> Result<GaussianBelief> {
    empirical_bayes_from_rows(&model.user_factors(), jitter)
}

/// Sample mean and `(n-1)`-normalized covariance of the rows, with `jitter`
/// added to the covariance diagonal before inverting.
pub fn empirical_bayes_from_rows(rows: &DMatrix<f64>, jitter: f64) -> Result<GaussianBelief> {
    let (n, r) = rows.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 users, got {n}")));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!("jitter {jitter} must be >= 0")));
    }
    let mean = rows.row_mean().transpose();
    let mut centered = rows.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    for d in 0..r {
        cov[(d, d)] += jitter;
    }
    let chol = linalg::cholesky(&cov).map_err(|_| Error::SingularCovariance)?;
    // A Cholesky that "succeeds" on an exactly singular matrix still has a
    // zero pivot.
    if chol.l_dirty().diagonal().iter().any(|&d| d <= 0.0) {
        return Err(Error::SingularCovariance);
    }
    let mut precision = chol.inverse();
    linalg::symmetrize(&mut precision);
    GaussianBelief::new(mean, precision)
}

fn check_direction(belief: &GaussianBelief, v: &DVector<f64>) -> Result<()> {
    if v.len() != belief.rank() {
        return Err(Error::Dimension(format!("factor of length {} for a rank-{} belief", v.len(), belief.rank())));
    }
    check_finite_vec(v, "question factor")
}

/// One response: `P' = P + alpha v v^T`, `m' = P'^-1 (alpha y v + P m)`.
pub fn posterior_update(
    belief: &GaussianBelief,
    v: &DVector<f64>,
    response: f64,
    noise: &NoiseModel,
) -> Result<GaussianBelief> {
    check_direction(belief, v)?;
    if !response.is_finite() {
        return Err(Error::NonFinite("response".into()));
    }
    let mut precision = belief.precision.clone();
    add_outer(&mut precision, v, noise.alpha);
    linalg::symmetrize(&mut precision);
    let rhs = &belief.precision * &belief.mean + v * (noise.alpha * response);
    let mean = linalg::cholesky(&precision)?.solve(&rhs);
    Ok(GaussianBelief { mean, precision })
}

/// All responses at once; rows of `v_obs` pair with entries of `responses`.
pub fn batch_posterior(
    prior: &GaussianBelief,
    v_obs: &DMatrix<f64>,
    responses: &DVector<f64>,
    noise: &NoiseModel,
) -> Result<GaussianBelief> {
    if v_obs.nrows() != responses.len() || (v_obs.nrows() > 0 && v_obs.ncols() != prior.rank()) {
        return Err(Error::Dimension(format!(
            "{:?} factors for {} responses at rank {}",
            v_obs.shape(),
            responses.len(),
            prior.rank()
        )));
    }
    if responses.is_empty() {
        return Ok(prior.clone());
    }
    check_finite_vec(responses, "responses")?;
    let mut precision = &prior.precision + v_obs.transpose() * v_obs * noise.alpha;
    linalg::symmetrize(&mut precision);
    let rhs = &prior.precision * &prior.mean + v_obs.transpose() * responses * noise.alpha;
    let mean = linalg::cholesky(&precision)?.solve(&rhs);
    Ok(GaussianBelief { mean, precision })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponsePrediction {
    pub mean: f64,
    /// `mean` clamped to `[-1, 1]`.
    pub clamped_mean: f64,
    /// Posterior predictive variance `v^T P^-1 v + 1/alpha`.
    pub variance: f64,
}

pub fn predict_response(belief: &GaussianBelief, v: &DVector<f64>, noise: &NoiseModel) -> Result<ResponsePrediction> {
    check_direction(belief, v)?;
    let mean = belief.mean.dot(v);
    let chol = linalg::cholesky(&belief.precision)?;
    let mut w = v.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    Ok(ResponsePrediction { mean, clamped_mean: mean.clamp(-1.0, 1.0), variance: w.norm_squared() + noise.variance() })
}
