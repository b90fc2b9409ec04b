//! Ordered-logit response model.
//!
//! `logit P(R <= m) = eta + beta_m` with `eta = u^T v`, so larger `eta` moves
//! mass toward category 1. Factors are fit by mean-field variational inference
//! and questions are chosen adaptively from the Laplace approximation of the
//! user posterior.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::active::{argmin_first, rank_one_scores, Criterion};
use crate::data::{scale_category, ResponseMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, add_outer, check_finite_vec, log_sigmoid, row_vector, sigmoid};
use crate::pmf::GaussianBelief;

/// Replacement for empty categories when building cutpoints from counts.
pub const ZERO_COUNT_SMOOTHING: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Cutpoints {
    beta: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Cutpoints {
    type Error = Error;

    fn try_from(beta: Vec<f64>) -> Result<Self> {
        Self::new(beta)
    }
}

impl From<Cutpoints> for Vec<f64> {
    fn from(c: Cutpoints) -> Self {
        c.beta
    }
}

impl Cutpoints {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("an ordered logit needs at least two categories".into()));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("cutpoints".into()));
        }
        if beta.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!("cutpoints not strictly increasing: {beta:?}")));
        }
        Ok(Self { beta })
    }

    /// Cutpoints of the Dirichlet mean of `counts`, with empty categories
    /// smoothed to [`ZERO_COUNT_SMOOTHING`].
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        let smoothed = smooth_counts(counts)?;
        let total: f64 = smoothed.iter().sum();
        let probs: Vec<f64> = smoothed.iter().map(|c| c / total).collect();
        Self::from_probs(&probs)
    }

    /// Cutpoints of one draw `pi ~ Dirichlet(counts)`.
    pub fn draw_from_counts<R: Rng + ?Sized>(counts: &[f64], rng: &mut R) -> Result<Self> {
        let smoothed = smooth_counts(counts)?;
        let mut draws = Vec::with_capacity(smoothed.len());
        for &c in &smoothed {
            let gamma = Gamma::new(c, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            // Guard against underflow of tiny shape parameters.
            draws.push(gamma.sample(rng).max(f64::MIN_POSITIVE));
        }
        let total: f64 = draws.iter().sum();
        let probs: Vec<f64> = draws.iter().map(|g| g / total).collect();
        Self::from_probs(&probs)
    }

    fn from_probs(probs: &[f64]) -> Result<Self> {
        let mut beta = Vec::with_capacity(probs.len() - 1);
        let mut below = 0.0;
        for m in 0..probs.len() - 1 {
            below += probs[m];
            let above: f64 = probs[m + 1..].iter().sum();
            // logit of the cumulative sum without cancellation in 1 - F.
            beta.push(below.ln() - above.ln());
        }
        Self::new(beta)
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn num_categories(&self) -> u32 {
        self.beta.len() as u32 + 1
    }
}

fn smooth_counts(counts: &[f64]) -> Result<Vec<f64>> {
    if counts.len() < 2 {
        return Err(Error::InvalidArgument(format!("{} categories; need at least 2", counts.len())));
    }
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidArgument("counts must be finite and nonnegative".into()));
    }
    Ok(counts.iter().map(|&c| if c == 0.0 { ZERO_COUNT_SMOOTHING } else { c }).collect())
}

/// Per-question cutpoints from the observed category counts of `data`.
pub fn cutpoints_for_data(data: &ResponseMatrix) -> Result<Vec<Cutpoints>> {
    category_counts(data)?.iter().map(|c| Cutpoints::from_counts(c)).collect()
}

/// Like [`cutpoints_for_data`] but with a seeded Dirichlet draw per question.
pub fn cutpoints_for_data_drawn(data: &ResponseMatrix, seed: u64) -> Result<Vec<Cutpoints>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    category_counts(data)?.iter().map(|c| Cutpoints::draw_from_counts(c, &mut rng)).collect()
}

fn category_counts(data: &ResponseMatrix) -> Result<Vec<Vec<f64>>> {
    let mut counts: Vec<Vec<f64>> = data.questions().iter().map(|q| vec![0.0; q.num_categories as usize]).collect();
    for (i, j, x) in data.observed_entries() {
        let m = category_of(x, data.questions()[j].num_categories)
            .ok_or_else(|| Error::InvalidArgument(format!("non-category value {x} at ({i}, {j})")))?;
        counts[j][m as usize - 1] += 1.0;
    }
    Ok(counts)
}

/// The category encoded by `x`, if it is an integer in `1..=num_categories`.
pub fn category_of(x: f64, num_categories: u32) -> Option<u32> {
    let m = x.round();
    ((x - m).abs() < 1e-9 && m >= 1.0 && m <= num_categories as f64).then_some(m as u32)
}

/// Log-sigmoid terms of `pi_m`: `a = eta + beta_m` (absent for the top
/// category) and `b = eta + beta_{m-1}` (absent for category 1).
fn bounds(eta: f64, beta: &Cutpoints, m: u32) -> (Option<f64>, Option<f64>) {
    let mm = beta.num_categories();
    assert!((1..=mm).contains(&m), "category {m} outside 1..={mm}");
    let idx = m as usize - 1;
    let a = (m < mm).then(|| eta + beta.beta[idx]);
    let b = (m > 1).then(|| eta + beta.beta[idx - 1]);
    (a, b)
}

/// `pi_m = sigma(a) sigma(-b) (1 - exp(b - a))`, each factor dropped when its
/// bound is absent.
pub fn category_probs(eta: f64, beta: &Cutpoints) -> Vec<f64> {
    (1..=beta.num_categories())
        .map(|m| {
            let (a, b) = bounds(eta, beta, m);
            let mut p = 1.0;
            if let Some(a) = a {
                p *= sigmoid(a);
            }
            if let Some(b) = b {
                p *= sigmoid(-b);
            }
            if let (Some(a), Some(b)) = (a, b) {
                p *= -(b - a).exp_m1();
            }
            p
        })
        .collect()
}

pub fn log_prob(eta: f64, beta: &Cutpoints, m: u32) -> f64 {
    let (a, b) = bounds(eta, beta, m);
    let mut lp = 0.0;
    if let Some(a) = a {
        lp += log_sigmoid(a);
    }
    if let Some(b) = b {
        lp += log_sigmoid(-b);
    }
    if let (Some(a), Some(b)) = (a, b) {
        lp += (-(b - a).exp_m1()).ln();
    }
    lp
}

/// First derivative of `log pi_m` in `eta`.
pub fn log_prob_grad(eta: f64, beta: &Cutpoints, m: u32) -> f64 {
    let (a, b) = bounds(eta, beta, m);
    let mut g = 0.0;
    if let Some(a) = a {
        g += sigmoid(-a);
    }
    if let Some(b) = b {
        g -= sigmoid(b);
    }
    g
}

/// Negative second derivative of `log pi_m` in `eta`; always nonnegative.
pub fn neg_log_prob_hessian(eta: f64, beta: &Cutpoints, m: u32) -> f64 {
    let (a, b) = bounds(eta, beta, m);
    let curv = |x: f64| sigmoid(x) * sigmoid(-x);
    a.map_or(0.0, curv) + b.map_or(0.0, curv)
}

/// Expected negative second derivative `sum_m pi_m h_m`.
pub fn expected_curvature(eta: f64, beta: &Cutpoints) -> f64 {
    category_probs(eta, beta).iter().zip(1..).map(|(p, m)| p * neg_log_prob_hessian(eta, beta, m)).sum()
}

pub fn expected_response(eta: f64, beta: &Cutpoints) -> f64 {
    category_probs(eta, beta).iter().zip(1..).map(|(p, m)| p * m as f64).sum()
}

/// [`expected_response`] mapped to `[-1, 1]` with the data rescaling map.
pub fn expected_response_scaled(eta: f64, beta: &Cutpoints) -> f64 {
    scale_category(expected_response(eta, beta), beta.num_categories())
}

pub fn sample_category<R: Rng + ?Sized>(eta: f64, beta: &Cutpoints, rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let probs = category_probs(eta, beta);
    for (m, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return m as u32 + 1;
        }
    }
    beta.num_categories()
}

fn check_pair(u: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!("user factor {} vs question factor {}", u.len(), v.len())));
    }
    check_finite_vec(u, "user factor")?;
    check_finite_vec(v, "question factor")
}

/// Observed information `-d^2/du du^T log pi_m(u^T v)` = `h v v^T`.
pub fn observed_info(u: &DVector<f64>, v: &DVector<f64>, beta: &Cutpoints, m: u32) -> Result<DMatrix<f64>> {
    check_pair(u, v)?;
    if !(1..=beta.num_categories()).contains(&m) {
        return Err(Error::OutOfRange(format!("category {m} of {}", beta.num_categories())));
    }
    let h = neg_log_prob_hessian(u.dot(v), beta, m);
    Ok(v * v.transpose() * h)
}

/// Expected information `sum_m pi_m J(u; m)`.
pub fn fisher_info(u: &DVector<f64>, v: &DVector<f64>, beta: &Cutpoints) -> Result<DMatrix<f64>> {
    check_pair(u, v)?;
    let w = expected_curvature(u.dot(v), beta);
    Ok(v * v.transpose() * w)
}

/// Mean-field Gaussian factors; standard deviations are stored as logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub user_means: DMatrix<f64>,
    pub user_log_sds: DMatrix<f64>,
    pub question_means: DMatrix<f64>,
    pub question_log_sds: DMatrix<f64>,
}

impl VariationalParams {
    pub fn rank(&self) -> usize {
        self.user_means.ncols()
    }

    pub fn num_users(&self) -> usize {
        self.user_means.nrows()
    }

    pub fn num_questions(&self) -> usize {
        self.question_means.nrows()
    }

    pub fn user_sds(&self) -> DMatrix<f64> {
        self.user_log_sds.map(f64::exp)
    }

    pub fn question_sds(&self) -> DMatrix<f64> {
        self.question_log_sds.map(f64::exp)
    }

    pub fn user_mean(&self, i: usize) -> DVector<f64> {
        row_vector(&self.user_means, i)
    }

    pub fn question_mean(&self, j: usize) -> DVector<f64> {
        row_vector(&self.question_means, j)
    }

    /// `mu_i^T nu_j`.
    pub fn eta(&self, i: usize, j: usize) -> f64 {
        self.user_means.row(i).dot(&self.question_means.row(j))
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rank();
        let shapes_ok = self.user_log_sds.shape() == self.user_means.shape()
            && self.question_log_sds.shape() == self.question_means.shape()
            && self.question_means.ncols() == r;
        if !shapes_ok {
            return Err(Error::Dimension("variational parameter shapes disagree".into()));
        }
        let all = [&self.user_means, &self.user_log_sds, &self.question_means, &self.question_log_sds];
        if all.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("variational parameters".into()));
        }
        Ok(())
    }

    /// A copy with `extra` users appended, initialised at the prior mean with
    /// unit standard deviation.
    pub fn with_users(&self, extra: usize) -> Self {
        let (n, r) = self.user_means.shape();
        let mut out = self.clone();
        out.user_means = self.user_means.clone().resize_vertically(n + extra, 0.0);
        out.user_log_sds = self.user_log_sds.clone().resize_vertically(n + extra, 0.0);
        debug_assert_eq!(out.user_means.ncols(), r);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationalConfig {
    /// Reparameterized samples per gradient step.
    pub mc_samples: usize,
    /// Adam learning rate.
    pub step_size: f64,
    pub max_epochs: usize,
    /// Stop when the smoothed ELBO changes by less than `tol` (relative)
    /// over [`ELBO_WINDOW`] epochs.
    pub tol: f64,
    pub seed: u64,
    /// Hold question factors at their initial values.
    pub fix_questions: bool,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        Self { mc_samples: 8, step_size: 0.05, max_epochs: 600, tol: 1e-4, seed: 0, fix_questions: false }
    }
}

pub const ELBO_WINDOW: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalFit {
    pub params: VariationalParams,
    /// Exponential moving average of the per-epoch ELBO estimate.
    pub elbo_trace: Vec<f64>,
    pub final_elbo: f64,
    pub epochs: usize,
    pub converged: bool,
}

struct Adam {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: (usize, usize)) -> Self {
        Self { m: DMatrix::zeros(shape.0, shape.1), v: DMatrix::zeros(shape.0, shape.1), t: 0 }
    }

    /// Ascent step on `x` along `grad`.
    fn step(&mut self, x: &mut DMatrix<f64>, grad: &DMatrix<f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for ((xi, &g), (mi, vi)) in x.iter_mut().zip(grad.iter()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *mi = Self::B1 * *mi + (1.0 - Self::B1) * g;
            *vi = Self::B2 * *vi + (1.0 - Self::B2) * g * g;
            *xi += lr * (*mi / c1) / ((*vi / c2).sqrt() + Self::EPS);
        }
    }
}

/// KL of each row's mean-field Gaussian from `prior`, with gradients added
/// (negated) into the ascent directions.
fn prior_kl(
    means: &DMatrix<f64>,
    log_sds: &DMatrix<f64>,
    prior: &GaussianBelief,
    grad_mean: &mut DMatrix<f64>,
    grad_log_sd: &mut DMatrix<f64>,
) -> f64 {
    let p = prior.precision();
    let r = means.ncols();
    let log_det_p = -2.0 * p.clone().cholesky().expect("prior precision is SPD").l().diagonal().map(|d| -d.ln()).sum();
    let mut kl = 0.0;
    for i in 0..means.nrows() {
        let diff = row_vector(means, i) - prior.mean();
        let pd = p * &diff;
        let mut row = diff.dot(&pd) - r as f64 - log_det_p;
        for d in 0..r {
            let s2 = (2.0 * log_sds[(i, d)]).exp();
            row += p[(d, d)] * s2 - 2.0 * log_sds[(i, d)];
            grad_mean[(i, d)] -= pd[d];
            grad_log_sd[(i, d)] -= p[(d, d)] * s2 - 1.0;
        }
        kl += 0.5 * row;
    }
    kl
}

struct Observation {
    i: usize,
    j: usize,
    m: u32,
}

fn ordinal_observations(data: &ResponseMatrix, cutpoints: &[Cutpoints]) -> Result<Vec<Observation>> {
    if cutpoints.len() != data.ncols() {
        return Err(Error::Dimension(format!("{} cutpoint sets for {} questions", cutpoints.len(), data.ncols())));
    }
    data.observed_entries()
        .map(|(i, j, x)| {
            let mm = cutpoints[j].num_categories();
            category_of(x, mm)
                .map(|m| Observation { i, j, m })
                .ok_or_else(|| Error::InvalidArgument(format!("value {x} at ({i}, {j}) is not a category in 1..={mm}")))
        })
        .collect()
}

/// Initial parameters: user means at the prior mean, question means small and
/// random, standard deviations 0.1.
pub fn initial_params(
    num_users: usize,
    num_questions: usize,
    rank: usize,
    user_prior: &GaussianBelief,
    seed: u64,
) -> VariationalParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let init_log_sd = 0.1f64.ln();
    VariationalParams {
        user_means: DMatrix::from_fn(num_users, rank, |_, d| user_prior.mean()[d]),
        user_log_sds: DMatrix::from_element(num_users, rank, init_log_sd),
        question_means: DMatrix::from_fn(num_questions, rank, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.1 * z
        }),
        question_log_sds: DMatrix::from_element(num_questions, rank, init_log_sd),
    }
}

/// Mean-field VI for the ordered-logit factor model.
///
/// Maximizes a Monte Carlo estimate of the ELBO by Adam on reparameterized
/// gradients. Every user shares `user_prior`; every question shares
/// `question_prior`. `warm` supplies starting parameters.
pub fn fit_variational(
    data: &ResponseMatrix,
    cutpoints: &[Cutpoints],
    rank: usize,
    user_prior: &GaussianBelief,
    question_prior: &GaussianBelief,
    config: &VariationalConfig,
    warm: Option<&VariationalParams>,
) -> Result<VariationalFit> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    if user_prior.rank() != rank || question_prior.rank() != rank {
        return Err(Error::Dimension("prior rank differs from the model rank".into()));
    }
    if config.mc_samples == 0 || config.max_epochs == 0 || !(config.step_size > 0.0) {
        return Err(Error::InvalidArgument("mc_samples, max_epochs and step_size must be positive".into()));
    }
    let obs = ordinal_observations(data, cutpoints)?;
    let (n, k) = (data.nrows(), data.ncols());
    let mut params = match warm {
        Some(w) => {
            w.validate()?;
            if w.num_users() != n || w.num_questions() != k || w.rank() != rank {
                return Err(Error::Dimension("warm start does not match the data".into()));
            }
            w.clone()
        }
        None => initial_params(n, k, rank, user_prior, config.seed),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = [Adam::new((n, rank)), Adam::new((n, rank)), Adam::new((k, rank)), Adam::new((k, rank))];
    let s = config.mc_samples as f64;
    let mut trace = Vec::new();
    let mut ema = f64::NAN;
    let mut converged = false;
    let mut epochs = 0;

    for epoch in 0..config.max_epochs {
        epochs = epoch + 1;
        let user_sd = params.user_sds();
        let question_sd = params.question_sds();
        let mut g_um = DMatrix::zeros(n, rank);
        let mut g_us = DMatrix::zeros(n, rank);
        let mut g_qm = DMatrix::zeros(k, rank);
        let mut g_qs = DMatrix::zeros(k, rank);
        let mut loglik = 0.0;

        for _ in 0..config.mc_samples {
            let eps_u = DMatrix::<f64>::from_fn(n, rank, |_, _| StandardNormal.sample(&mut rng));
            let eps_q = DMatrix::<f64>::from_fn(k, rank, |_, _| StandardNormal.sample(&mut rng));
            let u = &params.user_means + user_sd.component_mul(&eps_u);
            let v = &params.question_means + question_sd.component_mul(&eps_q);
            let mut gu = DMatrix::zeros(n, rank);
            let mut gv = DMatrix::zeros(k, rank);
            for o in &obs {
                let eta = u.row(o.i).dot(&v.row(o.j));
                let beta = &cutpoints[o.j];
                loglik += log_prob(eta, beta, o.m);
                let g = log_prob_grad(eta, beta, o.m);
                for d in 0..rank {
                    gu[(o.i, d)] += g * v[(o.j, d)];
                    gv[(o.j, d)] += g * u[(o.i, d)];
                }
            }
            g_um += &gu;
            g_us += gu.component_mul(&eps_u).component_mul(&user_sd);
            g_qm += &gv;
            g_qs += gv.component_mul(&eps_q).component_mul(&question_sd);
        }
        for g in [&mut g_um, &mut g_us, &mut g_qm, &mut g_qs] {
            *g /= s;
        }
        let kl_u = prior_kl(&params.user_means, &params.user_log_sds, user_prior, &mut g_um, &mut g_us);
        let kl_q = prior_kl(&params.question_means, &params.question_log_sds, question_prior, &mut g_qm, &mut g_qs);
        let elbo = loglik / s - kl_u - kl_q;
        if !elbo.is_finite() {
            return Err(Error::Diverged { epoch });
        }

        ema = if ema.is_nan() { elbo } else { 0.9 * ema + 0.1 * elbo };
        trace.push(ema);
        if epoch >= ELBO_WINDOW {
            let old = trace[epoch - ELBO_WINDOW];
            if (ema - old).abs() <= config.tol * ema.abs().max(1.0) {
                converged = true;
                break;
            }
        }

        let lr = config.step_size;
        adam[0].step(&mut params.user_means, &g_um, lr);
        adam[1].step(&mut params.user_log_sds, &g_us, lr);
        if !config.fix_questions {
            adam[2].step(&mut params.question_means, &g_qm, lr);
            adam[3].step(&mut params.question_log_sds, &g_qs, lr);
        }
        if params.validate().is_err() {
            return Err(Error::Diverged { epoch });
        }
    }

    let final_elbo = *trace.last().expect("at least one epoch runs");
    Ok(VariationalFit { params, elbo_trace: trace, final_elbo, epochs, converged })
}

/// Expected response for every cell from the variational means.
pub fn predict_expected(params: &VariationalParams, cutpoints: &[Cutpoints]) -> DMatrix<f64> {
    DMatrix::from_fn(params.num_users(), params.num_questions(), |i, j| {
        expected_response(params.eta(i, j), &cutpoints[j])
    })
}

/// Laplace approximation of one user's posterior with question factors fixed:
/// the mode of `log N(u; prior) + sum log pi_m(u^T v)` found by damped Newton,
/// with the precision at the mode.
pub fn laplace_user_posterior(
    prior: &GaussianBelief,
    answers: &[(DVector<f64>, &Cutpoints, u32)],
) -> Result<GaussianBelief> {
    let r = prior.rank();
    for (v, beta, m) in answers {
        if v.len() != r {
            return Err(Error::Dimension(format!("factor of length {} at rank {r}", v.len())));
        }
        check_finite_vec(v, "question factor")?;
        if !(1..=beta.num_categories()).contains(m) {
            return Err(Error::OutOfRange(format!("category {m} of {}", beta.num_categories())));
        }
    }
    let p0 = prior.precision();
    let objective = |u: &DVector<f64>| {
        let diff = u - prior.mean();
        let mut f = -0.5 * diff.dot(&(p0 * &diff));
        for (v, beta, m) in answers {
            f += log_prob(u.dot(v), beta, *m);
        }
        f
    };
    let mut u = prior.mean().clone();
    let mut f = objective(&u);
    for _ in 0..100 {
        let mut grad = -(p0 * (&u - prior.mean()));
        let mut hess = p0.clone();
        for (v, beta, m) in answers {
            let eta = u.dot(v);
            grad += v * log_prob_grad(eta, beta, *m);
            add_outer(&mut hess, v, neg_log_prob_hessian(eta, beta, *m));
        }
        linalg::symmetrize(&mut hess);
        let step = linalg::cholesky(&hess)?.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand = &u + &step * t;
            let fc = objective(&cand);
            if fc >= f {
                u = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.norm() * t < 1e-12 {
            break;
        }
    }
    let mut precision = p0.clone();
    for (v, beta, m) in answers {
        add_outer(&mut precision, v, neg_log_prob_hessian(u.dot(v), beta, *m));
    }
    linalg::symmetrize(&mut precision);
    GaussianBelief::new(u, precision)
}

/// Per-user state for adaptive selection: prior precision plus the observed
/// information from answered questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationState {
    prior_precision: DMatrix<f64>,
    accumulated: DMatrix<f64>,
    asked: Vec<usize>,
    unasked: Vec<usize>,
}

impl InformationState {
    pub fn new(prior_precision: DMatrix<f64>, num_questions: usize) -> Result<Self> {
        linalg::cholesky(&prior_precision)?;
        let r = prior_precision.nrows();
        Ok(Self {
            prior_precision,
            accumulated: DMatrix::zeros(r, r),
            asked: Vec::new(),
            unasked: (0..num_questions).collect(),
        })
    }

    /// Starts with `excluded` questions removed from the unasked set without
    /// counting them as asked.
    pub fn with_excluded(prior_precision: DMatrix<f64>, num_questions: usize, excluded: &[usize]) -> Result<Self> {
        let mut s = Self::new(prior_precision, num_questions)?;
        s.unasked.retain(|j| !excluded.contains(j));
        Ok(s)
    }

    pub fn rank(&self) -> usize {
        self.prior_precision.nrows()
    }

    pub fn asked(&self) -> &[usize] {
        &self.asked
    }

    pub fn unasked(&self) -> &[usize] {
        &self.unasked
    }

    pub fn accumulated(&self) -> &DMatrix<f64> {
        &self.accumulated
    }

    /// `Lambda_U + sum J`.
    pub fn precision(&self) -> DMatrix<f64> {
        &self.prior_precision + &self.accumulated
    }

    /// Trace of the inverse of [`Self::precision`].
    pub fn trace_objective(&self) -> Result<f64> {
        Ok(linalg::spd_inverse(&self.precision())?.trace())
    }

    /// Moves `j` to the asked set and adds `J(u_hat; m)` for question factor `v`.
    pub fn record(&mut self, j: usize, u_hat: &DVector<f64>, v: &DVector<f64>, beta: &Cutpoints, m: u32) -> Result<()> {
        let pos = self
            .unasked
            .iter()
            .position(|&q| q == j)
            .ok_or_else(|| Error::InvalidArgument(format!("question {j} is not unasked")))?;
        let info = observed_info(u_hat, v, beta, m)?;
        self.unasked.remove(pos);
        self.asked.push(j);
        self.accumulated += info;
        linalg::symmetrize(&mut self.accumulated);
        Ok(())
    }

    /// Marks `j` as asked without adding information (e.g. a skipped question).
    pub fn record_skip(&mut self, j: usize) -> Result<()> {
        let pos = self
            .unasked
            .iter()
            .position(|&q| q == j)
            .ok_or_else(|| Error::InvalidArgument(format!("question {j} is not unasked")))?;
        self.unasked.remove(pos);
        self.asked.push(j);
        Ok(())
    }
}

/// Question minimizing `tr[(Lambda_U + sum J + I_j(u_hat))^-1]`; ties go to
/// the lowest index. Returns the index and the objective value.
pub fn select_next_adaptive(
    u_hat: &DVector<f64>,
    state: &InformationState,
    candidates: &[usize],
    question_factors: &DMatrix<f64>,
    cutpoints: &[Cutpoints],
) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    if question_factors.ncols() != state.rank() || u_hat.len() != state.rank() {
        return Err(Error::Dimension("factor rank differs from the information state".into()));
    }
    if cutpoints.len() != question_factors.nrows() {
        return Err(Error::Dimension("one cutpoint set per question is required".into()));
    }
    check_finite_vec(u_hat, "user estimate")?;
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|j| !state.unasked.contains(j)) {
        return Err(Error::InvalidArgument(format!("candidate {bad} is not unasked")));
    }
    let factors: Vec<DVector<f64>> = sorted.iter().map(|&j| row_vector(question_factors, j)).collect();
    let weights: Vec<f64> =
        sorted.iter().zip(&factors).map(|(&j, v)| expected_curvature(u_hat.dot(v), &cutpoints[j])).collect();
    let scores = rank_one_scores(&state.precision(), &factors, &weights, Criterion::A)?;
    let best = argmin_first(&scores);
    Ok((sorted[best], scores[best]))
}
