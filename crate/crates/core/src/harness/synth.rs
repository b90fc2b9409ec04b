//! Synthetic response matrices with known factors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{QuestionKind, QuestionMeta, ResponseMatrix, ValueScale};
use crate::error::{Error, Result};
use crate::ordlogit::{sample_category, Cutpoints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthModel {
    Gaussian,
    OrderedLogit { categories: u32 },
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub data: ResponseMatrix,
    pub user_factors: DMatrix<f64>,
    pub question_factors: DMatrix<f64>,
    /// Present for ordered-logit data.
    pub cutpoints: Option<Vec<Cutpoints>>,
}

impl SyntheticData {
    /// Noise-free `U V^T`.
    pub fn signal(&self) -> DMatrix<f64> {
        &self.user_factors * self.question_factors.transpose()
    }
}

/// Cutpoints giving equal category probabilities at `eta = 0`.
pub fn uniform_cutpoints(categories: u32) -> Result<Cutpoints> {
    if categories < 2 {
        return Err(Error::InvalidArgument(format!("{categories} categories; need at least 2")));
    }
    let m = categories as f64;
    Cutpoints::new((1..categories).map(|c| (c as f64 / (m - c as f64)).ln()).collect())
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Unit-Gaussian factors `U: n x r`, `V: k x r`; responses are `U V^T` plus
/// `N(0, noise_sd^2)` noise, or ordered-logit draws at `eta = u^T v` with
/// [`uniform_cutpoints`] (`noise_sd` is unused there).
pub fn generate_synthetic(
    n: usize,
    k: usize,
    r: usize,
    noise_sd: f64,
    seed: u64,
    model: SynthModel,
) -> Result<SyntheticData> {
    if n == 0 || k == 0 || r == 0 || r > n.min(k) {
        return Err(Error::InvalidArgument(format!("invalid dimensions n={n}, k={k}, r={r}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sd {noise_sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = normal_matrix(n, r, &mut rng);
    let v = normal_matrix(k, r, &mut rng);
    from_factors(u, v, noise_sd, model, &mut rng)
}

fn from_factors(
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    noise_sd: f64,
    model: SynthModel,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticData> {
    let (n, k) = (u.nrows(), v.nrows());
    let signal = &u * v.transpose();
    match model {
        SynthModel::Gaussian => {
            let values = DMatrix::from_fn(n, k, |i, j| {
                let e: f64 = StandardNormal.sample(rng);
                signal[(i, j)] + noise_sd * e
            });
            let questions =
                (0..k).map(|j| QuestionMeta::new(format!("q{}", j + 1), 2, QuestionKind::Ordinal)).collect();
            Ok(SyntheticData {
                data: ResponseMatrix::dense(values, questions, ValueScale::Continuous)?,
                user_factors: u,
                question_factors: v,
                cutpoints: None,
            })
        }
        SynthModel::OrderedLogit { categories } => {
            let cps = vec![uniform_cutpoints(categories)?; k];
            let values = DMatrix::from_fn(n, k, |i, j| sample_category(signal[(i, j)], &cps[j], rng) as f64);
            let questions =
                (0..k).map(|j| QuestionMeta::new(format!("q{}", j + 1), categories, QuestionKind::Ordinal)).collect();
            Ok(SyntheticData {
                data: ResponseMatrix::dense(values, questions, ValueScale::Ordinal)?,
                user_factors: u,
                question_factors: v,
                cutpoints: Some(cps),
            })
        }
    }
}

/// Like [`generate_synthetic`], but users fall into `groups` subgroups whose
/// factor means are offset by `shift` times a random unit-Gaussian vector. A
/// last column `group` (categories `1..=groups`) records membership.
pub fn generate_grouped_synthetic(
    n: usize,
    k: usize,
    r: usize,
    noise_sd: f64,
    seed: u64,
    groups: u32,
    shift: f64,
) -> Result<SyntheticData> {
    if groups < 2 {
        return Err(Error::InvalidArgument("need at least 2 groups".into()));
    }
    if n == 0 || k == 0 || r == 0 || r > n.min(k) {
        return Err(Error::InvalidArgument(format!("invalid dimensions n={n}, k={k}, r={r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = normal_matrix(groups as usize, r, &mut rng) * shift;
    let membership: Vec<u32> = (0..n).map(|_| rng.random_range(1..=groups)).collect();
    let mut u = normal_matrix(n, r, &mut rng);
    for (i, &g) in membership.iter().enumerate() {
        let mut row = u.row_mut(i);
        row += offsets.row(g as usize - 1);
    }
    let v = normal_matrix(k, r, &mut rng);
    let mut out = from_factors(u, v, noise_sd, SynthModel::Gaussian, &mut rng)?;
    let values = DMatrix::from_fn(n, 1, |i, _| membership[i] as f64);
    let group = ResponseMatrix::dense(
        values,
        vec![QuestionMeta::new("group", groups, QuestionKind::Ordinal)],
        ValueScale::Continuous,
    )?;
    out.data = out.data.hstack(&group)?;
    Ok(out)
}
