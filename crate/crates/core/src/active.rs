//! Optimal-design question selection for the Gaussian response model.
//!
//! Asking question `j` adds `alpha v_j v_j^T` to the user's precision. The
//! greedy rule picks the unasked question whose resulting posterior covariance
//! is smallest under the chosen criterion: trace (A), determinant (D) or
//! largest eigenvalue (E). Since the update never looks at the response value,
//! the whole sequence can be computed ahead of time ([`offline_order`]).

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::QuestionMeta;
use crate::error::{Error, Result};
use crate::linalg::{self, add_outer, log_det_from_cholesky, row_vector};
use crate::pmf::{GaussianBelief, NoiseModel};

pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// Trace of the posterior covariance.
    A,
    /// Determinant of the posterior covariance.
    D,
    /// Largest eigenvalue of the posterior covariance.
    E,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "D" => Ok(Self::D),
            "E" => Ok(Self::E),
            other => Err(Error::InvalidArgument(format!("unknown criterion {other:?}"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::D => "D",
            Self::E => "E",
        };
        f.write_str(s)
    }
}

/// Criterion value of the covariance `precision^-1`; smaller is better.
pub fn criterion_value(precision: &DMatrix<f64>, criterion: Criterion) -> Result<f64> {
    let chol = linalg::cholesky(precision)?;
    Ok(match criterion {
        Criterion::A => chol.inverse().trace(),
        Criterion::D => (-log_det_from_cholesky(&chol)).exp(),
        Criterion::E => 1.0 / precision.clone().symmetric_eigen().eigenvalues.min(),
    })
}

/// Scores every candidate after a hypothetical `weight * v_j v_j^T` precision
/// update, using rank-one identities where they exist.
pub(crate) fn rank_one_scores(
    precision: &DMatrix<f64>,
    factors: &[DVector<f64>],
    weights: &[f64],
    criterion: Criterion,
) -> Result<Vec<f64>> {
    let chol = linalg::cholesky(precision)?;
    match criterion {
        Criterion::A => {
            let cov = chol.inverse();
            let base = cov.trace();
            Ok(factors
                .iter()
                .zip(weights)
                .map(|(v, &w)| {
                    let sv = &cov * v;
                    base - w * sv.norm_squared() / (1.0 + w * v.dot(&sv))
                })
                .collect())
        }
        Criterion::D => {
            let log_det_cov = -log_det_from_cholesky(&chol);
            Ok(factors
                .iter()
                .zip(weights)
                .map(|(v, &w)| {
                    let sv = chol.solve(v);
                    log_det_cov - (w * v.dot(&sv)).ln_1p()
                })
                .collect())
        }
        Criterion::E => factors
            .iter()
            .zip(weights)
            .map(|(v, &w)| {
                let mut updated = precision.clone();
                add_outer(&mut updated, v, w);
                linalg::symmetrize(&mut updated);
                criterion_value(&updated, Criterion::E)
            })
            .collect(),
    }
}

/// Index into `scores` of the minimum; the first wins ties.
pub(crate) fn argmin_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = idx;
        }
    }
    best
}

fn sorted_candidates(candidates: &[usize], num_questions: usize) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&j| j >= num_questions) {
        return Err(Error::OutOfRange(format!("question {bad} of {num_questions}")));
    }
    Ok(sorted)
}

/// Greedy choice from a precision matrix; see [`select_next`].
pub fn select_next_from_precision(
    precision: &DMatrix<f64>,
    candidates: &[usize],
    question_factors: &DMatrix<f64>,
    noise: &NoiseModel,
    criterion: Criterion,
) -> Result<(usize, f64)> {
    let sorted = sorted_candidates(candidates, question_factors.nrows())?;
    if question_factors.ncols() != precision.nrows() {
        return Err(Error::Dimension("question factor rank differs from the belief".into()));
    }
    let factors: Vec<DVector<f64>> = sorted.iter().map(|&j| row_vector(question_factors, j)).collect();
    let weights = vec![noise.alpha; factors.len()];
    let scores = rank_one_scores(precision, &factors, &weights, criterion)?;
    let best = argmin_first(&scores);
    let value = match criterion {
        Criterion::D => scores[best].exp(),
        _ => scores[best],
    };
    Ok((sorted[best], value))
}

/// The candidate minimizing the criterion of `(P + alpha v_j v_j^T)^-1`;
/// ties go to the lowest question index.
pub fn select_next(
    belief: &GaussianBelief,
    candidates: &[usize],
    question_factors: &DMatrix<f64>,
    noise: &NoiseModel,
    criterion: Criterion,
) -> Result<usize> {
    select_next_from_precision(belief.precision(), candidates, question_factors, noise, criterion).map(|(j, _)| j)
}

/// With probability `epsilon` a uniformly random candidate, otherwise
/// [`select_next`].
pub fn epsilon_greedy_select<R: Rng + ?Sized>(
    belief: &GaussianBelief,
    candidates: &[usize],
    question_factors: &DMatrix<f64>,
    noise: &NoiseModel,
    criterion: Criterion,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let sorted = sorted_candidates(candidates, question_factors.nrows())?;
    // Always consume one draw so the stream does not depend on epsilon.
    let explore = rng.random::<f64>() < epsilon;
    if explore {
        Ok(sorted[rng.random_range(0..sorted.len())])
    } else {
        select_next(belief, &sorted, question_factors, noise, criterion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOrder {
    pub sequence: Vec<usize>,
    pub criterion: Criterion,
    /// Criterion value after each question is added.
    pub objective_values: Vec<f64>,
}

impl QuestionOrder {
    /// Tab-separated `rank, question id, objective value` with a header.
    pub fn to_tsv(&self, questions: &[QuestionMeta]) -> String {
        let mut out = String::from("rank\tquestion_id\tobjective\n");
        for (rank, (&j, value)) in self.sequence.iter().zip(&self.objective_values).enumerate() {
            let id = questions.get(j).map_or_else(|| j.to_string(), |q| q.id.clone());
            writeln!(out, "{}\t{}\t{:.12e}", rank + 1, id, value).unwrap();
        }
        out
    }
}

/// Runs the greedy rule `steps` times from `prior`, updating only the
/// precision. The result is the same for every respondent.
pub fn offline_order(
    prior: &GaussianBelief,
    question_factors: &DMatrix<f64>,
    noise: &NoiseModel,
    criterion: Criterion,
    steps: usize,
) -> Result<QuestionOrder> {
    let k = question_factors.nrows();
    if steps > k {
        return Err(Error::InvalidArgument(format!("{steps} steps for {k} questions")));
    }
    let mut precision = prior.precision().clone();
    let mut remaining: Vec<usize> = (0..k).collect();
    let mut sequence = Vec::with_capacity(steps);
    let mut objective_values = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (j, value) = select_next_from_precision(&precision, &remaining, question_factors, noise, criterion)?;
        add_outer(&mut precision, &row_vector(question_factors, j), noise.alpha);
        linalg::symmetrize(&mut precision);
        remaining.retain(|&q| q != j);
        sequence.push(j);
        objective_values.push(value);
    }
    Ok(QuestionOrder { sequence, criterion, objective_values })
}
