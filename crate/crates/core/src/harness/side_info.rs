//! Respondent side information: subgroup priors and free covariates.

use std::collections::BTreeMap;

use crate::completion::FactorModel;
use crate::data::ResponseMatrix;
use crate::error::{Error, Result};
use crate::harness::strategy::SideInfo;
use crate::pmf::{empirical_bayes_from_rows, GaussianBelief};

/// Subgroups with fewer training users than this fall back to the global prior.
pub const MIN_SUBGROUP_SIZE: usize = 10;

#[derive(Debug, Clone)]
pub struct SideInfoPlan {
    /// One prior per simulation user.
    pub priors: Vec<GaussianBelief>,
    /// Question ids revealed before the first question.
    pub reveal: Vec<String>,
}

/// Integer-valued covariate key; `None` marks an unobserved covariate.
pub type GroupKey = Vec<Option<i64>>;

pub fn group_key_of(values: &[Option<f64>]) -> GroupKey {
    values.iter().map(|v| v.map(|x| (x * 1e6).round() as i64)).collect()
}

fn covariate_columns(data: &ResponseMatrix, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter().map(|id| data.question_index(id).ok_or_else(|| Error::UnknownCovariate(id.clone()))).collect()
}

fn group_key(data: &ResponseMatrix, i: usize, columns: &[usize]) -> GroupKey {
    group_key_of(&columns.iter().map(|&j| data.get(i, j)).collect::<Vec<_>>())
}

/// Empirical-Bayes beliefs of every training subgroup with at least
/// [`MIN_SUBGROUP_SIZE`] members. `train` rows pair with the rows of `model`'s
/// user factors.
pub fn subgroup_beliefs(
    train: &ResponseMatrix,
    ids: &[String],
    model: &FactorModel,
    jitter: f64,
) -> Result<BTreeMap<GroupKey, GaussianBelief>> {
    if model.num_users() != train.nrows() {
        return Err(Error::Dimension("factor model rows differ from the training half".into()));
    }
    let cols = covariate_columns(train, ids)?;
    let factors = model.user_factors();
    let mut members: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for i in 0..train.nrows() {
        members.entry(group_key(train, i, &cols)).or_default().push(i);
    }
    members
        .into_iter()
        .filter(|(_, rows)| rows.len() >= MIN_SUBGROUP_SIZE)
        .map(|(key, rows)| Ok((key, empirical_bayes_from_rows(&factors.select_rows(&rows), jitter)?)))
        .collect()
}

/// Per-user priors for the simulation half. `train` rows pair with the rows of
/// `model`'s user factors; `global` is the prior used without side info.
pub fn apply_side_info(
    side_info: &SideInfo,
    train: &ResponseMatrix,
    sim: &ResponseMatrix,
    model: &FactorModel,
    global: &GaussianBelief,
    jitter: f64,
) -> Result<SideInfoPlan> {
    match side_info {
        SideInfo::None => Ok(SideInfoPlan { priors: vec![global.clone(); sim.nrows()], reveal: Vec::new() }),
        SideInfo::FreeCovariates(ids) => {
            covariate_columns(sim, ids)?;
            Ok(SideInfoPlan { priors: vec![global.clone(); sim.nrows()], reveal: ids.clone() })
        }
        SideInfo::SubgroupPriors(ids) => {
            let group_priors = subgroup_beliefs(train, ids, model, jitter)?;
            let sim_cols = covariate_columns(sim, ids)?;
            let priors = (0..sim.nrows())
                .map(|i| group_priors.get(&group_key(sim, i, &sim_cols)).cloned().unwrap_or_else(|| global.clone()))
                .collect();
            Ok(SideInfoPlan { priors, reveal: Vec::new() })
        }
    }
}
