//! Survey simulation: reveal one question per simulation user per step, update
//! beliefs, and score predictions of the held-out cells.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{epsilon_greedy_select, select_next, Criterion};
use crate::completion::{
    default_lambda_grid, lambda_grid_search_with, softimpute_path, FactorModel, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::data::{rescale_responses, scale_category, split_and_holdout, ResponseMatrix, Split, SplitSpec, ValueScale};
use crate::error::{Error, Result};
use crate::harness::metrics::MetricSums;
use crate::harness::report::{ReportMetadata, SimulationReport, UserPath};
use crate::harness::side_info::apply_side_info;
use crate::harness::strategy::{ModelKind, SideInfo, Strategy, StrategyKind};
use crate::linalg::row_vector;
use crate::ordlogit::{
    cutpoints_for_data, cutpoints_for_data_drawn, expected_response_scaled, fit_variational, select_next_adaptive,
    Cutpoints, InformationState, VariationalConfig, VariationalParams,
};
use crate::pmf::{
    batch_posterior, empirical_bayes_from_rows, empirical_bayes_prior, posterior_update, predict_response,
    GaussianBelief, NoiseModel, DEFAULT_JITTER,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Explicit SoftImpute lambda grid; derived from the data when absent.
    pub lambda_grid: Option<Vec<f64>>,
    pub lambda_grid_size: usize,
    /// Smallest grid value as a fraction of the largest.
    pub lambda_grid_ratio: f64,
    /// Share of training responses used to pick lambda.
    pub val_fraction: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub jitter: f64,
    pub variational: VariationalConfig,
    /// Draw ordered-logit cutpoints from the Dirichlet instead of its mean.
    pub draw_cutpoints: bool,
    /// Set `1/alpha` to the mean squared training residual instead of using `alpha`.
    #[serde(default)]
    pub alpha_from_residuals: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            alpha: 1.0,
            lambda_grid: None,
            lambda_grid_size: 12,
            lambda_grid_ratio: 1e-3,
            val_fraction: 0.2,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            jitter: DEFAULT_JITTER,
            variational: VariationalConfig::default(),
            draw_cutpoints: false,
            alpha_from_residuals: false,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Fitted {
    Gaussian {
        factors: FactorModel,
        lambda: f64,
        prior: GaussianBelief,
        noise: NoiseModel,
    },
    Ordinal {
        cutpoints: Vec<Cutpoints>,
        train_params: VariationalParams,
        /// Zero-mean identity prior used inside the variational fits.
        vi_prior: GaussianBelief,
        /// Empirical-Bayes prior from the fitted user means; its precision is
        /// `Lambda_U` in adaptive selection.
        selection_prior: GaussianBelief,
    },
}

/// A split plus fitted question factors, shared by every strategy in one
/// comparison.
#[derive(Debug, Clone)]
pub struct Comparison {
    model: ModelKind,
    spec: SplitSpec,
    config: SimulationConfig,
    split: Split,
    /// Split halves before subgroup label columns were dropped.
    labelled_train: ResponseMatrix,
    labelled_sim: ResponseMatrix,
    fitted: Fitted,
}

fn side_info_ids(strategies: &[Strategy]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut labels = BTreeSet::new();
    let mut covariates = BTreeSet::new();
    for s in strategies {
        match &s.side_info {
            SideInfo::SubgroupPriors(ids) => labels.extend(ids.iter().cloned()),
            SideInfo::FreeCovariates(ids) => covariates.extend(ids.iter().cloned()),
            SideInfo::None => {}
        }
    }
    (labels, covariates)
}

fn drop_columns(m: &ResponseMatrix, cols: &[usize]) -> ResponseMatrix {
    let mut sorted = cols.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.iter().fold(m.clone(), |acc, &j| acc.remove_column(j))
}

fn user_rng(seed: u64, respondent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(respondent as u64);
    rng
}

impl Comparison {
    /// Splits `data`, fits question factors on the training half and prepares
    /// the priors. `strategies` are checked against `model` and determine which
    /// columns are side information.
    pub fn prepare(
        data: &ResponseMatrix,
        spec: &SplitSpec,
        model: ModelKind,
        strategies: &[Strategy],
        config: &SimulationConfig,
    ) -> Result<Self> {
        for s in strategies {
            s.check_model(model)?;
        }
        let (labels, covariates) = side_info_ids(strategies);
        if model == ModelKind::OrderedLogit && !labels.is_empty() {
            return Err(Error::InvalidArgument("subgroup priors need the gaussian model".into()));
        }
        let working = match (model, data.scale()) {
            (ModelKind::GaussianPmf, ValueScale::Ordinal) => rescale_responses(data)?,
            (ModelKind::GaussianPmf, _) => data.clone(),
            (ModelKind::OrderedLogit, ValueScale::Ordinal) => data.clone(),
            (ModelKind::OrderedLogit, _) => {
                return Err(Error::InvalidArgument("the ordered logit model needs raw categories".into()))
            }
        };
        for id in labels.iter().chain(&covariates) {
            if working.question_index(id).is_none() {
                return Err(Error::UnknownCovariate(id.clone()));
            }
        }
        let labelled = split_and_holdout(&working, spec)?;
        let label_cols: Vec<usize> = labels.iter().filter_map(|id| working.question_index(id)).collect();
        let keep: Vec<usize> = (0..working.ncols()).filter(|j| !label_cols.contains(j)).collect();
        let remap = |j: usize| keep.iter().position(|&c| c == j);

        let mut split = Split {
            train: drop_columns(&labelled.train, &label_cols),
            sim: drop_columns(&labelled.sim, &label_cols),
            holdout: labelled.holdout.select_columns(&keep),
            excluded_questions: labelled.excluded_questions.iter().filter_map(|&j| remap(j)).collect(),
        };
        for id in &covariates {
            let j = split.sim.question_index(id).expect("checked above");
            split.holdout.column_mut(j).fill(false);
            split.excluded_questions.retain(|&q| q != j);
        }
        for s in strategies {
            s.validate(split.sim.ncols())?;
        }

        let fitted = match model {
            ModelKind::GaussianPmf => fit_gaussian(&split.train, spec.seed, config)?,
            ModelKind::OrderedLogit => fit_ordinal(&split.train, spec.seed, config)?,
        };
        Ok(Self {
            model,
            spec: *spec,
            config: config.clone(),
            split,
            labelled_train: labelled.train,
            labelled_sim: labelled.sim,
            fitted,
        })
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    /// Fitted SoftImpute factors (Gaussian model).
    pub fn factor_model(&self) -> Option<&FactorModel> {
        match &self.fitted {
            Fitted::Gaussian { factors, .. } => Some(factors),
            Fitted::Ordinal { .. } => None,
        }
    }

    pub fn gaussian_prior(&self) -> Option<&GaussianBelief> {
        match &self.fitted {
            Fitted::Gaussian { prior, .. } => Some(prior),
            Fitted::Ordinal { .. } => None,
        }
    }

    /// Question factors used for selection: SoftImpute `V` or the variational
    /// question means.
    pub fn question_factors(&self) -> &DMatrix<f64> {
        match &self.fitted {
            Fitted::Gaussian { factors, .. } => factors.question_factors(),
            Fitted::Ordinal { train_params, .. } => &train_params.question_means,
        }
    }

    pub fn cutpoints(&self) -> Option<&[Cutpoints]> {
        match &self.fitted {
            Fitted::Gaussian { .. } => None,
            Fitted::Ordinal { cutpoints, .. } => Some(cutpoints),
        }
    }

    pub fn selection_prior(&self) -> Option<&GaussianBelief> {
        match &self.fitted {
            Fitted::Gaussian { .. } => None,
            Fitted::Ordinal { selection_prior, .. } => Some(selection_prior),
        }
    }

    pub fn train_params(&self) -> Option<&VariationalParams> {
        match &self.fitted {
            Fitted::Gaussian { .. } => None,
            Fitted::Ordinal { train_params, .. } => Some(train_params),
        }
    }

    fn reveal_columns(&self, strategy: &Strategy) -> Vec<usize> {
        match &strategy.side_info {
            SideInfo::FreeCovariates(ids) => ids.iter().filter_map(|id| self.split.sim.question_index(id)).collect(),
            _ => Vec::new(),
        }
    }

    fn candidates(&self, reveal: &[usize]) -> Vec<usize> {
        (0..self.split.sim.ncols())
            .filter(|j| !self.split.excluded_questions.contains(j) && !reveal.contains(j))
            .collect()
    }

    fn metadata(&self, strategy: &Strategy, budget: usize) -> ReportMetadata {
        let (lambda, alpha) = match &self.fitted {
            Fitted::Gaussian { lambda, noise, .. } => (Some(*lambda), Some(noise.alpha)),
            Fitted::Ordinal { .. } => (None, None),
        };
        let strategy_seed = match strategy.kind {
            StrategyKind::Random { seed } | StrategyKind::EpsilonGreedy { seed, .. } => Some(seed),
            _ => None,
        };
        ReportMetadata {
            strategy: strategy.name(),
            model: self.model,
            criterion: strategy.criterion(),
            rank: self.config.rank,
            lambda,
            alpha,
            budget,
            split_seed: self.spec.seed,
            strategy_seed,
            train_fraction: self.spec.train_fraction,
            holdout: self.spec.holdout,
            num_train: self.split.train.nrows(),
            num_sim: self.split.sim.nrows(),
        }
    }

    /// Held-out cells of simulation user `i`.
    fn targets(&self, i: usize) -> Vec<usize> {
        (0..self.split.sim.ncols()).filter(|&j| self.split.holdout[(i, j)]).collect()
    }

    /// Truth on the error scale: as stored for the Gaussian model, rescaled to
    /// `[-1, 1]` for the ordered logit.
    fn truth(&self, i: usize, j: usize) -> f64 {
        let x = self.split.sim.get(i, j).expect("held-out cells are observed");
        match self.model {
            ModelKind::GaussianPmf => x,
            ModelKind::OrderedLogit => scale_category(x, self.split.sim.questions()[j].num_categories),
        }
    }

    /// Runs `strategy` for `budget` steps.
    pub fn run(&self, strategy: &Strategy, budget: usize) -> Result<SimulationReport> {
        strategy.check_model(self.model)?;
        strategy.validate(self.split.sim.ncols())?;
        if budget > self.split.sim.ncols() {
            return Err(Error::InvalidArgument(format!(
                "budget {budget} exceeds the {} questions",
                self.split.sim.ncols()
            )));
        }
        if let SideInfo::SubgroupPriors(_) | SideInfo::FreeCovariates(_) = &strategy.side_info {
            let (labels, covs) = side_info_ids(std::slice::from_ref(strategy));
            let known = |id: &String| {
                self.labelled_train.question_index(id).is_some()
                    && (covs.contains(id) == self.split.sim.question_index(id).is_some() || labels.contains(id))
            };
            if let Some(id) = labels.iter().chain(&covs).find(|id| !known(id)) {
                return Err(Error::UnknownCovariate(id.clone()));
            }
        }
        match &self.fitted {
            Fitted::Gaussian { factors, prior, noise, .. } => {
                self.run_gaussian(strategy, budget, factors, prior, noise)
            }
            Fitted::Ordinal { cutpoints, train_params, vi_prior, selection_prior } => {
                self.run_ordinal(strategy, budget, cutpoints, train_params, vi_prior, selection_prior)
            }
        }
    }

    fn run_gaussian(
        &self,
        strategy: &Strategy,
        budget: usize,
        factors: &FactorModel,
        prior: &GaussianBelief,
        noise: &NoiseModel,
    ) -> Result<SimulationReport> {
        let plan = apply_side_info(
            &strategy.side_info,
            &self.labelled_train,
            &self.labelled_sim,
            factors,
            prior,
            self.config.jitter,
        )?;
        let reveal = self.reveal_columns(strategy);
        let candidates = self.candidates(&reveal);
        let v = factors.question_factors();
        let sim = &self.split.sim;
        let clamp = sim.scale() != ValueScale::Continuous;
        let predict = |belief: &GaussianBelief, j: usize| -> Result<f64> {
            let p = predict_response(belief, &row_vector(v, j), noise)?;
            Ok(if clamp { p.clamped_mean } else { p.mean })
        };

        let traces: Vec<UserTrace> = (0..sim.nrows())
            .into_par_iter()
            .map(|i| -> Result<UserTrace> {
                let respondent = sim.respondents()[i];
                let targets = self.targets(i);
                let user_prior = &plan.priors[i];
                let mut belief = user_prior.clone();
                for &j in &reveal {
                    if self.split.available(i, j) {
                        belief = posterior_update(&belief, &row_vector(v, j), sim.get(i, j).unwrap(), noise)?;
                    }
                }
                let mut selector = Selector::new(strategy, &candidates, respondent);
                let mut unasked = candidates.clone();
                let mut path = Vec::with_capacity(budget);
                let mut preds = Vec::with_capacity(budget + 1);
                preds.push(targets.iter().map(|&j| predict(&belief, j)).collect::<Result<Vec<_>>>()?);
                for _ in 0..budget {
                    let pick = if unasked.is_empty() {
                        None
                    } else {
                        Some(selector.pick_gaussian(&belief, &unasked, v, noise)?)
                    };
                    if let Some(j) = pick {
                        unasked.retain(|&q| q != j);
                        if self.split.available(i, j) {
                            belief = posterior_update(&belief, &row_vector(v, j), sim.get(i, j).unwrap(), noise)?;
                        }
                    }
                    path.push(pick);
                    preds.push(targets.iter().map(|&j| predict(&belief, j)).collect::<Result<Vec<_>>>()?);
                }
                let revealed: Vec<usize> = (0..sim.ncols()).filter(|&j| self.split.available(i, j)).collect();
                let v_obs = v.select_rows(&revealed);
                let y = DVector::from_iterator(revealed.len(), revealed.iter().map(|&j| sim.get(i, j).unwrap()));
                let oracle_belief = batch_posterior(user_prior, &v_obs, &y, noise)?;
                let oracle = targets.iter().map(|&j| predict(&oracle_belief, j)).collect::<Result<Vec<_>>>()?;
                Ok(UserTrace { respondent, targets, path, preds, oracle })
            })
            .collect::<Result<_>>()?;
        Ok(self.assemble(strategy, budget, traces))
    }

    fn run_ordinal(
        &self,
        strategy: &Strategy,
        budget: usize,
        cutpoints: &[Cutpoints],
        train_params: &VariationalParams,
        vi_prior: &GaussianBelief,
        selection_prior: &GaussianBelief,
    ) -> Result<SimulationReport> {
        let sim = &self.split.sim;
        let (n_train, n_sim, k) = (self.split.train.nrows(), sim.nrows(), sim.ncols());
        let rank = self.config.rank;
        let reveal = self.reveal_columns(strategy);
        let candidates = self.candidates(&reveal);
        let mut revealed = DMatrix::from_element(n_sim, k, false);
        for i in 0..n_sim {
            for &j in &reveal {
                revealed[(i, j)] = self.split.available(i, j);
            }
        }
        let mut params = train_params.with_users(n_sim);
        let mut round = 0u64;
        let mut refit = |revealed: &DMatrix<bool>, params: &mut VariationalParams| -> Result<()> {
            let hidden = revealed.map(|r| !r);
            let combined = self.split.train.vstack(&sim.without(&hidden))?;
            let config = VariationalConfig {
                seed: self.config.variational.seed.wrapping_add(round.wrapping_mul(0x9e37_79b9)),
                ..self.config.variational
            };
            round += 1;
            let fit = fit_variational(&combined, cutpoints, rank, vi_prior, vi_prior, &config, Some(params))?;
            *params = fit.params;
            Ok(())
        };
        if !reveal.is_empty() {
            refit(&revealed, &mut params)?;
        }
        let targets: Vec<Vec<usize>> = (0..n_sim).map(|i| self.targets(i)).collect();
        let predict_all = |params: &VariationalParams| -> Vec<Vec<f64>> {
            targets
                .iter()
                .enumerate()
                .map(|(i, ts)| {
                    ts.iter().map(|&j| expected_response_scaled(params.eta(n_train + i, j), &cutpoints[j])).collect()
                })
                .collect()
        };

        struct UserState {
            selector: Selector,
            info: InformationState,
            unasked: Vec<usize>,
            path: Vec<Option<usize>>,
            preds: Vec<Vec<f64>>,
        }
        let excluded: Vec<usize> = (0..k).filter(|j| !candidates.contains(j)).collect();
        let mut users: Vec<UserState> = (0..n_sim)
            .map(|i| -> Result<UserState> {
                Ok(UserState {
                    selector: Selector::new(strategy, &candidates, sim.respondents()[i]),
                    info: InformationState::with_excluded(selection_prior.precision().clone(), k, &excluded)?,
                    unasked: candidates.clone(),
                    path: Vec::with_capacity(budget),
                    preds: Vec::with_capacity(budget + 1),
                })
            })
            .collect::<Result<_>>()?;
        for (u, p) in users.iter_mut().zip(predict_all(&params)) {
            u.preds.push(p);
        }

        for _ in 0..budget {
            let nu = params.question_means.clone();
            let current = &params;
            users.par_iter_mut().enumerate().try_for_each(|(i, state)| -> Result<()> {
                let pick = if state.unasked.is_empty() {
                    None
                } else {
                    let u_hat = current.user_mean(n_train + i);
                    Some(state.selector.pick_ordinal(&u_hat, &state.info, &state.unasked, &nu, cutpoints)?)
                };
                if let Some(j) = pick {
                    state.unasked.retain(|&q| q != j);
                    if state.info.unasked().contains(&j) {
                        if self.split.available(i, j) {
                            let m = sim.get(i, j).unwrap().round() as u32;
                            let u_hat = current.user_mean(n_train + i);
                            state.info.record(j, &u_hat, &row_vector(&nu, j), &cutpoints[j], m)?;
                        } else {
                            state.info.record_skip(j)?;
                        }
                    }
                }
                state.path.push(pick);
                Ok(())
            })?;
            for (i, state) in users.iter().enumerate() {
                if let Some(Some(j)) = state.path.last() {
                    revealed[(i, *j)] = self.split.available(i, *j);
                }
            }
            refit(&revealed, &mut params)?;
            for (u, p) in users.iter_mut().zip(predict_all(&params)) {
                u.preds.push(p);
            }
        }

        let all_available = DMatrix::from_fn(n_sim, k, |i, j| self.split.available(i, j));
        let mut oracle_params = params.clone();
        refit(&all_available, &mut oracle_params)?;
        let oracle = predict_all(&oracle_params);
        let traces = users
            .into_iter()
            .zip(oracle)
            .zip(targets)
            .enumerate()
            .map(|(i, ((state, oracle), targets))| UserTrace {
                respondent: sim.respondents()[i],
                targets,
                path: state.path,
                preds: state.preds,
                oracle,
            })
            .collect();
        Ok(self.assemble(strategy, budget, traces))
    }

    fn assemble(&self, strategy: &Strategy, budget: usize, traces: Vec<UserTrace>) -> SimulationReport {
        let k = self.split.sim.ncols();
        let mut steps = vec![vec![MetricSums::default(); k]; budget + 1];
        let mut oracle = vec![MetricSums::default(); k];
        let mut paths = Vec::with_capacity(traces.len());
        for (i, trace) in traces.into_iter().enumerate() {
            for (c, &j) in trace.targets.iter().enumerate() {
                let truth = self.truth(i, j);
                for (t, preds) in trace.preds.iter().enumerate() {
                    steps[t][j].add(preds[c], truth);
                }
                oracle[j].add(trace.oracle[c], truth);
            }
            paths.push(UserPath { respondent: trace.respondent, questions: trace.path });
        }
        SimulationReport {
            metadata: self.metadata(strategy, budget),
            question_ids: self.split.sim.questions().iter().map(|q| q.id.clone()).collect(),
            steps,
            oracle,
            paths,
        }
    }
}

struct UserTrace {
    respondent: usize,
    targets: Vec<usize>,
    path: Vec<Option<usize>>,
    /// `preds[t][c]` for target `targets[c]` after `t` questions.
    preds: Vec<Vec<f64>>,
    oracle: Vec<f64>,
}

/// Per-user question chooser.
enum Selector {
    Active(Criterion),
    EpsilonGreedy { criterion: Criterion, epsilon: f64, rng: ChaCha8Rng },
    Queue(VecDeque<usize>),
    Adaptive,
}

impl Selector {
    fn new(strategy: &Strategy, candidates: &[usize], respondent: usize) -> Self {
        match &strategy.kind {
            StrategyKind::Active { criterion } => Self::Active(*criterion),
            StrategyKind::EpsilonGreedy { criterion, epsilon, seed } => {
                Self::EpsilonGreedy { criterion: *criterion, epsilon: *epsilon, rng: user_rng(*seed, respondent) }
            }
            StrategyKind::Random { seed } => {
                let mut order = candidates.to_vec();
                order.shuffle(&mut user_rng(*seed, respondent));
                Self::Queue(order.into())
            }
            StrategyKind::FixedOrder { order } => {
                Self::Queue(order.iter().copied().filter(|j| candidates.contains(j)).collect())
            }
            StrategyKind::AdaptiveOrdlogit => Self::Adaptive,
        }
    }

    fn next_in_queue(queue: &mut VecDeque<usize>, unasked: &[usize]) -> Option<usize> {
        while let Some(j) = queue.pop_front() {
            if unasked.contains(&j) {
                return Some(j);
            }
        }
        None
    }

    fn pick_gaussian(
        &mut self,
        belief: &GaussianBelief,
        unasked: &[usize],
        v: &DMatrix<f64>,
        noise: &NoiseModel,
    ) -> Result<usize> {
        match self {
            Self::Active(c) => select_next(belief, unasked, v, noise, *c),
            Self::EpsilonGreedy { criterion, epsilon, rng } => {
                epsilon_greedy_select(belief, unasked, v, noise, *criterion, *epsilon, rng)
            }
            Self::Queue(q) => {
                Self::next_in_queue(q, unasked).ok_or_else(|| Error::InvalidArgument("question queue exhausted".into()))
            }
            Self::Adaptive => Err(Error::StrategyModelMismatch {
                strategy: "adaptive_ordlogit".into(),
                model: ModelKind::GaussianPmf.to_string(),
            }),
        }
    }

    fn pick_ordinal(
        &mut self,
        u_hat: &DVector<f64>,
        info: &InformationState,
        unasked: &[usize],
        nu: &DMatrix<f64>,
        cutpoints: &[Cutpoints],
    ) -> Result<usize> {
        match self {
            Self::Adaptive => select_next_adaptive(u_hat, info, unasked, nu, cutpoints).map(|(j, _)| j),
            Self::Queue(q) => {
                Self::next_in_queue(q, unasked).ok_or_else(|| Error::InvalidArgument("question queue exhausted".into()))
            }
            Self::Active(_) | Self::EpsilonGreedy { .. } => Err(Error::StrategyModelMismatch {
                strategy: "active".into(),
                model: ModelKind::OrderedLogit.to_string(),
            }),
        }
    }
}

pub(crate) fn fit_gaussian(train: &ResponseMatrix, seed: u64, config: &SimulationConfig) -> Result<Fitted> {
    let grid = match &config.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(train, config.lambda_grid_size, config.lambda_grid_ratio),
    };
    let search =
        lambda_grid_search_with(train, &grid, config.val_fraction, config.rank, seed, config.tol, config.max_iter)?;
    let path: Vec<f64> = grid.iter().copied().take_while(|&l| l >= search.best_lambda).collect();
    let fit = softimpute_path(train, &path, config.rank, config.tol, config.max_iter)?;
    let prior = empirical_bayes_prior(&fit.model, config.jitter)?;
    let noise = if config.alpha_from_residuals {
        NoiseModel::from_residuals(train, &fit.model)?
    } else {
        NoiseModel::new(config.alpha)?
    };
    Ok(Fitted::Gaussian { lambda: search.best_lambda, factors: fit.model, prior, noise })
}

pub(crate) fn fit_ordinal(train: &ResponseMatrix, seed: u64, config: &SimulationConfig) -> Result<Fitted> {
    let cutpoints =
        if config.draw_cutpoints { cutpoints_for_data_drawn(train, seed)? } else { cutpoints_for_data(train)? };
    let vi_prior = GaussianBelief::isotropic(config.rank, 1.0)?;
    let fit = fit_variational(train, &cutpoints, config.rank, &vi_prior, &vi_prior, &config.variational, None)?;
    let selection_prior = empirical_bayes_from_rows(&fit.params.user_means, config.jitter)?;
    Ok(Fitted::Ordinal { cutpoints, train_params: fit.params, vi_prior, selection_prior })
}

/// Prepares a single-strategy comparison and runs it.
pub fn simulate_survey(
    data: &ResponseMatrix,
    spec: &SplitSpec,
    strategy: &Strategy,
    model: ModelKind,
    budget: usize,
    config: &SimulationConfig,
) -> Result<SimulationReport> {
    Comparison::prepare(data, spec, model, std::slice::from_ref(strategy), config)?.run(strategy, budget)
}

/// Runs every strategy against one shared split and set of factors.
pub fn simulate_strategies(
    data: &ResponseMatrix,
    spec: &SplitSpec,
    strategies: &[Strategy],
    model: ModelKind,
    budget: usize,
    config: &SimulationConfig,
) -> Result<Vec<SimulationReport>> {
    let comparison = Comparison::prepare(data, spec, model, strategies, config)?;
    strategies.iter().map(|s| comparison.run(s, budget)).collect()
}
