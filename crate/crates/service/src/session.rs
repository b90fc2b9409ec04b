//! Session state and its event-sourced transitions.
//!
//! Every change to a session is an [`Event`]. Live requests and crash recovery
//! both go through [`Session::apply`], so replaying a log rebuilds the same
//! state bit for bit.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use survey_core::active::{epsilon_greedy_select, select_next, Criterion};
use survey_core::data::{scale_category, unscale_value, ValueScale};
use survey_core::harness::{ModelKind, Strategy, StrategyKind};
use survey_core::model_file::ModelFile;
use survey_core::ordlogit::{
    category_probs, expected_response, laplace_user_posterior, select_next_adaptive, Cutpoints, InformationState,
};
use survey_core::pmf::{posterior_update, predict_response, GaussianBelief};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Completed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskedItem {
    pub question_id: String,
    /// `None` for a skip.
    pub response: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BeliefState {
    Gaussian {
        belief: GaussianBelief,
    },
    Ordinal {
        info: InformationState,
        /// Laplace approximation given the answers so far.
        posterior: GaussianBelief,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        model: ModelKind,
        strategy: Strategy,
        budget: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariates: Option<Vec<Option<f64>>>,
    },
    Asked {
        question_id: String,
    },
    Answered {
        question_id: String,
        value: f64,
    },
    Skipped {
        question_id: String,
    },
    Ended {
        abandoned: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub model: ModelKind,
    pub strategy: Strategy,
    pub budget: usize,
    pub seed: u64,
    pub status: SessionStatus,
    pub asked: Vec<AskedItem>,
    pub pending: Option<String>,
    pub state: BeliefState,
    /// Events applied so far, including creation.
    pub events: usize,
}

/// Options accepted when creating a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub budget: usize,
    #[serde(default)]
    pub model: Option<ModelKind>,
    /// `active`, `random`, `fixed`, `epsilon_greedy` or `adaptive`.
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub criterion: Option<Criterion>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Question ids for the `fixed` strategy; defaults to file order.
    #[serde(default)]
    pub order: Option<Vec<String>>,
    /// Covariate values selecting a subgroup prior.
    #[serde(default)]
    pub covariates: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub question_id: String,
    pub text: String,
    pub num_categories: u32,
    /// 1-based position of this question in the session.
    pub step: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextQuestion {
    pub status: SessionStatus,
    pub question: Option<QuestionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub status: SessionStatus,
    pub asked: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionFlag {
    Asked,
    Skipped,
    Imputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub flag: PredictionFlag,
    /// The submitted answer for asked questions.
    pub response: Option<f64>,
    /// Prediction on the response scale; the answer itself once asked.
    pub value: f64,
    pub variance: f64,
}

/// FNV-1a; a stable per-session RNG stream.
fn stream_of(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn category_variance(eta: f64, beta: &Cutpoints) -> f64 {
    let probs = category_probs(eta, beta);
    let mean = expected_response(eta, beta);
    probs.iter().enumerate().map(|(c, p)| p * ((c + 1) as f64 - mean).powi(2)).sum()
}

impl Session {
    /// Strategy and creation event for a request against `model`.
    pub fn creation_event(id: String, request: &CreateSession, file: &ModelFile) -> Result<Event> {
        let k = file.num_questions();
        let model = match request.model {
            Some(m) => m,
            None if file.gaussian.is_some() => ModelKind::GaussianPmf,
            None => ModelKind::OrderedLogit,
        };
        if !file.supports(model) {
            return Err(ServiceError::InvalidRequest(format!("the model file has no {model} part")));
        }
        if request.budget > k {
            return Err(ServiceError::InvalidRequest(format!("budget {} exceeds the {k} questions", request.budget)));
        }
        let seed = request.seed.unwrap_or(0);
        let default_name = match model {
            ModelKind::GaussianPmf => "active",
            ModelKind::OrderedLogit => "adaptive",
        };
        let name = request.strategy.as_deref().unwrap_or(default_name);
        let mut strategy = Strategy::parse(name, request.criterion.unwrap_or(Criterion::A), request.epsilon, seed, k)?;
        if let (StrategyKind::FixedOrder { .. }, Some(ids)) = (&strategy.kind, &request.order) {
            let order = ids
                .iter()
                .map(|id| {
                    file.question_index(id)
                        .ok_or_else(|| ServiceError::InvalidRequest(format!("unknown question {id}")))
                })
                .collect::<Result<Vec<_>>>()?;
            strategy = Strategy::new(StrategyKind::FixedOrder { order });
            strategy.validate(k)?;
        } else if request.order.is_some() {
            return Err(ServiceError::InvalidRequest("an order needs the fixed strategy".into()));
        }
        strategy.check_model(model)?;
        let covariates = match &request.covariates {
            None => None,
            Some(values) => {
                let groups = file
                    .gaussian
                    .as_ref()
                    .and_then(|g| g.subgroups.as_ref())
                    .filter(|_| model == ModelKind::GaussianPmf)
                    .ok_or_else(|| ServiceError::InvalidRequest("the model has no subgroup priors".into()))?;
                if let Some(unknown) = values.keys().find(|id| !groups.covariates.contains(id)) {
                    return Err(survey_core::Error::UnknownCovariate(unknown.clone()).into());
                }
                Some(groups.covariates.iter().map(|c| values.get(c).copied()).collect())
            }
        };
        Ok(Event::Created { id, model, strategy, budget: request.budget, seed, covariates })
    }

    /// Initial state from a [`Event::Created`].
    pub fn create(event: &Event, file: &ModelFile) -> Result<Self> {
        let Event::Created { id, model, strategy, budget, seed, covariates } = event else {
            return Err(ServiceError::CorruptLog("log does not start with a creation event".into()));
        };
        let state = match model {
            ModelKind::GaussianPmf => {
                let part =
                    file.gaussian.as_ref().ok_or_else(|| ServiceError::InvalidRequest("no gaussian part".into()))?;
                let belief =
                    covariates.as_deref().and_then(|values| file.subgroup_prior(values)).unwrap_or(&part.prior).clone();
                BeliefState::Gaussian { belief }
            }
            ModelKind::OrderedLogit => {
                let part =
                    file.ordlogit.as_ref().ok_or_else(|| ServiceError::InvalidRequest("no ordlogit part".into()))?;
                BeliefState::Ordinal {
                    info: InformationState::new(part.prior.precision().clone(), file.num_questions())?,
                    posterior: part.prior.clone(),
                }
            }
        };
        let status = if *budget == 0 { SessionStatus::Completed } else { SessionStatus::Active };
        Ok(Self {
            id: id.clone(),
            model: *model,
            strategy: strategy.clone(),
            budget: *budget,
            seed: *seed,
            status,
            asked: Vec::new(),
            pending: None,
            state,
            events: 1,
        })
    }

    /// Rebuilds a session from its full event log.
    pub fn replay(events: &[Event], file: &ModelFile) -> Result<Self> {
        let (first, rest) = events.split_first().ok_or_else(|| ServiceError::CorruptLog("empty event log".into()))?;
        let mut session = Self::create(first, file)?;
        for event in rest {
            session.apply(event, file)?;
        }
        Ok(session)
    }

    fn ensure_active(&self) -> Result<()> {
        if self.status == SessionStatus::Active {
            Ok(())
        } else {
            Err(ServiceError::SessionClosed(self.id.clone()))
        }
    }

    fn question(&self, file: &ModelFile, id: &str) -> Result<usize> {
        file.question_index(id).ok_or_else(|| ServiceError::InvalidRequest(format!("unknown question {id}")))
    }

    fn unasked(&self, file: &ModelFile) -> Vec<usize> {
        (0..file.num_questions())
            .filter(|&j| !self.asked.iter().any(|a| a.question_id == file.questions[j].id))
            .collect()
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stream_of(&self.id));
        rng.set_stream(self.asked.len() as u64);
        rng
    }

    /// The strategy's next question; does not change the session.
    pub fn choose_next(&self, file: &ModelFile) -> Result<usize> {
        let unasked = self.unasked(file);
        if unasked.is_empty() {
            return Err(ServiceError::SessionClosed(self.id.clone()));
        }
        let pick = match (&self.strategy.kind, &self.state) {
            (StrategyKind::Active { criterion }, BeliefState::Gaussian { belief }) => {
                let g = file.gaussian.as_ref().expect("validated at creation");
                select_next(belief, &unasked, g.factors.question_factors(), &g.noise, *criterion)?
            }
            (StrategyKind::EpsilonGreedy { criterion, epsilon, .. }, BeliefState::Gaussian { belief }) => {
                let g = file.gaussian.as_ref().expect("validated at creation");
                let mut rng = self.rng();
                epsilon_greedy_select(
                    belief,
                    &unasked,
                    g.factors.question_factors(),
                    &g.noise,
                    *criterion,
                    *epsilon,
                    &mut rng,
                )?
            }
            (StrategyKind::AdaptiveOrdlogit, BeliefState::Ordinal { info, posterior }) => {
                let o = file.ordlogit.as_ref().expect("validated at creation");
                select_next_adaptive(posterior.mean(), info, &unasked, &o.question_factors, &o.cutpoints)?.0
            }
            (StrategyKind::Random { .. }, _) => {
                let mut order: Vec<usize> = (0..file.num_questions()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stream_of(&self.id));
                order.shuffle(&mut rng);
                *order.iter().find(|j| unasked.contains(j)).expect("unasked is nonempty")
            }
            (StrategyKind::FixedOrder { order }, _) => {
                *order.iter().find(|j| unasked.contains(j)).expect("order is a permutation")
            }
            _ => {
                return Err(survey_core::Error::StrategyModelMismatch {
                    strategy: self.strategy.name(),
                    model: self.model.to_string(),
                }
                .into())
            }
        };
        Ok(pick)
    }

    pub fn progress(&self) -> Progress {
        Progress { status: self.status, asked: self.asked.len(), budget: self.budget }
    }

    pub fn question_view(&self, file: &ModelFile, id: &str) -> Result<QuestionView> {
        let q = &file.questions[self.question(file, id)?];
        Ok(QuestionView {
            question_id: q.id.clone(),
            text: q.display_text().to_string(),
            num_categories: q.num_categories,
            step: self.asked.len() + 1,
            budget: self.budget,
        })
    }

    /// Checks a submitted value and maps it to the model's response scale.
    fn response_value(&self, file: &ModelFile, j: usize, value: f64) -> Result<f64> {
        if !value.is_finite() {
            return Err(ServiceError::InvalidValue("non-finite value".into()));
        }
        let m = file.questions[j].num_categories;
        let continuous = self.model == ModelKind::GaussianPmf
            && file.gaussian.as_ref().is_some_and(|g| g.scale == ValueScale::Continuous);
        if continuous {
            return Ok(value);
        }
        if value.fract() != 0.0 || value < 1.0 || value > m as f64 {
            return Err(ServiceError::InvalidValue(format!("{value} is not a category in 1..={m}")));
        }
        Ok(match self.model {
            ModelKind::GaussianPmf => scale_category(value, m),
            ModelKind::OrderedLogit => value,
        })
    }

    /// Validates `event` against the current state and applies it.
    pub fn apply(&mut self, event: &Event, file: &ModelFile) -> Result<()> {
        match event {
            Event::Created { .. } => return Err(ServiceError::CorruptLog("second creation event".into())),
            Event::Asked { question_id } => {
                self.ensure_active()?;
                let j = self.question(file, question_id)?;
                if let Some(p) = &self.pending {
                    return Err(ServiceError::OutOfOrder { expected: p.clone(), got: question_id.clone() });
                }
                if !self.unasked(file).contains(&j) {
                    return Err(ServiceError::InvalidRequest(format!("question {question_id} was already asked")));
                }
                self.pending = Some(question_id.clone());
            }
            Event::Answered { question_id, value } => {
                self.check_pending(question_id)?;
                let j = self.question(file, question_id)?;
                let y = self.response_value(file, j, *value)?;
                self.update(file, j, Some(y))?;
                self.finish_item(question_id, Some(*value));
            }
            Event::Skipped { question_id } => {
                self.check_pending(question_id)?;
                let j = self.question(file, question_id)?;
                self.update(file, j, None)?;
                self.finish_item(question_id, None);
            }
            Event::Ended { abandoned } => {
                self.ensure_active()?;
                self.pending = None;
                self.status = if *abandoned { SessionStatus::Abandoned } else { SessionStatus::Completed };
            }
        }
        self.events += 1;
        Ok(())
    }

    fn check_pending(&self, question_id: &str) -> Result<()> {
        self.ensure_active()?;
        match &self.pending {
            None => Err(ServiceError::NoPendingQuestion),
            Some(p) if p != question_id => {
                Err(ServiceError::OutOfOrder { expected: p.clone(), got: question_id.to_string() })
            }
            Some(_) => Ok(()),
        }
    }

    fn finish_item(&mut self, question_id: &str, response: Option<f64>) {
        self.asked.push(AskedItem { question_id: question_id.to_string(), response });
        self.pending = None;
        if self.asked.len() >= self.budget {
            self.status = SessionStatus::Completed;
        }
    }

    fn update(&mut self, file: &ModelFile, j: usize, y: Option<f64>) -> Result<()> {
        let asked = &self.asked;
        match &mut self.state {
            BeliefState::Gaussian { belief } => {
                if let Some(y) = y {
                    let g = file.gaussian.as_ref().expect("validated at creation");
                    let v = g.factors.question_factors().row(j).transpose();
                    *belief = posterior_update(belief, &v, y, &g.noise)?;
                }
            }
            BeliefState::Ordinal { info, posterior } => {
                let o = file.ordlogit.as_ref().expect("validated at creation");
                let v = |q: usize| -> DVector<f64> { o.question_factors.row(q).transpose() };
                match y {
                    None => info.record_skip(j)?,
                    Some(m) => {
                        info.record(j, posterior.mean(), &v(j), &o.cutpoints[j], m as u32)?;
                        let mut answers: Vec<(DVector<f64>, &Cutpoints, u32)> = asked
                            .iter()
                            .filter_map(|a| {
                                let q = file.question_index(&a.question_id)?;
                                Some((v(q), &o.cutpoints[q], a.response? as u32))
                            })
                            .collect();
                        answers.push((v(j), &o.cutpoints[j], m as u32));
                        *posterior = laplace_user_posterior(&o.prior, &answers)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Current prediction for every question.
    pub fn predictions(&self, file: &ModelFile) -> Result<Vec<Prediction>> {
        file.questions
            .iter()
            .enumerate()
            .map(|(j, q)| {
                let asked = self.asked.iter().find(|a| a.question_id == q.id);
                if let Some(AskedItem { response: Some(x), .. }) = asked {
                    return Ok(Prediction {
                        question_id: q.id.clone(),
                        flag: PredictionFlag::Asked,
                        response: Some(*x),
                        value: *x,
                        variance: 0.0,
                    });
                }
                let (value, variance) = match &self.state {
                    BeliefState::Gaussian { belief } => {
                        let g = file.gaussian.as_ref().expect("validated at creation");
                        let v = g.factors.question_factors().row(j).transpose();
                        let p = predict_response(belief, &v, &g.noise)?;
                        match g.scale {
                            ValueScale::Continuous => (p.mean, p.variance),
                            _ => {
                                let half = (q.num_categories as f64 - 1.0) / 2.0;
                                (unscale_value(p.clamped_mean, q.num_categories), p.variance * half * half)
                            }
                        }
                    }
                    BeliefState::Ordinal { posterior, .. } => {
                        let o = file.ordlogit.as_ref().expect("validated at creation");
                        let eta = posterior.mean().dot(&o.question_factors.row(j).transpose());
                        (expected_response(eta, &o.cutpoints[j]), category_variance(eta, &o.cutpoints[j]))
                    }
                };
                Ok(Prediction {
                    question_id: q.id.clone(),
                    flag: if asked.is_some() { PredictionFlag::Skipped } else { PredictionFlag::Imputed },
                    response: None,
                    value,
                    variance,
                })
            })
            .collect()
    }
}
