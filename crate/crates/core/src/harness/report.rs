use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::active::Criterion;
use crate::data::Holdout;
use crate::harness::metrics::{MetricSums, Metrics};
use crate::harness::strategy::ModelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub strategy: String,
    pub model: ModelKind,
    pub criterion: Option<Criterion>,
    pub rank: usize,
    /// SoftImpute regularization (Gaussian model).
    pub lambda: Option<f64>,
    /// Response precision (Gaussian model).
    pub alpha: Option<f64>,
    pub budget: usize,
    pub split_seed: u64,
    pub strategy_seed: Option<u64>,
    pub train_fraction: f64,
    pub holdout: Holdout,
    pub num_train: usize,
    pub num_sim: usize,
}

/// Questions one simulation user was asked, in order; `None` marks a step
/// with nothing left to ask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPath {
    pub respondent: usize,
    pub questions: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub metadata: ReportMetadata,
    pub question_ids: Vec<String>,
    /// `steps[t][j]`: held-out errors on question `j` after `t` questions;
    /// `t = 0` is the pre-survey condition.
    pub steps: Vec<Vec<MetricSums>>,
    /// Errors with every non-held-out response revealed.
    pub oracle: Vec<MetricSums>,
    pub paths: Vec<UserPath>,
}

fn total(sums: &[MetricSums]) -> MetricSums {
    let mut acc = MetricSums::default();
    for s in sums {
        acc.merge(s);
    }
    acc
}

fn fmt_f(x: f64) -> String {
    format!("{x:.9}")
}

impl SimulationReport {
    pub fn budget(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn question(&self, t: usize, j: usize) -> Option<Metrics> {
        self.steps.get(t)?.get(j)?.finish()
    }

    pub fn pre_survey(&self, j: usize) -> Option<Metrics> {
        self.question(0, j)
    }

    pub fn oracle_question(&self, j: usize) -> Option<Metrics> {
        self.oracle.get(j)?.finish()
    }

    /// Pooled over all held-out cells after `t` questions.
    pub fn overall(&self, t: usize) -> Option<Metrics> {
        total(self.steps.get(t)?).finish()
    }

    pub fn oracle_overall(&self) -> Option<Metrics> {
        total(&self.oracle).finish()
    }

    /// Pooled MAE at budgets `0..=T`.
    pub fn mae_curve(&self) -> Vec<f64> {
        (0..self.steps.len()).map(|t| self.overall(t).map_or(f64::NAN, |m| m.mae)).collect()
    }

    /// Long-format CSV: one row per (stage, budget, question) plus pooled
    /// `ALL` rows. Oracle rows have an empty budget.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,model,stage,budget,question_id,count,mae,mse,bias,wrong_sign\n");
        let name = &self.metadata.strategy;
        let model = self.metadata.model;
        let mut row = |stage: &str, budget: &str, q: &str, m: &Metrics| {
            let ws = m.wrong_sign.map(fmt_f).unwrap_or_default();
            let _ = writeln!(
                out,
                "{name},{model},{stage},{budget},{q},{},{},{},{},{ws}",
                m.count,
                fmt_f(m.mae),
                fmt_f(m.mse),
                fmt_f(m.bias)
            );
        };
        for (t, sums) in self.steps.iter().enumerate() {
            let budget = t.to_string();
            for (j, s) in sums.iter().enumerate() {
                if let Some(m) = s.finish() {
                    row("survey", &budget, &self.question_ids[j], &m);
                }
            }
            if let Some(m) = total(sums).finish() {
                row("survey", &budget, "ALL", &m);
            }
        }
        for (j, s) in self.oracle.iter().enumerate() {
            if let Some(m) = s.finish() {
                row("oracle", "", &self.question_ids[j], &m);
            }
        }
        if let Some(m) = self.oracle_overall() {
            row("oracle", "", "ALL", &m);
        }
        out
    }

    /// `respondent,step,question_id` for every asked question.
    pub fn paths_csv(&self) -> String {
        let mut out = String::from("respondent,step,question_id\n");
        for p in &self.paths {
            for (t, q) in p.questions.iter().enumerate() {
                if let Some(j) = q {
                    let _ = writeln!(out, "{},{},{}", p.respondent, t + 1, self.question_ids[*j]);
                }
            }
        }
        out
    }
}
