//! Derived evaluations over simulation reports: per-question cross-validated
//! error tables, sample-complexity curves and error-reduction distributions.

use std::fmt::Write as _;

use log::warn;

use crate::data::{Holdout, ResponseMatrix, SplitSpec};
use crate::error::{Error, Result};
use crate::harness::metrics::Metrics;
use crate::harness::report::SimulationReport;
use crate::harness::simulate::{simulate_survey, SimulationConfig};
use crate::harness::strategy::{ModelKind, Strategy};

/// Number of error levels at which two curves are compared.
pub const COMPLEXITY_LEVELS: usize = 101;

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionErrorRow {
    pub question: usize,
    pub question_id: String,
    pub pre_survey: Metrics,
    /// Aligned with [`QuestionErrorTable::budgets`].
    pub at_budget: Vec<Metrics>,
    pub oracle: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionErrorTable {
    pub strategy: String,
    pub budgets: Vec<usize>,
    pub rows: Vec<QuestionErrorRow>,
    /// Questions without any held-out response.
    pub skipped: Vec<String>,
}

impl QuestionErrorTable {
    /// `question_id,condition,budget,count,mae,mse,bias,wrong_sign`, with
    /// `pre_survey` and `oracle` rows alongside the `survey` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,question_id,condition,budget,count,mae,mse,bias,wrong_sign\n");
        let mut line = |q: &str, cond: &str, budget: &str, m: &Metrics| {
            let ws = m.wrong_sign.map(|w| format!("{w:.9}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{q},{cond},{budget},{},{:.9},{:.9},{:.9},{ws}",
                self.strategy, m.count, m.mae, m.mse, m.bias
            );
        };
        for row in &self.rows {
            line(&row.question_id, "pre_survey", "0", &row.pre_survey);
            for (b, m) in self.budgets.iter().zip(&row.at_budget) {
                line(&row.question_id, "survey", &b.to_string(), m);
            }
            line(&row.question_id, "oracle", "", &row.oracle);
        }
        out
    }
}

fn check_budgets(budgets: &[usize], k: usize) -> Result<usize> {
    let max = budgets.iter().copied().max().ok_or_else(|| Error::InvalidArgument("no budgets".into()))?;
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 questions".into()));
    }
    if max > k {
        return Err(Error::InvalidArgument(format!("budget {max} exceeds the {k} questions")));
    }
    Ok(max)
}

fn rows_for(
    report: &SimulationReport,
    questions: &[usize],
    budgets: &[usize],
    skipped: &mut Vec<String>,
) -> Vec<QuestionErrorRow> {
    let mut rows = Vec::new();
    for &j in questions {
        let id = report.question_ids[j].clone();
        let (Some(pre), Some(oracle)) = (report.pre_survey(j), report.oracle_question(j)) else {
            warn!("question {id} has no held-out responses; skipped");
            skipped.push(id);
            continue;
        };
        let at_budget = budgets
            .iter()
            .map(|&t| report.question(t.min(report.budget()), j).expect("same cells at every budget"))
            .collect();
        rows.push(QuestionErrorRow { question: j, question_id: id, pre_survey: pre, at_budget, oracle });
    }
    rows
}

/// One simulation per question with that question's column held out.
/// `base` supplies the seed and train fraction; its holdout is replaced.
pub fn loocv_per_question(
    data: &ResponseMatrix,
    base: &SplitSpec,
    strategy: &Strategy,
    model: ModelKind,
    budgets: &[usize],
    config: &SimulationConfig,
) -> Result<QuestionErrorTable> {
    let k = data.ncols();
    let max = check_budgets(budgets, k)?.min(k - 1);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for j in 0..k {
        if data.column_observed_count(j) == 0 {
            warn!("question {} has no observations; skipped", data.questions()[j].id);
            skipped.push(data.questions()[j].id.clone());
            continue;
        }
        let spec = SplitSpec { holdout: Holdout::Loocv { question: j }, ..*base };
        let report = simulate_survey(data, &spec, strategy, model, max, config)?;
        rows.extend(rows_for(&report, &[j], budgets, &mut skipped));
    }
    Ok(QuestionErrorTable { strategy: strategy.name(), budgets: budgets.to_vec(), rows, skipped })
}

/// `folds`-fold cross-validation over questions: every question is evaluated
/// in exactly one run, with its whole fold held out.
pub fn kfold_per_question(
    data: &ResponseMatrix,
    base: &SplitSpec,
    folds: usize,
    strategy: &Strategy,
    model: ModelKind,
    budgets: &[usize],
    config: &SimulationConfig,
) -> Result<QuestionErrorTable> {
    let k = data.ncols();
    let max = check_budgets(budgets, k)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for fold in 0..folds {
        let spec = SplitSpec { holdout: Holdout::KFold { folds, fold }, ..*base };
        spec.validate(k)?;
        let members = crate::data::question_fold(k, folds, fold, base.seed);
        let report = simulate_survey(data, &spec, strategy, model, max.min(k - members.len()), config)?;
        rows.extend(rows_for(&report, &members, budgets, &mut skipped));
    }
    rows.sort_by_key(|r| r.question);
    Ok(QuestionErrorTable { strategy: strategy.name(), budgets: budgets.to_vec(), rows, skipped })
}

fn running_min(curve: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    curve
        .iter()
        .map(|&x| {
            best = best.min(x);
            best
        })
        .collect()
}

/// Fractional budget at which a nonincreasing curve first reaches `level`.
fn questions_to_reach(curve: &[f64], level: f64) -> Option<f64> {
    if curve.first()? <= &level {
        return Some(0.0);
    }
    for t in 1..curve.len() {
        let (hi, lo) = (curve[t - 1], curve[t]);
        if lo <= level {
            return Some((t - 1) as f64 + (hi - level) / (hi - lo));
        }
    }
    None
}

/// `(questions_b, questions_a)` at evenly spaced error levels reached by both
/// budget-to-MAE curves, after monotonizing each by its running minimum.
pub fn sample_complexity_from_curves(curve_a: &[f64], curve_b: &[f64]) -> Vec<(f64, f64)> {
    if curve_a.iter().chain(curve_b).any(|x| !x.is_finite()) || curve_a.is_empty() || curve_b.is_empty() {
        warn!("sample complexity needs finite, nonempty curves");
        return Vec::new();
    }
    let (a, b) = (running_min(curve_a), running_min(curve_b));
    let top = a[0].min(b[0]);
    let bottom = a[a.len() - 1].max(b[b.len() - 1]);
    if bottom > top {
        warn!("error ranges do not overlap");
        return Vec::new();
    }
    let levels = if top == bottom { 1 } else { COMPLEXITY_LEVELS };
    (0..levels)
        .filter_map(|i| {
            let frac = if levels == 1 { 0.0 } else { i as f64 / (levels - 1) as f64 };
            let level = top - frac * (top - bottom);
            Some((questions_to_reach(&b, level)?, questions_to_reach(&a, level)?))
        })
        .collect()
}

/// Relative sample complexity of strategy `a` against strategy `b`.
pub fn sample_complexity_curve(report_a: &SimulationReport, report_b: &SimulationReport) -> Vec<(f64, f64)> {
    if report_a.budget() != report_b.budget() || report_a.question_ids != report_b.question_ids {
        warn!("reports differ in budgets or questions");
        return Vec::new();
    }
    sample_complexity_from_curves(&report_a.mae_curve(), &report_b.mae_curve())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReduction {
    /// `(question index, question id, percent reduction)`.
    pub reductions: Vec<(usize, String, f64)>,
    /// Questions with zero pre-survey MAE.
    pub flagged: Vec<String>,
}

impl ErrorReduction {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("question_id,percent_reduction\n");
        for (_, id, p) in &self.reductions {
            let _ = writeln!(out, "{id},{p:.9}");
        }
        out
    }
}

/// Percent reduction of each question's MAE at `budget` from its pre-survey MAE.
pub fn error_reduction_distribution(report: &SimulationReport, budget: usize) -> Result<ErrorReduction> {
    if budget > report.budget() {
        return Err(Error::OutOfRange(format!("budget {budget} of {}", report.budget())));
    }
    let mut reductions = Vec::new();
    let mut flagged = Vec::new();
    for (j, id) in report.question_ids.iter().enumerate() {
        let (Some(pre), Some(at)) = (report.pre_survey(j), report.question(budget, j)) else {
            continue;
        };
        if pre.mae > 0.0 {
            reductions.push((j, id.clone(), percent_reduction(pre.mae, at.mae)));
        } else {
            warn!("question {id} has zero pre-survey error; excluded");
            flagged.push(id.clone());
        }
    }
    Ok(ErrorReduction { reductions, flagged })
}

pub fn percent_reduction(pre: f64, at_budget: f64) -> f64 {
    100.0 * (pre - at_budget) / pre
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::Criterion;
    use crate::harness::synth::{generate_synthetic, SynthModel};

    #[test]
    fn identical_curves_give_identity() {
        let c = [2.0, 1.5, 1.6, 1.0, 0.8];
        let pairs = sample_complexity_from_curves(&c, &c);
        assert_eq!(pairs.len(), COMPLEXITY_LEVELS);
        for (b, a) in pairs {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn faster_curve_needs_fewer_questions() {
        let fast = [2.0, 1.0, 0.5, 0.4];
        let slow = [2.0, 1.5, 1.0, 0.5];
        let pairs = sample_complexity_from_curves(&fast, &slow);
        assert!(pairs.iter().all(|&(b, a)| a <= b + 1e-12));
        let at_one = pairs.iter().find(|(b, _)| (b - 2.0).abs() < 1e-9);
        assert!(at_one.is_none_or(|&(_, a)| (a - 1.0).abs() < 1e-9));
        assert!((questions_to_reach(&slow, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((questions_to_reach(&fast, 0.75).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_ranges_give_nothing() {
        assert!(sample_complexity_from_curves(&[3.0, 2.5], &[1.0, 0.5]).is_empty());
        assert!(sample_complexity_from_curves(&[], &[1.0]).is_empty());
    }

    #[test]
    fn percent_reduction_endpoints() {
        assert_eq!(percent_reduction(0.7, 0.7), 0.0);
        assert_eq!(percent_reduction(0.7, 0.0), 100.0);
    }

    fn data() -> ResponseMatrix {
        generate_synthetic(80, 6, 2, 0.5, 4, SynthModel::Gaussian).unwrap().data
    }

    fn config() -> SimulationConfig {
        SimulationConfig { rank: 2, lambda_grid_size: 5, ..SimulationConfig::default() }
    }

    #[test]
    fn loocv_has_one_row_per_question() {
        let base = SplitSpec { seed: 3, train_fraction: 0.5, holdout: Holdout::None };
        let table = loocv_per_question(
            &data(),
            &base,
            &Strategy::active(Criterion::A),
            ModelKind::GaussianPmf,
            &[0, 2, 5],
            &config(),
        )
        .unwrap();
        assert_eq!(table.rows.len(), 6);
        for row in &table.rows {
            assert_eq!(row.at_budget[0], row.pre_survey);
            assert!(row.oracle.mse <= row.at_budget[2].mse + 1e-9);
        }
        assert_eq!(table.to_csv().lines().count(), 1 + 6 * 5);
    }

    #[test]
    fn kfold_evaluates_each_question_once() {
        let base = SplitSpec { seed: 5, train_fraction: 0.5, holdout: Holdout::None };
        let table =
            kfold_per_question(&data(), &base, 3, &Strategy::random(1), ModelKind::GaussianPmf, &[1, 3], &config())
                .unwrap();
        let qs: Vec<usize> = table.rows.iter().map(|r| r.question).collect();
        assert_eq!(qs, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn reduction_from_report() {
        let spec = SplitSpec { seed: 1, train_fraction: 0.5, holdout: Holdout::Sparse { fraction: 0.3 } };
        let report =
            simulate_survey(&data(), &spec, &Strategy::active(Criterion::A), ModelKind::GaussianPmf, 4, &config())
                .unwrap();
        let none = error_reduction_distribution(&report, 0).unwrap();
        assert!(none.reductions.iter().all(|(_, _, p)| *p == 0.0));
        let four = error_reduction_distribution(&report, 4).unwrap();
        assert_eq!(four.reductions.len(), 6);
        assert!(error_reduction_distribution(&report, 5).is_err());
        let self_curve = sample_complexity_curve(&report, &report);
        assert!(self_curve.iter().all(|(b, a)| (a - b).abs() < 1e-12));
    }
}
