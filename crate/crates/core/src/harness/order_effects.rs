//! Question-order effects in administered surveys.
//!
//! Position effects regress per-question standardized responses on relative
//! position and compare against a permutation null. Pairwise effects fit an L1
//! penalized regression on (question, previous question) indicators. Every
//! response has at most one such indicator, so the lasso solution is a
//! soft-thresholded cell mean and cross-validation is cheap.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_CV_FOLDS: usize = 10;
const LAMBDA_GRID: usize = 60;
const LAMBDA_RATIO: f64 = 1e-3;

/// One respondent's survey in the order it was administered; `None` marks a skip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdministeredSurvey {
    pub respondent: usize,
    pub items: Vec<(usize, Option<f64>)>,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderLog {
    pub questions: Vec<String>,
    pub surveys: Vec<AdministeredSurvey>,
}

/// A single answered item with its standardized value.
#[derive(Debug, Clone, Copy)]
struct Obs {
    survey: usize,
    question: usize,
    position: usize,
    previous: Option<usize>,
    z: f64,
}

impl OrderLog {
    pub fn validate(&self) -> Result<()> {
        let k = self.questions.len();
        for s in &self.surveys {
            let mut seen = vec![false; k];
            for &(q, v) in &s.items {
                if q >= k {
                    return Err(Error::OutOfRange(format!("question {q} of {k}")));
                }
                if std::mem::replace(&mut seen[q], true) {
                    return Err(Error::InvalidArgument(format!(
                        "respondent {} answered question {q} twice",
                        s.respondent
                    )));
                }
                if v.is_some_and(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("response of respondent {}", s.respondent)));
                }
            }
        }
        Ok(())
    }

    /// Answered items of completed surveys, standardized per question.
    fn standardized(&self) -> Vec<Obs> {
        let k = self.questions.len();
        let mut raw = Vec::new();
        for (s, survey) in self.surveys.iter().enumerate().filter(|(_, s)| s.completed) {
            for (pos, &(q, v)) in survey.items.iter().enumerate() {
                if let Some(x) = v {
                    let previous = pos.checked_sub(1).map(|p| survey.items[p].0);
                    raw.push((Obs { survey: s, question: q, position: pos, previous, z: 0.0 }, x));
                }
            }
        }
        let mut stats = vec![(0usize, 0.0f64, 0.0f64); k];
        for (o, x) in &raw {
            let e = &mut stats[o.question];
            e.0 += 1;
            e.1 += x;
        }
        for (o, x) in &raw {
            let e = &mut stats[o.question];
            let mean = e.1 / e.0 as f64;
            e.2 += (x - mean).powi(2);
        }
        raw.into_iter()
            .map(|(mut o, x)| {
                let (n, sum, ss) = stats[o.question];
                let mean = sum / n as f64;
                let sd = (ss / n as f64).sqrt();
                o.z = if sd > 0.0 { (x - mean) / sd } else { 0.0 };
                o
            })
            .collect()
    }
}

fn relative_position(position: usize, len: usize) -> f64 {
    if len > 1 {
        position as f64 / (len - 1) as f64
    } else {
        0.0
    }
}

/// OLS slope of `y` on `x`; zero when `x` is constant.
fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEffect {
    pub question: usize,
    pub question_id: String,
    /// Fitted end-minus-start difference in standard deviations.
    pub effect: f64,
    pub null_low: f64,
    pub null_high: f64,
    pub flagged: bool,
    pub responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEffects {
    pub effects: Vec<PositionEffect>,
    /// Questions answered at fewer than 3 distinct positions.
    pub skipped: Vec<String>,
    pub permutations: usize,
}

impl PositionEffects {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("question_id,effect,null_low,null_high,flagged,responses\n");
        for e in &self.effects {
            let _ = writeln!(
                out,
                "{},{:.9},{:.9},{:.9},{},{}",
                e.question_id, e.effect, e.null_low, e.null_high, e.flagged, e.responses
            );
        }
        out
    }
}

/// Per-question slope of standardized response on relative position, with a
/// null band from `permutations` random re-orderings of each survey.
pub fn position_effect_estimate(log: &OrderLog, permutations: usize, seed: u64) -> Result<PositionEffects> {
    log.validate()?;
    if permutations == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let obs = log.standardized();
    let lens: Vec<usize> = log.surveys.iter().map(|s| s.items.len()).collect();
    let k = log.questions.len();
    let mut by_question: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (idx, o) in obs.iter().enumerate() {
        by_question[o.question].push(idx);
    }
    let usable: Vec<usize> = (0..k)
        .filter(|&q| {
            let mut positions: Vec<usize> = by_question[q].iter().map(|&i| obs[i].position).collect();
            positions.sort_unstable();
            positions.dedup();
            positions.len() >= 3
        })
        .collect();

    let slopes = |positions: &dyn Fn(&Obs) -> usize| -> Vec<f64> {
        usable
            .iter()
            .map(|&q| {
                let idx = &by_question[q];
                let x: Vec<f64> =
                    idx.iter().map(|&i| relative_position(positions(&obs[i]), lens[obs[i].survey])).collect();
                let y: Vec<f64> = idx.iter().map(|&i| obs[i].z).collect();
                ols_slope(&x, &y)
            })
            .collect()
    };
    let observed = slopes(&|o: &Obs| o.position);

    let null: Vec<Vec<f64>> = (0..permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let perms: Vec<Vec<usize>> = lens
                .iter()
                .map(|&len| {
                    let mut order: Vec<usize> = (0..len).collect();
                    order.shuffle(&mut rng);
                    order
                })
                .collect();
            slopes(&|o: &Obs| perms[o.survey][o.position])
        })
        .collect();

    let effects = usable
        .iter()
        .enumerate()
        .map(|(c, &q)| {
            let mut draws: Vec<f64> = null.iter().map(|row| row[c]).collect();
            draws.sort_by(f64::total_cmp);
            let (lo, hi) = (quantile(&draws, 0.025), quantile(&draws, 0.975));
            PositionEffect {
                question: q,
                question_id: log.questions[q].clone(),
                effect: observed[c],
                null_low: lo,
                null_high: hi,
                flagged: observed[c] < lo || observed[c] > hi,
                responses: by_question[q].len(),
            }
        })
        .collect();
    let skipped = (0..k).filter(|q| !usable.contains(q)).map(|q| log.questions[q].clone()).collect();
    Ok(PositionEffects { effects, skipped, permutations })
}

/// Which responses enter the pairwise regression, by the 1-based position of
/// the current question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairParity {
    #[default]
    All,
    Odd,
    Even,
}

impl std::str::FromStr for PairParity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(Self::All),
            "odd" => Ok(Self::Odd),
            "even" => Ok(Self::Even),
            other => Err(Error::InvalidArgument(format!("unknown parity {other:?}"))),
        }
    }
}

impl PairParity {
    fn admits(self, position: usize) -> bool {
        match self {
            Self::All => true,
            Self::Odd => !(position + 1).is_multiple_of(2),
            Self::Even => (position + 1).is_multiple_of(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEffect {
    pub question: usize,
    pub previous: usize,
    /// Penalized estimate.
    pub coefficient: f64,
    /// Least-squares estimate on the selected pairs plus per-question intercepts.
    pub refit: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseEffects {
    pub questions: Vec<String>,
    /// Nonzero pairs only.
    pub effects: Vec<PairEffect>,
    pub penalty: f64,
    /// Pairs observed at least once.
    pub observed_pairs: usize,
    pub cv_folds: usize,
    pub parity: PairParity,
}

impl PairwiseEffects {
    pub fn nonzero_fraction(&self) -> f64 {
        if self.observed_pairs == 0 {
            0.0
        } else {
            self.effects.len() as f64 / self.observed_pairs as f64
        }
    }

    pub fn get(&self, question: usize, previous: usize) -> Option<&PairEffect> {
        self.effects.iter().find(|e| e.question == question && e.previous == previous)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("question_id,previous_id,coefficient,refit,count\n");
        for e in &self.effects {
            let _ = writeln!(
                out,
                "{},{},{:.9},{:.9},{}",
                self.questions[e.question], self.questions[e.previous], e.coefficient, e.refit, e.count
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

type Cells = BTreeMap<(usize, usize), Cell>;

fn soft_coefficient(cell: &Cell, threshold: f64) -> f64 {
    if cell.n == 0 {
        return 0.0;
    }
    let s = cell.sum.abs() - threshold;
    if s > 0.0 {
        s.copysign(cell.sum) / cell.n as f64
    } else {
        0.0
    }
}

/// Lasso over disjoint pair indicators with penalty chosen by `cv_folds`-fold
/// cross-validation over respondents. The penalty is the largest one whose
/// fold-paired error excess over the minimum is within one standard error.
/// Selected pairs also carry an unpenalized refit with per-question intercepts.
pub fn pairwise_order_effects(
    log: &OrderLog,
    cv_folds: usize,
    parity: PairParity,
    seed: u64,
) -> Result<PairwiseEffects> {
    log.validate()?;
    if log.questions.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 questions".into()));
    }
    if cv_folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let obs: Vec<Obs> =
        log.standardized().into_iter().filter(|o| o.previous.is_some() && parity.admits(o.position)).collect();
    let mut fold_of = vec![0usize; log.surveys.len()];
    let mut order: Vec<usize> = (0..log.surveys.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (rank, &s) in order.iter().enumerate() {
        fold_of[s] = rank % cv_folds;
    }
    let mut folds: Vec<Cells> = vec![Cells::new(); cv_folds];
    let mut counts = vec![0usize; cv_folds];
    for o in &obs {
        let f = fold_of[o.survey];
        let c = folds[f].entry((o.question, o.previous.unwrap())).or_default();
        c.n += 1;
        c.sum += o.z;
        c.sum_sq += o.z * o.z;
        counts[f] += 1;
    }
    let mut total = Cells::new();
    for fold in &folds {
        for (key, c) in fold {
            let t = total.entry(*key).or_default();
            t.n += c.n;
            t.sum += c.sum;
            t.sum_sq += c.sum_sq;
        }
    }
    let n_total = obs.len();
    let lambda_max =
        if n_total == 0 { 0.0 } else { total.values().map(|c| c.sum.abs()).fold(0.0, f64::max) / n_total as f64 };
    let grid: Vec<f64> =
        (0..LAMBDA_GRID).map(|i| lambda_max * LAMBDA_RATIO.powf(i as f64 / (LAMBDA_GRID - 1) as f64)).collect();

    let used_folds: Vec<usize> = (0..cv_folds).filter(|&f| counts[f] > 0 && counts[f] < n_total).collect();
    let fold_errors: Vec<Vec<f64>> = grid
        .iter()
        .map(|&lambda| {
            used_folds
                .iter()
                .map(|&f| {
                    let n_train = n_total - counts[f];
                    let mut sse = 0.0;
                    for (key, held) in &folds[f] {
                        let t = &total[key];
                        let train = Cell { n: t.n - held.n, sum: t.sum - held.sum, sum_sq: 0.0 };
                        let beta = soft_coefficient(&train, n_train as f64 * lambda);
                        sse += held.sum_sq - 2.0 * beta * held.sum + beta * beta * held.n as f64;
                    }
                    sse / counts[f] as f64
                })
                .collect()
        })
        .collect();
    let penalty = if used_folds.len() < 2 {
        lambda_max
    } else {
        let mean_error = |i: usize| fold_errors[i].iter().sum::<f64>();
        let best = (0..grid.len()).fold(0, |b, i| if mean_error(i) < mean_error(b) { i } else { b });
        let within_one_se = |i: usize| {
            let d: Vec<f64> = fold_errors[i].iter().zip(&fold_errors[best]).map(|(a, b)| a - b).collect();
            let m = d.len() as f64;
            let mean = d.iter().sum::<f64>() / m;
            let var = d.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0);
            mean <= (var / m).sqrt()
        };
        grid[(0..=best).find(|&i| within_one_se(i)).unwrap_or(best)]
    };

    let selected: Vec<((usize, usize), Cell, f64)> = total
        .iter()
        .filter_map(|(&key, c)| {
            let beta = soft_coefficient(c, n_total as f64 * penalty);
            (beta != 0.0).then_some((key, *c, beta))
        })
        .collect();
    let mut rest = vec![Cell::default(); log.questions.len()];
    for (&(q, _), c) in &total {
        rest[q].n += c.n;
        rest[q].sum += c.sum;
    }
    for ((q, _), c, _) in &selected {
        rest[*q].n -= c.n;
        rest[*q].sum -= c.sum;
    }
    let effects = selected
        .into_iter()
        .map(|((q, p), c, coefficient)| {
            let intercept = if rest[q].n > 0 { rest[q].sum / rest[q].n as f64 } else { 0.0 };
            PairEffect { question: q, previous: p, coefficient, refit: c.sum / c.n as f64 - intercept, count: c.n }
        })
        .collect();
    Ok(PairwiseEffects {
        questions: log.questions.clone(),
        effects,
        penalty,
        observed_pairs: total.len(),
        cv_folds,
        parity,
    })
}

/// Synthetic order-effect data: every respondent answers all `k` questions in
/// a random order; responses are `N(0, 1)` plus `drift` times relative
/// position plus each `(question, previous, effect)` shift that applies.
pub fn generate_order_data(
    n: usize,
    k: usize,
    drift: f64,
    pair_effects: &[(usize, usize, f64)],
    seed: u64,
) -> Result<OrderLog> {
    if n == 0 || k < 2 {
        return Err(Error::InvalidArgument(format!("invalid dimensions n={n}, k={k}")));
    }
    if pair_effects.iter().any(|&(q, p, _)| q >= k || p >= k || q == p) {
        return Err(Error::InvalidArgument("pair effect outside the question range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surveys = (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut rng);
            let items = order
                .iter()
                .enumerate()
                .map(|(pos, &q)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let mut x = e + drift * relative_position(pos, k);
                    if pos > 0 {
                        let prev = order[pos - 1];
                        x += pair_effects.iter().filter(|&&(a, b, _)| a == q && b == prev).map(|t| t.2).sum::<f64>();
                    }
                    (q, Some(x))
                })
                .collect();
            AdministeredSurvey { respondent: i, items, completed: true }
        })
        .collect();
    Ok(OrderLog { questions: (0..k).map(|j| format!("q{}", j + 1)).collect(), surveys })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_matches_closed_form() {
        let x = [0.0, 0.5, 1.0, 0.25];
        let y: Vec<f64> = x.iter().map(|a| 2.0 - 0.7 * a).collect();
        assert!((ols_slope(&x, &y) + 0.7).abs() < 1e-12);
        assert_eq!(ols_slope(&[0.3, 0.3], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.0);
        assert!((quantile(&s, 0.025) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_responses_have_zero_slope() {
        let mut log = generate_order_data(50, 4, 0.0, &[], 1).unwrap();
        for s in &mut log.surveys {
            for item in &mut s.items {
                item.1 = Some(3.0);
            }
        }
        let est = position_effect_estimate(&log, 20, 0).unwrap();
        assert!(est.effects.iter().all(|e| e.effect == 0.0 && !e.flagged));
    }

    #[test]
    fn few_positions_are_skipped() {
        let surveys = (0..20)
            .map(|i| AdministeredSurvey {
                respondent: i,
                items: vec![(i % 2, Some(i as f64)), (1 - i % 2, Some(1.0)), (2, Some(0.5 * i as f64))],
                completed: true,
            })
            .collect();
        let log = OrderLog { questions: vec!["a".into(), "b".into(), "c".into()], surveys };
        let est = position_effect_estimate(&log, 10, 0).unwrap();
        assert_eq!(est.skipped.len(), 3);
        assert!(est.effects.is_empty());
    }

    #[test]
    fn incomplete_surveys_and_skips_are_ignored() {
        let mut log = generate_order_data(60, 5, 0.0, &[], 2).unwrap();
        let base = position_effect_estimate(&log, 10, 1).unwrap();
        log.surveys.push(AdministeredSurvey {
            respondent: 999,
            items: vec![(0, Some(100.0)), (1, Some(-100.0))],
            completed: false,
        });
        log.surveys[0].items[0].1 = None;
        let with = position_effect_estimate(&log, 10, 1).unwrap();
        assert_eq!(with.effects.len(), base.effects.len());
        assert_eq!(
            with.effects[0].responses + 1,
            base.effects[0].responses + (log.surveys[0].items[0].0 != 0) as usize
        );
    }

    #[test]
    fn duplicate_question_is_invalid() {
        let log = OrderLog {
            questions: vec!["a".into(), "b".into()],
            surveys: vec![AdministeredSurvey {
                respondent: 0,
                items: vec![(0, Some(1.0)), (0, Some(2.0))],
                completed: true,
            }],
        };
        assert!(position_effect_estimate(&log, 5, 0).is_err());
    }

    #[test]
    fn lasso_cell_solution_is_soft_threshold() {
        let c = Cell { n: 4, sum: 2.0, sum_sq: 0.0 };
        assert!((soft_coefficient(&c, 0.5) - 0.375).abs() < 1e-12);
        assert_eq!(soft_coefficient(&c, 2.5), 0.0);
        let neg = Cell { n: 4, sum: -2.0, sum_sq: 0.0 };
        assert!((soft_coefficient(&neg, 0.5) + 0.375).abs() < 1e-12);
    }

    #[test]
    fn parity_filters_positions() {
        assert!(PairParity::Odd.admits(0) && !PairParity::Odd.admits(1));
        assert!(PairParity::Even.admits(1) && !PairParity::Even.admits(2));
        let log = generate_order_data(300, 5, 0.0, &[(1, 0, 1.0)], 3).unwrap();
        let odd = pairwise_order_effects(&log, 5, PairParity::Odd, 0).unwrap();
        let even = pairwise_order_effects(&log, 5, PairParity::Even, 0).unwrap();
        assert!(odd.observed_pairs > 0 && even.observed_pairs > 0);
        assert!(odd.get(1, 0).is_some() || even.get(1, 0).is_some());
    }

    #[test]
    fn strong_pair_effect_is_selected() {
        let log = generate_order_data(1500, 5, 0.0, &[(2, 1, 0.8)], 4).unwrap();
        let fit = pairwise_order_effects(&log, 10, PairParity::All, 1).unwrap();
        let e = fit.get(2, 1).expect("injected pair selected");
        assert!(e.refit > 0.5);
        assert!(e.coefficient <= e.refit);
    }
}
