//! Prediction error summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mae: f64,
    pub mse: f64,
    /// Mean of `prediction - truth`.
    pub bias: f64,
    /// Fraction of pairs with `p * t <= 0` among targets `t != 0`; `None` when
    /// every target is zero.
    pub wrong_sign: Option<f64>,
}

pub fn compute_metrics(predictions: &[f64], truths: &[f64]) -> Result<Metrics> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension(format!("{} predictions for {} truths", predictions.len(), truths.len())));
    }
    let mut acc = MetricSums::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        if !p.is_finite() || !t.is_finite() {
            return Err(Error::NonFinite("prediction or truth".into()));
        }
        acc.add(p, t);
    }
    acc.finish().ok_or_else(|| Error::InvalidArgument("no predictions to score".into()))
}

/// Running sums behind [`Metrics`]; merging is exact up to summation order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSums {
    pub count: usize,
    pub abs: f64,
    pub sq: f64,
    pub diff: f64,
    pub signed: usize,
    pub wrong: usize,
}

impl MetricSums {
    pub fn add(&mut self, prediction: f64, truth: f64) {
        let e = prediction - truth;
        self.count += 1;
        self.abs += e.abs();
        self.sq += e * e;
        self.diff += e;
        if truth != 0.0 {
            self.signed += 1;
            if prediction * truth <= 0.0 {
                self.wrong += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &MetricSums) {
        self.count += other.count;
        self.abs += other.abs;
        self.sq += other.sq;
        self.diff += other.diff;
        self.signed += other.signed;
        self.wrong += other.wrong;
    }

    pub fn finish(&self) -> Option<Metrics> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        Some(Metrics {
            count: self.count,
            mae: self.abs / n,
            mse: self.sq / n,
            bias: self.diff / n,
            wrong_sign: (self.signed > 0).then(|| self.wrong as f64 / self.signed as f64),
        })
    }
}
