//! Evaluation and bias statistics.
//!
//! Positive class is Female for the gender task and Toxic for the toxicity
//! task, so sensitivity is recall on Female/Toxic and specificity recall on
//! Male/non-toxic. A metric with a zero denominator is reported as
//! [`Error::UndefinedMetric`], never as `0.0` or `NaN`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::Task;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predicted: &[bool], truth: &[bool]) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::Parameter(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Parameter("no predictions".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// `tp / (tp + fn)`.
pub fn sensitivity(cm: &ConfusionMatrix) -> Result<f64> {
    let denom = cm.tp + cm.fn_;
    if denom == 0 {
        return Err(Error::undefined("sensitivity", "no positive examples"));
    }
    Ok(cm.tp as f64 / denom as f64)
}

/// `tn / (tn + fp)`.
pub fn specificity(cm: &ConfusionMatrix) -> Result<f64> {
    let denom = cm.tn + cm.fp;
    if denom == 0 {
        return Err(Error::undefined("specificity", "no negative examples"));
    }
    Ok(cm.tn as f64 / denom as f64)
}

/// Specificity minus sensitivity. Positive values lean towards the negative
/// class (Male on the gender task).
pub fn bias_gap(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(specificity(cm)? - sensitivity(cm)?)
}

/// Fraction of gender predictions that are Male (the negative class).
pub fn male_prediction_rate(predicted: &[bool]) -> Result<f64> {
    negative_rate(predicted)
}

fn negative_rate(predicted: &[bool]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Parameter("no predictions".into()));
    }
    Ok(predicted.iter().filter(|&&p| !p).count() as f64 / predicted.len() as f64)
}

/// 1-based ranks with ties sharing the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64], metric: &'static str) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::undefined(metric, "constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Parameter(format!(
            "spearman needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Parameter("spearman needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("spearman inputs must be finite".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y), "spearman")
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

/// Scott's rule `n^(-1/5) * sd`, falling back to 1.0 when the sample has
/// no spread.
pub fn scott_bandwidth(values: &[f64]) -> f64 {
    match sample_sd(values) {
        Some(sd) if sd > 0.0 => sd * (values.len() as f64).powf(-0.2),
        _ => 1.0,
    }
}

/// Gaussian kernel density of `values` evaluated at each grid point.
pub fn kde(values: &[f64], bandwidth: Option<f64>, grid: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Parameter("kde needs at least one value".into()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Parameter(format!("bandwidth {h} must be positive"))),
        None => scott_bandwidth(values),
    };
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    Ok(grid
        .iter()
        .map(|&t| {
            norm * values
                .iter()
                .map(|v| {
                    let u = (t - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect())
}

/// `n` evenly spaced points from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n).map(|i| start + step * i as f64).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    /// Bessel-corrected; absent for a single run.
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn aggregate_runs(values: &[f64]) -> Result<RunSummary> {
    if values.is_empty() {
        return Err(Error::Parameter("no runs to aggregate".into()));
    }
    Ok(RunSummary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        sd: sample_sd(values),
        n: values.len(),
    })
}

/// Metric bundle for one (model, test set) evaluation. Undefined metrics
/// serialise as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub schema_version: u32,
    pub task: Task,
    pub n: usize,
    pub confusion: ConfusionMatrix,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub bias_gap: Option<f64>,
    /// Fraction predicted Male; gender task only.
    pub male_prediction_rate: Option<f64>,
    pub positive_prediction_rate: f64,
    pub seed: Option<u64>,
    pub model_id: Option<String>,
    pub test_set_id: Option<String>,
}

impl BiasReport {
    pub fn from_predictions(task: Task, predicted: &[bool], truth: &[bool]) -> Result<BiasReport> {
        let cm = confusion(predicted, truth)?;
        let positive_rate = 1.0 - negative_rate(predicted)?;
        Ok(BiasReport {
            schema_version: REPORT_SCHEMA_VERSION,
            task,
            n: cm.total(),
            confusion: cm,
            sensitivity: sensitivity(&cm).ok(),
            specificity: specificity(&cm).ok(),
            bias_gap: bias_gap(&cm).ok(),
            male_prediction_rate: match task {
                Task::Gender => Some(male_prediction_rate(predicted)?),
                Task::Toxicity => None,
            },
            positive_prediction_rate: positive_rate,
            seed: None,
            model_id: None,
            test_set_id: None,
        })
    }

    pub fn with_meta(mut self, seed: u64, model_id: &str, test_set_id: &str) -> BiasReport {
        self.seed = Some(seed);
        self.model_id = Some(model_id.to_string());
        self.test_set_id = Some(test_set_id.to_string());
        self
    }
}
