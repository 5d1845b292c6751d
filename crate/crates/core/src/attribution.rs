//! Integrated gradients over token embeddings.
//!
//! For input embeddings `x` and baseline `x'` (every row the padding
//! embedding), the attribution of entry `(i, j)` is
//!
//! ```text
//! (x_ij - x'_ij) * ∫_0^1 ∂F/∂x_ij (x' + α (x - x')) dα
//! ```
//!
//! where `F` is the model's positive-class probability. A token's score is
//! the sum of its row, so it keeps its sign: on the gender task positive
//! scores push towards Female and negative scores towards Male.
//!
//! By completeness the scores sum to `F(x) - F(x')`; the gap between the two
//! is reported as the residual of the quadrature used for the integral.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{decide, Classifier, EmbeddingMatrix, TokenSequence};
use crate::error::{Error, Result};
use crate::sampling::{Dataset, Task};

pub const DEFAULT_STEPS: usize = 50;

/// Quadrature rule for the path integral.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationRule {
    /// `steps`-point Gauss–Legendre on `[0, 1]`.
    #[default]
    GaussLegendre,
    /// Points `k / steps` for `k = 1..=steps`, equal weights.
    RiemannRight,
    /// Points `k / steps` for `k = 0..=steps`, half weight at the ends.
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IgConfig {
    pub steps: usize,
    pub rule: IntegrationRule,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            steps: DEFAULT_STEPS,
            rule: IntegrationRule::default(),
        }
    }
}

impl IgConfig {
    pub fn with_steps(steps: usize) -> Self {
        IgConfig {
            steps,
            ..IgConfig::default()
        }
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P_{n-1}(x).
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn_1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pn_1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Path positions `α` in `[0, 1]` with their quadrature weights.
pub fn path_points(config: &IgConfig) -> Result<Vec<(f64, f64)>> {
    let m = config.steps;
    if m < 1 {
        return Err(Error::Parameter("integrated gradients needs at least one step".into()));
    }
    let mf = m as f64;
    Ok(match config.rule {
        IntegrationRule::RiemannRight => (1..=m).map(|k| (k as f64 / mf, 1.0 / mf)).collect(),
        IntegrationRule::Trapezoid => (0..=m)
            .map(|k| {
                let w = if k == 0 || k == m { 0.5 / mf } else { 1.0 / mf };
                (k as f64 / mf, w)
            })
            .collect(),
        IntegrationRule::GaussLegendre => {
            let (nodes, weights) = gauss_legendre(m);
            nodes
                .into_iter()
                .zip(weights)
                .map(|(x, w)| ((x + 1.0) / 2.0, w / 2.0))
                .collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    pub total_score: f64,
    /// Positive-class probability of the input.
    pub probability: f64,
    pub predicted_label: bool,
    pub baseline_probability: f64,
    /// `|total_score - (probability - baseline_probability)|`.
    pub completeness_residual: f64,
}

impl AttributionResult {
    pub fn output_delta(&self) -> f64 {
        self.probability - self.baseline_probability
    }
}

/// Attributions for `seq` under the default rule with `steps` points.
pub fn integrated_gradients<C: Classifier + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    steps: usize,
) -> Result<AttributionResult> {
    integrated_gradients_with(model, seq, &IgConfig::with_steps(steps))
}

pub fn integrated_gradients_with<C: Classifier + ?Sized>(
    model: &C,
    seq: &TokenSequence,
    config: &IgConfig,
) -> Result<AttributionResult> {
    let input = model.embed(seq);
    let baseline = EmbeddingMatrix::repeat_row(&model.pad_embedding(), input.rows());
    let raw = integrate(model, &input, &baseline, config)?;
    let probability = model.forward_from_embeddings(&input)?;
    let baseline_probability = model.forward_from_embeddings(&baseline)?;
    let total_score = raw.iter().sum::<f64>();
    Ok(AttributionResult {
        tokens: seq.tokens.clone(),
        completeness_residual: (total_score - (probability - baseline_probability)).abs(),
        scores: raw,
        total_score,
        probability,
        predicted_label: decide(probability),
        baseline_probability,
    })
}

/// Per-row attribution of `input` against `baseline`.
pub fn integrate<C: Classifier + ?Sized>(
    model: &C,
    input: &EmbeddingMatrix,
    baseline: &EmbeddingMatrix,
    config: &IgConfig,
) -> Result<Vec<f64>> {
    let points = path_points(config)?;
    let path: Vec<EmbeddingMatrix> = points
        .iter()
        .map(|&(alpha, _)| baseline.lerp(input, alpha))
        .collect();
    let grads = model.grad_batch(&path)?;
    let mut avg = EmbeddingMatrix::zeros(input.rows(), input.dim());
    for (grad, &(_, weight)) in grads.iter().zip(&points) {
        for (a, g) in avg.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *a += weight * g;
        }
    }
    Ok((0..input.rows())
        .map(|i| {
            input
                .row(i)
                .iter()
                .zip(baseline.row(i))
                .zip(avg.row(i))
                .map(|((x, b), g)| (x - b) * g)
                .sum()
        })
        .collect())
}

/// `max(1e-3, 0.5% of |F(x) - F(baseline)|)`.
pub fn default_tolerance(result: &AttributionResult) -> f64 {
    (0.005 * result.output_delta().abs()).max(1e-3)
}

pub fn completeness_check(result: &AttributionResult, tolerance: Option<f64>) -> bool {
    result.completeness_residual <= tolerance.unwrap_or_else(|| default_tolerance(result))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderLean {
    Male,
    Female,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedToken {
    pub token: String,
    pub score: f64,
    pub lean: GenderLean,
}

/// Labels scores with the gender they push towards. Scores are computed on
/// P(Female), so no sign flip is needed.
pub fn signed_score(result: &AttributionResult, task: Task) -> Result<Vec<SignedToken>> {
    if task != Task::Gender {
        return Err(Error::TaskMismatch {
            expected: Task::Gender.to_string(),
            got: task.to_string(),
        });
    }
    Ok(result
        .tokens
        .iter()
        .zip(&result.scores)
        .map(|(token, &score)| SignedToken {
            token: token.clone(),
            score,
            lean: if score > 0.0 {
                GenderLean::Female
            } else if score < 0.0 {
                GenderLean::Male
            } else {
                GenderLean::Neutral
            },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub text: String,
    pub score: f64,
}

/// One example's attribution, as written by the `attribute` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleAttribution {
    pub rev_id: u64,
    pub worker_id: u64,
    pub true_label: String,
    pub predicted_label: String,
    pub probability: f64,
    pub tokens: Vec<TokenScore>,
    pub residual: f64,
}

pub fn label_name(task: Task, positive: bool) -> &'static str {
    match (task, positive) {
        (Task::Gender, true) => "female",
        (Task::Gender, false) => "male",
        (Task::Toxicity, true) => "toxic",
        (Task::Toxicity, false) => "non_toxic",
    }
}

pub fn attribute_dataset<C: Classifier + ?Sized>(
    model: &C,
    dataset: &Dataset,
    config: &IgConfig,
) -> Result<Vec<ExampleAttribution>> {
    dataset
        .examples
        .iter()
        .map(|e| {
            let seq = model.tokenize(&e.text);
            let result = integrated_gradients_with(model, &seq, config)?;
            Ok(ExampleAttribution {
                rev_id: e.rev_id,
                worker_id: e.worker_id,
                true_label: label_name(dataset.task, e.label).into(),
                predicted_label: label_name(dataset.task, result.predicted_label).into(),
                probability: result.probability,
                tokens: token_scores(&seq, &result.scores),
                residual: result.completeness_residual,
            })
        })
        .collect()
}

fn token_scores(seq: &TokenSequence, scores: &[f64]) -> Vec<TokenScore> {
    seq.tokens
        .iter()
        .zip(scores)
        .map(|(t, &s)| TokenScore {
            text: t.clone(),
            score: s,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    pub token: String,
    pub mean_score: f64,
    pub occurrences: usize,
}

/// Mean attribution per vocabulary token, ranked both ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    /// Every token seen, sorted by mean score ascending (most male first).
    pub tokens: Vec<TokenAttribution>,
    /// Up to `top_k` tokens with negative mean, most negative first.
    pub most_male: Vec<TokenAttribution>,
    /// Up to `top_k` tokens with positive mean, most positive first.
    pub most_female: Vec<TokenAttribution>,
}

/// Aggregates attributions by vocabulary entry. Out-of-vocabulary words are
/// pooled under `<unk>`, the embedding they share.
pub fn summarize<C: Classifier + ?Sized>(
    model: &C,
    records: &[ExampleAttribution],
    top_k: usize,
) -> Result<AttributionSummary> {
    if records.is_empty() {
        return Err(Error::Parameter("cannot summarise an empty dataset".into()));
    }
    let vocab = model.vocabulary();
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for record in records {
        for t in &record.tokens {
            let key = vocab.token(vocab.id(&t.text)).unwrap_or("<unk>").to_string();
            let entry = acc.entry(key).or_default();
            entry.0 += t.score;
            entry.1 += 1;
        }
    }
    let mut tokens: Vec<TokenAttribution> = acc
        .into_iter()
        .map(|(token, (sum, n))| TokenAttribution {
            token,
            mean_score: sum / n as f64,
            occurrences: n,
        })
        .collect();
    tokens.sort_by(|a, b| a.mean_score.total_cmp(&b.mean_score).then_with(|| a.token.cmp(&b.token)));
    let most_male = tokens
        .iter()
        .filter(|t| t.mean_score < 0.0)
        .take(top_k)
        .cloned()
        .collect();
    let most_female = tokens
        .iter()
        .rev()
        .filter(|t| t.mean_score > 0.0)
        .take(top_k)
        .cloned()
        .collect();
    Ok(AttributionSummary {
        tokens,
        most_male,
        most_female,
    })
}

pub fn attribution_summary<C: Classifier + ?Sized>(
    model: &C,
    dataset: &Dataset,
    top_k: usize,
    config: &IgConfig,
) -> Result<AttributionSummary> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot summarise an empty dataset".into()));
    }
    summarize(model, &attribute_dataset(model, dataset, config)?, top_k)
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Table of examples with each word shaded red (negative, male) or green
/// (positive, female), intensity scaled by the example's largest |score|.
pub fn render_html(records: &[ExampleAttribution]) -> String {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Attributions</title></head><body>\n\
         <table border=\"1\" cellspacing=\"0\" cellpadding=\"4\">\n\
         <tr><th>True Label</th><th>Predicted Label</th><th>Score</th><th>Word Importance</th></tr>\n",
    );
    for r in records {
        let total: f64 = r.tokens.iter().map(|t| t.score).sum();
        let scale = r
            .tokens
            .iter()
            .map(|t| t.score.abs())
            .fold(0.0, f64::max);
        let _ = write!(
            html,
            "<tr><td>{}</td><td>{} ({:.2})</td><td>{:.4}</td><td>",
            escape_html(&r.true_label),
            escape_html(&r.predicted_label),
            r.probability,
            total
        );
        for t in &r.tokens {
            let alpha = if scale > 0.0 { t.score.abs() / scale } else { 0.0 };
            let rgb = if t.score < 0.0 { "220,40,40" } else { "40,170,60" };
            let _ = write!(
                html,
                "<span style=\"background-color: rgba({rgb},{alpha:.3})\">{}</span> ",
                escape_html(&t.text)
            );
        }
        html.push_str("</td></tr>\n");
    }
    html.push_str("</table></body></html>\n");
    html
}
