//! Binary text classifiers behind a backend-neutral interface.
//!
//! Attribution and the experiment drivers only talk to [`Classifier`] and
//! [`Trainer`]. The crate ships one backend, [`BagOfEmbeddings`]: token
//! embeddings are mean-pooled and fed to a single logistic unit,
//!
//! ```text
//! p(x) = sigmoid(w · mean_i E[x_i] + b)
//! ```
//!
//! which is small enough to train in seconds yet exactly differentiable with
//! respect to its input embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::word_tokens;
use crate::sampling::{op_rng, Dataset, Task};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const REFERENCE_BACKEND: &str = "bag-of-embeddings";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_frequency: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Vocabulary {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            index,
            min_frequency,
        }
    }

    /// Index of a token's match form, or [`UNK`].
    pub fn id(&self, form: &str) -> usize {
        match self.index.get(form) {
            Some(&i) if i > UNK => i,
            _ => UNK,
        }
    }

    pub fn contains(&self, form: &str) -> bool {
        self.id(form) != UNK
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }
}

/// Builds a vocabulary of lowercased word tokens seen at least
/// `min_frequency` times. Index 0 is padding, index 1 is unknown and real
/// tokens follow in lexicographic order.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], min_frequency: usize) -> Result<Vocabulary> {
    if texts.is_empty() {
        return Err(Error::Parameter("cannot build a vocabulary from no texts".into()));
    }
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for token in word_tokens(text.as_ref()) {
            *freq.entry(token.form).or_default() += 1;
        }
    }
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(
        freq.into_iter()
            .filter(|(t, n)| *n >= min_frequency.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
            .map(|(t, _)| t),
    );
    Ok(Vocabulary::from_tokens(tokens, min_frequency))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Match forms aligned with `ids`.
    pub tokens: Vec<String>,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Keeps the first `max_len` word tokens of `text`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let all = word_tokens(text);
    let truncated = all.len() > max_len;
    let (ids, tokens) = all
        .into_iter()
        .take(max_len)
        .map(|t| (vocab.id(&t.form), t.form))
        .unzip();
    TokenSequence {
        ids,
        tokens,
        truncated,
    }
}

/// Row-major `rows × dim` matrix of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Parameter(format!(
                "{} values cannot form a {rows}x{dim} matrix",
                data.len()
            )));
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    /// `rows` copies of `row`.
    pub fn repeat_row(row: &[f64], rows: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim: row.len(),
            data: row.repeat(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self + alpha * (other - self)`, elementwise.
    pub fn lerp(&self, other: &EmbeddingMatrix, alpha: f64) -> EmbeddingMatrix {
        debug_assert_eq!(self.data.len(), other.data.len());
        EmbeddingMatrix {
            rows: self.rows,
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * (b - a))
                .collect(),
        }
    }

    /// Column-wise mean; the zero vector for an empty matrix.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        if self.rows == 0 {
            return mean;
        }
        for i in 0..self.rows {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// Training hyperparameters. Adam moments use `beta1`, `beta2`, `epsilon`;
/// the learning rate decays linearly to zero over all steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub embedding_dim: usize,
    pub max_len: usize,
    pub min_frequency: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 2,
            seed: 42,
            embedding_dim: 64,
            max_len: 100,
            min_frequency: 2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Learning rate used for fine-tuning pretrained transformer backends.
    pub const TRANSFORMER_LEARNING_RATE: f64 = 2e-5;

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.embedding_dim == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "batch_size, epochs, embedding_dim and max_len must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A trained binary text classifier that exposes its input embeddings.
///
/// `forward_from_embeddings(&embed(x))` must equal `predict_proba(x)`. The
/// output is the probability of the dataset's positive class (Female for
/// the gender task, Toxic for the toxicity task).
pub trait Classifier {
    fn backend_id(&self) -> &str;
    fn task(&self) -> Task;
    fn vocabulary(&self) -> &Vocabulary;
    fn max_len(&self) -> usize;
    fn embedding_dim(&self) -> usize;

    fn tokenize(&self, text: &str) -> TokenSequence {
        tokenize(text, self.vocabulary(), self.max_len())
    }

    fn predict_proba(&self, seq: &TokenSequence) -> f64;

    fn predict_text(&self, text: &str) -> f64 {
        self.predict_proba(&self.tokenize(text))
    }

    fn embed(&self, seq: &TokenSequence) -> EmbeddingMatrix;

    /// Embedding of the padding token, the attribution baseline row.
    fn pad_embedding(&self) -> Vec<f64>;

    fn forward_from_embeddings(&self, embeddings: &EmbeddingMatrix) -> Result<f64>;

    fn grad_wrt_embeddings(&self, _embeddings: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        Err(Error::Capability(self.backend_id().to_string()))
    }

    fn grad_batch(&self, points: &[EmbeddingMatrix]) -> Result<Vec<EmbeddingMatrix>> {
        points.iter().map(|p| self.grad_wrt_embeddings(p)).collect()
    }
}

/// Label decision rule: positive iff `p >= 0.5`.
pub fn decide(probability: f64) -> bool {
    probability >= 0.5
}

pub trait Trainer {
    type Model: Classifier;

    fn train(&self, dataset: &Dataset, config: &TrainConfig) -> Result<Self::Model>;
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln p + (1-y) ln(1-p)]` evaluated from the logit.
fn bce_from_logit(z: f64, positive: bool) -> f64 {
    let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    if positive {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Mean-pooled embeddings followed by a logistic readout.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfEmbeddings {
    task: Task,
    config: TrainConfig,
    vocab: Vocabulary,
    /// `vocab.len() × dim`, row-major. Row [`PAD`] stays zero.
    embeddings: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
    /// Mean training loss at initialisation, then after each epoch.
    loss_history: Vec<f64>,
}

impl BagOfEmbeddings {
    /// An untrained model with the given parameters.
    pub fn from_parts(
        task: Task,
        config: TrainConfig,
        vocab: Vocabulary,
        embeddings: Vec<f64>,
        weights: Vec<f64>,
        bias: f64,
    ) -> Result<Self> {
        let dim = weights.len();
        if dim == 0 || embeddings.len() != vocab.len() * dim {
            return Err(Error::Model(format!(
                "embedding table of {} values does not match {} tokens x {} dims",
                embeddings.len(),
                vocab.len(),
                dim
            )));
        }
        let mut config = config;
        config.embedding_dim = dim;
        Ok(BagOfEmbeddings {
            task,
            config,
            vocab,
            embeddings,
            weights,
            bias,
            loss_history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn embedding(&self, id: usize) -> &[f64] {
        let d = self.weights.len();
        &self.embeddings[id * d..(id + 1) * d]
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    fn logit_of_mean(&self, mean: &[f64]) -> f64 {
        self.weights.iter().zip(mean).map(|(w, m)| w * m).sum::<f64>() + self.bias
    }

    fn check_dim(&self, embeddings: &EmbeddingMatrix) -> Result<()> {
        if embeddings.dim() != self.weights.len() {
            return Err(Error::Shape {
                expected: self.weights.len(),
                got: embeddings.dim(),
            });
        }
        Ok(())
    }

    fn mean_embedding(&self, ids: &[usize]) -> Vec<f64> {
        let d = self.weights.len();
        let mut mean = vec![0.0; d];
        if ids.is_empty() {
            return mean;
        }
        for &id in ids {
            for (m, e) in mean.iter_mut().zip(self.embedding(id)) {
                *m += e;
            }
        }
        let n = ids.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            backend: REFERENCE_BACKEND.into(),
            task: self.task,
            config: self.config.clone(),
            vocabulary: self.vocab.tokens.clone(),
            embeddings: Tensor {
                shape: vec![self.vocab.len(), self.weights.len()],
                data: self.embeddings.clone(),
            },
            weights: Tensor {
                shape: vec![self.weights.len()],
                data: self.weights.clone(),
            },
            bias: self.bias,
            loss_history: self.loss_history.clone(),
        };
        fs::write(path, serde_json::to_string(&file)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ModelFile = serde_json::from_str(&content)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", file.version)));
        }
        if file.backend != REFERENCE_BACKEND {
            return Err(Error::Model(format!("unknown backend `{}`", file.backend)));
        }
        let v = file.vocabulary.len();
        let d = file.weights.data.len();
        if file.embeddings.shape != [v, d] || file.weights.shape != [d] {
            return Err(Error::Model(format!(
                "parameter shapes {:?} / {:?} do not match vocabulary of {v}",
                file.embeddings.shape, file.weights.shape
            )));
        }
        if file.vocabulary.first().map(String::as_str) != Some(PAD_TOKEN)
            || file.vocabulary.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::Model("vocabulary must start with <pad>, <unk>".into()));
        }
        let vocab = Vocabulary::from_tokens(file.vocabulary, file.config.min_frequency);
        let mut model = BagOfEmbeddings::from_parts(
            file.task,
            file.config,
            vocab,
            file.embeddings.data,
            file.weights.data,
            file.bias,
        )?;
        model.loss_history = file.loss_history;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    backend: String,
    task: Task,
    config: TrainConfig,
    vocabulary: Vec<String>,
    embeddings: Tensor,
    weights: Tensor,
    bias: f64,
    #[serde(default)]
    loss_history: Vec<f64>,
}

impl Classifier for BagOfEmbeddings {
    fn backend_id(&self) -> &str {
        REFERENCE_BACKEND
    }

    fn task(&self) -> Task {
        self.task
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn embedding_dim(&self) -> usize {
        self.weights.len()
    }

    fn predict_proba(&self, seq: &TokenSequence) -> f64 {
        sigmoid(self.logit_of_mean(&self.mean_embedding(&seq.ids)))
    }

    fn embed(&self, seq: &TokenSequence) -> EmbeddingMatrix {
        let d = self.weights.len();
        let mut data = Vec::with_capacity(seq.len() * d);
        for &id in &seq.ids {
            data.extend_from_slice(self.embedding(id));
        }
        EmbeddingMatrix {
            rows: seq.len(),
            dim: d,
            data,
        }
    }

    fn pad_embedding(&self) -> Vec<f64> {
        self.embedding(PAD).to_vec()
    }

    fn forward_from_embeddings(&self, embeddings: &EmbeddingMatrix) -> Result<f64> {
        self.check_dim(embeddings)?;
        Ok(sigmoid(self.logit_of_mean(&embeddings.mean_row())))
    }

    /// `dp/de_ij = p (1 - p) w_j / L`, identical for every row.
    fn grad_wrt_embeddings(&self, embeddings: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let p = self.forward_from_embeddings(embeddings)?;
        let rows = embeddings.rows();
        if rows == 0 {
            return Ok(EmbeddingMatrix::zeros(0, self.weights.len()));
        }
        let scale = p * (1.0 - p) / rows as f64;
        let row: Vec<f64> = self.weights.iter().map(|w| scale * w).collect();
        Ok(EmbeddingMatrix::repeat_row(&row, rows))
    }

    /// Evaluates all points from one flattened pass over their column sums.
    fn grad_batch(&self, points: &[EmbeddingMatrix]) -> Result<Vec<EmbeddingMatrix>> {
        let d = self.weights.len();
        for p in points {
            self.check_dim(p)?;
        }
        let mut sums = vec![0.0; points.len() * d];
        for (k, point) in points.iter().enumerate() {
            let acc = &mut sums[k * d..(k + 1) * d];
            for chunk in point.as_slice().chunks_exact(d) {
                for (a, v) in acc.iter_mut().zip(chunk) {
                    *a += v;
                }
            }
        }
        Ok(points
            .iter()
            .enumerate()
            .map(|(k, point)| {
                let rows = point.rows();
                if rows == 0 {
                    return EmbeddingMatrix::zeros(0, d);
                }
                let n = rows as f64;
                let z = sums[k * d..(k + 1) * d]
                    .iter()
                    .zip(&self.weights)
                    .map(|(s, w)| w * (s / n))
                    .sum::<f64>()
                    + self.bias;
                let p = sigmoid(z);
                let scale = p * (1.0 - p) / n;
                let row: Vec<f64> = self.weights.iter().map(|w| scale * w).collect();
                EmbeddingMatrix::repeat_row(&row, rows)
            })
            .collect())
    }
}

/// Trains [`BagOfEmbeddings`] by mini-batch Adam on mean binary
/// cross-entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceTrainer;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: i32, cfg: &TrainConfig) {
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

impl Trainer for ReferenceTrainer {
    type Model = BagOfEmbeddings;

    fn train(&self, dataset: &Dataset, config: &TrainConfig) -> Result<BagOfEmbeddings> {
        config.validate()?;
        let positives = dataset.examples.iter().filter(|e| e.label).count();
        if positives == 0 || positives == dataset.len() {
            return Err(Error::DegenerateData(format!(
                "{} examples with {positives} positives; both classes are required",
                dataset.len()
            )));
        }
        let texts: Vec<&str> = dataset.examples.iter().map(|e| e.text.as_str()).collect();
        let vocab = build_vocab(&texts, config.min_frequency)?;
        let d = config.embedding_dim;
        let v = vocab.len();

        let mut rng = op_rng(config.seed, "train");
        let mut embeddings = vec![0.0; v * d];
        for x in &mut embeddings[d..] {
            *x = rng.random_range(-0.05..=0.05);
        }
        let mut model = BagOfEmbeddings {
            task: dataset.task,
            config: config.clone(),
            vocab,
            embeddings,
            weights: vec![0.0; d],
            bias: 0.0,
            loss_history: Vec::new(),
        };

        let data: Vec<(Vec<usize>, bool)> = dataset
            .examples
            .iter()
            .map(|e| (tokenize(&e.text, &model.vocab, config.max_len).ids, e.label))
            .collect();
        let mean_loss = |m: &BagOfEmbeddings| {
            data.iter()
                .map(|(ids, y)| bce_from_logit(m.logit_of_mean(&m.mean_embedding(ids)), *y))
                .sum::<f64>()
                / data.len() as f64
        };
        model.loss_history.push(mean_loss(&model));

        let steps_per_epoch = data.len().div_ceil(config.batch_size);
        let total_steps = steps_per_epoch * config.epochs;
        let mut emb_opt = Adam::new(v * d);
        let mut w_opt = Adam::new(d);
        let mut b_opt = Adam::new(1);
        let mut g_emb = vec![0.0; v * d];
        let mut g_w = vec![0.0; d];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0usize;

        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                g_emb.iter_mut().for_each(|g| *g = 0.0);
                g_w.iter_mut().for_each(|g| *g = 0.0);
                let mut g_b = 0.0;
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let (ids, y) = &data[i];
                    let mean = model.mean_embedding(ids);
                    let p = sigmoid(model.logit_of_mean(&mean));
                    let dz = (p - if *y { 1.0 } else { 0.0 }) * scale;
                    g_b += dz;
                    for (g, m) in g_w.iter_mut().zip(&mean) {
                        *g += dz * m;
                    }
                    if !ids.is_empty() {
                        let per_token = dz / ids.len() as f64;
                        for &id in ids {
                            let row = &mut g_emb[id * d..(id + 1) * d];
                            for (g, w) in row.iter_mut().zip(&model.weights) {
                                *g += per_token * w;
                            }
                        }
                    }
                }
                let lr = config.learning_rate * (1.0 - step as f64 / total_steps as f64);
                step += 1;
                let t = step as i32;
                emb_opt.step(&mut model.embeddings, &g_emb, lr, t, config);
                w_opt.step(&mut model.weights, &g_w, lr, t, config);
                let mut bias = [model.bias];
                b_opt.step(&mut bias, &[g_b], lr, t, config);
                model.bias = bias[0];
            }
            model.loss_history.push(mean_loss(&model));
        }
        log::debug!(
            "trained {} on {} examples: loss {:?}",
            REFERENCE_BACKEND,
            data.len(),
            model.loss_history
        );
        Ok(model)
    }
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<BagOfEmbeddings> {
    ReferenceTrainer.train(dataset, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Gender, ToxicityScore};
    use crate::sampling::Example;

    fn dataset(rows: &[(&str, bool)]) -> Dataset {
        Dataset {
            task: Task::Gender,
            seed: 1,
            examples: rows
                .iter()
                .enumerate()
                .map(|(i, (text, label))| Example {
                    rev_id: i as u64,
                    worker_id: i as u64,
                    text: text.to_string(),
                    label: *label,
                    score: ToxicityScore::Toxic,
                    gender: if *label { Gender::Female } else { Gender::Male },
                })
                .collect(),
            transform_log: vec!["test".into()],
            plan: None,
        }
    }

    #[test]
    fn vocab_thresholds() {
        let v = build_vocab(&["a b", "a c"], 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("c"), UNK);
        assert_eq!(v.token(PAD), Some("<pad>"));
        let all = build_vocab(&["a b", "a c"], 1).unwrap();
        assert_eq!(all.len(), 5);
        assert!(build_vocab::<&str>(&[], 1).is_err());
    }

    #[test]
    fn tokenize_truncates() {
        let text: Vec<String> = (0..120).map(|i| format!("w{i}")).collect();
        let text = text.join(" ");
        let vocab = build_vocab(&[text.as_str()], 1).unwrap();
        let seq = tokenize(&text, &vocab, 100);
        assert_eq!(seq.len(), 100);
        assert!(seq.truncated);
        assert!(tokenize("", &vocab, 100).is_empty());
        assert_eq!(tokenize("nope", &vocab, 100).ids, [UNK]);
    }

    #[test]
    fn untrained_model_is_half() {
        let vocab = build_vocab(&["x y"], 1).unwrap();
        let model = BagOfEmbeddings::from_parts(
            Task::Gender,
            TrainConfig::default(),
            vocab.clone(),
            vec![0.3; vocab.len() * 4],
            vec![0.0; 4],
            0.0,
        )
        .unwrap();
        assert_eq!(model.predict_text("x y z"), 0.5);
        assert_eq!(model.predict_text(""), 0.5);
        let zero_grad = model.grad_wrt_embeddings(&model.embed(&model.tokenize("x"))).unwrap();
        assert!(zero_grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn embed_round_trip_and_shapes() {
        let ds = dataset(&[("good day", true), ("bad day", false), ("good", true), ("bad", false)]);
        let cfg = TrainConfig {
            min_frequency: 1,
            embedding_dim: 8,
            ..TrainConfig::default()
        };
        let model = train(&ds, &cfg).unwrap();
        let seq = model.tokenize("good bad day");
        let emb = model.embed(&seq);
        assert_eq!(emb.rows(), 3);
        assert_eq!(emb.row(0), model.embedding(seq.ids[0]));
        assert_eq!(model.forward_from_embeddings(&emb).unwrap(), model.predict_proba(&seq));
        let empty = model.embed(&model.tokenize(""));
        assert_eq!(empty.rows(), 0);
        assert_eq!(model.forward_from_embeddings(&empty).unwrap(), sigmoid(model.bias()));
        let mid = emb.lerp(&EmbeddingMatrix::zeros(3, 8), 0.5);
        assert!(model.forward_from_embeddings(&mid).is_ok());
        assert!(matches!(
            model.forward_from_embeddings(&EmbeddingMatrix::zeros(2, 3)),
            Err(Error::Shape { expected: 8, got: 3 })
        ));
        assert!(matches!(
            model.grad_wrt_embeddings(&EmbeddingMatrix::zeros(2, 3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn repeated_tokens_share_gradient_rows() {
        let ds = dataset(&[("a b", true), ("c d", false)]);
        let cfg = TrainConfig {
            min_frequency: 1,
            ..TrainConfig::default()
        };
        let model = train(&ds, &cfg).unwrap();
        let g = model
            .grad_wrt_embeddings(&model.embed(&model.tokenize("a c a")))
            .unwrap();
        assert_eq!(g.row(0), g.row(2));
    }

    #[test]
    fn single_class_is_degenerate() {
        let ds = dataset(&[("a", true), ("b", true)]);
        assert!(matches!(
            train(&ds, &TrainConfig::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn decision_ties_go_positive() {
        assert!(decide(0.5));
        assert!(!decide(0.4999));
    }

    #[test]
    fn save_load_is_exact() {
        let ds = dataset(&[("good day", true), ("bad day", false), ("good x", true), ("bad y", false)]);
        let model = train(
            &ds,
            &TrainConfig {
                min_frequency: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        assert_eq!(BagOfEmbeddings::load(&path).unwrap(), model);

        let text = fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":9");
        fs::write(&path, text).unwrap();
        assert!(matches!(BagOfEmbeddings::load(&path), Err(Error::Model(_))));
    }
}
