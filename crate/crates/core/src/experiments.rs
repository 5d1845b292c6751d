//! End-to-end experiment drivers.
//!
//! Two grids are supported:
//!
//! * the **gender study**: a gender classifier trained on original,
//!   profanity-scrubbed, and scrubbed-without-very-toxic data, each evaluated
//!   on test data with and without offensive words;
//! * the **toxicity matrix**: toxicity classifiers trained on male- or
//!   female-annotated data (with and without offensive words), each
//!   evaluated on all four matching test sets, plus one baseline trained on
//!   both genders.
//!
//! Within a seed every model condition is evaluated on the same test sets,
//! and test comments never appear in any training set: the corpus is first
//! partitioned by `rev_id` and train/test data are sampled from their own
//! side of that partition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute_dataset, summarize, AttributionSummary, ExampleAttribution, IgConfig};
use crate::classifier::{decide, Classifier, ReferenceTrainer, TrainConfig, Trainer, REFERENCE_BACKEND};
use crate::corpus::{load_corpus, AnnotatedExample, CorpusColumns};
use crate::error::{Error, Result};
use crate::lexicon::{count_offensive, drop_very_toxic, scrub_dataset, Blacklist};
use crate::metrics::{aggregate_runs, kde, linspace, spearman, BiasReport, REPORT_SCHEMA_VERSION};
use crate::sampling::{
    balance_by_gender, build_gender_task, build_toxicity_task, gender_task_plan,
    max_balanced_size, partition_rev_ids, toxicity_task_plan, Annotated, Dataset, GenderFilter,
    QuotaPlan, Task,
};

pub const DEFAULT_SEEDS: [u64; 5] = [42, 5936, 9743, 14280, 29988];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub comments: PathBuf,
    pub annotations: PathBuf,
    pub demographics: PathBuf,
    #[serde(default)]
    pub columns: CorpusColumns,
}

/// Declarative description of an experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub corpus: Option<CorpusPaths>,
    pub blacklist: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Upper bound on training examples per dataset.
    pub train_size: usize,
    /// Upper bound on test examples per dataset.
    pub test_size: usize,
    pub backend: String,
    pub train: TrainConfig,
    pub ig: IgConfig,
    pub top_k: usize,
    /// Evaluate the not-very-toxic model on test sets with very toxic
    /// examples removed as well, instead of the shared test sets.
    pub not_very_toxic_test: bool,
    pub kde_points: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            corpus: None,
            blacklist: None,
            seeds: DEFAULT_SEEDS.to_vec(),
            train_size: 4000,
            test_size: 1000,
            backend: REFERENCE_BACKEND.into(),
            train: TrainConfig::default(),
            ig: IgConfig::default(),
            top_k: 20,
            not_very_toxic_test: false,
            kde_points: 101,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentPlan {
    /// Reads a TOML plan. Relative paths resolve against the file's folder.
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentPlan> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let mut plan: ExperimentPlan =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(c) = plan.corpus.as_mut() {
            resolve(&mut c.comments);
            resolve(&mut c.annotations);
            resolve(&mut c.demographics);
        }
        if let Some(b) = plan.blacklist.as_mut() {
            resolve(b);
        }
        resolve(&mut plan.output_dir);
        Ok(plan)
    }

    /// Checks everything that does not need file access.
    pub fn validate_params(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config(format!("seeds must be distinct: {:?}", self.seeds)));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("train_size and test_size must be positive".into()));
        }
        if self.backend != REFERENCE_BACKEND {
            return Err(Error::Config(format!("unknown backend `{}`", self.backend)));
        }
        if self.ig.steps == 0 {
            return Err(Error::Config("ig.steps must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Full validation, including that every input path exists.
    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        let corpus = self
            .corpus
            .as_ref()
            .ok_or_else(|| Error::Config("plan has no [corpus] section".into()))?;
        let blacklist = self
            .blacklist
            .as_ref()
            .ok_or_else(|| Error::Config("plan has no blacklist path".into()))?;
        for p in [&corpus.comments, &corpus.annotations, &corpus.demographics, blacklist] {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn test_fraction(&self) -> f64 {
        self.test_size as f64 / (self.train_size + self.test_size) as f64
    }

    /// Loads the joined corpus and blacklist the plan points at.
    pub fn load_inputs(&self) -> Result<(Vec<AnnotatedExample>, Blacklist)> {
        self.validate()?;
        let c = self.corpus.as_ref().expect("validated");
        let joined = load_corpus(&c.comments, &c.annotations, &c.demographics, &c.columns)?;
        let blacklist = Blacklist::load(self.blacklist.as_ref().expect("validated"))?;
        Ok((joined.examples, blacklist))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelCondition {
    Original,
    NoProfanity,
    NotVeryToxic,
}

impl ModelCondition {
    pub const ALL: [ModelCondition; 3] = [
        ModelCondition::Original,
        ModelCondition::NoProfanity,
        ModelCondition::NotVeryToxic,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCondition {
    WithProfanity,
    WithoutProfanity,
}

impl TestCondition {
    pub const ALL: [TestCondition; 2] = [TestCondition::WithProfanity, TestCondition::WithoutProfanity];
}

macro_rules! display_via_serde {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
                f.write_str(v.as_str().unwrap_or_default())
            }
        }
    )*};
}

display_via_serde!(ModelCondition, TestCondition, ToxicityCondition);

/// Provenance of one dataset used by a study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub seed: u64,
    pub name: String,
    pub size: usize,
    pub transform_log: Vec<String>,
}

impl DatasetRecord {
    fn of(seed: u64, name: impl Into<String>, ds: &Dataset) -> Self {
        DatasetRecord {
            seed,
            name: name.into(),
            size: ds.len(),
            transform_log: ds.transform_log.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderCell {
    pub seed: u64,
    pub model_condition: ModelCondition,
    pub test_condition: TestCondition,
    pub report: BiasReport,
    /// Spearman rho between offensive-word count and P(Female); `None`
    /// when either is constant over the test set.
    pub spearman_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderConditionSummary {
    pub model_condition: ModelCondition,
    pub test_condition: TestCondition,
    pub n_runs: usize,
    pub mean_abs_bias_gap: Option<f64>,
    pub mean_bias_gap: Option<f64>,
    pub mean_male_prediction_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderStudyReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub cells: Vec<GenderCell>,
    pub summary: Vec<GenderConditionSummary>,
    /// Mean |bias gap| of NoProfanity over Original, pooled over both test
    /// conditions; 1 minus this is the relative bias reduction.
    pub no_profanity_bias_ratio: Option<f64>,
    pub datasets: Vec<DatasetRecord>,
    pub failures: Vec<SeedFailure>,
}

impl GenderStudyReport {
    pub fn cell(&self, seed: u64, model: ModelCondition, test: TestCondition) -> Option<&GenderCell> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.model_condition == model && c.test_condition == test)
    }
}

/// Models and test sets of one seed, kept for follow-up studies.
#[derive(Debug, Clone)]
pub struct GenderSeedArtifacts<M> {
    pub seed: u64,
    pub models: BTreeMap<ModelCondition, M>,
    pub test_sets: BTreeMap<TestCondition, Dataset>,
}

#[derive(Debug, Clone)]
pub struct GenderStudyOutput<M> {
    pub report: GenderStudyReport,
    /// Artifacts of the first seed that completed.
    pub first_seed: Option<GenderSeedArtifacts<M>>,
}

fn capped_size<T: Annotated>(pool: &[T], template: &QuotaPlan, cap: usize) -> Option<usize> {
    let per_unit = template.total_weight();
    let size = max_balanced_size(pool, template).min(cap / per_unit * per_unit);
    (size > 0).then_some(size)
}

fn split_pools(
    examples: &[AnnotatedExample],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<AnnotatedExample>, Vec<AnnotatedExample>)> {
    let test_ids = partition_rev_ids(examples, test_fraction, seed)?;
    Ok(examples
        .iter()
        .cloned()
        .partition(|e| !test_ids.contains(&e.rev_id)))
}

fn ensure_disjoint(seed: u64, train: &[&Dataset], test: &[&Dataset]) -> Result<()> {
    let test_ids: BTreeSet<u64> = test.iter().flat_map(|d| d.rev_ids()).collect();
    for d in train {
        if let Some(id) = d.rev_ids().intersection(&test_ids).next() {
            return Err(Error::Parameter(format!(
                "seed {seed}: rev_id {id} appears in both train and test"
            )));
        }
    }
    Ok(())
}

/// Predicted labels and positive-class probabilities for every example.
pub fn predict_dataset<C: Classifier + ?Sized>(model: &C, dataset: &Dataset) -> (Vec<bool>, Vec<f64>) {
    dataset
        .examples
        .iter()
        .map(|e| {
            let p = model.predict_text(&e.text);
            (decide(p), p)
        })
        .unzip()
}

pub fn evaluate<C: Classifier + ?Sized>(model: &C, dataset: &Dataset) -> Result<BiasReport> {
    let (predicted, _) = predict_dataset(model, dataset);
    BiasReport::from_predictions(dataset.task, &predicted, &dataset.labels())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub offensive_count: usize,
    pub probability_female: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStudy {
    pub points: Vec<CorrelationPoint>,
    pub spearman_rho: Option<f64>,
    pub undefined_reason: Option<String>,
}

/// Offensive-word count against P(Female) over a test set.
pub fn run_correlation_study<C: Classifier + ?Sized>(
    model: &C,
    test: &Dataset,
    blacklist: &Blacklist,
) -> Result<CorrelationStudy> {
    if model.task() != Task::Gender {
        return Err(Error::TaskMismatch {
            expected: Task::Gender.to_string(),
            got: model.task().to_string(),
        });
    }
    let points: Vec<CorrelationPoint> = test
        .examples
        .iter()
        .map(|e| CorrelationPoint {
            offensive_count: count_offensive(&e.text, blacklist),
            probability_female: model.predict_text(&e.text),
        })
        .collect();
    let counts: Vec<f64> = points.iter().map(|p| p.offensive_count as f64).collect();
    let probs: Vec<f64> = points.iter().map(|p| p.probability_female).collect();
    let (spearman_rho, undefined_reason) = match spearman(&counts, &probs) {
        Ok(rho) => (Some(rho), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(CorrelationStudy {
        points,
        spearman_rho,
        undefined_reason,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub name: String,
    pub n: usize,
    pub bandwidth: Option<f64>,
    /// `None` when the partition is empty.
    pub density: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStudy {
    pub grid: Vec<f64>,
    pub curves: Vec<DensityCurve>,
}

/// Densities of offensive-word counts for true and predicted Male/Female.
pub fn run_distribution_study<C: Classifier + ?Sized>(
    model: &C,
    test: &Dataset,
    blacklist: &Blacklist,
    grid: &[f64],
) -> Result<DistributionStudy> {
    let (predicted, _) = predict_dataset(model, test);
    let counts: Vec<f64> = test
        .examples
        .iter()
        .map(|e| count_offensive(&e.text, blacklist) as f64)
        .collect();
    let partitions: [(&str, Box<dyn Fn(usize) -> bool>); 4] = [
        ("true_male", Box::new(|i| !test.examples[i].label)),
        ("true_female", Box::new(|i| test.examples[i].label)),
        ("predicted_male", Box::new(|i| !predicted[i])),
        ("predicted_female", Box::new(|i| predicted[i])),
    ];
    let curves = partitions
        .iter()
        .map(|(name, keep)| {
            let values: Vec<f64> = (0..counts.len()).filter(|&i| keep(i)).map(|i| counts[i]).collect();
            if values.is_empty() {
                return Ok(DensityCurve {
                    name: name.to_string(),
                    n: 0,
                    bandwidth: None,
                    density: None,
                });
            }
            let h = crate::metrics::scott_bandwidth(&values);
            Ok(DensityCurve {
                name: name.to_string(),
                n: values.len(),
                bandwidth: Some(h),
                density: Some(kde(&values, Some(h), grid)?),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DistributionStudy {
        grid: grid.to_vec(),
        curves,
    })
}

/// Grid spanning the observed offensive-word counts with room for the
/// kernel tails.
pub fn count_grid(test: &Dataset, blacklist: &Blacklist, points: usize) -> Vec<f64> {
    let max = test
        .examples
        .iter()
        .map(|e| count_offensive(&e.text, blacklist))
        .max()
        .unwrap_or(0);
    linspace(-3.0, max as f64 + 3.0, points.max(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionStudy {
    pub records: Vec<ExampleAttribution>,
    pub summary: AttributionSummary,
}

pub fn run_attribution_study<C: Classifier + ?Sized>(
    model: &C,
    test: &Dataset,
    top_k: usize,
    config: &IgConfig,
) -> Result<AttributionStudy> {
    let records = attribute_dataset(model, test, config)?;
    let summary = summarize(model, &records, top_k)?;
    Ok(AttributionStudy { records, summary })
}

struct GenderSeedResult<M> {
    cells: Vec<GenderCell>,
    datasets: Vec<DatasetRecord>,
    artifacts: GenderSeedArtifacts<M>,
}

fn gender_seed<T: Trainer>(
    examples: &[AnnotatedExample],
    blacklist: &Blacklist,
    plan: &ExperimentPlan,
    trainer: &T,
    seed: u64,
) -> Result<GenderSeedResult<T::Model>> {
    let (train_pool, test_pool) = split_pools(examples, plan.test_fraction(), seed)?;
    let template = gender_task_plan();
    let train = build_gender_task(&train_pool, seed, capped_size(&train_pool, &template, plan.train_size))?;
    let test = build_gender_task(&test_pool, seed, capped_size(&test_pool, &template, plan.test_size))?;

    let scrubbed_train = scrub_dataset(&train, blacklist);
    let train_sets = [
        (ModelCondition::Original, train.clone()),
        (ModelCondition::NoProfanity, scrubbed_train.clone()),
        (ModelCondition::NotVeryToxic, drop_very_toxic(&scrubbed_train)?),
    ];
    let test_sets = BTreeMap::from([
        (TestCondition::WithProfanity, test.clone()),
        (TestCondition::WithoutProfanity, scrub_dataset(&test, blacklist)),
    ]);
    ensure_disjoint(
        seed,
        &train_sets.iter().map(|(_, d)| d).collect::<Vec<_>>(),
        &test_sets.values().collect::<Vec<_>>(),
    )?;

    let config = plan.train.clone().with_seed(seed);
    let mut datasets = Vec::new();
    let mut models = BTreeMap::new();
    for (condition, ds) in &train_sets {
        datasets.push(DatasetRecord::of(seed, format!("train/{condition}"), ds));
        models.insert(*condition, trainer.train(ds, &config)?);
    }

    let mut cells = Vec::new();
    for (test_condition, shared) in &test_sets {
        datasets.push(DatasetRecord::of(seed, format!("test/{test_condition}"), shared));
        for (model_condition, model) in &models {
            let own;
            let test_ds = if plan.not_very_toxic_test && *model_condition == ModelCondition::NotVeryToxic {
                own = drop_very_toxic(shared)?;
                datasets.push(DatasetRecord::of(
                    seed,
                    format!("test/{test_condition}/{model_condition}"),
                    &own,
                ));
                &own
            } else {
                shared
            };
            let report = evaluate(model, test_ds)?.with_meta(
                seed,
                &model_condition.to_string(),
                &test_condition.to_string(),
            );
            let correlation = run_correlation_study(model, test_ds, blacklist)?;
            cells.push(GenderCell {
                seed,
                model_condition: *model_condition,
                test_condition: *test_condition,
                report,
                spearman_rho: correlation.spearman_rho,
            });
        }
    }
    cells.sort_by_key(|c| (c.model_condition, c.test_condition));
    Ok(GenderSeedResult {
        cells,
        datasets,
        artifacts: GenderSeedArtifacts {
            seed,
            models,
            test_sets,
        },
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn summarize_gender(cells: &[GenderCell]) -> (Vec<GenderConditionSummary>, Option<f64>) {
    let mut summary = Vec::new();
    for model_condition in ModelCondition::ALL {
        for test_condition in TestCondition::ALL {
            let group: Vec<&GenderCell> = cells
                .iter()
                .filter(|c| c.model_condition == model_condition && c.test_condition == test_condition)
                .collect();
            let gaps: Vec<f64> = group.iter().filter_map(|c| c.report.bias_gap).collect();
            let abs: Vec<f64> = gaps.iter().map(|g| g.abs()).collect();
            let rates: Vec<f64> = group.iter().filter_map(|c| c.report.male_prediction_rate).collect();
            summary.push(GenderConditionSummary {
                model_condition,
                test_condition,
                n_runs: group.len(),
                mean_abs_bias_gap: mean(&abs),
                mean_bias_gap: mean(&gaps),
                mean_male_prediction_rate: mean(&rates),
            });
        }
    }
    let pooled_abs = |m: ModelCondition| {
        let v: Vec<f64> = cells
            .iter()
            .filter(|c| c.model_condition == m)
            .filter_map(|c| c.report.bias_gap.map(f64::abs))
            .collect();
        mean(&v)
    };
    let ratio = match (pooled_abs(ModelCondition::NoProfanity), pooled_abs(ModelCondition::Original)) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    (summary, ratio)
}

/// Runs the gender study on an in-memory corpus.
pub fn run_gender_study_on<T: Trainer>(
    examples: &[AnnotatedExample],
    blacklist: &Blacklist,
    plan: &ExperimentPlan,
    trainer: &T,
) -> Result<GenderStudyOutput<T::Model>> {
    plan.validate_params()?;
    let mut cells = Vec::new();
    let mut datasets = Vec::new();
    let mut failures = Vec::new();
    let mut first_seed = None;
    for &seed in &plan.seeds {
        log::info!("gender study: seed {seed}");
        match gender_seed(examples, blacklist, plan, trainer, seed) {
            Ok(result) => {
                cells.extend(result.cells);
                datasets.extend(result.datasets);
                first_seed.get_or_insert(result.artifacts);
            }
            Err(e) => {
                log::warn!("gender study: seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let (summary, no_profanity_bias_ratio) = summarize_gender(&cells);
    Ok(GenderStudyOutput {
        report: GenderStudyReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seeds: plan.seeds.clone(),
            cells,
            summary,
            no_profanity_bias_ratio,
            datasets,
            failures,
        },
        first_seed,
    })
}

/// Loads the plan's corpus and runs the gender study with the reference
/// backend.
pub fn run_gender_study(
    plan: &ExperimentPlan,
) -> Result<GenderStudyOutput<<ReferenceTrainer as Trainer>::Model>> {
    let (examples, blacklist) = plan.load_inputs()?;
    run_gender_study_on(&examples, &blacklist, plan, &ReferenceTrainer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ToxicityCondition {
    Male,
    MaleNoProfanity,
    Female,
    FemaleNoProfanity,
    #[serde(rename = "Male+Female")]
    MaleFemale,
}

impl ToxicityCondition {
    /// The four per-gender conditions, in table order.
    pub const GRID: [ToxicityCondition; 4] = [
        ToxicityCondition::Male,
        ToxicityCondition::MaleNoProfanity,
        ToxicityCondition::Female,
        ToxicityCondition::FemaleNoProfanity,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityCell {
    pub seed: u64,
    pub model: ToxicityCondition,
    pub test_set: ToxicityCondition,
    pub sensitivity: Option<f64>,
    pub report: BiasReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub model: ToxicityCondition,
    pub test_set: ToxicityCondition,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityMatrixReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub runs: Vec<ToxicityCell>,
    /// One run of the model trained on both genders.
    pub baseline: Vec<ToxicityCell>,
    /// Mean and SD per (model, test set), baseline rows included.
    pub aggregate: Vec<MatrixEntry>,
    /// Female-trained minus male-trained mean sensitivity, averaged over
    /// test sets and both profanity conditions.
    pub female_minus_male: Option<f64>,
    pub female_minus_male_sd: Option<f64>,
    /// NoProfanity-trained minus original-trained sensitivity on the
    /// unmodified test sets.
    pub no_profanity_gain_on_unmodified: Option<f64>,
    pub datasets: Vec<DatasetRecord>,
    pub failures: Vec<SeedFailure>,
}

impl ToxicityMatrixReport {
    pub fn entry(&self, model: ToxicityCondition, test_set: ToxicityCondition) -> Option<&MatrixEntry> {
        self.aggregate
            .iter()
            .find(|e| e.model == model && e.test_set == test_set)
    }
}

struct ToxicitySeedResult {
    cells: Vec<ToxicityCell>,
    baseline: Vec<ToxicityCell>,
    datasets: Vec<DatasetRecord>,
}

fn toxicity_seed<T: Trainer>(
    examples: &[AnnotatedExample],
    blacklist: &Blacklist,
    plan: &ExperimentPlan,
    trainer: &T,
    seed: u64,
    with_baseline: bool,
) -> Result<ToxicitySeedResult> {
    let (train_pool, test_pool) = split_pools(examples, plan.test_fraction(), seed)?;
    let template = toxicity_task_plan(GenderFilter::Male);
    // Both genders share one size so the four models are comparable.
    let size_for = |pool: &[AnnotatedExample], cap: usize| -> Option<usize> {
        [GenderFilter::Male, GenderFilter::Female]
            .iter()
            .map(|&f| max_balanced_size(pool, &toxicity_task_plan(f)))
            .chain([cap / template.total_weight() * template.total_weight()])
            .min()
            .filter(|&s| s > 0)
    };
    let train_size = size_for(&train_pool, plan.train_size);
    let test_size = size_for(&test_pool, plan.test_size);

    let mut train_sets = BTreeMap::new();
    let mut test_sets = BTreeMap::new();
    for (filter, plain, scrubbed) in [
        (GenderFilter::Male, ToxicityCondition::Male, ToxicityCondition::MaleNoProfanity),
        (GenderFilter::Female, ToxicityCondition::Female, ToxicityCondition::FemaleNoProfanity),
    ] {
        let train = build_toxicity_task(&train_pool, filter, seed, train_size)?;
        let test = build_toxicity_task(&test_pool, filter, seed, test_size)?;
        train_sets.insert(scrubbed, scrub_dataset(&train, blacklist));
        train_sets.insert(plain, train);
        test_sets.insert(scrubbed, scrub_dataset(&test, blacklist));
        test_sets.insert(plain, test);
    }
    if with_baseline {
        let union: Vec<_> = train_sets[&ToxicityCondition::Male]
            .examples
            .iter()
            .chain(&train_sets[&ToxicityCondition::Female].examples)
            .cloned()
            .collect();
        let mut transform_log = vec!["toxicity_task:male+female".to_string()];
        transform_log.push("balance_by_gender".into());
        train_sets.insert(
            ToxicityCondition::MaleFemale,
            Dataset {
                task: Task::Toxicity,
                seed,
                examples: balance_by_gender(&union, seed)?,
                transform_log,
                plan: None,
            },
        );
    }
    ensure_disjoint(
        seed,
        &train_sets.values().collect::<Vec<_>>(),
        &test_sets.values().collect::<Vec<_>>(),
    )?;

    let config = plan.train.clone().with_seed(seed);
    let mut datasets = Vec::new();
    for (name, ds) in &test_sets {
        datasets.push(DatasetRecord::of(seed, format!("test/{name}"), ds));
    }
    let mut cells = Vec::new();
    let mut baseline = Vec::new();
    for (model_name, train) in &train_sets {
        datasets.push(DatasetRecord::of(seed, format!("train/{model_name}"), train));
        let model = trainer.train(train, &config)?;
        for (test_name, test) in &test_sets {
            let report = evaluate(&model, test)?.with_meta(seed, &model_name.to_string(), &test_name.to_string());
            let cell = ToxicityCell {
                seed,
                model: *model_name,
                test_set: *test_name,
                sensitivity: report.sensitivity,
                report,
            };
            if *model_name == ToxicityCondition::MaleFemale {
                baseline.push(cell);
            } else {
                cells.push(cell);
            }
        }
    }
    Ok(ToxicitySeedResult {
        cells,
        baseline,
        datasets,
    })
}

fn aggregate_matrix(cells: &[ToxicityCell]) -> Vec<MatrixEntry> {
    let mut groups: BTreeMap<(ToxicityCondition, ToxicityCondition), Vec<f64>> = BTreeMap::new();
    for c in cells {
        let entry = groups.entry((c.model, c.test_set)).or_default();
        if let Some(s) = c.sensitivity {
            entry.push(s);
        }
    }
    groups
        .into_iter()
        .map(|((model, test_set), values)| {
            let summary = aggregate_runs(&values).ok();
            MatrixEntry {
                model,
                test_set,
                mean: summary.map(|s| s.mean),
                sd: summary.and_then(|s| s.sd),
                n: values.len(),
            }
        })
        .collect()
}

/// Runs the cross-gender toxicity matrix on an in-memory corpus.
pub fn run_toxicity_matrix_on<T: Trainer>(
    examples: &[AnnotatedExample],
    blacklist: &Blacklist,
    plan: &ExperimentPlan,
    trainer: &T,
) -> Result<ToxicityMatrixReport> {
    plan.validate_params()?;
    let mut runs = Vec::new();
    let mut baseline = Vec::new();
    let mut datasets = Vec::new();
    let mut failures = Vec::new();
    for &seed in &plan.seeds {
        log::info!("toxicity matrix: seed {seed}");
        match toxicity_seed(examples, blacklist, plan, trainer, seed, baseline.is_empty()) {
            Ok(result) => {
                runs.extend(result.cells);
                baseline.extend(result.baseline);
                datasets.extend(result.datasets);
            }
            Err(e) => {
                log::warn!("toxicity matrix: seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let mut all = runs.clone();
    all.extend(baseline.iter().cloned());
    let aggregate = aggregate_matrix(&all);
    let mean_of = |m: ToxicityCondition, t: ToxicityCondition| {
        aggregate
            .iter()
            .find(|e| e.model == m && e.test_set == t)
            .and_then(|e| e.mean)
    };
    use ToxicityCondition::*;
    let female_diffs: Vec<f64> = [(Female, Male), (FemaleNoProfanity, MaleNoProfanity)]
        .iter()
        .flat_map(|&(f, m)| {
            ToxicityCondition::GRID
                .iter()
                .filter_map(move |&t| Some(mean_of(f, t)? - mean_of(m, t)?))
                .collect::<Vec<_>>()
        })
        .collect();
    let gain: Vec<f64> = [(MaleNoProfanity, Male), (FemaleNoProfanity, Female)]
        .iter()
        .flat_map(|&(np, orig)| {
            [Male, Female]
                .iter()
                .filter_map(|&t| Some(mean_of(np, t)? - mean_of(orig, t)?))
                .collect::<Vec<_>>()
        })
        .collect();
    let female_summary = aggregate_runs(&female_diffs).ok();
    Ok(ToxicityMatrixReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seeds: plan.seeds.clone(),
        runs,
        baseline,
        aggregate,
        female_minus_male: female_summary.map(|s| s.mean),
        female_minus_male_sd: female_summary.and_then(|s| s.sd),
        no_profanity_gain_on_unmodified: mean(&gain),
        datasets,
        failures,
    })
}

pub fn run_toxicity_matrix(plan: &ExperimentPlan) -> Result<ToxicityMatrixReport> {
    let (examples, blacklist) = plan.load_inputs()?;
    run_toxicity_matrix_on(&examples, &blacklist, plan, &ReferenceTrainer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// A report that can be written as JSON or as a CSV table.
pub trait Report: Serialize + DeserializeOwned {
    fn to_csv(&self) -> String;
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report for ToxicityMatrixReport {
    /// One row per model, a Mean/SD column pair per test set.
    fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for t in ToxicityCondition::GRID {
            out.push_str(&format!(",{t} Mean,{t} SD"));
        }
        out.push('\n');
        let mut models: Vec<ToxicityCondition> = self.aggregate.iter().map(|e| e.model).collect();
        models.dedup();
        for m in models {
            out.push_str(&m.to_string());
            for t in ToxicityCondition::GRID {
                let e = self.entry(m, t);
                out.push_str(&format!(
                    ",{},{}",
                    opt(e.and_then(|e| e.mean)),
                    opt(e.and_then(|e| e.sd))
                ));
            }
            out.push('\n');
        }
        out
    }
}

impl Report for GenderStudyReport {
    fn to_csv(&self) -> String {
        let mut out = String::from(
            "seed,model_condition,test_condition,n,sensitivity,specificity,bias_gap,male_prediction_rate,spearman_rho\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.seed,
                c.model_condition,
                c.test_condition,
                c.report.n,
                opt(c.report.sensitivity),
                opt(c.report.specificity),
                opt(c.report.bias_gap),
                opt(c.report.male_prediction_rate),
                opt(c.spearman_rho)
            ));
        }
        out
    }
}

pub fn report_to_string<R: Report>(report: &R, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
        ReportFormat::Csv => report.to_csv(),
    })
}

pub fn emit_report<R: Report>(report: &R, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    fs::write(path, report_to_string(report, format)?)?;
    Ok(())
}

pub fn read_report<R: Report>(path: impl AsRef<Path>) -> Result<R> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}
