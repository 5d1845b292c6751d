//! Balanced, seeded dataset construction.
//!
//! Every sampler draws uniformly without replacement by sorting a stratum
//! into canonical `(rev_id, worker_id)` order, shuffling it with a seeded
//! generator and taking a prefix. The generator is ChaCha8 seeded from the
//! user seed mixed with the operation name, so two operations sharing a seed
//! still draw independent streams and results do not depend on input order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Gender, ToxicityScore};
use crate::error::{Error, Result};

/// Seeded generator private to one operation.
pub fn op_rng(seed: u64, op: &str) -> ChaCha8Rng {
    // FNV-1a, so the stream is stable across platforms and toolchains.
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in op.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ hash)
}

/// Anything that can be stratified by annotator gender and score.
pub trait Annotated {
    fn rev_id(&self) -> u64;
    fn worker_id(&self) -> u64;
    fn gender(&self) -> Gender;
    fn score(&self) -> ToxicityScore;

    fn key(&self) -> (u64, u64) {
        (self.rev_id(), self.worker_id())
    }
}

impl Annotated for AnnotatedExample {
    fn rev_id(&self) -> u64 {
        self.rev_id
    }
    fn worker_id(&self) -> u64 {
        self.worker_id
    }
    fn gender(&self) -> Gender {
        self.gender
    }
    fn score(&self) -> ToxicityScore {
        self.score
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Predict annotator gender; Female is the positive class.
    Gender,
    /// Predict whether the annotation is toxic; Toxic is the positive class.
    Toxicity,
}

impl Task {
    /// Label convention for an annotation under this task.
    pub fn label_of(self, gender: Gender, score: ToxicityScore) -> bool {
        match self {
            Task::Gender => gender == Gender::Female,
            Task::Toxicity => score.is_toxic(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::Toxicity => "toxicity",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderFilter {
    Male,
    Female,
    Both,
}

impl GenderFilter {
    pub fn genders(self) -> &'static [Gender] {
        match self {
            GenderFilter::Male => &[Gender::Male],
            GenderFilter::Female => &[Gender::Female],
            GenderFilter::Both => &Gender::BOTH,
        }
    }
}

/// Score grouping used by the quota schemes. `Neither` has no band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBand {
    VeryToxic,
    Toxic,
    /// Healthy and VeryHealthy pooled without a per-score quota.
    HealthyPool,
}

impl ScoreBand {
    pub fn of(score: ToxicityScore) -> Option<ScoreBand> {
        match score {
            ToxicityScore::VeryToxic => Some(ScoreBand::VeryToxic),
            ToxicityScore::Toxic => Some(ScoreBand::Toxic),
            ToxicityScore::Neither => None,
            ToxicityScore::Healthy | ToxicityScore::VeryHealthy => Some(ScoreBand::HealthyPool),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub gender: Gender,
    pub band: ScoreBand,
}

impl Stratum {
    pub fn of(item: &impl Annotated) -> Option<Stratum> {
        Some(Stratum {
            gender: item.gender(),
            band: ScoreBand::of(item.score())?,
        })
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let band = match self.band {
            ScoreBand::VeryToxic => "very_toxic",
            ScoreBand::Toxic => "toxic",
            ScoreBand::HealthyPool => "healthy_pool",
        };
        write!(f, "{}/{}", self.gender, band)
    }
}

/// Target count per stratum: `weight * unit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaPlan {
    pub unit: usize,
    #[serde(with = "weights_as_list")]
    pub weights: BTreeMap<Stratum, usize>,
}

mod weights_as_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Stratum;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        #[serde(flatten)]
        stratum: Stratum,
        weight: usize,
    }

    pub fn serialize<S: Serializer>(w: &BTreeMap<Stratum, usize>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = w
            .iter()
            .map(|(&stratum, &weight)| Entry { stratum, weight })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Stratum, usize>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries.into_iter().map(|e| (e.stratum, e.weight)).collect())
    }
}

impl QuotaPlan {
    pub fn target(&self, stratum: &Stratum) -> usize {
        self.weights.get(stratum).map_or(0, |w| w * self.unit)
    }

    pub fn total_weight(&self) -> usize {
        self.weights.values().sum()
    }

    pub fn size(&self) -> usize {
        self.unit * self.total_weight()
    }

    /// Largest unit the given stratum counts can support.
    pub fn max_unit(&self, counts: &BTreeMap<Stratum, usize>) -> usize {
        self.weights
            .iter()
            .map(|(s, w)| counts.get(s).copied().unwrap_or(0) / w)
            .min()
            .unwrap_or(0)
    }

    fn with_unit(&self, unit: usize) -> QuotaPlan {
        QuotaPlan {
            unit,
            weights: self.weights.clone(),
        }
    }
}

/// One labelled training or evaluation example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub rev_id: u64,
    pub worker_id: u64,
    pub text: String,
    #[serde(with = "label_as_int")]
    pub label: bool,
    pub score: ToxicityScore,
    pub gender: Gender,
}

mod label_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(label: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*label as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("label {other} is not 0 or 1"))),
        }
    }
}

impl Annotated for Example {
    fn rev_id(&self) -> u64 {
        self.rev_id
    }
    fn worker_id(&self) -> u64 {
        self.worker_id
    }
    fn gender(&self) -> Gender {
        self.gender
    }
    fn score(&self) -> ToxicityScore {
        self.score
    }
}

impl Example {
    pub fn from_annotated(task: Task, a: &AnnotatedExample) -> Example {
        Example {
            rev_id: a.rev_id,
            worker_id: a.worker_id,
            text: a.text.clone(),
            label: task.label_of(a.gender, a.score),
            score: a.score,
            gender: a.gender,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: Task,
    /// Seed the dataset was sampled with; later rebalancing reuses it.
    pub seed: u64,
    pub examples: Vec<Example>,
    pub transform_log: Vec<String>,
    pub plan: Option<QuotaPlan>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn rev_ids(&self) -> BTreeSet<u64> {
        self.examples.iter().map(|e| e.rev_id).collect()
    }

    pub fn stratum_counts(&self) -> BTreeMap<Stratum, usize> {
        stratum_counts(&self.examples)
    }

    pub fn gender_counts(&self) -> BTreeMap<Gender, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.examples {
            *counts.entry(e.gender).or_default() += 1;
        }
        counts
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            task: self.task,
            seed: self.seed,
            size: self.len(),
            positives: self.examples.iter().filter(|e| e.label).count(),
            strata: self
                .stratum_counts()
                .into_iter()
                .map(|(s, c)| (s.to_string(), c))
                .collect(),
            quota: self.plan.clone(),
            transform_log: self.transform_log.clone(),
        }
    }
}

/// Side-car description of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    pub seed: u64,
    pub size: usize,
    pub positives: usize,
    pub strata: BTreeMap<String, usize>,
    pub quota: Option<QuotaPlan>,
    pub transform_log: Vec<String>,
}

pub fn stratum_counts<T: Annotated>(items: &[T]) -> BTreeMap<Stratum, usize> {
    let mut counts = BTreeMap::new();
    for item in items {
        if let Some(s) = Stratum::of(item) {
            *counts.entry(s).or_default() += 1;
        }
    }
    counts
}

fn canonical_shuffle<T: Annotated + Clone>(items: Vec<&T>, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut items = items;
    items.sort_by_key(|i| i.key());
    items.shuffle(rng);
    items.into_iter().cloned().collect()
}

/// Draws `plan.target(s)` items from every stratum, then shuffles the union.
fn sample_plan<T: Annotated + Clone>(items: &[T], plan: &QuotaPlan, seed: u64, op: &str) -> Vec<T> {
    let mut rng = op_rng(seed, op);
    let mut out = Vec::with_capacity(plan.size());
    for stratum in plan.weights.keys() {
        let members: Vec<&T> = items
            .iter()
            .filter(|i| Stratum::of(*i).as_ref() == Some(stratum))
            .collect();
        let shuffled = canonical_shuffle(members, &mut rng);
        out.extend(shuffled.into_iter().take(plan.target(stratum)));
    }
    let refs: Vec<&T> = out.iter().collect();
    canonical_shuffle(refs, &mut rng)
}

/// Keeps equal numbers of male and female items: `min(|male|, |female|)`
/// of each, drawn uniformly without replacement, in seeded order.
pub fn balance_by_gender<T: Annotated + Clone>(items: &[T], seed: u64) -> Result<Vec<T>> {
    let mut rng = op_rng(seed, "balance_by_gender");
    let mut groups = Vec::new();
    for gender in Gender::BOTH {
        let members: Vec<&T> = items.iter().filter(|i| i.gender() == gender).collect();
        if members.is_empty() {
            return Err(Error::EmptyStratum(gender.to_string()));
        }
        groups.push(members);
    }
    let quota = groups.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::with_capacity(2 * quota);
    for members in groups {
        out.extend(canonical_shuffle(members, &mut rng).into_iter().take(quota));
    }
    let refs: Vec<&T> = out.iter().collect();
    Ok(canonical_shuffle(refs, &mut rng))
}

fn plan_unit(
    plan: &QuotaPlan,
    counts: &BTreeMap<Stratum, usize>,
    size: Option<usize>,
) -> Result<usize> {
    for stratum in plan.weights.keys() {
        if counts.get(stratum).copied().unwrap_or(0) == 0 {
            return Err(Error::EmptyStratum(stratum.to_string()));
        }
    }
    let max_unit = plan.max_unit(counts);
    if max_unit == 0 {
        return Err(Error::Quota(format!(
            "strata {counts:?} cannot fill one unit of {:?}",
            plan.weights
        )));
    }
    let Some(size) = size else {
        return Ok(max_unit);
    };
    let per_unit = plan.total_weight();
    if size == 0 || size % per_unit != 0 {
        return Err(Error::Quota(format!(
            "size {size} is not a positive multiple of {per_unit}"
        )));
    }
    let unit = size / per_unit;
    if unit > max_unit {
        return Err(Error::Quota(format!(
            "size {size} exceeds the largest balanced size {}",
            max_unit * per_unit
        )));
    }
    Ok(unit)
}

pub fn gender_task_plan() -> QuotaPlan {
    let weights = Gender::BOTH
        .iter()
        .flat_map(|&gender| {
            [ScoreBand::Toxic, ScoreBand::VeryToxic]
                .map(|band| (Stratum { gender, band }, 1))
        })
        .collect();
    QuotaPlan { unit: 0, weights }
}

pub fn toxicity_task_plan(filter: GenderFilter) -> QuotaPlan {
    let weights = filter
        .genders()
        .iter()
        .flat_map(|&gender| {
            [
                (ScoreBand::Toxic, 1),
                (ScoreBand::VeryToxic, 1),
                (ScoreBand::HealthyPool, 2),
            ]
            .map(|(band, w)| (Stratum { gender, band }, w))
        })
        .collect();
    QuotaPlan { unit: 0, weights }
}

/// Largest balanced size `examples` can support under `plan`.
pub fn max_balanced_size<T: Annotated>(examples: &[T], plan: &QuotaPlan) -> usize {
    plan.max_unit(&stratum_counts(examples)) * plan.total_weight()
}

/// Gender classification data: toxic and very toxic annotations only, one
/// equal quota per (gender, score) cell, labelled by annotator gender.
pub fn build_gender_task(
    examples: &[AnnotatedExample],
    seed: u64,
    size: Option<usize>,
) -> Result<Dataset> {
    let template = gender_task_plan();
    let unit = plan_unit(&template, &stratum_counts(examples), size)?;
    let plan = template.with_unit(unit);
    let sampled = sample_plan(examples, &plan, seed, "build_gender_task");
    Ok(Dataset {
        task: Task::Gender,
        seed,
        examples: sampled
            .iter()
            .map(|a| Example::from_annotated(Task::Gender, a))
            .collect(),
        transform_log: vec!["gender_task".into()],
        plan: Some(plan),
    })
}

/// Toxicity classification data: 25% Toxic, 25% Very Toxic and 50% drawn
/// from the pooled Healthy/Very Healthy annotations, per annotator gender
/// in `filter`. Neither-scored annotations are excluded.
pub fn build_toxicity_task(
    examples: &[AnnotatedExample],
    filter: GenderFilter,
    seed: u64,
    size: Option<usize>,
) -> Result<Dataset> {
    let template = toxicity_task_plan(filter);
    let allowed = filter.genders();
    let eligible: Vec<&AnnotatedExample> = examples
        .iter()
        .filter(|e| allowed.contains(&e.gender))
        .collect();
    let neither = eligible
        .iter()
        .filter(|e| e.score == ToxicityScore::Neither)
        .count();
    if neither > 0 {
        log::debug!("toxicity task: excluding {neither} Neither annotations");
    }
    let eligible: Vec<AnnotatedExample> = eligible.into_iter().cloned().collect();
    let unit = plan_unit(&template, &stratum_counts(&eligible), size)?;
    let plan = template.with_unit(unit);
    let sampled = sample_plan(&eligible, &plan, seed, "build_toxicity_task");
    let filter_name = match filter {
        GenderFilter::Male => "male",
        GenderFilter::Female => "female",
        GenderFilter::Both => "both",
    };
    Ok(Dataset {
        task: Task::Toxicity,
        seed,
        examples: sampled
            .iter()
            .map(|a| Example::from_annotated(Task::Toxicity, a))
            .collect(),
        transform_log: vec![format!("toxicity_task:{filter_name}")],
        plan: Some(plan),
    })
}

fn check_fraction(test_fraction: f64) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    Ok(())
}

/// Seeded comment-level partition: the set of rev_ids assigned to test.
pub fn partition_rev_ids<T: Annotated>(
    items: &[T],
    test_fraction: f64,
    seed: u64,
) -> Result<BTreeSet<u64>> {
    check_fraction(test_fraction)?;
    let ids: BTreeSet<u64> = items.iter().map(|i| i.rev_id()).collect();
    let mut ids: Vec<u64> = ids.into_iter().collect();
    ids.shuffle(&mut op_rng(seed, "partition_rev_ids"));
    let n_test = (ids.len() as f64 * test_fraction).round() as usize;
    Ok(ids.into_iter().take(n_test).collect())
}

/// Trims `examples` (keeping current order) so every stratum holds exactly
/// its plan share at the largest feasible unit.
fn trim_to_plan(examples: Vec<Example>, template: &QuotaPlan) -> (Vec<Example>, QuotaPlan) {
    let plan = template.with_unit(template.max_unit(&stratum_counts(&examples)));
    let mut taken: BTreeMap<Stratum, usize> = BTreeMap::new();
    let kept = examples
        .into_iter()
        .filter(|e| {
            let Some(s) = Stratum::of(e) else {
                return false;
            };
            let n = taken.entry(s).or_default();
            if *n < plan.target(&s) {
                *n += 1;
                true
            } else {
                false
            }
        })
        .collect();
    (kept, plan)
}

/// Splits at comment granularity: all annotations of one rev_id land on the
/// same side.
///
/// Comments are visited in seeded order and assigned to the test side while
/// that keeps every stratum at or under `round(count * test_fraction)`. When
/// the dataset carries a quota plan, each side is then trimmed back onto the
/// plan so both sides are exactly balanced.
pub fn split_train_test(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    check_fraction(test_fraction)?;
    let mut groups: BTreeMap<u64, Vec<&Example>> = BTreeMap::new();
    for e in &dataset.examples {
        groups.entry(e.rev_id).or_default().push(e);
    }
    let mut order: Vec<u64> = groups.keys().copied().collect();
    order.shuffle(&mut op_rng(seed, "split_train_test"));

    let mut test_ids = BTreeSet::new();
    match &dataset.plan {
        Some(_) => {
            let targets: BTreeMap<Stratum, usize> = dataset
                .stratum_counts()
                .into_iter()
                .map(|(s, n)| (s, (n as f64 * test_fraction).round() as usize))
                .collect();
            let mut filled: BTreeMap<Stratum, usize> = BTreeMap::new();
            for id in &order {
                let mut group_counts: BTreeMap<Stratum, usize> = BTreeMap::new();
                for s in groups[id].iter().filter_map(|e| Stratum::of(*e)) {
                    *group_counts.entry(s).or_default() += 1;
                }
                let fits = group_counts.iter().all(|(s, n)| {
                    filled.get(s).copied().unwrap_or(0) + n <= targets.get(s).copied().unwrap_or(0)
                });
                if fits {
                    for (s, n) in group_counts {
                        *filled.entry(s).or_default() += n;
                    }
                    test_ids.insert(*id);
                }
            }
        }
        None => {
            let n_test = (order.len() as f64 * test_fraction).round() as usize;
            test_ids.extend(order.iter().take(n_test));
        }
    }

    let (test, train): (Vec<Example>, Vec<Example>) = dataset
        .examples
        .iter()
        .cloned()
        .partition(|e| test_ids.contains(&e.rev_id));

    let side = |examples: Vec<Example>, name: &str| {
        let (examples, plan) = match &dataset.plan {
            Some(template) => {
                let (kept, plan) = trim_to_plan(examples, template);
                (kept, Some(plan))
            }
            None => (examples, None),
        };
        let mut transform_log = dataset.transform_log.clone();
        transform_log.push(name.to_string());
        Dataset {
            task: dataset.task,
            seed: dataset.seed,
            examples,
            transform_log,
            plan,
        }
    };
    Ok((side(train, "split:train"), side(test, "split:test")))
}

/// Writes a dataset as newline-delimited JSON plus a JSON manifest.
pub fn write_dataset(dataset: &Dataset, data_path: &Path, manifest_path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(data_path)?);
    for e in &dataset.examples {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    fs::write(
        manifest_path,
        serde_json::to_string_pretty(&dataset.manifest())? + "\n",
    )?;
    Ok(())
}

pub fn read_examples(data_path: &Path) -> Result<Vec<Example>> {
    let file = fs::File::open(data_path).map_err(|source| Error::Load {
        path: data_path.to_path_buf(),
        source,
    })?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example = serde_json::from_str(&line).map_err(|e| Error::Schema {
            file: data_path.display().to_string(),
            row: i + 1,
            message: e.to_string(),
        })?;
        examples.push(example);
    }
    Ok(examples)
}

pub fn read_dataset(data_path: &Path, manifest_path: &Path) -> Result<Dataset> {
    let examples = read_examples(data_path)?;
    let manifest: DatasetManifest = serde_json::from_str(
        &fs::read_to_string(manifest_path).map_err(|source| Error::Load {
            path: manifest_path.to_path_buf(),
            source,
        })?,
    )?;
    Ok(Dataset {
        task: manifest.task,
        seed: manifest.seed,
        examples,
        transform_log: manifest.transform_log,
        plan: manifest.quota,
    })
}

/// Conventional manifest location next to a dataset file.
pub fn manifest_path_for(data_path: &Path) -> std::path::PathBuf {
    let mut name = data_path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    data_path.with_file_name(name)
}
