//! Loading and joining the three-file annotated toxicity corpus.
//!
//! The corpus ships as three tab-separated files: comments, per-worker
//! toxicity annotations, and worker demographics. Columns are located by
//! header name, so reordered files parse the same. Fields are split on tabs
//! only; quotes carry no meaning.
//!
//! Rows that fail to parse are skipped and counted. Structural problems
//! (a missing column, an out-of-range score, a duplicated annotation) are
//! errors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five-level toxicity scale annotators chose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum ToxicityScore {
    VeryToxic,
    Toxic,
    Neither,
    Healthy,
    VeryHealthy,
}

impl ToxicityScore {
    pub const ALL: [ToxicityScore; 5] = [
        ToxicityScore::VeryToxic,
        ToxicityScore::Toxic,
        ToxicityScore::Neither,
        ToxicityScore::Healthy,
        ToxicityScore::VeryHealthy,
    ];

    pub fn value(self) -> i8 {
        match self {
            ToxicityScore::VeryToxic => -2,
            ToxicityScore::Toxic => -1,
            ToxicityScore::Neither => 0,
            ToxicityScore::Healthy => 1,
            ToxicityScore::VeryHealthy => 2,
        }
    }

    pub fn from_value(value: i64) -> Option<Self> {
        match value {
            -2 => Some(ToxicityScore::VeryToxic),
            -1 => Some(ToxicityScore::Toxic),
            0 => Some(ToxicityScore::Neither),
            1 => Some(ToxicityScore::Healthy),
            2 => Some(ToxicityScore::VeryHealthy),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ToxicityScore::VeryToxic => "VeryToxic",
            ToxicityScore::Toxic => "Toxic",
            ToxicityScore::Neither => "Neither",
            ToxicityScore::Healthy => "Healthy",
            ToxicityScore::VeryHealthy => "VeryHealthy",
        }
    }

    pub fn is_toxic(self) -> bool {
        self.value() < 0
    }
}

impl From<ToxicityScore> for i8 {
    fn from(score: ToxicityScore) -> i8 {
        score.value()
    }
}

impl TryFrom<i8> for ToxicityScore {
    type Error = String;

    fn try_from(value: i8) -> std::result::Result<Self, String> {
        ToxicityScore::from_value(value as i64)
            .ok_or_else(|| format!("toxicity score {value} outside -2..=2"))
    }
}

impl fmt::Display for ToxicityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const BOTH: [Gender; 2] = [Gender::Male, Gender::Female];

    /// Parses a reported gender. Only `male` and `female` (any case, any
    /// surrounding whitespace) are recognised; `other` and blanks are `None`.
    pub fn parse_reported(raw: &str) -> Option<Gender> {
        let trimmed = raw.trim();
        if trimmed.eq_ignore_ascii_case("male") {
            Some(Gender::Male)
        } else if trimmed.eq_ignore_ascii_case("female") {
            Some(Gender::Female)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Gender::parse_reported(s).ok_or_else(|| Error::Parameter(format!("unknown gender `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommentRecord {
    pub rev_id: u64,
    pub raw_text: String,
    pub clean_text: String,
    pub split_hint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub rev_id: u64,
    pub worker_id: u64,
    pub score: ToxicityScore,
}

/// A worker's reported gender, kept verbatim until join time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemographicRecord {
    pub worker_id: u64,
    pub gender: String,
}

/// One annotation joined with its comment text and its annotator's gender.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub rev_id: u64,
    pub worker_id: u64,
    pub text: String,
    pub score: ToxicityScore,
    pub gender: Gender,
}

/// Parsed rows plus the number of rows that could not be parsed.
#[derive(Debug, Clone)]
pub struct Table<T> {
    pub records: Vec<T>,
    pub skipped_rows: usize,
}

impl<T> Table<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Header names used to locate columns in the three corpus files.
///
/// Defaults match the published Wikipedia Talk Labels toxicity release.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusColumns {
    pub comment_id: String,
    pub comment_text: String,
    pub comment_split: String,
    pub annotation_id: String,
    pub annotation_worker: String,
    pub annotation_score: String,
    pub demographic_worker: String,
    pub demographic_gender: String,
}

impl Default for CorpusColumns {
    fn default() -> Self {
        CorpusColumns {
            comment_id: "rev_id".into(),
            comment_text: "comment".into(),
            comment_split: "split".into(),
            annotation_id: "rev_id".into(),
            annotation_worker: "worker_id".into(),
            annotation_score: "toxicity_score".into(),
            demographic_worker: "worker_id".into(),
            demographic_gender: "gender".into(),
        }
    }
}

const NEWLINE_TOKEN: &str = "NEWLINE_TOKEN";
const TAB_TOKEN: &str = "TAB_TOKEN";

/// Replaces the corpus' newline/tab placeholders with spaces, collapses
/// whitespace runs to one space and trims the ends.
pub fn clean_text(raw: &str) -> String {
    let replaced = raw.replace(NEWLINE_TOKEN, " ").replace(TAB_TOKEN, " ");
    let mut out = String::with_capacity(replaced.len());
    for word in replaced.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

struct Tsv {
    name: String,
    header: HashMap<String, usize>,
    body: String,
}

impl Tsv {
    fn read(path: &Path) -> Result<Tsv> {
        let content = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path.display().to_string();
        let (header_line, body) = match content.find('\n') {
            Some(pos) => (&content[..pos], content[pos + 1..].to_string()),
            None => (content.as_str(), String::new()),
        };
        let header = header_line
            .trim_end_matches('\r')
            .split('\t')
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        Ok(Tsv { name, header, body })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn {
                file: self.name.clone(),
                column: name.to_string(),
            })
    }

    /// Data rows as (1-based data row index, fields), skipping blank lines.
    fn rows(&self) -> impl Iterator<Item = (usize, Vec<&str>)> {
        self.body
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| (i + 1, line.trim_end_matches('\r').split('\t').collect()))
    }
}

/// Identifiers appear as integers or as integer-valued floats (`2232.0`).
fn parse_id(raw: &str) -> Option<u64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<u64>() {
        return Some(v);
    }
    let f: f64 = raw.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64).then_some(f as u64)
}

fn parse_integral(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = raw.parse().ok()?;
    (f.is_finite() && f.fract() == 0.0).then_some(f as i64)
}

pub fn load_comments(path: impl AsRef<Path>, columns: &CorpusColumns) -> Result<Table<CommentRecord>> {
    let tsv = Tsv::read(path.as_ref())?;
    let id_col = tsv.column(&columns.comment_id)?;
    let text_col = tsv.column(&columns.comment_text)?;
    let split_col = tsv.header.get(&columns.comment_split).copied();

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut skipped_rows = 0;
    for (_, fields) in tsv.rows() {
        let (Some(id), Some(text)) = (fields.get(id_col), fields.get(text_col)) else {
            skipped_rows += 1;
            continue;
        };
        let Some(rev_id) = parse_id(id) else {
            skipped_rows += 1;
            continue;
        };
        if !seen.insert(rev_id) {
            skipped_rows += 1;
            continue;
        }
        records.push(CommentRecord {
            rev_id,
            raw_text: text.to_string(),
            clean_text: clean_text(text),
            split_hint: split_col
                .and_then(|c| fields.get(c))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty()),
        });
    }
    Ok(Table {
        records,
        skipped_rows,
    })
}

pub fn load_annotations(
    path: impl AsRef<Path>,
    columns: &CorpusColumns,
) -> Result<Table<AnnotationRecord>> {
    let tsv = Tsv::read(path.as_ref())?;
    let id_col = tsv.column(&columns.annotation_id)?;
    let worker_col = tsv.column(&columns.annotation_worker)?;
    let score_col = tsv.column(&columns.annotation_score)?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut skipped_rows = 0;
    for (row, fields) in tsv.rows() {
        let parsed = (
            fields.get(id_col).and_then(|s| parse_id(s)),
            fields.get(worker_col).and_then(|s| parse_id(s)),
            fields.get(score_col).and_then(|s| parse_integral(s)),
        );
        let (Some(rev_id), Some(worker_id), Some(raw_score)) = parsed else {
            skipped_rows += 1;
            continue;
        };
        let score = ToxicityScore::from_value(raw_score).ok_or_else(|| Error::Schema {
            file: tsv.name.clone(),
            row,
            message: format!("toxicity score {raw_score} outside -2..=2"),
        })?;
        if !seen.insert((rev_id, worker_id)) {
            return Err(Error::DuplicateAnnotation {
                file: tsv.name.clone(),
                rev_id,
                worker_id,
            });
        }
        records.push(AnnotationRecord {
            rev_id,
            worker_id,
            score,
        });
    }
    Ok(Table {
        records,
        skipped_rows,
    })
}

pub fn load_demographics(
    path: impl AsRef<Path>,
    columns: &CorpusColumns,
) -> Result<Table<DemographicRecord>> {
    let tsv = Tsv::read(path.as_ref())?;
    let worker_col = tsv.column(&columns.demographic_worker)?;
    let gender_col = tsv.column(&columns.demographic_gender)?;

    let mut records = Vec::new();
    let mut skipped_rows = 0;
    for (_, fields) in tsv.rows() {
        let Some(worker_id) = fields.get(worker_col).and_then(|s| parse_id(s)) else {
            skipped_rows += 1;
            continue;
        };
        // A trailing empty gender field may be missing entirely.
        let gender = fields.get(gender_col).copied().unwrap_or("");
        records.push(DemographicRecord {
            worker_id,
            gender: gender.to_string(),
        });
    }
    Ok(Table {
        records,
        skipped_rows,
    })
}

/// Why annotations did not make it into the joined corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinDrops {
    pub unknown_rev_id: usize,
    pub unknown_worker: usize,
    pub excluded_gender: usize,
    pub empty_text: usize,
}

impl JoinDrops {
    pub fn total(&self) -> usize {
        self.unknown_rev_id + self.unknown_worker + self.excluded_gender + self.empty_text
    }
}

#[derive(Debug, Clone)]
pub struct JoinedCorpus {
    /// Sorted by `(rev_id, worker_id)`.
    pub examples: Vec<AnnotatedExample>,
    pub drops: JoinDrops,
}

/// Inner-joins annotations with their comment and annotator.
///
/// Annotators whose gender is neither male nor female are excluded, as are
/// comments whose cleaned text is empty. The output order is canonical, so
/// permuting any input yields the same corpus.
pub fn join_corpus(
    comments: &[CommentRecord],
    annotations: &[AnnotationRecord],
    demographics: &[DemographicRecord],
) -> JoinedCorpus {
    let texts: HashMap<u64, &str> = comments
        .iter()
        .map(|c| (c.rev_id, c.clean_text.as_str()))
        .collect();
    // Duplicate worker rows: the smallest recognised gender wins so the
    // result does not depend on row order.
    let mut genders: HashMap<u64, Option<Gender>> = HashMap::new();
    for d in demographics {
        let parsed = Gender::parse_reported(&d.gender);
        genders
            .entry(d.worker_id)
            .and_modify(|g| {
                *g = match (*g, parsed) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            })
            .or_insert(parsed);
    }

    let mut drops = JoinDrops::default();
    let mut examples = Vec::new();
    for a in annotations {
        let Some(text) = texts.get(&a.rev_id) else {
            drops.unknown_rev_id += 1;
            continue;
        };
        let Some(gender) = genders.get(&a.worker_id) else {
            drops.unknown_worker += 1;
            continue;
        };
        let Some(gender) = *gender else {
            drops.excluded_gender += 1;
            continue;
        };
        if text.is_empty() {
            drops.empty_text += 1;
            continue;
        }
        examples.push(AnnotatedExample {
            rev_id: a.rev_id,
            worker_id: a.worker_id,
            text: text.to_string(),
            score: a.score,
            gender,
        });
    }
    examples.sort_by_key(|e| (e.rev_id, e.worker_id));
    JoinedCorpus { examples, drops }
}

/// Loads and joins the three corpus files.
pub fn load_corpus(
    comments: impl AsRef<Path>,
    annotations: impl AsRef<Path>,
    demographics: impl AsRef<Path>,
    columns: &CorpusColumns,
) -> Result<JoinedCorpus> {
    let comments = load_comments(comments, columns)?;
    let annotations = load_annotations(annotations, columns)?;
    let demographics = load_demographics(demographics, columns)?;
    for (name, skipped) in [
        ("comments", comments.skipped_rows),
        ("annotations", annotations.skipped_rows),
        ("demographics", demographics.skipped_rows),
    ] {
        if skipped > 0 {
            log::warn!("skipped {skipped} malformed {name} rows");
        }
    }
    let joined = join_corpus(&comments.records, &annotations.records, &demographics.records);
    log::info!(
        "joined {} annotations ({} dropped: {:?})",
        joined.examples.len(),
        joined.drops.total(),
        joined.drops
    );
    Ok(joined)
}

/// Annotation-level summary statistics by annotator gender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub female_annotation_share: f64,
    /// Fraction of each gender's annotations with a negative score.
    pub toxic_rate_by_gender: BTreeMap<Gender, f64>,
    pub mean_score_by_gender: BTreeMap<Gender, f64>,
    pub counts: BTreeMap<Gender, BTreeMap<i8, usize>>,
    /// Female minus male toxic rate, when both genders are present.
    pub toxic_rate_gap: Option<f64>,
    /// Female minus male mean score, when both genders are present.
    pub mean_score_gap: Option<f64>,
}

pub fn corpus_stats(examples: &[AnnotatedExample]) -> Result<CorpusStats> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: BTreeMap<Gender, BTreeMap<i8, usize>> = BTreeMap::new();
    for e in examples {
        let per_score = counts
            .entry(e.gender)
            .or_insert_with(|| ToxicityScore::ALL.iter().map(|s| (s.value(), 0)).collect());
        *per_score.entry(e.score.value()).or_default() += 1;
    }

    let mut toxic_rate_by_gender = BTreeMap::new();
    let mut mean_score_by_gender = BTreeMap::new();
    for (&gender, per_score) in &counts {
        let n: usize = per_score.values().sum();
        let toxic: usize = per_score.iter().filter(|(s, _)| **s < 0).map(|(_, c)| c).sum();
        let score_sum: i64 = per_score.iter().map(|(s, c)| *s as i64 * *c as i64).sum();
        toxic_rate_by_gender.insert(gender, toxic as f64 / n as f64);
        mean_score_by_gender.insert(gender, score_sum as f64 / n as f64);
    }

    let female = counts
        .get(&Gender::Female)
        .map_or(0, |m| m.values().sum::<usize>());
    let gap = |m: &BTreeMap<Gender, f64>| Some(m.get(&Gender::Female)? - m.get(&Gender::Male)?);
    Ok(CorpusStats {
        total: examples.len(),
        female_annotation_share: female as f64 / examples.len() as f64,
        toxic_rate_gap: gap(&toxic_rate_by_gender),
        mean_score_gap: gap(&mean_score_by_gender),
        toxic_rate_by_gender,
        mean_score_by_gender,
        counts,
    })
}
