//! Offensive-word blacklist, whole-token matching, and the two data-side
//! mitigations: profanity scrubbing and very-toxic removal.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Gender, ToxicityScore};
use crate::error::{Error, Result};
use crate::sampling::{balance_by_gender, Dataset, QuotaPlan, ScoreBand, Stratum, Task};

pub const NO_PROFANITY: &str = "no_profanity";
pub const NOT_VERY_TOXIC: &str = "not_very_toxic";

/// Normalised offensive-word set. Entries are lowercased and trimmed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blacklist {
    words: BTreeSet<String>,
    source: Option<PathBuf>,
    source_lines: usize,
}

impl Blacklist {
    /// Builds a blacklist from raw entries. Blank entries are dropped and
    /// entries containing inner whitespace are skipped, since matching is
    /// per token.
    pub fn from_words<I, S>(words: I) -> Blacklist
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut source_lines = 0;
        let mut set = BTreeSet::new();
        let mut multiword = 0;
        for w in words {
            source_lines += 1;
            let w = w.as_ref().trim().to_lowercase();
            if w.is_empty() {
                continue;
            }
            if w.contains(char::is_whitespace) {
                multiword += 1;
                continue;
            }
            set.insert(w);
        }
        if multiword > 0 {
            log::debug!("blacklist: skipped {multiword} multi-word entries");
        }
        Blacklist {
            words: set,
            source: None,
            source_lines,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Blacklist> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let mut blacklist = Blacklist::from_words(content.lines());
        if blacklist.is_empty() {
            return Err(Error::EmptyBlacklist(path.to_path_buf()));
        }
        blacklist.source = Some(path.to_path_buf());
        Ok(blacklist)
    }

    pub fn contains(&self, match_form: &str) -> bool {
        self.words.contains(match_form)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn source_lines(&self) -> usize {
        self.source_lines
    }
}

pub fn load_blacklist(path: impl AsRef<Path>) -> Result<Blacklist> {
    Blacklist::load(path)
}

/// A whitespace-delimited token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased with leading and trailing non-alphanumerics removed.
    pub form: String,
    /// Byte range of the original token, punctuation included.
    pub span: Range<usize>,
}

/// Splits on whitespace. Tokens with no alphanumeric content are omitted.
pub fn word_tokens(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start = None;
    let mut push = |range: Range<usize>| {
        let raw = &text[range.clone()];
        let form = raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if !form.is_empty() {
            tokens.push(Token { form, span: range });
        }
    };
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s..text.len());
    }
    tokens
}

/// Number of token occurrences whose match form is blacklisted.
pub fn count_offensive(text: &str, blacklist: &Blacklist) -> usize {
    word_tokens(text)
        .iter()
        .filter(|t| blacklist.contains(&t.form))
        .count()
}

/// Offensive-word counts over the annotations carrying one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffensiveStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

/// Count statistics over every annotation with `score`; `None` if there are
/// none. A comment annotated by several workers counts once per annotation.
pub fn offensive_stats(
    examples: &[AnnotatedExample],
    blacklist: &Blacklist,
    score: ToxicityScore,
) -> Option<OffensiveStats> {
    let mut counts: Vec<usize> = examples
        .iter()
        .filter(|e| e.score == score)
        .map(|e| count_offensive(&e.text, blacklist))
        .collect();
    if counts.is_empty() {
        return None;
    }
    counts.sort_unstable();
    let n = counts.len();
    let median = if n % 2 == 1 {
        counts[n / 2] as f64
    } else {
        (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
    };
    Some(OffensiveStats {
        n,
        mean: counts.iter().sum::<usize>() as f64 / n as f64,
        median,
    })
}

/// Removes every blacklisted token together with its attached punctuation.
/// Text with no match is returned unchanged; otherwise the survivors are
/// re-joined with single spaces.
pub fn scrub(text: &str, blacklist: &Blacklist) -> String {
    scrub_counting(text, blacklist).0
}

fn scrub_counting(text: &str, blacklist: &Blacklist) -> (String, usize) {
    let mut removed = 0;
    let mut kept: Vec<&str> = Vec::new();
    for raw in text.split_whitespace() {
        let form = raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if !form.is_empty() && blacklist.contains(&form) {
            removed += 1;
        } else {
            kept.push(raw);
        }
    }
    if removed == 0 {
        (text.to_string(), 0)
    } else {
        (kept.join(" "), removed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubSummary {
    pub tokens_removed: usize,
    pub examples_emptied: usize,
    /// Offensive-word count per example before scrubbing → number of examples.
    pub offensive_count_histogram: BTreeMap<usize, usize>,
}

/// Scrubs every example's text. Examples left empty are kept so the
/// dataset's size and balance do not change.
pub fn scrub_dataset(dataset: &Dataset, blacklist: &Blacklist) -> Dataset {
    scrub_dataset_with_summary(dataset, blacklist).0
}

pub fn scrub_dataset_with_summary(dataset: &Dataset, blacklist: &Blacklist) -> (Dataset, ScrubSummary) {
    let mut summary = ScrubSummary::default();
    let mut out = dataset.clone();
    for example in &mut out.examples {
        let (text, removed) = scrub_counting(&example.text, blacklist);
        *summary.offensive_count_histogram.entry(removed).or_default() += 1;
        summary.tokens_removed += removed;
        if removed > 0 && text.is_empty() {
            summary.examples_emptied += 1;
        }
        example.text = text;
    }
    out.transform_log.push(NO_PROFANITY.into());
    (out, summary)
}

/// Removes Very Toxic examples from a gender-task dataset and re-balances
/// genders on what is left. Applying it twice changes nothing.
pub fn drop_very_toxic(dataset: &Dataset) -> Result<Dataset> {
    if dataset.task != Task::Gender {
        return Err(Error::TaskMismatch {
            expected: Task::Gender.to_string(),
            got: dataset.task.to_string(),
        });
    }
    let remaining: Vec<_> = dataset
        .examples
        .iter()
        .filter(|e| e.score != ToxicityScore::VeryToxic)
        .cloned()
        .collect();
    if !remaining.iter().any(|e| e.score == ToxicityScore::Toxic) {
        return Err(Error::EmptyStratum("toxic".into()));
    }
    let per_gender: Vec<usize> = Gender::BOTH
        .iter()
        .map(|&gender| remaining.iter().filter(|e| e.gender == gender).count())
        .collect();
    let examples = if per_gender[0] == per_gender[1] {
        remaining
    } else {
        balance_by_gender(&remaining, dataset.seed)?
    };

    let unit = examples.len() / 2;
    let plan = QuotaPlan {
        unit,
        weights: Gender::BOTH
            .iter()
            .map(|&gender| {
                (
                    Stratum {
                        gender,
                        band: ScoreBand::Toxic,
                    },
                    1,
                )
            })
            .collect(),
    };
    let mut transform_log = dataset.transform_log.clone();
    if transform_log.last().map(String::as_str) != Some(NOT_VERY_TOXIC) {
        transform_log.push(NOT_VERY_TOXIC.into());
    }
    Ok(Dataset {
        task: dataset.task,
        seed: dataset.seed,
        examples,
        transform_log,
        plan: Some(plan),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::Example;
    use std::io::Write;

    fn forms(text: &str) -> Vec<String> {
        word_tokens(text).into_iter().map(|t| t.form).collect()
    }

    #[test]
    fn tokens_strip_edges_only() {
        assert_eq!(forms("You idiot!"), ["you", "idiot"]);
        assert!(forms("").is_empty());
        assert_eq!(forms("don't"), ["don't"]);
        assert_eq!(forms("(hello) -- world..."), ["hello", "world"]);
        let toks = word_tokens("  ab, cd");
        assert_eq!(toks[0].span, 2..5);
        assert_eq!(toks[1].span, 6..8);
    }

    #[test]
    fn blacklist_normalises() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bl.txt");
        fs::File::create(&path)
            .unwrap()
            .write_all(b"Idiot\nidiot\n\n  Fool \n")
            .unwrap();
        let bl = load_blacklist(&path).unwrap();
        assert_eq!(bl.words().collect::<Vec<_>>(), ["fool", "idiot"]);
        assert_eq!(bl.source_lines(), 4);

        let blank = dir.path().join("blank.txt");
        fs::write(&blank, "  \n\t\n").unwrap();
        assert!(matches!(load_blacklist(&blank), Err(Error::EmptyBlacklist(_))));
        assert!(matches!(
            load_blacklist(dir.path().join("missing.txt")),
            Err(Error::Load { .. })
        ));
    }

    #[test]
    fn counts_every_occurrence() {
        let bl = Blacklist::from_words(["stupid"]);
        assert_eq!(count_offensive("you stupid stupid fool", &bl), 2);
        assert_eq!(count_offensive("STUPID!", &bl), 1);
        assert_eq!(count_offensive("stupidity", &bl), 0);
    }

    #[test]
    fn scrub_examples() {
        let bl = Blacklist::from_words(["idiot"]);
        assert_eq!(scrub("you are an idiot", &bl), "you are an");
        assert_eq!(scrub("you, idiot! go", &bl), "you, go");
        assert_eq!(scrub("nothing  here", &bl), "nothing  here");
        let once = scrub("idiot x idiot. y", &bl);
        assert_eq!(scrub(&once, &bl), once);
        assert_eq!(scrub("Idiot", &bl), "");
    }

    fn example(rev_id: u64, text: &str, gender: Gender, score: ToxicityScore) -> Example {
        Example {
            rev_id,
            worker_id: rev_id + 100,
            text: text.into(),
            label: gender == Gender::Female,
            score,
            gender,
        }
    }

    fn dataset(examples: Vec<Example>) -> Dataset {
        Dataset {
            task: Task::Gender,
            seed: 42,
            examples,
            transform_log: vec!["gender_task".into()],
            plan: None,
        }
    }

    #[test]
    fn scrub_dataset_keeps_every_example() {
        let bl = Blacklist::from_words(["idiot"]);
        let ds = dataset(vec![
            example(1, "hello there", Gender::Male, ToxicityScore::Toxic),
            example(2, "idiot", Gender::Female, ToxicityScore::Toxic),
            example(3, "you idiot", Gender::Male, ToxicityScore::VeryToxic),
        ]);
        let (out, summary) = scrub_dataset_with_summary(&ds, &bl);
        assert_eq!(out.len(), 3);
        assert_eq!(out.examples[0].text, "hello there");
        assert_eq!(out.examples[1].text, "");
        assert_eq!(out.examples[2].text, "you");
        assert_eq!(summary.tokens_removed, 2);
        assert_eq!(summary.examples_emptied, 1);
        assert_eq!(summary.offensive_count_histogram[&0], 1);
        assert_eq!(summary.offensive_count_histogram[&1], 2);
        assert_eq!(out.transform_log.len(), ds.transform_log.len() + 1);
        let total: usize = out.examples.iter().map(|e| count_offensive(&e.text, &bl)).sum();
        assert_eq!(total, 0);
    }

    #[test]
    fn drop_very_toxic_rebalances() {
        let mut examples = Vec::new();
        let mut id = 0;
        for gender in Gender::BOTH {
            for score in [ToxicityScore::Toxic, ToxicityScore::VeryToxic] {
                for _ in 0..10 {
                    id += 1;
                    examples.push(example(id, "t", gender, score));
                }
            }
        }
        let ds = dataset(examples);
        let out = drop_very_toxic(&ds).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.examples.iter().all(|e| e.score == ToxicityScore::Toxic));
        let counts = out.gender_counts();
        assert_eq!(counts[&Gender::Male], 10);
        assert_eq!(counts[&Gender::Female], 10);
        assert_eq!(out.transform_log.last().unwrap(), NOT_VERY_TOXIC);
        assert_eq!(drop_very_toxic(&out).unwrap(), out);
    }

    #[test]
    fn drop_very_toxic_uneven_genders() {
        let ds = dataset(vec![
            example(1, "a", Gender::Male, ToxicityScore::Toxic),
            example(2, "b", Gender::Male, ToxicityScore::Toxic),
            example(3, "c", Gender::Female, ToxicityScore::Toxic),
            example(4, "d", Gender::Female, ToxicityScore::VeryToxic),
        ]);
        let out = drop_very_toxic(&ds).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.gender_counts()[&Gender::Female], 1);
    }

    #[test]
    fn drop_very_toxic_errors() {
        let ds = dataset(vec![example(1, "a", Gender::Male, ToxicityScore::VeryToxic)]);
        assert!(matches!(drop_very_toxic(&ds), Err(Error::EmptyStratum(_))));
        let mut tox = ds.clone();
        tox.task = Task::Toxicity;
        assert!(matches!(drop_very_toxic(&tox), Err(Error::TaskMismatch { .. })));
    }

    #[test]
    fn offensive_stats_per_score() {
        let bl = Blacklist::from_words(["bad"]);
        let ex = |text: &str, score| AnnotatedExample {
            rev_id: 1,
            worker_id: 1,
            text: text.into(),
            score,
            gender: Gender::Male,
        };
        let data = [
            ex("bad", ToxicityScore::Toxic),
            ex("bad bad bad", ToxicityScore::Toxic),
            ex("fine", ToxicityScore::Toxic),
            ex("ok", ToxicityScore::Toxic),
            ex("bad bad", ToxicityScore::VeryToxic),
        ];
        let s = offensive_stats(&data, &bl, ToxicityScore::Toxic).unwrap();
        assert_eq!((s.n, s.mean, s.median), (4, 1.0, 0.5));
        let v = offensive_stats(&data, &bl, ToxicityScore::VeryToxic).unwrap();
        assert_eq!((v.n, v.mean, v.median), (1, 2.0, 2.0));
        assert!(offensive_stats(&data, &bl, ToxicityScore::Neither).is_none());
    }
}
