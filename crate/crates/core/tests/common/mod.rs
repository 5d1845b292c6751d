//! Shared fixtures: a synthetic annotated corpus with a controllable
//! gender/profanity association, and random reference models.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use annobias::classifier::{build_vocab, BagOfEmbeddings, TokenSequence, TrainConfig, PAD};
use annobias::corpus::{AnnotatedExample, Gender, ToxicityScore};
use annobias::lexicon::Blacklist;
use annobias::sampling::Task;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OFFENSIVE: [&str; 6] = ["crud", "dang", "heck", "frick", "bloody", "twit"];
const TOXIC_CUES: [&str; 6] = ["awful", "hate", "stupidity", "worst", "liar", "nonsense"];
const HEALTHY_CUES: [&str; 6] = ["thanks", "agree", "helpful", "great", "welcome", "cheers"];
const TOPICS_A: [&str; 4] = ["football", "engine", "battle", "election"];
const TOPICS_B: [&str; 4] = ["recipe", "garden", "fashion", "poetry"];
const NEUTRAL: [&str; 24] = [
    "the", "article", "page", "edit", "source", "talk", "you", "this", "is", "about", "section",
    "revert", "change", "image", "link", "wiki", "please", "here", "what", "why", "he", "she",
    "it", "list",
];

#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Comments per (gender, score) cell; one annotation per comment.
    pub per_cell: usize,
    /// Probability that a toxic male-annotated text contains an offensive word.
    pub male_rate: f64,
    pub female_rate: f64,
    pub workers_per_gender: u64,
    /// Probability that a text's topic word comes from its annotator's
    /// gender-typical topic list; 0.5 makes topics uninformative.
    pub topic_affinity: f64,
    /// Neutral filler words per text, `min..max`.
    pub filler: (usize, usize),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            per_cell: 300,
            male_rate: 0.8,
            female_rate: 0.4,
            workers_per_gender: 20,
            topic_affinity: 0.55,
            filler: (3, 4),
            seed: 7,
        }
    }
}

pub fn blacklist() -> Blacklist {
    Blacklist::from_words(OFFENSIVE)
}

fn text(rng: &mut ChaCha8Rng, spec: &SynthSpec, gender: Gender, score: ToxicityScore) -> String {
    let offensive_rate = match gender {
        Gender::Male => spec.male_rate,
        Gender::Female => spec.female_rate,
    };
    let mut words: Vec<&str> = (0..rng.random_range(spec.filler.0..spec.filler.1))
        .map(|_| *NEUTRAL.choose(rng).unwrap())
        .collect();
    let typical = rng.random_bool(spec.topic_affinity);
    let topics = match (gender, typical) {
        (Gender::Male, true) | (Gender::Female, false) => &TOPICS_A,
        _ => &TOPICS_B,
    };
    words.push(topics.choose(rng).unwrap());
    if score.is_toxic() {
        words.push(TOXIC_CUES.choose(rng).unwrap());
        // The offensive word takes a filler slot so text length carries no
        // signal and a mean-pooled model can represent its absence.
        words.push(if rng.random_bool(offensive_rate) {
            OFFENSIVE.choose(rng).unwrap()
        } else {
            NEUTRAL.choose(rng).unwrap()
        });
    } else {
        words.push(HEALTHY_CUES.choose(rng).unwrap());
        words.push(NEUTRAL.choose(rng).unwrap());
    }
    words.shuffle(rng);
    let mut out = words.join(" ");
    if rng.random_bool(0.3) {
        out.push('!');
    }
    out
}

/// Every cell of gender × score gets `per_cell` comments.
pub fn synth_corpus(spec: &SynthSpec) -> Vec<AnnotatedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    let mut rev_id = 1000u64;
    for gender in Gender::BOTH {
        let worker_base = match gender {
            Gender::Male => 1,
            Gender::Female => 1 + spec.workers_per_gender,
        };
        for score in ToxicityScore::ALL {
            for _ in 0..spec.per_cell {
                rev_id += 1;
                out.push(AnnotatedExample {
                    rev_id,
                    worker_id: worker_base + rng.random_range(0..spec.workers_per_gender),
                    text: text(&mut rng, spec, gender, score),
                    score,
                    gender,
                });
            }
        }
    }
    out.sort_by_key(|e| (e.rev_id, e.worker_id));
    out
}

/// Paths of a corpus written as the three TSV files plus a blacklist.
pub struct CorpusFiles {
    pub comments: PathBuf,
    pub annotations: PathBuf,
    pub demographics: PathBuf,
    pub blacklist: PathBuf,
}

pub fn write_corpus(dir: &Path, examples: &[AnnotatedExample]) -> CorpusFiles {
    let mut comments = String::from("rev_id\tcomment\tyear\tsplit\n");
    let mut annotations = String::from("rev_id\tworker_id\ttoxicity\ttoxicity_score\n");
    let mut workers = std::collections::BTreeMap::new();
    for e in examples {
        writeln!(comments, "{}.0\t{}\t2015\ttrain", e.rev_id, e.text).unwrap();
        writeln!(
            annotations,
            "{}.0\t{}\t{}\t{}.0",
            e.rev_id,
            e.worker_id,
            e.score.is_toxic() as u8,
            e.score.value()
        )
        .unwrap();
        workers.insert(e.worker_id, e.gender);
    }
    let mut demographics = String::from("worker_id\tgender\tenglish_first_language\n");
    for (w, g) in workers {
        writeln!(demographics, "{w}\t{}\t1", g.as_str()).unwrap();
    }
    let files = CorpusFiles {
        comments: dir.join("comments.tsv"),
        annotations: dir.join("annotations.tsv"),
        demographics: dir.join("demographics.tsv"),
        blacklist: dir.join("blacklist.txt"),
    };
    fs::write(&files.comments, comments).unwrap();
    fs::write(&files.annotations, annotations).unwrap();
    fs::write(&files.demographics, demographics).unwrap();
    fs::write(&files.blacklist, OFFENSIVE.join("\n") + "\n").unwrap();
    files
}

/// An untrained gender model over a random vocabulary with random
/// parameters of moderate scale, so the sigmoid is not saturated.
pub fn random_model(rng: &mut impl Rng, dim: usize) -> BagOfEmbeddings {
    let words: Vec<String> = (0..rng.random_range(5..40)).map(|i| format!("w{i}")).collect();
    let vocab = build_vocab(&words, 1).unwrap();
    let mut embeddings: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    embeddings[PAD * dim..(PAD + 1) * dim].fill(0.0);
    let weights = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    BagOfEmbeddings::from_parts(
        Task::Gender,
        TrainConfig::default(),
        vocab,
        embeddings,
        weights,
        rng.random_range(-0.5..0.5),
    )
    .unwrap()
}

/// A random non-empty input over the model's vocabulary (ids ≥ 1, so
/// `<unk>` can appear but padding cannot).
pub fn random_input(rng: &mut impl Rng, model: &BagOfEmbeddings) -> TokenSequence {
    use annobias::classifier::Classifier;
    let vocab = model.vocabulary();
    let len = rng.random_range(1..30);
    let ids: Vec<usize> = (0..len).map(|_| rng.random_range(1..vocab.len())).collect();
    let tokens = ids.iter().map(|&i| vocab.token(i).unwrap().to_string()).collect();
    TokenSequence {
        ids,
        tokens,
        truncated: false,
    }
}
