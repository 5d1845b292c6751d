//! Tools for auditing annotator gender bias in crowd-sourced toxicity
//! corpora.
//!
//! The pipeline runs from raw TSV files to bias reports:
//!
//! 1. [`corpus`] loads comments, annotations and demographics and joins them
//!    into one record per (comment, annotator).
//! 2. [`sampling`] draws balanced, seeded datasets for the gender and
//!    toxicity tasks.
//! 3. [`lexicon`] scrubs offensive words and drops very toxic examples.
//! 4. [`classifier`] trains a small differentiable text classifier.
//! 5. [`attribution`] explains its predictions with integrated gradients.
//! 6. [`metrics`] turns predictions into confusion-based bias metrics.
//! 7. [`experiments`] wires it all into the gender study and the toxicity
//!    matrix.
//!
//! ```
//! use annobias::lexicon::{scrub, Blacklist};
//!
//! let blacklist = Blacklist::from_words(["darn"]);
//! assert_eq!(scrub("well darn it", &blacklist), "well it");
//! ```

pub mod attribution;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod lexicon;
pub mod metrics;
pub mod sampling;

pub use attribution::{integrated_gradients, IgConfig, IntegrationRule};
pub use classifier::{BagOfEmbeddings, Classifier, ReferenceTrainer, TrainConfig, Trainer};
pub use corpus::{AnnotatedExample, Gender, ToxicityScore};
pub use error::{Error, Result};
pub use experiments::ExperimentPlan;
pub use lexicon::Blacklist;
pub use metrics::BiasReport;
pub use sampling::{Dataset, Example, GenderFilter, Task};

// The guide's code samples run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/lexicon.md")]
    mod lexicon {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    mod classifier {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
