//! Training-data provenance verification for black-box classifiers.
//!
//! A *defender* owns a class-conditional generative source. A *suspect*
//! exposes a trained classifier behind a predict API and nothing else. This
//! crate decides whether the suspect's training data came from the defender's
//! source: the defender trains a *shadow* classifier on their own synthetic
//! data, probes both models on a held-out validation set batch by batch, and
//! runs a one-sided Grubbs outlier test on the per-batch statistics. A suspect
//! whose accuracy is a low outlier of the shadow's per-batch accuracies never
//! saw the defender's data (`Legal`); one that keeps up with the shadow did
//! (`Illegal`).
//!
//! The crate is organized around the stages of that pipeline:
//!
//! - [`stats`] — Student-t quantiles, the Grubbs test, entropy and cosine
//!   statistics.
//! - [`synth`] — parametric stand-ins for generative sources and prompt sets,
//!   and the labeled datasets they emit.
//! - [`learner`] — small MLP classifiers trained from scratch, playing both
//!   the shadow and the suspect roles.
//! - [`blackbox`] — the predict wire protocol, an HTTP server/client pair,
//!   and batch-ordered querying.
//! - [`verifier`] — the end-to-end verification pipeline and its entropy and
//!   similarity variants.
//! - [`metrics`] — confusion counts, accuracy/F1, AUROC, and the CSV schema
//!   benchmark results are stored in.
//! - [`bench`] — reproducible multi-source benchmark sweeps.
//!
//! Each major capability has a runnable demo under `examples/`; the `provenance`
//! binary wraps the same library calls behind subcommands.

pub mod bench;
pub mod blackbox;
pub mod cli;
pub mod learner;
pub mod metrics;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod verifier;

pub use stats::{Direction, GrubbsResult, SignificanceConfig};
pub use synth::{GeneratorSpec, LabeledDataset, PromptSpec, RealSourceSpec};
pub use learner::{LossKind, MlpClassifier, TrainConfig, TrainHistory};
pub use verifier::{VerificationConfig, VerificationReport, Verdict};

/// Errors shared across the crate.
///
/// Operations return the variant named in their contract; anything that maps
/// onto I/O or serialization bubbles the underlying error up unchanged.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("significance level must lie strictly between 0 and 1, got {0}")]
    InvalidAlpha(f64),
    #[error("probability must lie strictly between 0 and 1, got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("degrees of freedom must be positive and finite, got {0}")]
    InvalidDegreesOfFreedom(f64),
    #[error("reference set holds {0} values; the outlier test needs at least 3")]
    InsufficientBatches(usize),
    #[error("reference set has zero sample variance")]
    ZeroVariance,
    #[error("logits must be finite and hold at least two entries")]
    InvalidLogits,
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("incompatible specs: {0}")]
    SpecMismatch(String),
    #[error("class {class} is absent from dataset `{dataset}`")]
    MissingClass { class: usize, dataset: String },
    #[error("non-finite value during {0}")]
    NumericalOverflow(String),
    #[error("query for batch {batch} failed after {attempts} attempts: {message}")]
    QueryFailed {
        batch: usize,
        attempts: u32,
        message: String,
    },
    #[error("scores must contain both a positive and a negative instance")]
    OneClassOnly,
    #[error("F1 is undefined when tp, fp and fn are all zero")]
    UndefinedF1,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("server error: {0}")]
    Server(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
