//! Temporal relation (TempRel) graph extraction with joint learning from
//! fully and partially annotated corpora.
//!
//! The crate provides:
//! - a six-label temporal relation algebra with a transitivity composition
//!   table derived from an interval enumeration oracle ([`algebra`]);
//! - a corpus data model with candidate-edge generation, consistency
//!   checking and domain propagation ([`corpus`]);
//! - a sparse multiclass averaged perceptron ([`learner`]);
//! - exact global inference under uniqueness + transitivity + clamp
//!   constraints via branch and bound, with a brute-force oracle
//!   ([`inference`]);
//! - the bootstrap loop joining a fully annotated corpus F with a partially
//!   annotated corpus P, and the System 1-9 experiment matrix ([`bootstrap`]);
//! - a synthetic corpus generator driven by latent event timelines
//!   ([`generator`]);
//! - bucketed pairwise P/R/F, the temporal awareness metric, and McNemar's
//!   test ([`evaluation`]).

pub mod algebra;
pub mod bootstrap;
pub mod corpus;
pub mod evaluation;
pub mod experiment;
pub mod generator;
pub mod inference;
pub mod learner;
pub mod parallel;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum TempRelError {
    #[error("parse error at {locus}: {msg}")]
    Parse { locus: String, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("inconsistent annotations on edges {0:?}")]
    Inconsistent(Vec<(u32, u32)>),
    #[error("solver node cap ({0}) exceeded")]
    SolverCap(u64),
    #[error("too many free edges for brute force: {0}")]
    TooManyFreeEdges(usize),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TempRelError>;
