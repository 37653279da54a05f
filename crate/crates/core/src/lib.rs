//! Popularity-bias evaluation toolkit for top-n recommenders.
//!
//! The pipeline: [`ingest`] ratings, split them, derive item and user
//! popularity groups ([`popularity`]), train a base model and generate
//! candidates ([`recommenders`]), re-rank candidates with a bias-mitigation
//! strategy ([`rerank`]), and score the final lists ([`metrics`]). The
//! [`runner`] module drives the whole sweep from one configuration.

pub mod error;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod popularity;
pub mod recommenders;
pub mod rerank;
pub mod runner;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
