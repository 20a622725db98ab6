//! Progressive ensemble networks for transductive zero-shot classification.
//!
//! A shared feature extractor feeds K embedding heads. Head `k` scores classes
//! against attribute vectors passed through its own projection, fitted to a
//! random half of the unseen classes. Heads vote among their unseen subsets and
//! the normalized votes pick pseudo-labels that are reselected every round of
//! progressive training.

pub mod adam;
mod binio;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod experiment;
pub mod error;
pub mod label_embedding;
pub mod linalg;
pub mod mlp;
pub mod predictor;
pub mod progressive;

pub use config::TrainConfig;
pub use error::{Error, Result};
