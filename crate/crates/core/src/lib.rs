//! Class interference regularization for metric learning.
//!
//! Embedding networks trained with triplet, lookup-table (OIM-style) or
//! cross-entropy objectives have their output features blended toward the
//! running average embedding of a randomly chosen wrong class. The crate
//! holds the encoder, the class table, the losses, batch and episode
//! samplers, evaluation metrics, a synthetic data generator and the training
//! loops, plus the `cir` command-line tool built on them.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod interference;
pub mod losses;
pub mod nn;
pub mod report;
pub mod reproduce;
pub mod sampling;
pub mod tac;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use datagen::{gen_gaussian_mixture, split_classes, DataSplits, Dataset, GeneratorSpec};
pub use embedding::EmbeddingBatch;
pub use error::{CirError, Result};
pub use nn::{Activation, ModelParams};
pub use tac::ClassTable;
