//! Attribute-imbalance analysis and scarcity-weighted mix augmentation for
//! image datasets.
//!
//! The pipeline, stage by stage:
//!
//! - [`taxonomy`]: primary/secondary attribute lists and prompt rendering.
//! - [`embedding`], [`manifest`]: CASE embedding files and dataset manifests.
//! - [`dictionary`]: attribute dictionary construction and per-image queries.
//! - [`cas`]: frequency tables, dense scarcity ranks, per-image CAS.
//! - [`sampler`]: power-transformed sampling weights and seeded draws.
//! - [`augment`]: CutMix / FMix / SaliencyMix masks and pair mixing.
//! - [`report`]: distributions, bins, partitions, before/after comparisons.
//! - [`pipeline`]: end-to-end orchestration used by the CLI.

pub mod augment;
pub mod cas;
pub mod dictionary;
pub mod embedding;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod synthetic;
pub mod taxonomy;

pub use error::{Error, Result};
