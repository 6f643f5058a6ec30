//! Rasch (1PL) calibration toolkit with synthetic-respondent augmentation.
//!
//! The crate estimates item difficulties from dichotomous response matrices
//! by marginal maximum likelihood EM, re-estimates group proficiency
//! distributions against fixed items (weight-updating EM plus EAP scoring),
//! and builds augmented respondent pools by centroid matching and
//! proportional resampling, with comparison metrics and Wright-map reports.
//!
//! Modules follow the processing pipeline:
//!
//! - [`dataio`]: wide CSV / long JSONL matrices, item banks, result bundles
//! - [`rasch`]: model primitives
//! - [`calibrate`]: MML-EM item estimation and scale anchoring
//! - [`fpc`]: fixed-parameter latent estimation, EAP scores, person fit
//! - [`augment`]: centroid matching, resampling, experiment pools
//! - [`simulate`]: seeded generative oracle for recovery studies
//! - [`evaluate`]: Pearson/Spearman/RMSE and distribution statistics
//! - [`report`]: Wright maps (text/SVG) and experiment tables
//! - [`cli`]: the `irtforge` binary's subcommands

pub mod augment;
pub mod calibrate;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod evaluate;
pub mod fpc;
pub mod rasch;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
