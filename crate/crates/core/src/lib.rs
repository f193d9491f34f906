//! Evaluation, benchmarking and data-scaling toolkit for expressive human pose
//! and shape estimation.
//!
//! The crate is organised around a small parametric whole-body model
//! ([`body_model`]) and the pieces that consume its output:
//!
//! - [`metrics`]: Procrustes/translation alignment and PVE/MPJPE in millimeters
//! - [`benchmark`]: mean-primary-error aggregation, ranking and reports
//! - [`sampler`]: balanced / weighted / concatenated dataset schedules
//! - [`shape_adapter`]: gendered-to-neutral shape coefficient adapter
//! - [`hand_analysis`]: distance-to-relaxed hand pose statistics
//! - [`data_store`]: JSON-lines annotation records and manifests
//!
//! Everything is deterministic for a fixed seed; randomness goes through
//! [`rng::SplitMix64`].

pub mod benchmark;
pub mod body_model;
pub mod cli;
pub mod data_store;
pub mod error;
pub mod hand_analysis;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod shape_adapter;

pub use error::{Error, Result};
