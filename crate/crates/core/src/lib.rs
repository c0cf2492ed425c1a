//! Audio transfer-learning lab.
//!
//! Raw audio becomes three-channel multi-resolution log-mel tensors ([`dsp`]),
//! which are cached per dataset fold ([`datasets`]) and fed to CNN backbones
//! that can be initialised from pretrained archives or from scratch
//! ([`models`]). [`training`] fine-tunes and cross-validates, [`ensemble`]
//! averages softmax outputs of independently seeded members, and
//! [`analysis`] holds the transfer probes (SVCCA, fusion, freeze, cutoff)
//! and integrated-gradients attribution. [`report`] turns a run registry
//! into accuracy tables and figures.

pub mod analysis;
pub mod datasets;
pub mod dsp;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod models;
pub mod report;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
