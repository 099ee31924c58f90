//! Synthetic syntactic multi-modality, alignment-based NAT losses, and a
//! small non-autoregressive translation model.

pub mod corpus;
pub mod error;
pub mod kv;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};
