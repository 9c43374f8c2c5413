//! Unsupervised visible-infrared person re-identification with two
//! co-trained models: density clustering per modality, cluster memory
//! banks, a noise-robust loss with per-sample adaptive exponents, and
//! assignment-based alignment of cluster labels across modalities and
//! models.

pub mod assignment;
pub mod ccm;
pub mod checkpoint;
pub mod clustering;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod linalg;
pub mod memory;
pub mod objectives;
pub mod ral;
pub mod trainer;

pub use error::{Error, Result};
