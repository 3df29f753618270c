//! Camera-style translation and KNN label propagation for unsupervised
//! domain-adaptive person re-identification.
//!
//! The pipeline has three learned stages plus evaluation:
//!
//! 1. **Camera-style GAN** — a single conditional generator/discriminator
//!    pair translates images between the camera styles of two domains
//!    (`gan`), trained with a Wasserstein critic, gradient penalty, an
//!    auxiliary camera classifier and a cycle reconstruction loss.
//! 2. **Re-ID backbone** — a softmax identity classifier trained on the
//!    translated source domain (`reid`), with global-average or local-max
//!    pooled descriptors.
//! 3. **Label propagation** — KNN soft labels for the unlabeled target
//!    domain from translated-source embeddings, then soft-target
//!    cross-entropy fine-tuning (`label`).
//! 4. **Evaluation** — single-query CMC and mAP over query/gallery
//!    embedding sets (`eval`).
//!
//! `data` provides dataset loading, the synthetic two-domain benchmark and
//! condition-vector encoding; `cli` wires the stages into subcommands that
//! communicate through documented file formats.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fileio;
pub mod gan;
pub mod label;
pub mod nn;
pub mod reid;
pub mod tensor;

pub use error::{Error, Result};
