//! Multi-domain CTR training with automatic domain feature extraction and
//! personalized integration.
//!
//! Recommendation traffic usually spans several serving scenarios (app
//! pages, ad slots, device classes) whose click behavior differs enough
//! that one pooled model blurs them and per-domain models starve the small
//! ones. This crate trains a single model over all domains at once:
//!
//! * a shared embedding layer and shared MLP tower capture cross-domain
//!   structure, while a lightweight per-domain tower captures what is
//!   specific to each domain;
//! * an exponential moving average over each domain tower's pooled outputs
//!   maintains a *domain feature* vector per domain — a learned summary of
//!   the domain that no hand-built domain indicator has to provide;
//! * a per-sample attention head scores every domain's feature against the
//!   current sample and mixes them into one personalized integration
//!   vector, so information flows across related domains;
//! * the prediction head consumes the shared representation, the domain
//!   representation, the sample's own domain feature, and the attention
//!   mixture, and the whole stack trains jointly with shared parameters
//!   stepped at a rate scaled down by the number of domains.
//!
//! The crate is organized bottom-up: dense [`tensor::Tensor`] kernels, a
//! reverse-mode [`graph`] with gradient checks in [`gradcheck`], layer
//! helpers in [`nn`], the [`optim::Adam`] optimizer, dataset handling in
//! [`data`], the model itself in [`model`], the training loop in [`train`],
//! and evaluation/ablation tooling in [`eval`]. The `examples/` directory
//! demonstrates each capability end to end; the `dfei` binary exposes the
//! same entry points as subcommands.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod runner;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
