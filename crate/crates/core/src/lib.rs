//! Dual-agent hierarchical reinforcement learning for multi-hop
//! knowledge-graph reasoning.
//!
//! A cluster-level agent walks a coarsened graph and guides an entity-level
//! agent walking the original knowledge graph. The crate covers the full
//! pipeline: embedding pre-training and clustering, policy networks on a
//! small reverse-mode autodiff core, policy-gradient training with
//! potential-based feedback, beam-search inference with ranking metrics,
//! brute-force verification oracles, and time-series diagnostics over the
//! training logs.

pub mod agents;
pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embed;
pub mod env;
pub mod error;
pub mod infer;
pub mod kg;
pub mod nn;
pub mod oracle;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
