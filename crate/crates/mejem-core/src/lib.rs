//! Margin-enhanced joint energy models (MEJEM) for out-of-distribution
//! detection, at desk scale.
//!
//! A K-way MLP classifier is reinterpreted as an energy-based model: the
//! logits define per-class energies `E(x, y) = -f(x)[y]` and a marginal
//! energy `E(x) = -logsumexp(f(x))`. Training combines cross-entropy with a
//! contrastive-divergence generative term (negatives drawn by SGLD from a
//! persistent replay buffer) and a hybrid hinge margin loss that pushes
//! in-distribution energies below `m_in` and auxiliary-outlier energies
//! above `m_out`. Optimization runs through sharpness-aware minimization on
//! top of SGD with momentum, warmup, and step decay.
//!
//! Scoring and evaluation cover the two standard OOD scores (max softmax
//! probability and the energy score `logsumexp(f(x))`), threshold
//! calibration at a target ID true-positive rate, open-set prediction with
//! a reject class, and AUROC / FPR95 / precision metrics.
//!
//! Everything is `f64` on a small reverse-mode tape ([`tape::Tape`]), which
//! provides gradients with respect to both parameters (for the optimizer)
//! and inputs (for SGLD). The [`runner`] module ties the pieces into
//! config-driven train / evaluate / ablate pipelines; `mejem-cli` exposes
//! them as subcommands.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub(crate) mod numeric;
pub mod runner;
pub mod sam;
pub mod scoring;
pub mod sgld;
pub mod tape;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testkit;

pub use error::{Error, Result};
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;
