//! Multi-stage intermediate fusion of paired CT/PET volumes for binary
//! classification, built on a self-contained reverse-mode autodiff engine.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dynamically shaped tensors with a recorded operation graph,
//!   the 3D convolution / batch-norm / pooling / loss kernels, reverse-mode
//!   [`tensor::backward`], and the [`tensor::optim`] module (Adam, step decay).
//! * [`nets`]: residual 3D CNN branches, the multiplicative fusion block,
//!   and the six classification strategies (multistage, unimodal CT, unimodal
//!   PET, early, late, single-fusion gated unit) behind one [`nets::Network`] type
//!   with binary checkpointing.
//! * [`fusiongraph`]: a symbolic enumeration of where fusion events occur in
//!   a configured network and at which trainable depth, plus verification of
//!   that bookkeeping against a concrete [`nets::Network`].
//! * [`volume`] / [`preprocess`]: voxel grids with physical geometry and the
//!   six-step acquisition-to-tensor pipeline (photometric fix, HU, SUV,
//!   resampling, cross-modality alignment, mask/crop/normalize).
//! * [`data`]: the `.mvol` volume format, dataset manifests, stratified
//!   k-fold planning, class weighting, and a synthetic paired-volume
//!   generator whose label depends on the *product* of the two modality
//!   contrasts (neither modality is informative alone).
//! * [`eval`]: AUC / G-mean / accuracy metrics, the exact Wilcoxon
//!   signed-rank test, fold training, cross-validation, grid search over
//!   architecture sizes, and paired model comparison.
//! * [`cli`]: the `fusenet` command-line entry points (`synth`,
//!   `preprocess`, `train`, `cv`, `gridsearch`, `compare`, `verify-graph`).
//!
//! Everything is deterministic: seeds are mandatory, all randomness flows
//! through counter-based ChaCha streams, and reruns of any command with the
//! same resolved configuration produce byte-identical outputs.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusiongraph;
pub mod nets;
pub mod preprocess;
pub mod tensor;
pub mod util;
pub mod volume;

pub use error::{Error, Result};
