//! Dataset handling: the MVOL volume file format, JSON study manifests,
//! stratified cross-validation folds, class weights, and a synthetic
//! paired-volume generator.

pub mod folds;
pub mod manifest;
pub mod mvol;
pub mod synth;

pub use folds::{class_weights, stratified_kfold, FoldPlan, FoldSplit};
pub use manifest::{load_study, read_manifest, write_manifest, ManifestStudy, RawStudy, StudyMeta};
pub use mvol::{read_mvol, write_mvol};
pub use synth::{generate, write_synth_dataset, SynthParams};
