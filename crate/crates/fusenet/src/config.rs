//! Experiment configuration: a single JSON file that pins every numeric
//! choice of a run. Paths on the command line select where things go;
//! the config decides what is computed.
//!
//! Reproducibility contract: parsing expands all defaults, and
//! [`ExperimentConfig::resolve`] absolutizes the manifest path, so the
//! frozen copy written at the start of each run is self-contained. Every
//! random stream of the run is derived from the one mandatory `seed`:
//! the model keeps it as-is, and each consumer below mixes it with a
//! fixed stream id, so no component ever shares another's stream.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::folds::{stratified_kfold, FoldPlan};
use crate::data::manifest::{load_study, read_manifest, RawStudy};
use crate::data::synth::SynthParams;
use crate::error::{Error, Result};
use crate::eval::train::{PreparedDataset, TrainingSchedule};
use crate::nets::{ModelConfig, Strategy};
use crate::preprocess::TARGET_SPACING;
use crate::util::mix_seed;

/// Stream id mixed into the seed for synthetic data generation.
const STREAM_SYNTH: u64 = 1;
/// Stream id mixed into the seed for the fold split shuffle.
const STREAM_FOLDS: u64 = 2;

/// Synthetic dataset request; the generator seed is derived from the
/// experiment seed, never stated here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_studies: usize,
    #[serde(default = "default_volume_shape")]
    pub volume_shape: [usize; 3],
    #[serde(default = "default_blob_radius")]
    pub blob_radius_voxels: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_class_balance")]
    pub class_balance: f64,
}

fn default_volume_shape() -> [usize; 3] {
    [32, 32, 32]
}

fn default_blob_radius() -> f64 {
    6.0
}

fn default_amplitude() -> f64 {
    0.25
}

fn default_noise_sigma() -> f64 {
    0.125
}

fn default_class_balance() -> f64 {
    0.5
}

impl SynthSpec {
    pub fn to_params(&self, experiment_seed: u64) -> SynthParams {
        SynthParams {
            n_studies: self.n_studies,
            volume_shape: self.volume_shape,
            blob_radius_voxels: self.blob_radius_voxels,
            amplitude: self.amplitude,
            noise_sigma: self.noise_sigma,
            class_balance: self.class_balance,
            seed: mix_seed(experiment_seed, STREAM_SYNTH),
        }
    }
}

/// Dataset on disk, described by a manifest. `preprocessed` declares that
/// the referenced volumes already went through the preprocessing pipeline
/// and must be used verbatim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub preprocessed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetConfig {
    Synth(SynthSpec),
    Manifest(ManifestSpec),
}

/// Geometry the preprocessing pipeline normalizes every study to. The
/// output shape is also the network input shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    #[serde(default = "default_target_spacing")]
    pub target_spacing: [f32; 3],
    #[serde(default = "default_out_shape")]
    pub out_shape: [usize; 3],
}

fn default_target_spacing() -> [f32; 3] {
    TARGET_SPACING
}

fn default_out_shape() -> [usize; 3] {
    [16, 32, 32]
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: default_target_spacing(),
            out_shape: default_out_shape(),
        }
    }
}

/// Architecture choices; the input shape and seed are supplied by the
/// experiment, so they never appear here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_stages")]
    pub stages: u32,
    #[serde(default = "default_blocks")]
    pub blocks_per_stage: u32,
    #[serde(default = "default_base_channels")]
    pub base_channels: u32,
    #[serde(default = "default_fusion_blocks")]
    pub fusion_blocks: bool,
}

fn default_strategy() -> Strategy {
    Strategy::Multistage
}

fn default_stages() -> u32 {
    3
}

fn default_blocks() -> u32 {
    3
}

fn default_base_channels() -> u32 {
    16
}

fn default_fusion_blocks() -> bool {
    true
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            strategy: default_strategy(),
            stages: default_stages(),
            blocks_per_stage: default_blocks(),
            base_channels: default_base_channels(),
            fusion_blocks: default_fusion_blocks(),
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, seed: u64, input_shape: [usize; 3]) -> ModelConfig {
        ModelConfig {
            strategy: self.strategy,
            stages: self.stages,
            blocks_per_stage: self.blocks_per_stage,
            base_channels: self.base_channels,
            input_shape,
            seed,
            fusion_blocks: self.fusion_blocks,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldsConfig {
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    5
}

impl Default for FoldsConfig {
    fn default() -> Self {
        FoldsConfig { k: default_k() }
    }
}

/// Inclusive grid bounds for the architecture search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default = "default_grid_range")]
    pub stages: [u32; 2],
    #[serde(default = "default_grid_range")]
    pub blocks_per_stage: [u32; 2],
}

fn default_grid_range() -> [u32; 2] {
    [1, 5]
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { stages: default_grid_range(), blocks_per_stage: default_grid_range() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Root of every random stream in the run; mandatory, so no run ever
    /// picks up ambient entropy.
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub folds: FoldsConfig,
    #[serde(default)]
    pub schedule: TrainingSchedule,
    #[serde(default)]
    pub grid: GridConfig,
    /// Fold index trained by the single-fold `train` command.
    #[serde(default)]
    pub fold: usize,
}

impl ExperimentConfig {
    /// Parses the file and resolves it against the file's own directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve(dir)?;
        Ok(cfg)
    }

    /// Validates fields and absolutizes the manifest path against `dir`
    /// (the directory the config file lives in), so the frozen copy works
    /// from anywhere. Resolution is idempotent.
    pub fn resolve(&mut self, dir: &Path) -> Result<()> {
        match &mut self.dataset {
            DatasetConfig::Synth(spec) => spec.to_params(self.seed).validate()?,
            DatasetConfig::Manifest(m) => {
                if m.path.is_relative() {
                    m.path = dir.join(&m.path);
                }
            }
        }
        if self.folds.k < 2 {
            return Err(Error::Config(format!("folds.k must be at least 2, got {}", self.folds.k)));
        }
        if self.fold >= self.folds.k {
            return Err(Error::Config(format!(
                "fold {} out of range for k = {}",
                self.fold, self.folds.k
            )));
        }
        for (name, [lo, hi]) in
            [("grid.stages", self.grid.stages), ("grid.blocks_per_stage", self.grid.blocks_per_stage)]
        {
            if lo < 1 || hi > 5 || lo > hi {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] must satisfy 1 <= lo <= hi <= 5"
                )));
            }
        }
        let sp = self.preprocess.target_spacing;
        if sp.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("target_spacing {sp:?} must be positive")));
        }
        if self.preprocess.out_shape.iter().any(|&n| n == 0) {
            return Err(Error::Config("out_shape must be nonzero".into()));
        }
        self.schedule.validate()?;
        // Architecture consistency (channel ranges, input divisibility).
        self.model_config().validate()
    }

    /// The concrete model for this experiment: experiment seed, input
    /// shape from the preprocessing stage.
    pub fn model_config(&self) -> ModelConfig {
        self.model.to_model_config(self.seed, self.preprocess.out_shape)
    }

    pub fn synth_params(&self) -> Result<SynthParams> {
        match &self.dataset {
            DatasetConfig::Synth(spec) => Ok(spec.to_params(self.seed)),
            DatasetConfig::Manifest(_) => Err(Error::Config(
                "this command needs a synthetic dataset; the config names a manifest".into(),
            )),
        }
    }

    pub fn manifest_spec(&self) -> Result<&ManifestSpec> {
        match &self.dataset {
            DatasetConfig::Manifest(m) => Ok(m),
            DatasetConfig::Synth(_) => Err(Error::Config(
                "this command needs a manifest dataset; the config names a synthetic source".into(),
            )),
        }
    }

    /// Loads raw studies from the configured source: generated in memory
    /// for synthetic datasets, read from disk for manifests.
    pub fn load_raw(&self) -> Result<Vec<RawStudy>> {
        match &self.dataset {
            DatasetConfig::Synth(spec) => {
                let params = spec.to_params(self.seed);
                Ok(crate::data::synth::generate(&params)?.into_iter().map(Into::into).collect())
            }
            DatasetConfig::Manifest(m) => {
                let entries = read_manifest(&m.path)?;
                let dir = m.path.parent().unwrap_or_else(|| Path::new("."));
                entries.iter().map(|e| load_study(dir, e)).collect()
            }
        }
    }

    /// Loads and, unless the manifest declares the volumes preprocessed,
    /// preprocesses the dataset into network-ready form.
    pub fn load_dataset(&self) -> Result<PreparedDataset> {
        let raw = self.load_raw()?;
        let already = matches!(&self.dataset, DatasetConfig::Manifest(m) if m.preprocessed);
        let data = if already {
            PreparedDataset::from_preprocessed(raw)?
        } else {
            PreparedDataset::from_raw(
                raw,
                self.preprocess.target_spacing,
                self.preprocess.out_shape,
            )?
        };
        if data.shape != self.preprocess.out_shape {
            return Err(Error::Data(format!(
                "dataset shape {:?} does not match configured out_shape {:?}",
                data.shape, self.preprocess.out_shape
            )));
        }
        Ok(data)
    }

    /// The fold plan every command of this experiment shares.
    pub fn fold_plan(&self, labels: &[u8]) -> Result<FoldPlan> {
        stratified_kfold(labels, self.folds.k, mix_seed(self.seed, STREAM_FOLDS))
    }

    /// Serializes the resolved config; written as `config.frozen.json`
    /// into each run's output directory.
    pub fn to_frozen_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_synth_json() -> &'static str {
        r#"{"seed": 7, "dataset": {"synth": {"n_studies": 10}}}"#
    }

    #[test]
    fn defaults_expand_on_parse_and_freeze_is_reparseable() {
        let mut cfg: ExperimentConfig = serde_json::from_str(minimal_synth_json()).unwrap();
        cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(cfg.folds.k, 5);
        assert_eq!(cfg.schedule.epochs, 100);
        assert_eq!(cfg.model.strategy, Strategy::Multistage);
        assert_eq!(cfg.preprocess.out_shape, [16, 32, 32]);
        assert_eq!(cfg.grid.stages, [1, 5]);
        let frozen = cfg.to_frozen_json();
        let mut back: ExperimentConfig = serde_json::from_str(&frozen).unwrap();
        back.resolve(Path::new(".")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_frozen_json(), frozen);
    }

    #[test]
    fn derived_seeds_are_distinct_streams() {
        let cfg: ExperimentConfig = serde_json::from_str(minimal_synth_json()).unwrap();
        let synth = cfg.synth_params().unwrap().seed;
        let folds = mix_seed(cfg.seed, STREAM_FOLDS);
        let model = cfg.model_config().seed;
        assert_ne!(synth, folds);
        assert_ne!(synth, model);
        assert_ne!(folds, model);
        assert_eq!(model, 7);
    }

    #[test]
    fn manifest_paths_resolve_against_the_config_directory() {
        let json = r#"{"seed": 1, "dataset": {"manifest": {"path": "data/manifest.json"}}}"#;
        let mut cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.resolve(Path::new("/tmp/exp")).unwrap();
        let m = cfg.manifest_spec().unwrap();
        assert_eq!(m.path, Path::new("/tmp/exp/data/manifest.json"));
        assert!(!m.preprocessed);
        // Resolving again must not stack the prefix.
        let before = cfg.clone();
        cfg.resolve(Path::new("/elsewhere")).unwrap();
        assert_eq!(cfg, before);
    }

    #[test]
    fn invalid_sections_are_rejected() {
        let load = |json: &str| -> Result<ExperimentConfig> {
            let mut cfg: ExperimentConfig =
                serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
            cfg.resolve(Path::new("."))?;
            Ok(cfg)
        };
        assert!(load(r#"{"dataset": {"synth": {"n_studies": 4}}}"#).is_err());
        assert!(load(r#"{"seed": 1, "dataset": {"synth": {"n_studies": 0}}}"#).is_err());
        assert!(
            load(r#"{"seed": 1, "dataset": {"synth": {"n_studies": 4}}, "folds": {"k": 1}}"#)
                .is_err()
        );
        assert!(
            load(r#"{"seed": 1, "dataset": {"synth": {"n_studies": 4}}, "fold": 5}"#).is_err()
        );
        assert!(load(
            r#"{"seed": 1, "dataset": {"synth": {"n_studies": 4}}, "grid": {"stages": [0, 2]}}"#
        )
        .is_err());
        assert!(load(
            r#"{"seed": 1, "dataset": {"synth": {"n_studies": 4}}, "model": {"stages": 9}}"#
        )
        .is_err());
        // Input shape must be divisible by the stage striding.
        assert!(load(
            r#"{"seed": 1, "dataset": {"synth": {"n_studies": 4}},
                "model": {"stages": 3}, "preprocess": {"out_shape": [4, 4, 4]}}"#
        )
        .is_err());
    }

    #[test]
    fn synthetic_load_matches_direct_generation() {
        let json = r#"{"seed": 3, "dataset": {"synth": {"n_studies": 3,
            "volume_shape": [8, 8, 8], "blob_radius_voxels": 2.0}},
            "preprocess": {"out_shape": [4, 4, 4]},
            "model": {"stages": 1, "blocks_per_stage": 1, "base_channels": 2}}"#;
        let mut cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.resolve(Path::new(".")).unwrap();
        let data = cfg.load_dataset().unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.shape, [4, 4, 4]);
        let again = cfg.load_dataset().unwrap();
        assert_eq!(data.studies[0].ct, again.studies[0].ct);
    }
}
