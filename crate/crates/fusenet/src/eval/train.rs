//! Training harness: datasets prepared as dense tensors, a single-split
//! fitting routine that never sees test data, per-fold training, and
//! k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::folds::{class_weights, FoldPlan, FoldSplit};
use crate::data::manifest::RawStudy;
use crate::error::{Error, Result};
use crate::eval::metrics::{MeanStd, MetricsRecord};
use crate::nets::checkpoint;
use crate::nets::{build_network, ModelConfig, Network, Strategy};
use crate::preprocess::preprocess_study;
use crate::tensor::optim::{Adam, StepDecay};
use crate::tensor::ops::{add, softmax_rows, weighted_cross_entropy, BnMode};
use crate::tensor::{backward, NoGradGuard, Tensor};
use crate::util::mix_seed;

/// Epoch count, batch size, and the learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: StepDecay,
}

fn default_epochs() -> u32 {
    100
}

fn default_batch_size() -> usize {
    8
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            lr: StepDecay::default(),
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.initial > 0.0) || !(self.lr.factor > 0.0) || self.lr.every == 0 {
            return Err(Error::Config(format!(
                "invalid learning-rate schedule: initial {}, factor {}, every {}",
                self.lr.initial, self.lr.factor, self.lr.every
            )));
        }
        Ok(())
    }
}

/// One study as flattened network-ready channels, both of them normalized
/// to [0, 1] and sharing `PreparedDataset::shape`.
#[derive(Clone, Debug)]
pub struct PreparedStudy {
    pub id: String,
    pub label: u8,
    pub ct: Vec<f32>,
    pub pet: Vec<f32>,
}

/// A fully preprocessed dataset held in memory.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub shape: [usize; 3],
    pub studies: Vec<PreparedStudy>,
}

impl PreparedDataset {
    pub fn new(shape: [usize; 3], studies: Vec<PreparedStudy>) -> Result<Self> {
        if studies.is_empty() {
            return Err(Error::Data("dataset has no studies".into()));
        }
        let numel = shape[0] * shape[1] * shape[2];
        for s in &studies {
            if s.ct.len() != numel || s.pet.len() != numel {
                return Err(Error::Data(format!(
                    "study {} has {} / {} voxels, expected {numel} for shape {shape:?}",
                    s.id,
                    s.ct.len(),
                    s.pet.len()
                )));
            }
            if s.label > 1 {
                return Err(Error::Data(format!("study {} has label {}", s.id, s.label)));
            }
        }
        Ok(PreparedDataset { shape, studies })
    }

    /// Runs the full preprocessing pipeline on raw studies. Studies are
    /// independent, so they are processed in parallel; results are
    /// order-preserving and deterministic.
    pub fn from_raw(
        studies: Vec<RawStudy>,
        target_spacing: [f32; 3],
        out_shape: [usize; 3],
    ) -> Result<Self> {
        let prepared: Vec<PreparedStudy> = studies
            .into_par_iter()
            .map(|s| {
                let pair =
                    preprocess_study(s.ct, s.pet, s.mask, &s.meta, target_spacing, out_shape)
                        .map_err(|e| {
                            Error::Data(format!("preprocessing study {}: {e}", s.id))
                        })?;
                Ok(PreparedStudy {
                    id: s.id,
                    label: s.label,
                    ct: pair.ct.data,
                    pet: pair.pet.data,
                })
            })
            .collect::<Result<_>>()?;
        PreparedDataset::new(out_shape, prepared)
    }

    /// Ingests studies whose volumes were already preprocessed and saved;
    /// volumes are used as-is and only checked for consistent dimensions.
    pub fn from_preprocessed(studies: Vec<RawStudy>) -> Result<Self> {
        let first = studies
            .first()
            .ok_or_else(|| Error::Data("dataset has no studies".into()))?;
        let shape = first.ct.dims;
        let prepared = studies
            .into_iter()
            .map(|s| {
                if s.ct.dims != shape || s.pet.dims != shape {
                    return Err(Error::Data(format!(
                        "study {} dims {:?}/{:?} differ from {:?}",
                        s.id, s.ct.dims, s.pet.dims, shape
                    )));
                }
                Ok(PreparedStudy { id: s.id, label: s.label, ct: s.ct.data, pet: s.pet.data })
            })
            .collect::<Result<_>>()?;
        PreparedDataset::new(shape, prepared)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.studies.iter().map(|s| s.label).collect()
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    fn check_indices(&self, what: &str, idx: &[usize]) -> Result<()> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.studies.len()) {
            return Err(Error::Data(format!(
                "{what} index {bad} out of range for {} studies",
                self.studies.len()
            )));
        }
        Ok(())
    }

    /// Stacks the selected studies into `[B, 1, D, H, W]` input tensors,
    /// materializing only the modalities the strategy consumes.
    fn batch(
        &self,
        idx: &[usize],
        strategy: Strategy,
    ) -> Result<(Option<Tensor<f32>>, Option<Tensor<f32>>, Vec<usize>)> {
        let [d, h, w] = self.shape;
        let shape = [idx.len(), 1, d, h, w];
        let numel = d * h * w;
        let gather = |pick: fn(&PreparedStudy) -> &Vec<f32>| -> Result<Tensor<f32>> {
            let mut out = Vec::with_capacity(idx.len() * numel);
            for &i in idx {
                out.extend_from_slice(pick(&self.studies[i]));
            }
            Tensor::from_values(&shape, out)
        };
        let ct = if strategy.needs_ct() { Some(gather(|s| &s.ct)?) } else { None };
        let pet = if strategy.needs_pet() { Some(gather(|s| &s.pet)?) } else { None };
        let labels = idx.iter().map(|&i| self.studies[i].label as usize).collect();
        Ok((ct, pet, labels))
    }
}

/// One study's model output on a held-out split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: u8,
    /// Predicted probability of class 1.
    pub prob: f64,
}

/// Loss and validation metrics for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val: MetricsRecord,
}

/// Everything recorded while evaluating one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub predictions: Vec<Prediction>,
    pub test_metrics: MetricsRecord,
    pub curve: Vec<EpochRecord>,
    /// Epoch with the highest validation AUC, recorded for analysis; the
    /// returned weights are always from the final epoch.
    pub best_val_epoch: u32,
}

/// A fitted network plus its training history. Produced by
/// [`fit_on_split`], which only ever receives train and validation
/// indices.
pub struct FittedModel {
    pub network: Network,
    pub curve: Vec<EpochRecord>,
    pub best_val_epoch: u32,
}

/// Runs the network over `idx` in inference mode and scores the result.
pub fn evaluate_split(
    net: &Network,
    data: &PreparedDataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<(Vec<Prediction>, MetricsRecord)> {
    data.check_indices("eval", idx)?;
    if idx.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let _guard = NoGradGuard::new();
    net.set_mode(BnMode::Inference);
    let strategy = net.config().strategy;
    let mut predictions = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (ct, pet, _) = data.batch(chunk, strategy)?;
        let logits = net.forward(ct.as_ref(), pet.as_ref())?;
        let probs = softmax_rows(&logits.values(), 2);
        for (row, &i) in chunk.iter().enumerate() {
            let study = &data.studies[i];
            predictions.push(Prediction {
                id: study.id.clone(),
                label: study.label,
                prob: probs[2 * row + 1] as f64,
            });
        }
    }
    let scores: Vec<f64> = predictions.iter().map(|p| p.prob).collect();
    let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let metrics = MetricsRecord::compute(&scores, &labels)?;
    Ok((predictions, metrics))
}

fn training_loss(
    net: &Network,
    ct: Option<&Tensor<f32>>,
    pet: Option<&Tensor<f32>>,
    labels: &[usize],
    weights: &[f32],
) -> Result<Tensor<f32>> {
    if net.config().strategy == Strategy::Late {
        // The two branches are independent classifiers; their losses add.
        let (l1, l2) = net.late_branch_logits(ct, pet)?;
        add(
            &weighted_cross_entropy(&l1, labels, weights)?,
            &weighted_cross_entropy(&l2, labels, weights)?,
        )
    } else {
        let logits = net.forward(ct, pet)?;
        weighted_cross_entropy(&logits, labels, weights)
    }
}

/// Trains a fresh network on `train_idx`, scoring `val_idx` after every
/// epoch. Test data stays out of scope by construction: the function has
/// no way to receive it. The network seed is derived from the config seed
/// and the fold index, the epoch shuffle from both plus the epoch.
pub fn fit_on_split(
    cfg: &ModelConfig,
    data: &PreparedDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    fold: usize,
    schedule: &TrainingSchedule,
) -> Result<FittedModel> {
    cfg.validate()?;
    schedule.validate()?;
    data.check_indices("train", train_idx)?;
    data.check_indices("val", val_idx)?;
    if train_idx.is_empty() {
        return Err(Error::Data(format!("fold {fold}: training split is empty")));
    }
    if val_idx.is_empty() {
        return Err(Error::Data(format!("fold {fold}: validation split is empty")));
    }
    if data.shape != cfg.input_shape {
        return Err(Error::Config(format!(
            "dataset shape {:?} does not match model input_shape {:?}",
            data.shape, cfg.input_shape
        )));
    }

    let fold_seed = mix_seed(cfg.seed, fold as u64);
    let net_cfg = ModelConfig { seed: fold_seed, ..cfg.clone() };
    let net = build_network(&net_cfg)?;

    let train_labels: Vec<u8> = train_idx.iter().map(|&i| data.studies[i].label).collect();
    let cw = class_weights(&train_labels)
        .map_err(|e| Error::Data(format!("fold {fold} training split: {e}")))?;
    let weights = [cw[0] as f32, cw[1] as f32];

    let mut opt = Adam::new(net.trainable_params(), schedule.lr.initial);
    let mut curve = Vec::with_capacity(schedule.epochs as usize);
    let mut best_val_epoch = 0;
    let mut best_val_auc = f64::NEG_INFINITY;
    let mut order = train_idx.to_vec();
    for epoch in 0..schedule.epochs {
        opt.lr = schedule.lr.lr_at_epoch(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(fold_seed, epoch as u64));
        order.shuffle(&mut rng);
        net.set_mode(BnMode::Training);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(schedule.batch_size).enumerate() {
            // Numeric failures can surface inside any op; pin them to the
            // batch that produced them.
            let locate = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!(
                    "{m} at epoch {epoch}, batch {b} of fold {fold}"
                )),
                other => other,
            };
            let (ct, pet, labels) = data.batch(chunk, cfg.strategy)?;
            let loss = training_loss(&net, ct.as_ref(), pet.as_ref(), &labels, &weights)
                .map_err(locate)?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss {value} at epoch {epoch}, batch {b} of fold {fold}"
                )));
            }
            opt.zero_grad();
            backward(&loss).map_err(locate)?;
            opt.step().map_err(locate)?;
            loss_sum += value;
            batches += 1;
        }
        let (_, val) = evaluate_split(&net, data, val_idx, schedule.batch_size)?;
        if val.auc > best_val_auc {
            best_val_auc = val.auc;
            best_val_epoch = epoch;
        }
        curve.push(EpochRecord { epoch, train_loss: loss_sum / batches as f64, val });
    }
    net.set_mode(BnMode::Inference);
    Ok(FittedModel { network: net, curve, best_val_epoch })
}

/// Fits on the fold's train/val splits, then evaluates exactly once on
/// the fold's test split.
pub fn train_model(
    cfg: &ModelConfig,
    data: &PreparedDataset,
    split: &FoldSplit,
    fold: usize,
    schedule: &TrainingSchedule,
) -> Result<(Network, FoldResult)> {
    let fitted = fit_on_split(cfg, data, &split.train, &split.val, fold, schedule)?;
    let (predictions, test_metrics) =
        evaluate_split(&fitted.network, data, &split.test, schedule.batch_size)?;
    let result = FoldResult {
        fold,
        predictions,
        test_metrics,
        curve: fitted.curve,
        best_val_epoch: fitted.best_val_epoch,
    };
    Ok((fitted.network, result))
}

/// Per-metric mean and sample standard deviation across folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub k: usize,
    pub accuracy: MeanStd,
    pub auc: MeanStd,
    pub gmean: MeanStd,
}

pub fn summarize(folds: &[FoldResult]) -> CvSummary {
    let pick = |f: fn(&MetricsRecord) -> f64| -> MeanStd {
        MeanStd::of(&folds.iter().map(|r| f(&r.test_metrics)).collect::<Vec<_>>())
    };
    CvSummary {
        k: folds.len(),
        accuracy: pick(|m| m.accuracy),
        auc: pick(|m| m.auc),
        gmean: pick(|m| m.gmean),
    }
}

/// Cross-validation output: per-fold results in fold order, the summary,
/// and each fold's trained network serialized to checkpoint bytes.
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub summary: CvSummary,
    pub checkpoints: Vec<Vec<u8>>,
}

/// Trains every fold of the plan. Folds are independent, so they run in
/// parallel; each fold builds its own network from the derived fold seed,
/// and results are collected in ascending fold order regardless of
/// completion order.
pub fn cross_validate(
    cfg: &ModelConfig,
    data: &PreparedDataset,
    plan: &FoldPlan,
    schedule: &TrainingSchedule,
) -> Result<CvResult> {
    let per_fold: Vec<(FoldResult, Vec<u8>)> = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(fold, split)| {
            let (net, result) = train_model(cfg, data, split, fold, schedule)?;
            Ok((result, checkpoint::to_bytes(&net)))
        })
        .collect::<Result<_>>()?;
    let (folds, checkpoints): (Vec<_>, Vec<_>) = per_fold.into_iter().unzip();
    let summary = summarize(&folds);
    Ok(CvResult { folds, summary, checkpoints })
}
