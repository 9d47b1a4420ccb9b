//! Architecture grid search over stage count and blocks per stage,
//! selected purely on validation metrics.
//!
//! The search routine takes [`SearchSplit`]s, which carry train and
//! validation indices only: test indices are stripped before the search
//! can see them, so no code path inside the search can touch test data.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::data::folds::FoldPlan;
use crate::error::{Error, Result};
use crate::eval::metrics::MetricsRecord;
use crate::eval::train::{fit_on_split, PreparedDataset, TrainingSchedule};
use crate::nets::{build_network, ModelConfig};

/// The slice of a fold a hyperparameter search is allowed to use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Strips test indices from a fold plan, leaving what a search may use.
pub fn search_splits(plan: &FoldPlan) -> Vec<SearchSplit> {
    plan.folds
        .iter()
        .enumerate()
        .map(|(fold, s)| SearchSplit { fold, train: s.train.clone(), val: s.val.clone() })
        .collect()
}

/// One evaluated grid cell with its across-fold validation scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub stages: u32,
    pub blocks_per_stage: u32,
    pub mean_val_auc: f64,
    pub mean_val_gmean: f64,
    pub parameter_count: usize,
    /// Final-epoch validation metrics, one per search split.
    pub per_fold_val: Vec<MetricsRecord>,
}

/// Record of one training run the search performed: which cell, which
/// fold, and exactly which study indices it was given.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consultation {
    pub stages: u32,
    pub blocks_per_stage: u32,
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchOutcome {
    /// Cells ordered best first: mean validation AUC descending, then mean
    /// validation Gmean descending, then fewer parameters.
    pub ranking: Vec<GridCell>,
    /// Every data consultation the search made, in execution order.
    pub consultations: Vec<Consultation>,
}

impl GridSearchOutcome {
    pub fn best(&self) -> &GridCell {
        &self.ranking[0]
    }
}

fn check_range(name: &str, r: &RangeInclusive<u32>) -> Result<()> {
    if r.is_empty() {
        return Err(Error::Config(format!("{name} range is empty")));
    }
    if *r.start() < 1 || *r.end() > 5 {
        return Err(Error::Config(format!(
            "{name} range {}..={} outside the supported 1..=5",
            r.start(),
            r.end()
        )));
    }
    Ok(())
}

/// Cross-validates every (stages, blocks_per_stage) cell on the search
/// splits and ranks the cells. `base` supplies everything but the two
/// searched dimensions.
pub fn grid_search(
    base: &ModelConfig,
    data: &PreparedDataset,
    splits: &[SearchSplit],
    stages: RangeInclusive<u32>,
    blocks_per_stage: RangeInclusive<u32>,
    schedule: &TrainingSchedule,
) -> Result<GridSearchOutcome> {
    check_range("stages", &stages)?;
    check_range("blocks_per_stage", &blocks_per_stage)?;
    if splits.is_empty() {
        return Err(Error::Config("grid search needs at least one search split".into()));
    }
    let mut ranking = Vec::new();
    let mut consultations = Vec::new();
    for s in stages {
        for n in blocks_per_stage.clone() {
            let cfg = ModelConfig { stages: s, blocks_per_stage: n, ..base.clone() };
            cfg.validate()?;
            let parameter_count = build_network(&cfg)?.parameter_count();
            let mut per_fold_val = Vec::with_capacity(splits.len());
            for split in splits {
                consultations.push(Consultation {
                    stages: s,
                    blocks_per_stage: n,
                    fold: split.fold,
                    train: split.train.clone(),
                    val: split.val.clone(),
                });
                let fitted =
                    fit_on_split(&cfg, data, &split.train, &split.val, split.fold, schedule)?;
                let last = fitted.curve.last().expect("schedule has at least one epoch");
                per_fold_val.push(last.val);
            }
            let k = per_fold_val.len() as f64;
            ranking.push(GridCell {
                stages: s,
                blocks_per_stage: n,
                mean_val_auc: per_fold_val.iter().map(|m| m.auc).sum::<f64>() / k,
                mean_val_gmean: per_fold_val.iter().map(|m| m.gmean).sum::<f64>() / k,
                parameter_count,
                per_fold_val,
            });
        }
    }
    ranking.sort_by(|a, b| {
        b.mean_val_auc
            .total_cmp(&a.mean_val_auc)
            .then(b.mean_val_gmean.total_cmp(&a.mean_val_gmean))
            .then(a.parameter_count.cmp(&b.parameter_count))
            .then(a.stages.cmp(&b.stages))
            .then(a.blocks_per_stage.cmp(&b.blocks_per_stage))
    });
    Ok(GridSearchOutcome { ranking, consultations })
}
