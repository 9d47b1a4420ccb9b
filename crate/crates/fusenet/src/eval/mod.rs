//! Evaluation and experiment machinery: metrics, the paired significance
//! test, the training harness, cross-validation, grid search, and model
//! comparison.

pub mod compare;
pub mod grid;
pub mod metrics;
pub mod train;
pub mod wilcoxon;

pub use compare::{compare_models, ComparisonReport, ModelSummary, PairedTest};
pub use grid::{grid_search, search_splits, Consultation, GridCell, GridSearchOutcome, SearchSplit};
pub use metrics::{auc, confusion, gmean, MeanStd, MetricsRecord};
pub use train::{
    cross_validate, evaluate_split, fit_on_split, summarize, train_model, CvResult, CvSummary,
    EpochRecord, FittedModel, FoldResult, PreparedDataset, PreparedStudy, Prediction,
    TrainingSchedule,
};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
