//! Paired comparison of two models' cross-validation results via the
//! Wilcoxon signed-rank test on per-fold AUC and Gmean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{MeanStd, MetricsRecord};
use crate::eval::train::FoldResult;
use crate::eval::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

/// One model's across-fold summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub accuracy: MeanStd,
    pub auc: MeanStd,
    pub gmean: MeanStd,
}

/// A paired test on one metric: the per-fold values fed to the test plus
/// its outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub per_fold_a: Vec<f64>,
    pub per_fold_b: Vec<f64>,
    #[serde(flatten)]
    pub test: WilcoxonResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: ModelSummary,
    pub b: ModelSummary,
    pub n_folds: usize,
    pub auc: PairedTest,
    pub gmean: PairedTest,
}

fn summarize(name: &str, folds: &[FoldResult]) -> ModelSummary {
    let pick = |f: fn(&MetricsRecord) -> f64| {
        MeanStd::of(&folds.iter().map(|r| f(&r.test_metrics)).collect::<Vec<_>>())
    };
    ModelSummary {
        name: name.to_string(),
        accuracy: pick(|m| m.accuracy),
        auc: pick(|m| m.auc),
        gmean: pick(|m| m.gmean),
    }
}

fn paired(
    a: &[FoldResult],
    b: &[FoldResult],
    f: fn(&MetricsRecord) -> f64,
) -> Result<PairedTest> {
    let per_fold_a: Vec<f64> = a.iter().map(|r| f(&r.test_metrics)).collect();
    let per_fold_b: Vec<f64> = b.iter().map(|r| f(&r.test_metrics)).collect();
    let test = wilcoxon_signed_rank(&per_fold_a, &per_fold_b)?;
    Ok(PairedTest { per_fold_a, per_fold_b, test })
}

/// Pairs the two models' folds and tests AUC and Gmean differences.
/// Results must come from the same fold plan for the pairing to mean
/// anything; equal fold counts are required, and fold indices must match.
pub fn compare_models(
    name_a: &str,
    folds_a: &[FoldResult],
    name_b: &str,
    folds_b: &[FoldResult],
) -> Result<ComparisonReport> {
    if folds_a.len() != folds_b.len() {
        return Err(Error::Data(format!(
            "cannot pair {} folds of {name_a} with {} folds of {name_b}",
            folds_a.len(),
            folds_b.len()
        )));
    }
    if folds_a.is_empty() {
        return Err(Error::Data("no folds to compare".into()));
    }
    for (x, y) in folds_a.iter().zip(folds_b) {
        if x.fold != y.fold {
            return Err(Error::Data(format!(
                "fold order mismatch: {} vs {}",
                x.fold, y.fold
            )));
        }
    }
    Ok(ComparisonReport {
        a: summarize(name_a, folds_a),
        b: summarize(name_b, folds_b),
        n_folds: folds_a.len(),
        auc: paired(folds_a, folds_b, |m| m.auc)?,
        gmean: paired(folds_a, folds_b, |m| m.gmean)?,
    })
}

impl ComparisonReport {
    /// Fixed-width table of `mean (std)` cells followed by the paired
    /// test outcomes.
    pub fn format_table(&self) -> String {
        let width = self.a.name.len().max(self.b.name.len()).max("model".len()) + 2;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<width$}{:<16}{:<16}{:<16}\n",
            "model", "accuracy", "auc", "gmean"
        ));
        for m in [&self.a, &self.b] {
            out.push_str(&format!(
                "{:<width$}{:<16}{:<16}{:<16}\n",
                m.name,
                m.accuracy.table_cell(),
                m.auc.table_cell(),
                m.gmean.table_cell()
            ));
        }
        out.push_str(&format!(
            "\nWilcoxon signed-rank (two-sided) over {} folds:\n",
            self.n_folds
        ));
        for (metric, t) in [("auc", &self.auc), ("gmean", &self.gmean)] {
            let note = if t.test.degenerate { " (degenerate: all differences zero)" } else { "" };
            out.push_str(&format!(
                "  {metric:<9} W = {:>5.1}, p = {:.4}{note}\n",
                t.test.statistic, t.test.p_value
            ));
        }
        out
    }
}
