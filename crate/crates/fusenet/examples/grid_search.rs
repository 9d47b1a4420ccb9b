//! Searches stage and block counts on validation splits only. The
//! outcome carries a consultation log: every (cell, fold, train, val)
//! triple the search read, proving test indices were never touched.

use fusenet::data::folds::stratified_kfold;
use fusenet::data::synth::{generate, SynthParams};
use fusenet::eval::grid::{grid_search, search_splits};
use fusenet::eval::train::{PreparedDataset, TrainingSchedule};
use fusenet::nets::{ModelConfig, Strategy};
use fusenet::preprocess::TARGET_SPACING;

fn main() {
    let params = SynthParams {
        n_studies: 90,
        volume_shape: [16, 16, 16],
        blob_radius_voxels: 3.0,
        amplitude: 0.25,
        noise_sigma: 0.125,
        class_balance: 0.5,
        seed: 61,
    };
    let raw: Vec<_> = generate(&params).unwrap().into_iter().map(Into::into).collect();
    let data = PreparedDataset::from_raw(raw, TARGET_SPACING, [8, 16, 16]).unwrap();
    let plan = stratified_kfold(&data.labels(), 3, 62).unwrap();
    let splits = search_splits(&plan);

    let base = ModelConfig {
        strategy: Strategy::Multistage,
        stages: 1,
        blocks_per_stage: 1,
        base_channels: 8,
        input_shape: [8, 16, 16],
        seed: 63,
        fusion_blocks: true,
    };
    let schedule = TrainingSchedule { epochs: 4, batch_size: 8, lr: Default::default() };
    let outcome = grid_search(&base, &data, &splits, 1..=2, 1..=2, &schedule).unwrap();

    println!("rank  stages  blocks  val auc  val gmean  params");
    for (i, c) in outcome.ranking.iter().enumerate() {
        println!(
            "{:>4}  {:>6}  {:>6}  {:>7.3}  {:>9.3}  {:>7}",
            i + 1,
            c.stages,
            c.blocks_per_stage,
            c.mean_val_auc,
            c.mean_val_gmean,
            c.parameter_count
        );
    }

    let best = outcome.best();
    println!("\nselected: {} stages, {} blocks per stage", best.stages, best.blocks_per_stage);
    println!(
        "consultations recorded: {} (cells x folds = {})",
        outcome.consultations.len(),
        outcome.ranking.len() * splits.len()
    );
    let c = &outcome.consultations[0];
    println!(
        "first consultation: cell ({}, {}), fold {}, {} train / {} val indices, no test field exists",
        c.stages,
        c.blocks_per_stage,
        c.fold,
        c.train.len(),
        c.val.len()
    );
}
