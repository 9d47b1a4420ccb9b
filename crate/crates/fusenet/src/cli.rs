//! Command-line front end. One subcommand per experiment procedure; a
//! JSON config fixes everything numeric, flags only pick commands and
//! paths. Every writing command first drops `config.frozen.json`, the
//! fully resolved configuration, into its output directory, so any run
//! can be replayed bit-exactly from its own artifacts.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::manifest::{load_study, read_manifest, write_manifest, ManifestStudy, StudyMeta};
use crate::data::mvol::write_mvol;
use crate::data::synth::write_synth_dataset;
use crate::error::{Error, Result, EXIT_CONFIG};
use crate::eval::compare::compare_models;
use crate::eval::grid::{grid_search, search_splits};
use crate::eval::train::{cross_validate, train_model, FoldResult};
use crate::fusiongraph::{enumerate_fusions, verify_against_network};
use crate::nets::{build_network, checkpoint, Strategy};
use crate::preprocess::preprocess_study;
use crate::volume::Photometric;

#[derive(Parser)]
#[command(
    name = "fusenet",
    version,
    about = "Multimodal volume classification experiments",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the experiment seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for study/fold parallelism (default: all cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!(
            "unknown strategy {s:?}; expected multistage, unimodal_ct, unimodal_pet, \
             early, late, or single_fusion"
        )
    })
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-volume dataset under --out.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory for the manifest and volumes.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Preprocess a manifest dataset into network-ready volumes.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Output directory for the preprocessed dataset.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the configured fold once and save its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory for the checkpoint and fold result.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the fusion strategy from the config.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Run full k-fold cross-validation.
    Cv {
        #[command(flatten)]
        common: Common,
        /// Output directory for fold results, summary, and checkpoints.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the fusion strategy from the config.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Grid-search stage and block counts on validation splits only.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        /// Output directory for the search outcome.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the fusion strategy from the config.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Compare two cross-validation runs with paired Wilcoxon tests.
    Compare {
        /// Output directory of the first run.
        #[arg(long, value_name = "DIR")]
        a: PathBuf,
        /// Output directory of the second run.
        #[arg(long, value_name = "DIR")]
        b: PathBuf,
        /// Where to write the comparison report (printed regardless).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Check the built network against its declared fusion-event graph.
    VerifyGraph {
        #[command(flatten)]
        common: Common,
        /// Where to write the graph JSON (printed regardless).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Override the fusion strategy from the config.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
}

/// Entry point behind `main`; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version exit through the error path but are not
            // errors; everything else is a usage problem.
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { common, out } => cmd_synth(&load(&common, None)?, &out),
        Command::Preprocess { common, out } => cmd_preprocess(&load(&common, None)?, &out),
        Command::Train { common, out, strategy } => cmd_train(&load(&common, strategy)?, &out),
        Command::Cv { common, out, strategy } => cmd_cv(&load(&common, strategy)?, &out),
        Command::Gridsearch { common, out, strategy } => {
            cmd_gridsearch(&load(&common, strategy)?, &out)
        }
        Command::Compare { a, b, out } => cmd_compare(&a, &b, out.as_deref()),
        Command::VerifyGraph { common, out, strategy } => {
            cmd_verify_graph(&load(&common, strategy)?, out.as_deref())
        }
    }
}

fn load(common: &Common, strategy: Option<Strategy>) -> Result<ExperimentConfig> {
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        // Results do not depend on the pool size, so a pool installed by
        // an earlier call in this process is fine to keep.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(s) = strategy {
        cfg.model.strategy = s;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn freeze_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    write_text(&out.join("config.frozen.json"), &cfg.to_frozen_json())
}

fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    freeze_config(cfg, out)?;
    let params = cfg.synth_params()?;
    let manifest = write_synth_dataset(&params, out)?;
    println!("wrote {} studies to {}", params.n_studies, manifest.display());
    Ok(())
}

fn cmd_preprocess(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    freeze_config(cfg, out)?;
    let spec = cfg.manifest_spec()?;
    if spec.preprocessed {
        return Err(Error::Config(
            "the manifest is already marked preprocessed; nothing to do".into(),
        ));
    }
    let entries = read_manifest(&spec.path)?;
    let src_dir = spec.path.parent().unwrap_or_else(|| Path::new("."));
    let volumes = out.join("volumes");
    std::fs::create_dir_all(&volumes).map_err(|e| Error::io(&volumes, e))?;
    let pre = cfg.preprocess;
    let new_entries: Vec<ManifestStudy> = entries
        .par_iter()
        .map(|entry| {
            let raw = load_study(src_dir, entry)?;
            let pair = preprocess_study(
                raw.ct,
                raw.pet,
                raw.mask,
                &raw.meta,
                pre.target_spacing,
                pre.out_shape,
            )
            .map_err(|e| Error::Data(format!("preprocessing study {}: {e}", entry.id)))?;
            let rel = |kind: &str| format!("volumes/{}_{kind}.mvol", entry.id);
            write_mvol(&pair.ct, &out.join(rel("ct")))?;
            write_mvol(&pair.pet, &out.join(rel("pet")))?;
            write_mvol(&pair.mask, &out.join(rel("mask")))?;
            Ok(ManifestStudy {
                id: entry.id.clone(),
                ct_path: rel("ct"),
                pet_path: rel("pet"),
                mask_path: rel("mask"),
                label: entry.label,
                meta: StudyMeta {
                    acquisition: entry.meta.acquisition,
                    photometric: Photometric::Standard,
                },
            })
        })
        .collect::<Result<_>>()?;
    let manifest = out.join("manifest.json");
    write_manifest(&new_entries, &manifest)?;
    println!(
        "preprocessed {} studies to shape {:?}; manifest at {}",
        new_entries.len(),
        pre.out_shape,
        manifest.display()
    );
    Ok(())
}

fn metrics_line(result: &FoldResult) -> String {
    let m = &result.test_metrics;
    format!(
        "fold {}: accuracy {:.3}, auc {:.3}, gmean {:.3} (n = {})",
        result.fold, m.accuracy, m.auc, m.gmean, m.n
    )
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    freeze_config(cfg, out)?;
    let data = cfg.load_dataset()?;
    let plan = cfg.fold_plan(&data.labels())?;
    let fold = cfg.fold;
    let (net, result) = train_model(&cfg.model_config(), &data, &plan.folds[fold], fold, &cfg.schedule)?;
    checkpoint::save(&net, &out.join("checkpoint.fnet"))?;
    write_json(&out.join(format!("fold{fold}.json")), &result)?;
    println!("strategy {}", cfg.model.strategy.name());
    println!("{}", metrics_line(&result));
    Ok(())
}

fn metrics_csv(model: &str, folds: &[FoldResult]) -> String {
    let mut csv = String::from("model,fold,accuracy,auc,gmean\n");
    for f in folds {
        let m = &f.test_metrics;
        csv.push_str(&format!(
            "{model},{},{:.6},{:.6},{:.6}\n",
            f.fold, m.accuracy, m.auc, m.gmean
        ));
    }
    csv
}

fn cmd_cv(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    freeze_config(cfg, out)?;
    let data = cfg.load_dataset()?;
    let plan = cfg.fold_plan(&data.labels())?;
    let cv = cross_validate(&cfg.model_config(), &data, &plan, &cfg.schedule)?;
    for (result, bytes) in cv.folds.iter().zip(&cv.checkpoints) {
        write_json(&out.join("folds").join(format!("fold{}.json", result.fold)), result)?;
        let path = out.join(format!("checkpoint_fold{}.fnet", result.fold));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    write_json(&out.join("summary.json"), &cv.summary)?;
    write_text(&out.join("metrics.csv"), &metrics_csv(cfg.model.strategy.name(), &cv.folds))?;
    println!("strategy {}", cfg.model.strategy.name());
    for result in &cv.folds {
        println!("{}", metrics_line(result));
    }
    let s = &cv.summary;
    println!(
        "summary over {} folds: accuracy {}, auc {}, gmean {}",
        s.k,
        s.accuracy.table_cell(),
        s.auc.table_cell(),
        s.gmean.table_cell()
    );
    Ok(())
}

fn cmd_gridsearch(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    freeze_config(cfg, out)?;
    let data = cfg.load_dataset()?;
    let plan = cfg.fold_plan(&data.labels())?;
    let splits = search_splits(&plan);
    let outcome = grid_search(
        &cfg.model_config(),
        &data,
        &splits,
        cfg.grid.stages[0]..=cfg.grid.stages[1],
        cfg.grid.blocks_per_stage[0]..=cfg.grid.blocks_per_stage[1],
        &cfg.schedule,
    )?;
    write_json(&out.join("gridsearch.json"), &outcome)?;
    println!("strategy {}", cfg.model.strategy.name());
    for (rank, cell) in outcome.ranking.iter().enumerate() {
        println!(
            "#{:<2} stages {} x blocks {}: val auc {:.3}, val gmean {:.3}, {} params",
            rank + 1,
            cell.stages,
            cell.blocks_per_stage,
            cell.mean_val_auc,
            cell.mean_val_gmean,
            cell.parameter_count
        );
    }
    Ok(())
}

/// Reads the fold results a `cv` run wrote under `dir`, plus the model
/// name from its frozen config.
fn read_run(dir: &Path) -> Result<(String, Vec<FoldResult>)> {
    let frozen = dir.join("config.frozen.json");
    let text = std::fs::read_to_string(&frozen).map_err(|e| Error::io(&frozen, e))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::json(&frozen, e))?;
    let mut folds = Vec::new();
    loop {
        let path = dir.join("folds").join(format!("fold{}.json", folds.len()));
        if !path.exists() {
            break;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        folds.push(serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?);
    }
    if folds.is_empty() {
        return Err(Error::Data(format!(
            "no fold results under {}; expected folds/fold0.json from a cv run",
            dir.display()
        )));
    }
    Ok((cfg.model.strategy.name().to_string(), folds))
}

fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<()> {
    let (name_a, folds_a) = read_run(a)?;
    let (name_b, folds_b) = read_run(b)?;
    let (name_a, name_b) = if name_a == name_b {
        (format!("{name_a}:a"), format!("{name_b}:b"))
    } else {
        (name_a, name_b)
    };
    let report = compare_models(&name_a, &folds_a, &name_b, &folds_b)?;
    print!("{}", report.format_table());
    if let Some(out) = out {
        write_json(&out.join("comparison.json"), &report)?;
        write_text(&out.join("comparison.txt"), &report.format_table())?;
    }
    Ok(())
}

fn cmd_verify_graph(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let model = cfg.model_config();
    let expected = enumerate_fusions(model.stages, model.blocks_per_stage)?;
    let net = build_network(&model)?;
    let report = verify_against_network(&expected, &net)?;
    for event in &expected.events {
        println!("{event}");
    }
    println!("{report}");
    if let Some(out) = out {
        write_text(&out.join("fusiongraph.json"), &expected.to_json())?;
    }
    if !report.matched {
        return Err(Error::Config(format!(
            "network does not realize the declared fusion graph ({} mismatches)",
            report.mismatches.len()
        )));
    }
    Ok(())
}
