//! Builds one network per fusion strategy and prints what each one is
//! made of: parameter counts, latent width, and for the multistage model
//! the full stage/fusion layout.

use fusenet::nets::{build_network, ModelConfig, Strategy};

fn main() {
    let strategies = [
        Strategy::Multistage,
        Strategy::UnimodalCt,
        Strategy::UnimodalPet,
        Strategy::Early,
        Strategy::Late,
        Strategy::SingleFusion,
    ];

    println!("{:<14} {:>10} {:>7}  inputs", "strategy", "params", "latent");
    for strategy in strategies {
        let cfg = ModelConfig {
            strategy,
            stages: 3,
            blocks_per_stage: 3,
            base_channels: 16,
            input_shape: [16, 32, 32],
            seed: 1,
            fusion_blocks: true,
        };
        let net = build_network(&cfg).unwrap();
        let inputs = match (strategy.needs_ct(), strategy.needs_pet()) {
            (true, true) => "ct + pet",
            (true, false) => "ct",
            (false, true) => "pet",
            (false, false) => "none",
        };
        println!(
            "{:<14} {:>10} {:>7}  {inputs}",
            strategy.name(),
            net.parameter_count(),
            cfg.latent_features(),
        );
    }

    // The multistage layout in full: two branches with identical shapes,
    // one fusion block per stage, a single linear head on the concat.
    let cfg = ModelConfig {
        strategy: Strategy::Multistage,
        stages: 3,
        blocks_per_stage: 3,
        base_channels: 16,
        input_shape: [16, 32, 32],
        seed: 1,
        fusion_blocks: true,
    };
    let net = build_network(&cfg).unwrap();
    println!("\nmultistage stage widths:");
    for s in 1..=cfg.stages {
        println!("  stage {s}: {} channels per branch, spatial /2", cfg.stage_channels(s));
    }
    println!("  head: {} -> 2 logits", cfg.latent_features());

    println!("\nmultistage parameters (branch 1 and fusion blocks):");
    for (name, shape) in net.registry().parameter_shapes() {
        if name.starts_with("b1.s1") || name.starts_with('f') || name.starts_with("head") {
            println!("  {name:<24} {shape:?}");
        }
    }
}
