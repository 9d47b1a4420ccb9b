//! Network architectures: residual 3D CNN branches, the multiplicative
//! fusion block, and the five classification strategies.
//!
//! All strategies share the same branch topology. A branch is a sequence of
//! `stages` stages; stage `s` (1-based) has `blocks_per_stage` residual
//! blocks at `base_channels * 2^(s-1)` channels, and its first block halves
//! every spatial extent (stride 2). A residual block is
//! `conv3x3x3 -> BN -> ReLU -> conv3x3x3 -> BN` plus a projection shortcut
//! `conv1x1x1 -> BN` (always present, even when shapes already match), the
//! two paths summed and rectified.
//!
//! The multistage strategy interleaves a fusion block after every stage:
//! each branch output is squeezed to one channel (1x1x1 convolution + BN),
//! the two squeeze maps are multiplied voxelwise, and the product map is
//! added back onto *both* branch outputs, so each branch continues with its
//! own features plus a shared cross-modality interaction term. After the
//! final stage the branch outputs are concatenated along channels, globally
//! average-pooled, and classified by a single linear head.
//!
//! Initialization is keyed by `(seed, parameter name)`, so strategies that
//! share layer names (the branch slots `b1`/`b2`, the heads) start from
//! identical weights for the shared subnetwork; this is what makes the
//! exact ablation comparisons in the test suite possible.

pub(crate) mod layers;
pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{self, BnMode};
use crate::tensor::{NoGradGuard, Tensor};

pub use layers::ParamRegistry;

use layers::{BnLayer, Conv3dLayer, LinearLayer};

/// Which classifier to build around the shared branch topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Two branches with a multiplicative fusion block after every stage.
    Multistage,
    /// One branch fed the CT volume only.
    UnimodalCt,
    /// One branch fed the PET volume only.
    UnimodalPet,
    /// One branch fed the voxelwise product of the two modalities.
    Early,
    /// Two independent branches with their own heads; at inference the two
    /// softmax outputs are averaged.
    Late,
    /// Two branches fused once after pooling by a gated multimodal unit.
    SingleFusion,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Multistage => "multistage",
            Strategy::UnimodalCt => "unimodal_ct",
            Strategy::UnimodalPet => "unimodal_pet",
            Strategy::Early => "early",
            Strategy::Late => "late",
            Strategy::SingleFusion => "single_fusion",
        }
    }

    pub fn needs_ct(self) -> bool {
        !matches!(self, Strategy::UnimodalPet)
    }

    pub fn needs_pet(self) -> bool {
        !matches!(self, Strategy::UnimodalCt)
    }
}

fn default_base_channels() -> u32 {
    16
}

fn default_true() -> bool {
    true
}

/// Architecture hyperparameters. `stages` and `blocks_per_stage` are the
/// grid-search axes; `input_shape` is `[depth, height, width]` of the
/// single-channel input volumes; `seed` drives every weight draw.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub strategy: Strategy,
    pub stages: u32,
    pub blocks_per_stage: u32,
    #[serde(default = "default_base_channels")]
    pub base_channels: u32,
    pub input_shape: [usize; 3],
    pub seed: u64,
    /// Multistage only: set false to build the same two-branch network with
    /// no fusion blocks (the pass-through ablation).
    #[serde(default = "default_true")]
    pub fusion_blocks: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.stages) {
            return Err(Error::Config(format!("stages must be in 1..=5, got {}", self.stages)));
        }
        if !(1..=5).contains(&self.blocks_per_stage) {
            return Err(Error::Config(format!(
                "blocks_per_stage must be in 1..=5, got {}",
                self.blocks_per_stage
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        let div = 1usize << self.stages;
        for (axis, &extent) in self.input_shape.iter().enumerate() {
            if extent == 0 || extent % div != 0 {
                return Err(Error::Config(format!(
                    "input extent {extent} on axis {axis} is not divisible by 2^stages = {div}"
                )));
            }
        }
        Ok(())
    }

    /// Channel width of stage `s` (1-based): `base * 2^(s-1)`.
    pub fn stage_channels(&self, stage: u32) -> usize {
        (self.base_channels as usize) << (stage - 1)
    }

    /// Feature count entering the classification head.
    pub fn latent_features(&self) -> usize {
        let top = self.stage_channels(self.stages);
        match self.strategy {
            Strategy::Multistage => 2 * top,
            _ => top,
        }
    }
}

/// One residual block. `stride` applies to the first conv and the shortcut.
struct BasicBlock {
    conv1: Conv3dLayer,
    bn1: BnLayer,
    conv2: Conv3dLayer,
    bn2: BnLayer,
    res_conv: Conv3dLayer,
    res_bn: BnLayer,
}

impl BasicBlock {
    fn new(
        reg: &mut ParamRegistry,
        seed: u64,
        name: &str,
        in_chan: usize,
        out_chan: usize,
        stride: [usize; 3],
    ) -> Result<Self> {
        Ok(BasicBlock {
            conv1: Conv3dLayer::new(
                reg,
                seed,
                &format!("{name}.conv1"),
                in_chan,
                out_chan,
                [3, 3, 3],
                stride,
                [1, 1, 1],
            )?,
            bn1: BnLayer::new(reg, &format!("{name}.bn1"), out_chan)?,
            conv2: Conv3dLayer::new(
                reg,
                seed,
                &format!("{name}.conv2"),
                out_chan,
                out_chan,
                [3, 3, 3],
                [1, 1, 1],
                [1, 1, 1],
            )?,
            bn2: BnLayer::new(reg, &format!("{name}.bn2"), out_chan)?,
            res_conv: Conv3dLayer::new(
                reg,
                seed,
                &format!("{name}.res"),
                in_chan,
                out_chan,
                [1, 1, 1],
                stride,
                [0, 0, 0],
            )?,
            res_bn: BnLayer::new(reg, &format!("{name}.resbn"), out_chan)?,
        })
    }

    fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let main = self.bn1.forward(&self.conv1.forward(x)?)?;
        let main = self.bn2.forward(&self.conv2.forward(&ops::relu(&main)?)?)?;
        let shortcut = self.res_bn.forward(&self.res_conv.forward(x)?)?;
        ops::relu(&ops::add(&main, &shortcut)?)
    }

    fn bn_layers(&self) -> [&BnLayer; 3] {
        [&self.bn1, &self.bn2, &self.res_bn]
    }
}

/// One branch: `stages x blocks_per_stage` residual blocks.
struct Branch {
    stages: Vec<Vec<BasicBlock>>,
}

impl Branch {
    fn new(reg: &mut ParamRegistry, seed: u64, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut stages = Vec::new();
        let mut in_chan = 1usize;
        for s in 1..=cfg.stages {
            let out_chan = cfg.stage_channels(s);
            let mut blocks = Vec::new();
            for b in 0..cfg.blocks_per_stage {
                let stride = if b == 0 { [2, 2, 2] } else { [1, 1, 1] };
                blocks.push(BasicBlock::new(
                    reg,
                    seed,
                    &format!("{name}.s{s}.blk{b}"),
                    in_chan,
                    out_chan,
                    stride,
                )?);
                in_chan = out_chan;
            }
            stages.push(blocks);
        }
        Ok(Branch { stages })
    }

    fn forward_stage(&self, stage_idx: usize, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut h = x.clone();
        for block in &self.stages[stage_idx] {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    fn forward_all(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut h = x.clone();
        for s in 0..self.stages.len() {
            h = self.forward_stage(s, &h)?;
        }
        Ok(h)
    }

    fn bn_layers(&self) -> Vec<&BnLayer> {
        self.stages.iter().flatten().flat_map(|b| b.bn_layers()).collect()
    }
}

/// Multiplicative fusion after one stage: each branch is squeezed to a
/// single channel, the squeeze maps are multiplied voxelwise, and the
/// product is broadcast-added back onto both branches.
struct FusionBlock {
    sq1: Conv3dLayer,
    sq1_bn: BnLayer,
    sq2: Conv3dLayer,
    sq2_bn: BnLayer,
}

impl FusionBlock {
    fn new(reg: &mut ParamRegistry, seed: u64, name: &str, chan: usize) -> Result<Self> {
        Ok(FusionBlock {
            sq1: Conv3dLayer::new(
                reg,
                seed,
                &format!("{name}.sq1"),
                chan,
                1,
                [1, 1, 1],
                [1, 1, 1],
                [0, 0, 0],
            )?,
            sq1_bn: BnLayer::new(reg, &format!("{name}.sq1bn"), 1)?,
            sq2: Conv3dLayer::new(
                reg,
                seed,
                &format!("{name}.sq2"),
                chan,
                1,
                [1, 1, 1],
                [1, 1, 1],
                [0, 0, 0],
            )?,
            sq2_bn: BnLayer::new(reg, &format!("{name}.sq2bn"), 1)?,
        })
    }

    /// `(a_out, b_out)` where both get the same product map added.
    fn forward(&self, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let ma = self.sq1_bn.forward(&self.sq1.forward(a)?)?;
        let mb = self.sq2_bn.forward(&self.sq2.forward(b)?)?;
        let prod = ops::mul(&ma, &mb)?;
        Ok((ops::add(a, &prod)?, ops::add(b, &prod)?))
    }

    fn bn_layers(&self) -> [&BnLayer; 2] {
        [&self.sq1_bn, &self.sq2_bn]
    }

    fn silence(&self) {
        let z = vec![0.0f32; self.sq1.params.kernel.numel()];
        self.sq1.params.kernel.set_values(&z);
        self.sq2.params.kernel.set_values(&z);
        for bn in [&self.sq1_bn, &self.sq2_bn] {
            bn.state.gamma.set_values(&[0.0]);
            bn.state.beta.set_values(&[0.0]);
        }
    }
}

/// Gated multimodal unit on pooled feature vectors:
/// `h = z * tanh(W1 v1) + (1 - z) * tanh(W2 v2)`,
/// `z = sigmoid(Wz [v1; v2])`, all maps bias-free.
struct Gmu {
    w1: LinearLayer,
    w2: LinearLayer,
    wz: LinearLayer,
}

impl Gmu {
    fn new(reg: &mut ParamRegistry, seed: u64, features: usize) -> Result<Self> {
        Ok(Gmu {
            w1: LinearLayer::new(reg, seed, "gmu.w1", features, features, false)?,
            w2: LinearLayer::new(reg, seed, "gmu.w2", features, features, false)?,
            wz: LinearLayer::new(reg, seed, "gmu.wz", 2 * features, features, false)?,
        })
    }

    fn forward(&self, v1: &Tensor<f32>, v2: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h1 = ops::tanh(&self.w1.forward(v1)?)?;
        let h2 = ops::tanh(&self.w2.forward(v2)?)?;
        let z = ops::sigmoid(&self.wz.forward(&ops::concat_axis1(&[v1, v2])?)?)?;
        let gated1 = ops::mul(&z, &h1)?;
        let gated2 = ops::mul(&ops::affine(&z, -1.0, 1.0)?, &h2)?;
        ops::add(&gated1, &gated2)
    }
}

enum Body {
    Multistage { b1: Branch, b2: Branch, fusions: Vec<FusionBlock>, head: LinearLayer },
    SingleBranch { branch: Branch, head: LinearLayer },
    Late { b1: Branch, head1: LinearLayer, b2: Branch, head2: LinearLayer },
    SingleFusion { b1: Branch, b2: Branch, gmu: Gmu, head: LinearLayer },
}

/// A built network: configuration, body, and the parameter registry that
/// orders every stateful value for optimizers and checkpoints.
pub struct Network {
    config: ModelConfig,
    body: Body,
    registry: ParamRegistry,
}

/// Builds and initializes a network for `cfg`. Identical configurations
/// produce bitwise-identical networks.
pub fn build_network(cfg: &ModelConfig) -> Result<Network> {
    cfg.validate()?;
    let mut reg = ParamRegistry::default();
    let seed = cfg.seed;
    let top = cfg.stage_channels(cfg.stages);
    let body = match cfg.strategy {
        Strategy::Multistage => {
            let b1 = Branch::new(&mut reg, seed, "b1", cfg)?;
            let b2 = Branch::new(&mut reg, seed, "b2", cfg)?;
            let mut fusions = Vec::new();
            if cfg.fusion_blocks {
                for s in 1..=cfg.stages {
                    fusions.push(FusionBlock::new(
                        &mut reg,
                        seed,
                        &format!("f{s}"),
                        cfg.stage_channels(s),
                    )?);
                }
            }
            let head = LinearLayer::new(&mut reg, seed, "head", 2 * top, 2, true)?;
            Body::Multistage { b1, b2, fusions, head }
        }
        Strategy::UnimodalCt | Strategy::UnimodalPet | Strategy::Early => {
            let branch = Branch::new(&mut reg, seed, "b1", cfg)?;
            let head = LinearLayer::new(&mut reg, seed, "head", top, 2, true)?;
            Body::SingleBranch { branch, head }
        }
        Strategy::Late => {
            let b1 = Branch::new(&mut reg, seed, "b1", cfg)?;
            let head1 = LinearLayer::new(&mut reg, seed, "head1", top, 2, true)?;
            let b2 = Branch::new(&mut reg, seed, "b2", cfg)?;
            let head2 = LinearLayer::new(&mut reg, seed, "head2", top, 2, true)?;
            Body::Late { b1, head1, b2, head2 }
        }
        Strategy::SingleFusion => {
            let b1 = Branch::new(&mut reg, seed, "b1", cfg)?;
            let b2 = Branch::new(&mut reg, seed, "b2", cfg)?;
            let gmu = Gmu::new(&mut reg, seed, top)?;
            let head = LinearLayer::new(&mut reg, seed, "head", top, 2, true)?;
            Body::SingleFusion { b1, b2, gmu, head }
        }
    };
    Ok(Network { config: cfg.clone(), body, registry: reg })
}

impl Network {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    /// Trainable parameters in topology order.
    pub fn trainable_params(&self) -> Vec<Tensor<f32>> {
        self.registry.trainable()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.registry.parameter_count()
    }

    /// Switches every batch-norm layer between training and inference.
    pub fn set_mode(&self, mode: BnMode) {
        for bn in self.bn_layers() {
            bn.set_mode(mode);
        }
    }

    fn bn_layers(&self) -> Vec<&BnLayer> {
        match &self.body {
            Body::Multistage { b1, b2, fusions, .. } => {
                let mut v = b1.bn_layers();
                v.extend(b2.bn_layers());
                for f in fusions {
                    v.extend(f.bn_layers());
                }
                v
            }
            Body::SingleBranch { branch, .. } => branch.bn_layers(),
            Body::Late { b1, b2, .. } => {
                let mut v = b1.bn_layers();
                v.extend(b2.bn_layers());
                v
            }
            Body::SingleFusion { b1, b2, .. } => {
                let mut v = b1.bn_layers();
                v.extend(b2.bn_layers());
                v
            }
        }
    }

    /// Zeroes every fusion block's squeeze kernel and BN affine parameters
    /// so the fusion path contributes exactly nothing; used to compare a
    /// fused network against one built with `fusion_blocks: false`.
    pub fn silence_fusion_blocks(&self) {
        if let Body::Multistage { fusions, .. } = &self.body {
            for f in fusions {
                f.silence();
            }
        }
    }

    fn check_input(&self, name: &str, x: &Tensor<f32>) -> Result<()> {
        let s = x.shape();
        let d = self.config.input_shape;
        if s.len() != 5 || s[1] != 1 || s[2] != d[0] || s[3] != d[1] || s[4] != d[2] {
            return Err(Error::Config(format!(
                "{name} input shape {s:?} does not match configured [batch, 1, {}, {}, {}]",
                d[0], d[1], d[2]
            )));
        }
        Ok(())
    }

    fn require<'a>(
        &self,
        which: &str,
        x: Option<&'a Tensor<f32>>,
    ) -> Result<&'a Tensor<f32>> {
        x.ok_or_else(|| {
            Error::Config(format!(
                "strategy {} requires a {which} input",
                self.config.strategy.name()
            ))
        })
    }

    /// Classification logits `[batch, 2]` for the configured strategy.
    ///
    /// For the late strategy this is the inference-time decision score
    /// `ln(mean of the two branch softmax distributions)`; it is computed
    /// outside the gradient graph (training optimizes the two branch heads
    /// directly via [`Network::late_branch_logits`]).
    pub fn forward(
        &self,
        ct: Option<&Tensor<f32>>,
        pet: Option<&Tensor<f32>>,
    ) -> Result<Tensor<f32>> {
        match &self.body {
            Body::Multistage { b1, b2, fusions, head } => {
                let ct = self.require("CT", ct)?;
                let pet = self.require("PET", pet)?;
                self.check_input("CT", ct)?;
                self.check_input("PET", pet)?;
                let mut a = ct.clone();
                let mut b = pet.clone();
                for s in 0..self.config.stages as usize {
                    a = b1.forward_stage(s, &a)?;
                    b = b2.forward_stage(s, &b)?;
                    if let Some(f) = fusions.get(s) {
                        let (na, nb) = f.forward(&a, &b)?;
                        a = na;
                        b = nb;
                    }
                }
                let feat = ops::global_avg_pool(&ops::concat_axis1(&[&a, &b])?)?;
                head.forward(&feat)
            }
            Body::SingleBranch { branch, head } => {
                let x = match self.config.strategy {
                    Strategy::UnimodalCt => {
                        let ct = self.require("CT", ct)?;
                        self.check_input("CT", ct)?;
                        ct.clone()
                    }
                    Strategy::UnimodalPet => {
                        let pet = self.require("PET", pet)?;
                        self.check_input("PET", pet)?;
                        pet.clone()
                    }
                    Strategy::Early => {
                        let ct = self.require("CT", ct)?;
                        let pet = self.require("PET", pet)?;
                        self.check_input("CT", ct)?;
                        self.check_input("PET", pet)?;
                        ops::mul(ct, pet)?
                    }
                    _ => unreachable!("single-branch body implies a single-branch strategy"),
                };
                let feat = ops::global_avg_pool(&branch.forward_all(&x)?)?;
                head.forward(&feat)
            }
            Body::Late { .. } => {
                let _guard = NoGradGuard::new();
                let (l1, l2) = self.late_branch_logits(ct, pet)?;
                let p1 = ops::softmax_rows(&l1.values(), 2);
                let p2 = ops::softmax_rows(&l2.values(), 2);
                let avg_log: Vec<f32> = p1
                    .iter()
                    .zip(&p2)
                    .map(|(&a, &b)| (0.5 * (a + b)).ln())
                    .collect();
                Tensor::from_values(l1.shape(), avg_log)
            }
            Body::SingleFusion { b1, b2, gmu, head } => {
                let ct = self.require("CT", ct)?;
                let pet = self.require("PET", pet)?;
                self.check_input("CT", ct)?;
                self.check_input("PET", pet)?;
                let v1 = ops::global_avg_pool(&b1.forward_all(ct)?)?;
                let v2 = ops::global_avg_pool(&b2.forward_all(pet)?)?;
                head.forward(&gmu.forward(&v1, &v2)?)
            }
        }
    }

    /// Per-branch logits of the late strategy, for training its two heads.
    pub fn late_branch_logits(
        &self,
        ct: Option<&Tensor<f32>>,
        pet: Option<&Tensor<f32>>,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let Body::Late { b1, head1, b2, head2 } = &self.body else {
            return Err(Error::Config(format!(
                "late_branch_logits called on strategy {}",
                self.config.strategy.name()
            )));
        };
        let ct = self.require("CT", ct)?;
        let pet = self.require("PET", pet)?;
        self.check_input("CT", ct)?;
        self.check_input("PET", pet)?;
        let l1 = head1.forward(&ops::global_avg_pool(&b1.forward_all(ct)?)?)?;
        let l2 = head2.forward(&ops::global_avg_pool(&b2.forward_all(pet)?)?)?;
        Ok((l1, l2))
    }

    /// Structural facts consumed by the fusion-graph tracer: per stage, the
    /// number of trainable layers on each branch's main path and on the
    /// squeeze path, derived from the concrete body.
    pub(crate) fn fusion_structure(&self) -> Option<FusionStructure> {
        match &self.body {
            Body::Multistage { b1, fusions, .. } => Some(FusionStructure {
                stages: b1.stages.len(),
                // Main path of one block: conv1 and conv2 (shortcut and BN
                // do not add depth on the main-path convention).
                main_convs_per_stage: b1.stages.iter().map(|blocks| 2 * blocks.len()).collect(),
                fused_stages: fusions.len(),
                squeeze_convs: 1,
            }),
            _ => None,
        }
    }
}

/// See [`Network::fusion_structure`].
pub(crate) struct FusionStructure {
    pub stages: usize,
    pub main_convs_per_stage: Vec<usize>,
    pub fused_stages: usize,
    /// Trainable convolutions between a stage output and the product node.
    pub squeeze_convs: usize,
}
