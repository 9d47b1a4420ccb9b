//! Layer building blocks with deterministic, name-keyed initialization, and
//! the parameter registry that gives every trainable tensor and running
//! buffer a stable topological position for checkpointing.

use std::cell::RefCell;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::ops::{self, BatchNormState, BnMode, ConvParams};
use crate::tensor::Tensor;
use crate::util::mix_seed_str;

/// One registered value: either a trainable parameter or a non-trainable
/// running buffer (batch-norm statistics).
pub(crate) enum Slot {
    Param(Tensor<f32>),
    Buffer(Rc<RefCell<Vec<f32>>>),
}

pub(crate) struct Entry {
    pub name: String,
    pub slot: Slot,
}

/// Registry of every stateful value in a network, in construction order.
/// Checkpoints serialize entries in exactly this order; initialization is
/// keyed by entry *name*, so two configurations that share a layer name
/// initialize it identically regardless of what else they contain.
#[derive(Default)]
pub struct ParamRegistry {
    pub(crate) entries: Vec<Entry>,
}

impl ParamRegistry {
    pub(crate) fn add_param(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.entries.push(Entry { name: name.into(), slot: Slot::Param(t) });
    }

    pub(crate) fn add_buffer(&mut self, name: impl Into<String>, b: Rc<RefCell<Vec<f32>>>) {
        self.entries.push(Entry { name: name.into(), slot: Slot::Buffer(b) });
    }

    /// Trainable parameters in registration order.
    pub fn trainable(&self) -> Vec<Tensor<f32>> {
        self.entries
            .iter()
            .filter_map(|e| match &e.slot {
                Slot::Param(t) => Some(t.clone()),
                Slot::Buffer(_) => None,
            })
            .collect()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match &e.slot {
                Slot::Param(t) => t.numel(),
                Slot::Buffer(_) => 0,
            })
            .sum()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    /// Name and shape of every trainable parameter, in registration order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .filter_map(|e| match &e.slot {
                Slot::Param(t) => Some((e.name.clone(), t.shape().to_vec())),
                Slot::Buffer(_) => None,
            })
            .collect()
    }
}

/// He-style normal draw: std = sqrt(2 / fan_in), one independent ChaCha
/// stream per parameter name so shared names initialize identically across
/// model variants built from the same seed.
fn he_init(seed: u64, name: &str, fan_in: usize, n: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed_str(seed, name));
    (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
}

pub(crate) struct Conv3dLayer {
    pub params: ConvParams<f32>,
}

impl Conv3dLayer {
    /// Convolution without bias (batch norm always follows in this crate's
    /// blocks, making a bias redundant).
    pub fn new(
        reg: &mut ParamRegistry,
        seed: u64,
        name: &str,
        in_chan: usize,
        out_chan: usize,
        ksize: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        let fan_in = in_chan * ksize[0] * ksize[1] * ksize[2];
        let kname = format!("{name}.kernel");
        let kernel = Tensor::param(
            &[out_chan, in_chan, ksize[0], ksize[1], ksize[2]],
            he_init(seed, &kname, fan_in, out_chan * fan_in),
        )?;
        reg.add_param(kname, kernel.clone());
        Ok(Conv3dLayer { params: ConvParams::new(kernel, None, stride, padding)? })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        ops::conv3d(x, &self.params)
    }
}

pub(crate) struct BnLayer {
    pub state: BatchNormState<f32>,
}

impl BnLayer {
    pub fn new(reg: &mut ParamRegistry, name: &str, chan: usize) -> Result<Self> {
        let gamma = Tensor::param(&[chan], vec![1.0; chan])?;
        let beta = Tensor::param(&[chan], vec![0.0; chan])?;
        reg.add_param(format!("{name}.gamma"), gamma.clone());
        reg.add_param(format!("{name}.beta"), beta.clone());
        let state = BatchNormState::new(gamma, beta, 0.1, 1e-5)?;
        reg.add_buffer(format!("{name}.running_mean"), Rc::clone(&state.running_mean));
        reg.add_buffer(format!("{name}.running_var"), Rc::clone(&state.running_var));
        Ok(BnLayer { state })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        ops::batchnorm3d(x, &self.state)
    }

    pub fn set_mode(&self, mode: BnMode) {
        self.state.mode.set(mode);
    }
}

pub(crate) struct LinearLayer {
    pub w: Tensor<f32>,
    pub b: Option<Tensor<f32>>,
}

impl LinearLayer {
    pub fn new(
        reg: &mut ParamRegistry,
        seed: u64,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
    ) -> Result<Self> {
        let wname = format!("{name}.weight");
        let w = Tensor::param(
            &[out_features, in_features],
            he_init(seed, &wname, in_features, out_features * in_features),
        )?;
        reg.add_param(wname, w.clone());
        let b = if bias {
            let b = Tensor::param(&[out_features], vec![0.0; out_features])?;
            reg.add_param(format!("{name}.bias"), b.clone());
            Some(b)
        } else {
            None
        };
        Ok(LinearLayer { w, b })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        ops::linear(x, &self.w, self.b.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_keyed_by_name_not_registration_order() {
        let mut r1 = ParamRegistry::default();
        let mut r2 = ParamRegistry::default();
        let a1 = Conv3dLayer::new(&mut r1, 7, "x", 4, 8, [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
        // Same name registered after unrelated layers: identical values.
        Conv3dLayer::new(&mut r2, 7, "other", 2, 2, [1, 1, 1], [1, 1, 1], [0, 0, 0]).unwrap();
        let a2 = Conv3dLayer::new(&mut r2, 7, "x", 4, 8, [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
        assert_eq!(a1.params.kernel.values_vec(), a2.params.kernel.values_vec());
    }

    #[test]
    fn different_seeds_give_different_values() {
        let mut r = ParamRegistry::default();
        let a = Conv3dLayer::new(&mut r, 1, "x", 4, 8, [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
        let b = Conv3dLayer::new(&mut r, 2, "x", 4, 8, [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
        assert_ne!(a.params.kernel.values_vec(), b.params.kernel.values_vec());
    }

    #[test]
    fn he_scale_tracks_fan_in() {
        // Empirical std over many draws should approximate sqrt(2 / fan_in).
        let v = he_init(3, "k", 200, 20_000);
        let mean: f64 = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        let var: f64 =
            v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let expected = 2.0 / 200.0;
        assert!((var - expected).abs() < 0.1 * expected, "var {var} vs {expected}");
    }

    #[test]
    fn registry_counts_only_trainable_scalars() {
        let mut reg = ParamRegistry::default();
        Conv3dLayer::new(&mut reg, 7, "c", 1, 2, [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
        BnLayer::new(&mut reg, "bn", 2).unwrap();
        // Kernel 2*1*27 = 54, gamma 2, beta 2; running buffers excluded.
        assert_eq!(reg.parameter_count(), 58);
        assert_eq!(reg.trainable().len(), 3);
        assert_eq!(reg.entries.len(), 5);
    }
}
