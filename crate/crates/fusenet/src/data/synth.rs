//! Synthetic paired-volume generator.
//!
//! Each study carries one smooth blob placed at a random spot inside a
//! two-lobe mask, on top of low-amplitude cosine texture. The blob's
//! amplitude in the first volume is `s * delta + noise` and in the second
//! `s * (2y - 1) * delta + noise`, with `s` a random sign and `y` the
//! label: marginally each volume's amplitude is distributed identically
//! for both classes, so neither volume alone predicts `y`, while the
//! *sign of the amplitude product* equals `2y - 1` up to noise. Any
//! classifier that reads one modality at a time is near chance by
//! construction; only cross-modal features solve the task.
//!
//! Volumes are written as raw scanner-style intensities (CT needs the
//! rescale to Hounsfield units, PET needs the SUV conversion, ~15% of CTs
//! are photometrically inverted, and the PET grid is offset from the CT
//! grid), so the full preprocessing pipeline is exercised end to end.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::data::manifest::{write_manifest, ManifestStudy, StudyMeta};
use crate::data::mvol::write_mvol;
use crate::error::{Error, Result};
use crate::preprocess::AcquisitionMeta;
use crate::util::mix_seed;
use crate::volume::{Modality, Photometric, Volume};

/// Raw CT voxel spacing in mm; deliberately different from the pipeline's
/// target spacing so resampling does real work.
const CT_SPACING: [f32; 3] = [1.0, 1.0, 3.0];

/// PET grid offset in mm relative to the CT grid: half a target voxel in
/// x and one target slice in z, so alignment does real work too.
const PET_ORIGIN: [f32; 3] = [0.4885, 0.0, 3.27];

/// Fraction of studies whose CT is stored photometrically inverted.
const INVERTED_FRACTION: f64 = 0.15;

/// Background texture amplitude (fields are ~0.5 plus or minus this).
const TEXTURE_AMPLITUDE: f64 = 0.05;

fn default_shape() -> [usize; 3] {
    [32, 32, 32]
}

fn default_radius() -> f64 {
    6.0
}

fn default_amplitude() -> f64 {
    0.25
}

fn default_sigma() -> f64 {
    0.125
}

fn default_balance() -> f64 {
    0.5
}

/// Generator parameters. `amplitude` is the blob's signal level delta;
/// `noise_sigma` is the per-volume Gaussian amplitude noise. The task's
/// intrinsic difficulty is set by `amplitude / noise_sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_studies: usize,
    #[serde(default = "default_shape")]
    pub volume_shape: [usize; 3],
    #[serde(default = "default_radius")]
    pub blob_radius_voxels: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_balance")]
    pub class_balance: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_studies == 0 {
            return Err(Error::Config("n_studies must be positive".into()));
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Config(format!("amplitude must be positive, got {}", self.amplitude)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return Err(Error::Config(format!(
                "class_balance must lie strictly between 0 and 1, got {}",
                self.class_balance
            )));
        }
        if !(self.blob_radius_voxels >= 1.0) {
            return Err(Error::Config(format!(
                "blob_radius_voxels must be at least 1, got {}",
                self.blob_radius_voxels
            )));
        }
        let need = (4.0 * self.blob_radius_voxels).ceil() as usize;
        if self.volume_shape.iter().any(|&n| n < need) {
            return Err(Error::Config(format!(
                "volume shape {:?} is too small for blob radius {} (needs at least {need} per axis)",
                self.volume_shape, self.blob_radius_voxels
            )));
        }
        Ok(())
    }
}

/// Ground truth behind one generated study, for analysis and tests; never
/// serialized into the dataset.
#[derive(Clone, Copy, Debug)]
pub struct SynthTruth {
    pub sign: f64,
    pub ct_amplitude: f64,
    pub pet_amplitude: f64,
    pub center_mm: [f64; 3],
}

/// One generated study with volumes in memory.
#[derive(Debug)]
pub struct SynthStudy {
    pub id: String,
    pub label: u8,
    pub ct: Volume,
    pub pet: Volume,
    pub mask: Volume,
    pub meta: StudyMeta,
    pub truth: SynthTruth,
}

impl From<SynthStudy> for crate::data::manifest::RawStudy {
    fn from(s: SynthStudy) -> Self {
        crate::data::manifest::RawStudy {
            id: s.id,
            label: s.label,
            ct: s.ct,
            pet: s.pet,
            mask: s.mask,
            meta: s.meta.acquisition,
        }
    }
}

struct TextureField {
    // Per component: direction, wavelength mm, phase.
    components: [([f64; 3], f64, f64); 3],
}

impl TextureField {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut components = [([0.0; 3], 0.0, 0.0); 3];
        for c in &mut components {
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let wavelength = rng.gen_range(20.0..60.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            *c = (dir, wavelength, phase);
        }
        TextureField { components }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        let mut sum = 0.0;
        for (dir, wavelength, phase) in &self.components {
            let proj = p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2];
            sum += (std::f64::consts::TAU * proj / wavelength + phase).cos();
        }
        TEXTURE_AMPLITUDE * sum / 3.0
    }
}

/// Two-lobe "lung" region in voxel coordinates: centers and semi-axes of
/// the two ellipsoids for the given volume shape.
fn lobes(shape: [usize; 3]) -> [([f64; 3], [f64; 3]); 2] {
    let (d, h, w) = (shape[0] as f64, shape[1] as f64, shape[2] as f64);
    let semi = [0.40 * d, 0.30 * h, 0.16 * w];
    let zc = 0.5 * (d - 1.0);
    let yc = 0.5 * (h - 1.0);
    [
        ([zc, yc, 0.30 * (w - 1.0)], semi),
        ([zc, yc, 0.70 * (w - 1.0)], semi),
    ]
}

fn inside_lobes(shape: [usize; 3], d: usize, h: usize, w: usize) -> bool {
    let p = [d as f64, h as f64, w as f64];
    lobes(shape).iter().any(|(c, s)| {
        let mut q = 0.0;
        for a in 0..3 {
            let t = (p[a] - c[a]) / s[a];
            q += t * t;
        }
        q <= 1.0
    })
}

/// Generates study `index` of the dataset. Each study derives its own RNG
/// stream from `(params.seed, index)`, so studies can be generated in any
/// order or in parallel with identical results.
pub fn generate_study(p: &SynthParams, index: usize) -> Result<SynthStudy> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(p.seed, index as u64));
    let shape = p.volume_shape;

    // Draw order is fixed; changing it changes every generated dataset.
    let label = (rng.gen::<f64>() < p.class_balance) as u8;
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let lobe = lobes(shape)[rng.gen_range(0..2usize)];
    let mut center_voxel = [0.0f64; 3];
    for a in 0..3 {
        center_voxel[a] = lobe.0[a] + rng.gen_range(-0.5..0.5) * lobe.1[a];
    }
    let noise = Normal::new(0.0, p.noise_sigma)
        .map_err(|e| Error::Config(format!("invalid noise sigma: {e}")))?;
    let ct_amplitude = sign * p.amplitude + noise.sample(&mut rng);
    let pet_amplitude = sign * (2.0 * label as f64 - 1.0) * p.amplitude + noise.sample(&mut rng);
    let ct_texture = TextureField::draw(&mut rng);
    let pet_texture = TextureField::draw(&mut rng);
    let inverted = rng.gen::<f64>() < INVERTED_FRACTION;
    let body_weight_kg = rng.gen_range(55.0..95.0);
    let injected_dose_mbq = rng.gen_range(250.0..450.0);

    let meta = AcquisitionMeta {
        rescale_slope: 1.0,
        rescale_intercept: -1024.0,
        injected_dose_mbq,
        body_weight_kg,
        injection_to_scan_min: 60.0,
        tracer_half_life_min: crate::preprocess::FDG_HALF_LIFE_MIN,
    };

    // Blob center in world mm on the CT grid; radii in mm per axis.
    let center_mm = [
        center_voxel[2] * CT_SPACING[0] as f64,
        center_voxel[1] * CT_SPACING[1] as f64,
        center_voxel[0] * CT_SPACING[2] as f64,
    ];
    let rho = [
        p.blob_radius_voxels * CT_SPACING[0] as f64,
        p.blob_radius_voxels * CT_SPACING[1] as f64,
        p.blob_radius_voxels * CT_SPACING[2] as f64,
    ];
    let blob = |p_mm: [f64; 3]| -> f64 {
        let mut q = 0.0;
        for a in 0..3 {
            let t = (p_mm[a] - center_mm[a]) / rho[a];
            q += t * t;
        }
        (-q).exp()
    };

    let numel = shape[0] * shape[1] * shape[2];
    let mut ct_raw = Vec::with_capacity(numel);
    let mut pet_raw = Vec::with_capacity(numel);
    let mut mask_data = Vec::with_capacity(numel);
    let decay = (-meta.injection_to_scan_min / meta.tracer_half_life_min).exp2();
    let raw_per_suv = meta.injected_dose_mbq * 1e6 * decay / (meta.body_weight_kg * 1000.0);
    for d in 0..shape[0] {
        for h in 0..shape[1] {
            for w in 0..shape[2] {
                let ct_mm = [
                    w as f64 * CT_SPACING[0] as f64,
                    h as f64 * CT_SPACING[1] as f64,
                    d as f64 * CT_SPACING[2] as f64,
                ];
                let pet_mm = [
                    PET_ORIGIN[0] as f64 + ct_mm[0],
                    PET_ORIGIN[1] as f64 + ct_mm[1],
                    PET_ORIGIN[2] as f64 + ct_mm[2],
                ];
                let f_ct = 0.5 + ct_texture.at(ct_mm) + ct_amplitude * blob(ct_mm);
                let f_pet = 0.5 + pet_texture.at(pet_mm) + pet_amplitude * blob(pet_mm);
                ct_raw.push((f_ct * 2048.0) as f32);
                pet_raw.push((f_pet * 20.0 * raw_per_suv) as f32);
                mask_data.push(inside_lobes(shape, d, h, w) as u8 as f32);
            }
        }
    }

    let photometric = if inverted {
        let (mut min, mut max) = (f32::INFINITY, f32::NEG_INFINITY);
        for &x in &ct_raw {
            min = min.min(x);
            max = max.max(x);
        }
        let pivot = max + min;
        for x in &mut ct_raw {
            *x = pivot - *x;
        }
        Photometric::Inverted
    } else {
        Photometric::Standard
    };

    let ct = Volume::new(ct_raw, shape, CT_SPACING, [0.0; 3], Modality::Ct, photometric)?;
    let pet = Volume::new(pet_raw, shape, CT_SPACING, PET_ORIGIN, Modality::Pet, Photometric::Standard)?;
    let mask = Volume::new(mask_data, shape, CT_SPACING, [0.0; 3], Modality::Mask, Photometric::Standard)?;
    Ok(SynthStudy {
        id: format!("synth-{index:04}"),
        label,
        ct,
        pet,
        mask,
        meta: StudyMeta { acquisition: meta, photometric },
        truth: SynthTruth { sign, ct_amplitude, pet_amplitude, center_mm },
    })
}

/// Generates the whole dataset in memory.
pub fn generate(p: &SynthParams) -> Result<Vec<SynthStudy>> {
    p.validate()?;
    (0..p.n_studies).map(|i| generate_study(p, i)).collect()
}

/// Generates the dataset and writes it under `dir` as MVOL files plus a
/// manifest; returns the manifest path.
pub fn write_synth_dataset(p: &SynthParams, dir: &Path) -> Result<PathBuf> {
    p.validate()?;
    let volumes = dir.join("volumes");
    std::fs::create_dir_all(&volumes).map_err(|e| Error::io(&volumes, e))?;
    let mut entries = Vec::with_capacity(p.n_studies);
    for i in 0..p.n_studies {
        let study = generate_study(p, i)?;
        let rel = |kind: &str| format!("volumes/{}_{kind}.mvol", study.id);
        write_mvol(&study.ct, &dir.join(rel("ct")))?;
        write_mvol(&study.pet, &dir.join(rel("pet")))?;
        write_mvol(&study.mask, &dir.join(rel("mask")))?;
        entries.push(ManifestStudy {
            id: study.id.clone(),
            ct_path: rel("ct"),
            pet_path: rel("pet"),
            mask_path: rel("mask"),
            label: study.label,
            meta: study.meta,
        });
    }
    let manifest = dir.join("manifest.json");
    write_manifest(&entries, &manifest)?;
    Ok(manifest)
}
