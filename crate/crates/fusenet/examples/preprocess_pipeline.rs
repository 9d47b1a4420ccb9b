//! Walks one study through every preprocessing step, printing the
//! geometry and intensity range after each one. The same sequence runs
//! inside `preprocess_study`; here it is unrolled for inspection.

use fusenet::data::synth::{generate, SynthParams};
use fusenet::preprocess::{
    align, apply_mask_and_crop, clip_normalize, fix_photometric, resample, resample_to_grid,
    to_hu, to_suv, TARGET_SPACING,
};
use fusenet::volume::Volume;

fn describe(label: &str, v: &Volume) {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &x in &v.data {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    println!(
        "  {label:<18} dims {:>2?} spacing {:>5.2?} origin {:>6.2?} values [{lo:.2}, {hi:.2}]",
        v.dims, v.spacing, v.origin
    );
}

fn main() {
    let params = SynthParams {
        n_studies: 1,
        volume_shape: [32, 32, 32],
        blob_radius_voxels: 6.0,
        amplitude: 0.25,
        noise_sigma: 0.125,
        class_balance: 0.5,
        seed: 14,
    };
    let study = generate(&params).unwrap().pop().unwrap();
    let meta = study.meta.acquisition;
    println!("study {} (label {})", study.id, study.label);

    println!("\nraw scanner output:");
    describe("ct", &study.ct);
    describe("pet", &study.pet);
    describe("mask", &study.mask);

    // Photometric repair and physical calibration. CT becomes Hounsfield
    // units, PET becomes standardized uptake values.
    let ct = to_hu(fix_photometric(study.ct), &meta).unwrap();
    let pet = to_suv(fix_photometric(study.pet), &meta).unwrap();
    println!("\ncalibrated:");
    describe("ct [HU]", &ct);
    describe("pet [SUV]", &pet);

    // Common grid: resample both modalities (and the mask, which rides on
    // the CT grid) to the target spacing, then crop to the shared extent.
    let ct = resample(ct, TARGET_SPACING).unwrap();
    let pet = resample(pet, TARGET_SPACING).unwrap();
    let mask = resample(study.mask, TARGET_SPACING).unwrap();
    println!("\nresampled to {TARGET_SPACING:?} mm:");
    describe("ct", &ct);
    describe("pet", &pet);

    let (ct, pet) = align(ct, pet).unwrap();
    let mask = resample_to_grid(&mask, ct.origin, ct.spacing, ct.dims).unwrap();
    println!("\naligned to shared physical extent:");
    describe("ct", &ct);
    describe("pet", &pet);

    let pair = apply_mask_and_crop(ct, pet, mask, [16, 32, 32]).unwrap();
    println!("\nmasked and cropped around the tumor (box {:?}):", pair.crop_box);
    describe("ct", &pair.ct);
    describe("pet", &pair.pet);

    let ct = clip_normalize(pair.ct).unwrap();
    let pet = clip_normalize(pair.pet).unwrap();
    println!("\nclipped and normalized to [0, 1]:");
    describe("ct", &ct);
    describe("pet", &pet);
}
