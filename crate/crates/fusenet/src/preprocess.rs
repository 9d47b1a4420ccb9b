//! The six-step pipeline turning raw paired volumes plus acquisition
//! metadata into aligned, masked, clipped, [0,1]-normalized network inputs:
//!
//! 1. photometric standardization,
//! 2. intensity calibration (CT to Hounsfield units, PET to SUV),
//! 3. resampling to a common voxel spacing,
//! 4. rigid alignment onto the grid where both scans overlap,
//! 5. lung-mask application and bounding-box crop,
//! 6. clipping and normalization to `[0, 1]`.
//!
//! Transformations consume their input volume and return a new one; every
//! step is deterministic, so identical inputs produce bitwise-identical
//! outputs. Interpolation arithmetic runs in f64 and stores f32.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{CropBox, Modality, Photometric, Volume};

/// CT intensities are clipped to this Hounsfield range before
/// normalization; the lower bound doubles as the out-of-mask fill.
pub const CT_CLIP: [f32; 2] = [-1024.0, 1024.0];

/// SUV clip range for PET, lower bound again the out-of-mask fill.
pub const PET_CLIP: [f32; 2] = [0.0, 20.0];

/// Common voxel spacing (x, y, z) in mm that both scans are resampled to.
pub const TARGET_SPACING: [f32; 3] = [0.977, 0.977, 3.27];

/// Half-life of [18F]FDG in minutes, the default tracer.
pub const FDG_HALF_LIFE_MIN: f64 = 109.77;

fn default_half_life() -> f64 {
    FDG_HALF_LIFE_MIN
}

/// Scanner-side calibration values needed to turn raw stored intensities
/// into physical units.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub injected_dose_mbq: f64,
    pub body_weight_kg: f64,
    pub injection_to_scan_min: f64,
    #[serde(default = "default_half_life")]
    pub tracer_half_life_min: f64,
}

/// Maps an inverted-photometric volume to standard via `max + min - x`;
/// standard volumes pass through untouched.
pub fn fix_photometric(mut v: Volume) -> Volume {
    if v.photometric == Photometric::Inverted {
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        for &x in &v.data {
            min = min.min(x);
            max = max.max(x);
        }
        let pivot = max + min;
        for x in &mut v.data {
            *x = pivot - *x;
        }
        v.photometric = Photometric::Standard;
    }
    v
}

/// Calibrates raw CT intensities to Hounsfield units:
/// `hu = slope * raw + intercept`.
pub fn to_hu(mut v: Volume, meta: &AcquisitionMeta) -> Result<Volume> {
    if v.modality != Modality::Ct {
        return Err(Error::Data(format!(
            "Hounsfield conversion applies to CT volumes, got {:?}",
            v.modality
        )));
    }
    for x in &mut v.data {
        *x = (meta.rescale_slope * *x as f64 + meta.rescale_intercept) as f32;
    }
    Ok(v)
}

/// Converts PET activity concentration (Bq/ml) to body-weight standardized
/// uptake values, decay-correcting the injected dose to scan time:
/// `suv = raw * weight_g / (dose_bq * 2^(-t / half_life))`.
pub fn to_suv(mut v: Volume, meta: &AcquisitionMeta) -> Result<Volume> {
    if v.modality != Modality::Pet {
        return Err(Error::Data(format!("SUV conversion applies to PET volumes, got {:?}", v.modality)));
    }
    if !(meta.injected_dose_mbq > 0.0) || !(meta.body_weight_kg > 0.0) {
        return Err(Error::Data(format!(
            "SUV conversion needs positive dose and weight, got {} MBq / {} kg",
            meta.injected_dose_mbq, meta.body_weight_kg
        )));
    }
    if !(meta.tracer_half_life_min > 0.0) {
        return Err(Error::Data(format!(
            "tracer half-life must be positive, got {} min",
            meta.tracer_half_life_min
        )));
    }
    let decay = (-meta.injection_to_scan_min / meta.tracer_half_life_min).exp2();
    let factor = meta.body_weight_kg * 1000.0 / (meta.injected_dose_mbq * 1e6 * decay);
    for x in &mut v.data {
        *x = (*x as f64 * factor) as f32;
    }
    Ok(v)
}

/// Resamples `v` onto `target_origin`/`target_spacing` with the given
/// voxel counts (data order `[depth, height, width]`). Sample positions are
/// computed in index space, so a grid that coincides with the source grid
/// reproduces source voxels bitwise. Masks interpolate nearest-neighbor to
/// stay binary; everything else trilinear.
pub fn resample_to_grid(
    v: &Volume,
    target_origin: [f32; 3],
    target_spacing: [f32; 3],
    target_dims: [usize; 3],
) -> Result<Volume> {
    let n_out = [target_dims[2], target_dims[1], target_dims[0]];
    let mut ratio = [0f64; 3];
    let mut offset = [0f64; 3];
    for a in 0..3 {
        ratio[a] = target_spacing[a] as f64 / v.spacing[a] as f64;
        offset[a] = (target_origin[a] as f64 - v.origin[a] as f64) / v.spacing[a] as f64;
    }
    let nearest = v.modality == Modality::Mask;
    let mut data = Vec::with_capacity(target_dims[0] * target_dims[1] * target_dims[2]);
    for d in 0..n_out[2] {
        let uz = offset[2] + d as f64 * ratio[2];
        for h in 0..n_out[1] {
            let uy = offset[1] + h as f64 * ratio[1];
            for w in 0..n_out[0] {
                let ux = offset[0] + w as f64 * ratio[0];
                let val = if nearest {
                    v.sample_index_nearest([ux, uy, uz])
                } else {
                    v.sample_index_trilinear([ux, uy, uz]) as f32
                };
                data.push(val);
            }
        }
    }
    let mut out = Volume::new(data, target_dims, target_spacing, target_origin, v.modality, v.photometric)?;
    out.normalized = v.normalized;
    Ok(out)
}

/// Number of steps of size `step` that fit in `extent`, inclusive of the
/// start point. The slack absorbs rounding when `extent` is an exact
/// multiple of `step`.
fn grid_count(extent: f64, step: f64) -> usize {
    (extent / step + 1e-6).floor() as usize + 1
}

/// Resamples onto a grid with `target` spacing covering the same physical
/// extent, keeping the origin. A target equal to the source spacing is an
/// exact no-op.
pub fn resample(v: Volume, target: [f32; 3]) -> Result<Volume> {
    if target.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Config(format!("target spacing {target:?} must be positive")));
    }
    let n_in = v.counts_xyz();
    let mut counts = [0usize; 3];
    for a in 0..3 {
        let extent = (n_in[a] - 1) as f64 * v.spacing[a] as f64;
        counts[a] = grid_count(extent, target[a] as f64);
    }
    resample_to_grid(&v, v.origin, target, [counts[2], counts[1], counts[0]])
}

/// The grid on which two volumes overlap: per world axis, the latest
/// origin and the earliest end. Requires equal spacing (tolerance 1e-6).
fn intersection_grid(a: &Volume, b: &Volume) -> Result<([f32; 3], [usize; 3])> {
    let mut origin = [0f32; 3];
    let mut counts = [0usize; 3];
    let (ea, eb) = (a.end_xyz(), b.end_xyz());
    for ax in 0..3 {
        let (sa, sb) = (a.spacing[ax] as f64, b.spacing[ax] as f64);
        if (sa - sb).abs() > 1e-6 {
            return Err(Error::Data(format!(
                "cannot align volumes with different spacing on axis {ax}: {sa} vs {sb}"
            )));
        }
        let lo = (a.origin[ax] as f64).max(b.origin[ax] as f64);
        let hi = ea[ax].min(eb[ax]);
        if lo > hi + 1e-9 {
            return Err(Error::Data(format!(
                "volumes have no physical overlap on axis {ax}: [{lo}, {hi}]"
            )));
        }
        origin[ax] = lo as f32;
        counts[ax] = grid_count(hi - lo, sa);
    }
    Ok((origin, counts))
}

/// Resamples both volumes onto the grid where their physical extents
/// intersect, yielding identical shape, spacing, and origin. Disjoint
/// extents are a data error. Volumes already on the same grid pass
/// through bitwise.
pub fn align(ct: Volume, pet: Volume) -> Result<(Volume, Volume)> {
    let (origin, counts) = intersection_grid(&ct, &pet)?;
    let dims = [counts[2], counts[1], counts[0]];
    let spacing = ct.spacing;
    let ct_out = resample_to_grid(&ct, origin, spacing, dims)?;
    let pet_out = resample_to_grid(&pet, origin, spacing, dims)?;
    Ok((ct_out, pet_out))
}

fn grids_match(a: &Volume, b: &Volume) -> bool {
    a.dims == b.dims
        && (0..3).all(|ax| {
            (a.spacing[ax] - b.spacing[ax]).abs() <= 1e-4
                && (a.origin[ax] - b.origin[ax]).abs() <= 1e-4
        })
}

/// A study after the full pipeline: CT, PET, and mask on one grid, and the
/// bounding box (in pre-crop voxel indices) that was cut out.
#[derive(Debug)]
pub struct PreprocessedPair {
    pub ct: Volume,
    pub pet: Volume,
    pub mask: Volume,
    pub crop_box: CropBox,
}

/// Resizes to exactly `out_dims` voxels, spreading the input's physical
/// extent over the output grid (output index `j` samples input index
/// `j * (n_in - 1) / (n_out - 1)`).
fn resize_to(v: &Volume, out_dims: [usize; 3]) -> Result<Volume> {
    let n_in = v.counts_xyz();
    let n_out = [out_dims[2], out_dims[1], out_dims[0]];
    let mut spacing = [0f32; 3];
    let mut ratio = [0f64; 3];
    for a in 0..3 {
        ratio[a] = if n_out[a] > 1 {
            (n_in[a] - 1) as f64 / (n_out[a] - 1) as f64
        } else {
            0.0
        };
        let s = v.spacing[a] as f64 * ratio[a];
        spacing[a] = if s > 0.0 { s as f32 } else { v.spacing[a] };
    }
    let nearest = v.modality == Modality::Mask;
    let mut data = Vec::with_capacity(out_dims[0] * out_dims[1] * out_dims[2]);
    for d in 0..n_out[2] {
        let uz = d as f64 * ratio[2];
        for h in 0..n_out[1] {
            let uy = h as f64 * ratio[1];
            for w in 0..n_out[0] {
                let ux = w as f64 * ratio[0];
                let val = if nearest {
                    v.sample_index_nearest([ux, uy, uz])
                } else {
                    v.sample_index_trilinear([ux, uy, uz]) as f32
                };
                data.push(val);
            }
        }
    }
    let mut out = Volume::new(data, out_dims, spacing, v.origin, v.modality, v.photometric)?;
    out.normalized = v.normalized;
    Ok(out)
}

fn crop(v: &Volume, b: &CropBox) -> Result<Volume> {
    let shape = b.shape();
    let mut data = Vec::with_capacity(shape[0] * shape[1] * shape[2]);
    for d in b.lo[0]..b.hi[0] {
        for h in b.lo[1]..b.hi[1] {
            let row = v.index(d, h, b.lo[2])..v.index(d, h, b.hi[2]);
            data.extend_from_slice(&v.data[row]);
        }
    }
    let origin = [
        v.origin[0] + b.lo[2] as f32 * v.spacing[0],
        v.origin[1] + b.lo[1] as f32 * v.spacing[1],
        v.origin[2] + b.lo[0] as f32 * v.spacing[2],
    ];
    let mut out = Volume::new(data, shape, v.spacing, origin, v.modality, v.photometric)?;
    out.normalized = v.normalized;
    Ok(out)
}

/// Fills voxels outside the mask with each modality's minimum clip value,
/// crops all three volumes to the mask's bounding box, and resizes the
/// crop to `out_shape` (`[depth, height, width]`). An empty mask is a data
/// error.
pub fn apply_mask_and_crop(
    ct: Volume,
    pet: Volume,
    mask: Volume,
    out_shape: [usize; 3],
) -> Result<PreprocessedPair> {
    if mask.modality != Modality::Mask {
        return Err(Error::Data(format!("mask volume has modality {:?}", mask.modality)));
    }
    if !grids_match(&ct, &pet) || !grids_match(&ct, &mask) {
        return Err(Error::Data(
            "mask application requires CT, PET, and mask on one grid; align them first".into(),
        ));
    }
    if out_shape.iter().any(|&n| n == 0) {
        return Err(Error::Config(format!("output shape {out_shape:?} contains a zero extent")));
    }

    let mut ct = ct;
    let mut pet = pet;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for d in 0..mask.dims[0] {
        for h in 0..mask.dims[1] {
            for w in 0..mask.dims[2] {
                let i = mask.index(d, h, w);
                if mask.data[i] > 0.5 {
                    any = true;
                    lo = [lo[0].min(d), lo[1].min(h), lo[2].min(w)];
                    hi = [hi[0].max(d + 1), hi[1].max(h + 1), hi[2].max(w + 1)];
                } else {
                    ct.data[i] = CT_CLIP[0];
                    pet.data[i] = PET_CLIP[0];
                }
            }
        }
    }
    if !any {
        return Err(Error::Data("mask selects no voxels".into()));
    }
    let crop_box = CropBox { lo, hi };
    let ct = resize_to(&crop(&ct, &crop_box)?, out_shape)?;
    let pet = resize_to(&crop(&pet, &crop_box)?, out_shape)?;
    let mask = resize_to(&crop(&mask, &crop_box)?, out_shape)?;
    Ok(PreprocessedPair { ct, pet, mask, crop_box })
}

/// Clips to the modality's fixed range (CT `[-1024, 1024]` HU, PET
/// `[0, 20]` SUV) and maps that range linearly onto `[0, 1]`. The mapping
/// uses the fixed clip bounds, not per-volume statistics, so intensities
/// stay comparable across studies. A second application is a no-op.
pub fn clip_normalize(mut v: Volume) -> Result<Volume> {
    if v.normalized {
        return Ok(v);
    }
    let [lo, hi] = match v.modality {
        Modality::Ct => CT_CLIP,
        Modality::Pet => PET_CLIP,
        Modality::Mask => {
            return Err(Error::Data("normalization applies to CT or PET volumes, not masks".into()))
        }
    };
    let span = hi - lo;
    for x in &mut v.data {
        *x = (x.clamp(lo, hi) - lo) / span;
    }
    v.normalized = true;
    Ok(v)
}

/// Runs the full pipeline on one study's raw volumes.
pub fn preprocess_study(
    ct: Volume,
    pet: Volume,
    mask: Volume,
    meta: &AcquisitionMeta,
    target_spacing: [f32; 3],
    out_shape: [usize; 3],
) -> Result<PreprocessedPair> {
    let ct = fix_photometric(ct);
    let pet = fix_photometric(pet);
    let ct = to_hu(ct, meta)?;
    let pet = to_suv(pet, meta)?;
    let ct = resample(ct, target_spacing)?;
    let pet = resample(pet, target_spacing)?;
    // The mask rides on the CT grid through every geometric step.
    let mask = resample(mask, target_spacing)?;
    let (ct, pet) = align(ct, pet)?;
    let mask = resample_to_grid(&mask, ct.origin, ct.spacing, ct.dims)?;
    let pair = apply_mask_and_crop(ct, pet, mask, out_shape)?;
    Ok(PreprocessedPair {
        ct: clip_normalize(pair.ct)?,
        pet: clip_normalize(pair.pet)?,
        mask: pair.mask,
        crop_box: pair.crop_box,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(data: Vec<f32>, dims: [usize; 3], modality: Modality) -> Volume {
        Volume::new(data, dims, [1.0; 3], [0.0; 3], modality, Photometric::Standard).unwrap()
    }

    fn meta() -> AcquisitionMeta {
        AcquisitionMeta {
            rescale_slope: 1.0,
            rescale_intercept: -1024.0,
            injected_dose_mbq: 350.0,
            body_weight_kg: 70.0,
            injection_to_scan_min: 0.0,
            tracer_half_life_min: FDG_HALF_LIFE_MIN,
        }
    }

    #[test]
    fn photometric_fix_reflects_inverted_and_passes_standard() {
        let std = vol(vec![0.0, 10.0], [1, 1, 2], Modality::Ct);
        let out = fix_photometric(std.clone());
        assert_eq!(out.data, std.data);

        let mut inv = vol(vec![0.0, 10.0], [1, 1, 2], Modality::Ct);
        inv.photometric = Photometric::Inverted;
        let fixed = fix_photometric(inv);
        assert_eq!(fixed.data, vec![10.0, 0.0]);
        assert_eq!(fixed.photometric, Photometric::Standard);

        // Second application sees a standard flag and changes nothing.
        let twice = fix_photometric(fixed.clone());
        assert_eq!(twice.data, fixed.data);
    }

    #[test]
    fn hounsfield_calibration_is_affine() {
        let m = meta();
        let v = to_hu(vol(vec![0.0, 1024.0], [1, 1, 2], Modality::Ct), &m).unwrap();
        assert_eq!(v.data, vec![-1024.0, 0.0]);
        let m2 = AcquisitionMeta { rescale_slope: 2.0, rescale_intercept: -1000.0, ..m };
        let v2 = to_hu(vol(vec![512.0], [1, 1, 1], Modality::Ct), &m2).unwrap();
        assert_eq!(v2.data, vec![24.0]);
        assert!(to_hu(vol(vec![0.0], [1, 1, 1], Modality::Pet), &m).is_err());
    }

    #[test]
    fn suv_dimensional_oracle() {
        // 5000 Bq/ml * 70000 g / (350e6 Bq * 2^0) = 1.0 exactly.
        let v = to_suv(vol(vec![5000.0, 0.0], [1, 1, 2], Modality::Pet), &meta()).unwrap();
        assert_eq!(v.data[0], 1.0);
        assert_eq!(v.data[1], 0.0);
    }

    #[test]
    fn suv_decay_correction_doubles_after_one_half_life() {
        let m0 = meta();
        let m1 = AcquisitionMeta { injection_to_scan_min: FDG_HALF_LIFE_MIN, ..m0 };
        let a = to_suv(vol(vec![5000.0], [1, 1, 1], Modality::Pet), &m0).unwrap();
        let b = to_suv(vol(vec![5000.0], [1, 1, 1], Modality::Pet), &m1).unwrap();
        assert!((b.data[0] / a.data[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn suv_rejects_nonpositive_dose_or_weight() {
        let bad = AcquisitionMeta { injected_dose_mbq: 0.0, ..meta() };
        assert!(to_suv(vol(vec![1.0], [1, 1, 1], Modality::Pet), &bad).is_err());
        let bad = AcquisitionMeta { body_weight_kg: -1.0, ..meta() };
        assert!(to_suv(vol(vec![1.0], [1, 1, 1], Modality::Pet), &bad).is_err());
    }

    #[test]
    fn resample_to_same_spacing_is_bitwise_noop() {
        let data: Vec<f32> = (0..60).map(|i| (i as f32 * 0.37).sin()).collect();
        let v = Volume::new(
            data.clone(),
            [3, 4, 5],
            [0.977, 0.977, 3.27],
            [5.0, -3.0, 11.0],
            Modality::Ct,
            Photometric::Standard,
        )
        .unwrap();
        let out = resample(v, [0.977, 0.977, 3.27]).unwrap();
        assert_eq!(out.dims, [3, 4, 5]);
        assert_eq!(
            out.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn resample_reproduces_affine_fields_and_sets_target_spacing() {
        // f(x,y,z) = 2x + 3y - z sampled on a (1,1,2)mm grid, resampled to
        // (0.5, 0.25, 0.5)mm: every interior point must be exact.
        let dims = [4usize, 5, 6];
        let spacing = [1.0f32, 1.0, 2.0];
        let mut data = Vec::new();
        for d in 0..dims[0] {
            for h in 0..dims[1] {
                for w in 0..dims[2] {
                    data.push(2.0 * w as f32 + 3.0 * h as f32 - 2.0 * d as f32);
                }
            }
        }
        let v = Volume::new(data, dims, spacing, [0.0; 3], Modality::Ct, Photometric::Standard)
            .unwrap();
        let out = resample(v, [0.5, 0.25, 0.5]).unwrap();
        assert_eq!(out.spacing, [0.5, 0.25, 0.5]);
        assert_eq!(out.counts_xyz(), [11, 17, 13]);
        for d in 0..out.dims[0] {
            for h in 0..out.dims[1] {
                for w in 0..out.dims[2] {
                    let (x, y, z) = (w as f64 * 0.5, h as f64 * 0.25, d as f64 * 0.5);
                    let want = 2.0 * x + 3.0 * y - z;
                    let got = out.at(d, h, w) as f64;
                    assert!((got - want).abs() < 1e-5, "({x},{y},{z}): {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn align_one_voxel_z_shift_hand_oracle() {
        // CT: 4 slices at z = 0..3, values 0,1,2,3. PET: origin one voxel
        // later (z = 1), values 10,11,12,13 at z = 1..4. Overlap z in
        // [1, 3]: three slices; CT keeps 1,2,3 and PET keeps 10,11,12.
        let ct = vol(vec![0.0, 1.0, 2.0, 3.0], [4, 1, 1], Modality::Ct);
        let mut pet = vol(vec![10.0, 11.0, 12.0, 13.0], [4, 1, 1], Modality::Pet);
        pet.origin = [0.0, 0.0, 1.0];
        let (ca, pa) = align(ct, pet).unwrap();
        assert_eq!(ca.dims, [3, 1, 1]);
        assert_eq!(ca.origin, pa.origin);
        assert_eq!(ca.origin[2], 1.0);
        assert_eq!(ca.data, vec![1.0, 2.0, 3.0]);
        assert_eq!(pa.data, vec![10.0, 11.0, 12.0]);
    }

    #[test]
    fn align_identical_grids_is_bitwise_noop() {
        let data: Vec<f32> = (0..24).map(|i| (i as f32).cos()).collect();
        let ct = vol(data.clone(), [2, 3, 4], Modality::Ct);
        let pet = vol(data.iter().map(|x| x * 2.0).collect(), [2, 3, 4], Modality::Pet);
        let (ca, pa) = align(ct.clone(), pet.clone()).unwrap();
        assert_eq!(ca.dims, ct.dims);
        assert_eq!(
            ca.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            ct.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            pa.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            pet.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn align_rejects_disjoint_extents_and_spacing_mismatch() {
        let ct = vol(vec![0.0, 1.0], [2, 1, 1], Modality::Ct);
        let mut far = vol(vec![0.0, 1.0], [2, 1, 1], Modality::Pet);
        far.origin = [0.0, 0.0, 100.0];
        assert!(matches!(align(ct.clone(), far), Err(Error::Data(_))));
        let mut coarse = vol(vec![0.0, 1.0], [2, 1, 1], Modality::Pet);
        coarse.spacing = [1.0, 1.0, 2.0];
        assert!(matches!(align(ct, coarse), Err(Error::Data(_))));
    }

    #[test]
    fn mask_fill_crop_box_and_output_shape() {
        // 4x4x4 volumes; mask selects the 2x2x2 cube at indices 1..3.
        let n = 64;
        let ct = vol((0..n).map(|i| i as f32).collect(), [4, 4, 4], Modality::Ct);
        let pet = vol((0..n).map(|i| (i as f32) * 0.1).collect(), [4, 4, 4], Modality::Pet);
        let mut mdata = vec![0.0f32; n];
        for d in 1..3 {
            for h in 1..3 {
                for w in 1..3 {
                    mdata[(d * 4 + h) * 4 + w] = 1.0;
                }
            }
        }
        let mask = vol(mdata, [4, 4, 4], Modality::Mask);
        let pair = apply_mask_and_crop(ct, pet, mask, [2, 2, 2]).unwrap();
        assert_eq!(pair.crop_box, CropBox { lo: [1, 1, 1], hi: [3, 3, 3] });
        assert_eq!(pair.ct.dims, [2, 2, 2]);
        assert_eq!(pair.mask.data, vec![1.0; 8]);
        // Crop bounds equal the cube, so every kept CT voxel is its
        // original value (inside the mask, no fill).
        let want: Vec<f32> = (0..n as usize)
            .filter(|i| {
                let (d, h, w) = (i / 16, (i / 4) % 4, i % 4);
                (1..3).contains(&d) && (1..3).contains(&h) && (1..3).contains(&w)
            })
            .map(|i| i as f32)
            .collect();
        assert_eq!(pair.ct.data, want);
    }

    #[test]
    fn masked_out_voxels_take_fill_values() {
        // Mask keeps only the first half along depth; the crop box then
        // spans full height/width, so filled voxels survive the crop.
        let ct = vol(vec![500.0; 16], [4, 2, 2], Modality::Ct);
        let pet = vol(vec![5.0; 16], [4, 2, 2], Modality::Pet);
        let mut mdata = vec![0.0f32; 16];
        // Select a diagonal pair so the bbox covers 2x2x2 but not all of
        // it is inside the mask.
        mdata[0] = 1.0; // (0,0,0)
        mdata[(1 * 2 + 1) * 2 + 1] = 1.0; // (1,1,1)
        let mask = vol(mdata, [4, 2, 2], Modality::Mask);
        let pair = apply_mask_and_crop(ct, pet, mask, [2, 2, 2]).unwrap();
        assert_eq!(pair.crop_box, CropBox { lo: [0, 0, 0], hi: [2, 2, 2] });
        assert_eq!(pair.ct.data[0], 500.0);
        assert_eq!(pair.pet.data[0], 5.0);
        let last = pair.ct.data.len() - 1;
        assert_eq!(pair.ct.data[last], 500.0);
        // An off-diagonal voxel was outside the mask: filled.
        assert_eq!(pair.ct.data[1], CT_CLIP[0]);
        assert_eq!(pair.pet.data[1], PET_CLIP[0]);
    }

    #[test]
    fn empty_mask_is_a_data_error() {
        let ct = vol(vec![0.0; 8], [2, 2, 2], Modality::Ct);
        let pet = vol(vec![0.0; 8], [2, 2, 2], Modality::Pet);
        let mask = vol(vec![0.0; 8], [2, 2, 2], Modality::Mask);
        assert!(matches!(apply_mask_and_crop(ct, pet, mask, [2, 2, 2]), Err(Error::Data(_))));
    }

    #[test]
    fn normalization_endpoints_are_exact() {
        let ct = vol(vec![-2000.0, -1024.0, 0.0, 1024.0, 3000.0], [1, 1, 5], Modality::Ct);
        let out = clip_normalize(ct).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0, 0.5, 1.0, 1.0]);
        let pet = vol(vec![0.0, 20.0, 25.0, 10.0], [1, 1, 4], Modality::Pet);
        let out = clip_normalize(pet).unwrap();
        assert_eq!(out.data, vec![0.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn normalization_is_idempotent_bitwise() {
        let ct = vol(vec![-500.0, 77.7, 900.2], [1, 1, 3], Modality::Ct);
        let once = clip_normalize(ct).unwrap();
        let twice = clip_normalize(once.clone()).unwrap();
        assert_eq!(
            once.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            twice.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn full_pipeline_satisfies_output_invariants() {
        // CT on a fine grid, PET shifted and coarser in z before
        // resampling; mask covers a centered blob on the CT grid.
        let dims = [8usize, 10, 10];
        let n = dims[0] * dims[1] * dims[2];
        let mut ct =
            vol((0..n).map(|i| 900.0 + (i % 61) as f32 * 7.0).collect(), dims, Modality::Ct);
        ct.spacing = [1.0, 1.0, 3.0];
        let mut pet = vol((0..n).map(|i| (i % 13) as f32 * 2e5).collect(), dims, Modality::Pet);
        pet.spacing = [1.0, 1.0, 3.0];
        pet.origin = [0.5, 0.0, 3.0];
        let mut mdata = vec![0.0f32; n];
        for d in 2..6 {
            for h in 3..8 {
                for w in 3..8 {
                    mdata[(d * dims[1] + h) * dims[2] + w] = 1.0;
                }
            }
        }
        let mut mask = vol(mdata, dims, Modality::Mask);
        mask.spacing = [1.0, 1.0, 3.0];

        let pair =
            preprocess_study(ct, pet, mask, &meta(), [0.977, 0.977, 3.27], [4, 8, 8]).unwrap();
        assert_eq!(pair.ct.dims, [4, 8, 8]);
        assert_eq!(pair.pet.dims, [4, 8, 8]);
        assert_eq!(pair.mask.dims, [4, 8, 8]);
        assert_eq!(pair.ct.spacing, pair.pet.spacing);
        assert_eq!(pair.ct.origin, pair.pet.origin);
        for v in [&pair.ct, &pair.pet] {
            assert!(v.normalized);
            assert!(v.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        assert!(pair.mask.data.iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let build = || {
            let dims = [4usize, 8, 8];
            let n = dims[0] * dims[1] * dims[2];
            let ct = vol((0..n).map(|i| (i % 97) as f32 * 20.0).collect(), dims, Modality::Ct);
            let mut pet =
                vol((0..n).map(|i| (i % 31) as f32 * 1e5).collect(), dims, Modality::Pet);
            pet.origin = [0.25, 0.0, 0.0];
            let mut mdata = vec![0.0f32; n];
            for d in 1..3 {
                for h in 2..6 {
                    for w in 2..6 {
                        mdata[(d * dims[1] + h) * dims[2] + w] = 1.0;
                    }
                }
            }
            let mask = vol(mdata, dims, Modality::Mask);
            preprocess_study(ct, pet, mask, &meta(), [1.0, 1.0, 1.0], [2, 4, 4]).unwrap()
        };
        let (a, b) = (build(), build());
        for (va, vb) in [(&a.ct, &b.ct), (&a.pet, &b.pet), (&a.mask, &b.mask)] {
            assert_eq!(
                va.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                vb.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_eq!(a.crop_box, b.crop_box);
    }
}
