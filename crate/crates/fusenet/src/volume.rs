//! Volumetric images on regular grids, with the interpolation primitives
//! the preprocessing pipeline is built from.
//!
//! Voxels are stored depth-major: `data[(d * H + h) * W + w]`. Data axis
//! order `[depth, height, width]` corresponds to world axes `(z, y, x)`,
//! while `spacing` and `origin` are stored in world order `(x, y, z)`; the
//! two orders are reverses of each other. `origin` is the world position of
//! the *center* of voxel `(0, 0, 0)`, so a grid of `n` voxels spans
//! `origin ..= origin + (n-1) * spacing` center-to-center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a volume's intensities mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ct,
    Pet,
    Mask,
}

impl Modality {
    /// Stable one-byte code used by the volume file format.
    pub fn code(self) -> u8 {
        match self {
            Modality::Ct => 0,
            Modality::Pet => 1,
            Modality::Mask => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Ct),
            1 => Some(Modality::Pet),
            2 => Some(Modality::Mask),
            _ => None,
        }
    }
}

/// Whether intensity increases with the measured quantity (`Standard`) or
/// is stored inverted, as some scanner exports do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Photometric {
    Standard,
    Inverted,
}

impl Photometric {
    pub fn code(self) -> u8 {
        match self {
            Photometric::Standard => 0,
            Photometric::Inverted => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Photometric::Standard),
            1 => Some(Photometric::Inverted),
            _ => None,
        }
    }
}

/// A single-channel volumetric image on a regular grid.
#[derive(Clone, Debug)]
pub struct Volume {
    pub data: Vec<f32>,
    /// Voxel counts `[depth, height, width]`, i.e. along `(z, y, x)`.
    pub dims: [usize; 3],
    /// Voxel size in mm along `(x, y, z)`.
    pub spacing: [f32; 3],
    /// World position in mm of the center of voxel `(0, 0, 0)`, `(x, y, z)`.
    pub origin: [f32; 3],
    pub modality: Modality,
    pub photometric: Photometric,
    /// Set once intensities have been mapped to `[0, 1]`; lets the
    /// normalization step be a no-op on second application.
    pub normalized: bool,
}

impl Volume {
    pub fn new(
        data: Vec<f32>,
        dims: [usize; 3],
        spacing: [f32; 3],
        origin: [f32; 3],
        modality: Modality,
        photometric: Photometric,
    ) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::Data(format!("volume dims {dims:?} contain a zero extent")));
        }
        let numel = dims[0]
            .checked_mul(dims[1])
            .and_then(|p| p.checked_mul(dims[2]))
            .ok_or_else(|| Error::Data(format!("volume dims {dims:?} overflow")))?;
        if data.len() != numel {
            return Err(Error::Data(format!(
                "volume has {} voxels but dims {dims:?} require {numel}",
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Data(format!("voxel spacing {spacing:?} must be positive")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Data(format!("volume origin {origin:?} must be finite")));
        }
        if modality == Modality::Mask && data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("mask volumes may contain only 0 and 1".into()));
        }
        Ok(Volume { data, dims, spacing, origin, modality, photometric, normalized: false })
    }

    pub fn numel(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    #[inline]
    pub fn at(&self, d: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(d, h, w)]
    }

    /// Voxel counts reordered to `(x, y, z)`, pairing with `spacing`.
    pub fn counts_xyz(&self) -> [usize; 3] {
        [self.dims[2], self.dims[1], self.dims[0]]
    }

    /// World position of the center of the last voxel along `(x, y, z)`.
    pub fn end_xyz(&self) -> [f64; 3] {
        let n = self.counts_xyz();
        let mut e = [0f64; 3];
        for a in 0..3 {
            e[a] = self.origin[a] as f64 + (n[a] - 1) as f64 * self.spacing[a] as f64;
        }
        e
    }

    /// Trilinear sample at continuous voxel index `u = (ux, uy, uz)`.
    /// Indices outside the grid clamp to the boundary voxel, so a
    /// single-voxel axis extends as a constant.
    pub fn sample_index_trilinear(&self, u: [f64; 3]) -> f64 {
        let n = self.counts_xyz();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0f64; 3];
        for a in 0..3 {
            let c = u[a].clamp(0.0, (n[a] - 1) as f64);
            let i = (c.floor() as usize).min(n[a] - 1);
            lo[a] = i;
            hi[a] = (i + 1).min(n[a] - 1);
            t[a] = c - i as f64;
        }
        let vx = |z: usize, y: usize, x: usize| self.at(z, y, x) as f64;
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let mut plane = [0f64; 2];
        for (kz, &z) in [lo[2], hi[2]].iter().enumerate() {
            let y0 = lerp(vx(z, lo[1], lo[0]), vx(z, lo[1], hi[0]), t[0]);
            let y1 = lerp(vx(z, hi[1], lo[0]), vx(z, hi[1], hi[0]), t[0]);
            plane[kz] = lerp(y0, y1, t[1]);
        }
        lerp(plane[0], plane[1], t[2])
    }

    /// Nearest-neighbor sample at continuous voxel index, clamped.
    pub fn sample_index_nearest(&self, u: [f64; 3]) -> f32 {
        let n = self.counts_xyz();
        let mut i = [0usize; 3];
        for a in 0..3 {
            i[a] = (u[a].round().clamp(0.0, (n[a] - 1) as f64)) as usize;
        }
        self.at(i[2], i[1], i[0])
    }

    /// Trilinear sample at a world position in mm.
    pub fn sample_world_trilinear(&self, p: [f64; 3]) -> f64 {
        self.sample_index_trilinear(self.world_to_index(p))
    }

    fn world_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        let mut u = [0f64; 3];
        for a in 0..3 {
            u[a] = (p[a] - self.origin[a] as f64) / self.spacing[a] as f64;
        }
        u
    }
}

/// Voxel-index bounds of a crop, in `[depth, height, width]` order;
/// `lo` inclusive, `hi` exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CropBox {
    pub fn shape(&self) -> [usize; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }
}
