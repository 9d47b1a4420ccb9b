//! The MVOL volume file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0   magic "MVOL"
//! 4   u32 format version (1)
//! 8   u32 depth, 12 height, 16 width
//! 20  f32 spacing x, y, z (mm)
//! 32  f32 origin x, y, z (mm)
//! 44  u8 modality code (0 CT, 1 PET, 2 MASK)
//! 45  u8 photometric flag (0 standard, 1 inverted)
//! 46  f32 voxels, depth-major (z, then y, then x), depth*height*width of them
//! ```
//!
//! Malformed input is rejected with the byte offset of the problem.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Modality, Photometric, Volume};

const MAGIC: &[u8; 4] = b"MVOL";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 46;

/// Serializes a volume. The in-memory `normalized` flag is not part of the
/// format; readers always start un-normalized.
pub fn to_bytes(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * v.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for extent in v.dims {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for s in v.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for o in v.origin {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.push(v.modality.code());
    out.push(v.photometric.code());
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            what: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format { offset: 0, what: format!("bad magic {:?}", &bytes[0..4]) });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format { offset: 4, what: format!("unsupported version {version}") });
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    let numel = (dims[0] as u64)
        .checked_mul(dims[1] as u64)
        .and_then(|p| p.checked_mul(dims[2] as u64))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format { offset: 8, what: format!("dims {dims:?} overflow") })?;
    let expected = HEADER_LEN as u64 + numel;
    if (bytes.len() as u64) != expected {
        return Err(Error::Format {
            offset: bytes.len().min(HEADER_LEN) as u64,
            what: format!(
                "dims {dims:?} require {expected} bytes, file has {}",
                bytes.len()
            ),
        });
    }
    let spacing = [f32_at(20), f32_at(24), f32_at(28)];
    let origin = [f32_at(32), f32_at(36), f32_at(40)];
    let modality = Modality::from_code(bytes[44]).ok_or_else(|| Error::Format {
        offset: 44,
        what: format!("unknown modality code {}", bytes[44]),
    })?;
    let photometric = Photometric::from_code(bytes[45]).ok_or_else(|| Error::Format {
        offset: 45,
        what: format!("unknown photometric flag {}", bytes[45]),
    })?;
    let data: Vec<f32> =
        bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Volume::new(data, dims, spacing, origin, modality, photometric)
}

pub fn write_mvol(v: &Volume, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(v)).map_err(|e| Error::io(path, e))
}

pub fn read_mvol(path: &Path) -> Result<Volume> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume {
        let mut v = Volume::new(
            (0..24).map(|i| (i as f32 * 0.61).sin()).collect(),
            [2, 3, 4],
            [0.977, 0.977, 3.27],
            [-5.5, 0.25, 102.0],
            Modality::Pet,
            Photometric::Inverted,
        )
        .unwrap();
        v.data[7] = -0.0;
        v
    }

    #[test]
    fn round_trip_is_lossless() {
        let v = sample();
        let back = from_bytes(&to_bytes(&v)).unwrap();
        assert_eq!(back.dims, v.dims);
        assert_eq!(back.spacing, v.spacing);
        assert_eq!(back.origin, v.origin);
        assert_eq!(back.modality, v.modality);
        assert_eq!(back.photometric, v.photometric);
        assert!(!back.normalized);
        assert_eq!(
            back.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            v.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.mvol");
        let v = sample();
        write_mvol(&v, &path).unwrap();
        let back = read_mvol(&path).unwrap();
        assert_eq!(to_bytes(&back), to_bytes(&v));
    }

    #[test]
    fn corrupted_magic_is_rejected_at_offset_zero() {
        let mut bytes = to_bytes(&sample());
        bytes[1] = b'X';
        match from_bytes(&bytes) {
            Err(Error::Format { offset, what }) => {
                assert_eq!(offset, 0);
                assert!(what.contains("magic"), "{what}");
            }
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = to_bytes(&sample());
        let cut = &bytes[..bytes.len() - 5];
        match from_bytes(cut) {
            Err(Error::Format { what, .. }) => assert!(what.contains("require"), "{what}"),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
        // Header shorter than the fixed fields reports its own length.
        match from_bytes(&bytes[..30]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 30),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn oversized_dims_are_rejected_as_overflow() {
        let mut bytes = to_bytes(&sample());
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        match from_bytes(&bytes) {
            Err(Error::Format { offset, what }) => {
                assert_eq!(offset, 8);
                assert!(what.contains("overflow"), "{what}");
            }
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn bad_modality_and_photometric_codes_are_rejected() {
        let mut bytes = to_bytes(&sample());
        bytes[44] = 7;
        match from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 44),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
        let mut bytes = to_bytes(&sample());
        bytes[45] = 9;
        match from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 45),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }
}
