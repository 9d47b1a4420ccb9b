//! Binary checkpoint format for trained networks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0   magic "FNET"
//! 4   u32 format version (1)
//! 8   u32 stages
//! 12  u32 blocks_per_stage
//! 16  u32 base_channels
//! 20  u32 input depth, 24 height, 28 width
//! 32  u8 strategy code, 33 u8 fusion_blocks flag
//! 34  u64 seed
//! 42  u32 entry count
//! 46  entries: u32 value count, then that many f32 values
//! ..  u64 FNV-1a hash of every preceding byte
//! ```
//!
//! Entries are the registry's stateful values in construction order, both
//! trainable parameters and batch-norm running statistics; names are not
//! stored because the configuration block rebuilds the same registry.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::layers::Slot;
use crate::nets::{build_network, ModelConfig, Network, Strategy};
use crate::util::fnv1a64;

const MAGIC: &[u8; 4] = b"FNET";
const VERSION: u32 = 1;

fn strategy_code(s: Strategy) -> u8 {
    match s {
        Strategy::Multistage => 0,
        Strategy::UnimodalCt => 1,
        Strategy::UnimodalPet => 2,
        Strategy::Early => 3,
        Strategy::Late => 4,
        Strategy::SingleFusion => 5,
    }
}

fn strategy_from_code(code: u8, offset: u64) -> Result<Strategy> {
    Ok(match code {
        0 => Strategy::Multistage,
        1 => Strategy::UnimodalCt,
        2 => Strategy::UnimodalPet,
        3 => Strategy::Early,
        4 => Strategy::Late,
        5 => Strategy::SingleFusion,
        other => {
            return Err(Error::Format { offset, what: format!("unknown strategy code {other}") })
        }
    })
}

/// Serializes the network's configuration and every stateful value.
pub fn to_bytes(net: &Network) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&cfg.stages.to_le_bytes());
    out.extend_from_slice(&cfg.blocks_per_stage.to_le_bytes());
    out.extend_from_slice(&cfg.base_channels.to_le_bytes());
    for extent in cfg.input_shape {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    out.push(strategy_code(cfg.strategy));
    out.push(cfg.fusion_blocks as u8);
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    let entries = &net.registry().entries;
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for entry in entries {
        match &entry.slot {
            Slot::Param(t) => {
                let vals = t.values();
                out.extend_from_slice(&(vals.len() as u32).to_le_bytes());
                for v in vals.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Slot::Buffer(b) => {
                let vals = b.borrow();
                out.extend_from_slice(&(vals.len() as u32).to_le_bytes());
                for v in vals.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let hash = fnv1a64(&out);
    out.extend_from_slice(&hash.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            what: format!("length overflow reading {what}"),
        })?;
        if end > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                what: format!("truncated: needed {n} bytes for {what}"),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Rebuilds a network from [`to_bytes`] output. The checksum, magic,
/// version, and every entry length are verified before any value is used.
pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 8 + MAGIC.len() {
        return Err(Error::Format {
            offset: 0,
            what: format!("file too short ({} bytes) for header and checksum", bytes.len()),
        });
    }
    let body_len = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = fnv1a64(&bytes[..body_len]);
    if stored != computed {
        return Err(Error::Format {
            offset: body_len as u64,
            what: format!("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"),
        });
    }
    let mut c = Cursor { bytes: &bytes[..body_len], pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format { offset: 0, what: format!("bad magic {magic:?}") });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            what: format!("unsupported format version {version}"),
        });
    }
    let stages = c.u32("stages")?;
    let blocks_per_stage = c.u32("blocks_per_stage")?;
    let base_channels = c.u32("base_channels")?;
    let mut input_shape = [0usize; 3];
    for slot in &mut input_shape {
        *slot = c.u32("input extent")? as usize;
    }
    let strategy_offset = c.pos as u64;
    let strategy = strategy_from_code(c.u8("strategy code")?, strategy_offset)?;
    let fusion_flag_offset = c.pos as u64;
    let fusion_flag = c.u8("fusion flag")?;
    if fusion_flag > 1 {
        return Err(Error::Format {
            offset: fusion_flag_offset,
            what: format!("fusion flag must be 0 or 1, got {fusion_flag}"),
        });
    }
    let seed = c.u64("seed")?;
    let cfg = ModelConfig {
        strategy,
        stages,
        blocks_per_stage,
        base_channels,
        input_shape,
        seed,
        fusion_blocks: fusion_flag == 1,
    };
    cfg.validate()?;
    let net = build_network(&cfg)?;
    let expected = net.registry().entries.len();
    let count_offset = c.pos as u64;
    let count = c.u32("entry count")? as usize;
    if count != expected {
        return Err(Error::Format {
            offset: count_offset,
            what: format!("entry count {count} does not match configuration ({expected})"),
        });
    }
    for entry in &net.registry().entries {
        let want = match &entry.slot {
            Slot::Param(t) => t.numel(),
            Slot::Buffer(b) => b.borrow().len(),
        };
        let len_offset = c.pos as u64;
        let len = c.u32("entry length")? as usize;
        if len != want {
            return Err(Error::Format {
                offset: len_offset,
                what: format!("entry {} has {len} values, expected {want}", entry.name),
            });
        }
        let raw = c.take(
            len.checked_mul(4).ok_or_else(|| Error::Format {
                offset: len_offset,
                what: format!("entry {} length {len} overflows", entry.name),
            })?,
            "entry values",
        )?;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        match &entry.slot {
            Slot::Param(t) => t.set_values(&vals),
            Slot::Buffer(b) => b.borrow_mut().copy_from_slice(&vals),
        }
    }
    if c.pos != body_len {
        return Err(Error::Format {
            offset: c.pos as u64,
            what: format!("{} trailing bytes after last entry", body_len - c.pos),
        });
    }
    Ok(net)
}

/// Writes [`to_bytes`] output to `path`.
pub fn save(net: &Network, path: &Path) -> Result<()> {
    let bytes = to_bytes(net);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a checkpoint file and rebuilds its network.
pub fn load(path: &Path) -> Result<Network> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
