//! The `.elvt` latent tensor format.
//!
//! A 32-byte header (magic `ELVT`, u16 version, u16 reserved, u32 dims
//! F, C, H, W, 8 reserved bytes) followed by `F·C·H·W` little-endian f32
//! values in frame-major order. Values are stored as f32, so a save/load
//! round trip is exact only for f32-representable latents.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::Path;

use elevator_core::{LatentVideo, Shape};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"ELVT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

pub fn encode(v: &LatentVideo) -> Vec<u8> {
    let s = v.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * s.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for d in [s.frames, s.channels, s.height, s.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&[0u8; 8]);
    for x in v.data() {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<LatentVideo> {
    let truncated = || {
        CliError::io(
            path,
            std::io::Error::new(ErrorKind::UnexpectedEof, "latent file is truncated"),
        )
    };
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(CliError::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated());
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != VERSION {
        return Err(CliError::BadVersion {
            path: path.into(),
            version,
        });
    }
    let dims = [u32_at(8), u32_at(12), u32_at(16), u32_at(20)];
    let overflow = || CliError::ShapeOverflow {
        path: path.into(),
        dims,
    };
    let shape = Shape::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize)
        .map_err(|_| overflow())?;
    let payload = shape
        .len()
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(overflow)?;
    if bytes.len() < payload {
        return Err(truncated());
    }
    if bytes.len() > payload {
        return Err(overflow());
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(LatentVideo::from_vec(shape, data)?)
}

pub fn save_latent(v: &LatentVideo, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&encode(v)).map_err(|e| CliError::io(path, e))
}

pub fn load_latent(path: &Path) -> Result<LatentVideo> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}
