//! Frame rendering to binary PPM for visual inspection.

use std::fs;
use std::path::{Path, PathBuf};

use elevator_core::LatentVideo;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Fixed 4→3 map from latent channels to RGB, one row per output channel.
pub const LATENT_TO_RGB: [[f64; 4]; 3] = [
    [0.298, 0.187, -0.158, -0.184],
    [0.207, 0.286, 0.189, -0.271],
    [0.208, 0.173, 0.264, -0.473],
];

/// Per-video min/max used to map values to `0..=255`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    fn byte(&self, x: f64) -> u8 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 128;
        }
        ((x - self.min) / span * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

/// RGB (or gray) planes per frame, as `[frame][pixel][rgb]`.
fn to_rgb(v: &LatentVideo) -> Result<Vec<Vec<[f64; 3]>>> {
    let s = v.shape();
    let hw = s.plane_len();
    let c = s.channels;
    if !matches!(c, 1 | 3 | 4) {
        return Err(CliError::UnsupportedChannels(c));
    }
    Ok((0..s.frames)
        .map(|f| {
            let frame = v.frame(f);
            (0..hw)
                .map(|p| {
                    let ch = |k: usize| frame[k * hw + p];
                    match c {
                        1 => [ch(0); 3],
                        3 => [ch(0), ch(1), ch(2)],
                        _ => LATENT_TO_RGB.map(|row| (0..4).map(|k| row[k] * ch(k)).sum()),
                    }
                })
                .collect()
        })
        .collect())
}

/// Writes `{prefix}_f{frame:03}.ppm` for every frame.
pub fn render_frames(v: &LatentVideo, prefix: &Path) -> Result<(Vec<PathBuf>, Normalization)> {
    let s = v.shape();
    let frames = to_rgb(v)?;
    let (min, max) = frames
        .iter()
        .flatten()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    // a constant latent renders gray even where the projection mixes
    // channels into unequal RGB values
    let constant = v.data().iter().all(|&x| x == v.data()[0]);
    let norm = if constant {
        Normalization { min: v.data()[0], max: v.data()[0] }
    } else {
        Normalization { min, max }
    };
    let stem = prefix
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut files = Vec::with_capacity(s.frames);
    for (f, pixels) in frames.iter().enumerate() {
        let path = prefix.with_file_name(format!("{stem}_f{f:03}.ppm"));
        let mut bytes = format!("P6\n{} {}\n255\n", s.width, s.height).into_bytes();
        bytes.extend(pixels.iter().flat_map(|px| px.map(|x| if constant { 128 } else { norm.byte(x) })));
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        files.push(path);
    }
    Ok((files, norm))
}
