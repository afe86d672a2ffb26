//! The frame-major `F×C×H×W` latent tensor shared by every stage.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if frames == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidParams(format!(
                "all dimensions must be positive, got {frames}x{channels}x{height}x{width}"
            )));
        }
        frames
            .checked_mul(channels)
            .and_then(|n| n.checked_mul(height))
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::InvalidParams("shape overflows usize".into()))?;
        Ok(Self {
            frames,
            channels,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one frame (`C·H·W`).
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Elements in one spatial plane (`H·W`).
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, f: usize, c: usize, h: usize, w: usize) -> usize {
        ((f * self.channels + c) * self.height + h) * self.width + w
    }

    /// Same shape with a different frame count.
    pub fn with_frames(&self, frames: usize) -> Self {
        Self { frames, ..*self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.channels, self.height, self.width
        )
    }
}

/// A latent video: `frames × channels × height × width` reals in
/// frame-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVideo {
    shape: Shape,
    data: Vec<f64>,
}

impl LatentVideo {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data`, rejecting a length mismatch or non-finite entries.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidParams(format!(
                "expected {} elements for shape {shape}, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite entry at flat index {i}"
            )));
        }
        Ok(Self { shape, data })
    }

    /// Wraps `data` without validation; caller guarantees the length.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Self { shape, data }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for fr in 0..shape.frames {
            for c in 0..shape.channels {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        data.push(f(fr, c, h, w));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// i.i.d. standard normal entries.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, f: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(f, c, h, w)]
    }

    pub fn set(&mut self, f: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.shape.index(f, c, h, w);
        self.data[i] = v;
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.shape.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: self.shape,
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `a·self + b·other`, elementwise.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        other.ensure_shape(self.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        other.ensure_shape(self.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation over all entries.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    /// `‖self − other‖ / ‖other‖`.
    pub fn relative_error(&self, reference: &Self) -> Result<f64> {
        let diff = self.sub(reference)?;
        Ok(diff.norm() / reference.norm().max(f64::MIN_POSITIVE))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        other.ensure_shape(self.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Bitwise equality (distinguishes `-0.0` from `0.0`).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_frame_major() {
        let s = Shape::new(2, 3, 4, 5).unwrap();
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        assert_eq!(s.len(), 120);
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        let s = Shape::new(1, 1, 1, 2).unwrap();
        assert!(LatentVideo::from_vec(s, vec![1.0]).is_err());
        assert!(LatentVideo::from_vec(s, vec![1.0, f64::NAN]).is_err());
        assert!(LatentVideo::from_vec(s, vec![1.0, 2.0]).is_ok());
        assert!(Shape::new(0, 1, 1, 1).is_err());
    }

    #[test]
    fn axpby_checks_shape() {
        let a = LatentVideo::zeros(Shape::new(1, 1, 2, 2).unwrap());
        let b = LatentVideo::zeros(Shape::new(1, 1, 2, 3).unwrap());
        assert!(matches!(a.axpby(1.0, &b, 1.0), Err(Error::ShapeMismatch { .. })));
    }
}
