//! Gaussian low-pass filtering of latent videos in the frequency domain,
//! along time or jointly along time and space.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fft::{bin_frequency, radial_frequency, Fft1, Fft2};
use crate::{Error, LatentVideo, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterAxes {
    Temporal,
    SpatialTemporal,
}

/// Per-bin gains in standard DFT order (DC first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowPassMask {
    pub temporal: Vec<f64>,
    /// `H·W` gains, row-major, present only for spatial-temporal masks.
    pub spatial: Option<Vec<f64>>,
    /// (height, width) of the spatial gains.
    pub spatial_dims: Option<(usize, usize)>,
    pub d0: f64,
}

fn gaussian(f: f64, d0: f64) -> f64 {
    (-f * f / (2.0 * d0 * d0)).exp()
}

fn check_d0(d0: f64) -> Result<()> {
    if !(d0 > 0.0) {
        return Err(Error::InvalidCutoff(d0));
    }
    Ok(())
}

/// Temporal mask `exp(−f_k² / (2·d0²))` over `frames` bins.
pub fn gaussian_mask(frames: usize, d0: f64) -> Result<LowPassMask> {
    check_d0(d0)?;
    if frames == 0 {
        return Err(Error::InvalidParams("mask needs at least one frame".into()));
    }
    Ok(LowPassMask {
        temporal: (0..frames)
            .map(|k| gaussian(bin_frequency(k, frames), d0))
            .collect(),
        spatial: None,
        spatial_dims: None,
        d0,
    })
}

/// Joint mask `exp(−(f_t² + f_y² + f_x²) / (2·d0²))`, stored as its
/// temporal and spatial factors.
pub fn gaussian_mask_3d(frames: usize, height: usize, width: usize, d0: f64) -> Result<LowPassMask> {
    let mut mask = gaussian_mask(frames, d0)?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidParams("spatial mask needs positive dims".into()));
    }
    mask.spatial = Some(
        (0..height * width)
            .map(|k| gaussian(radial_frequency(k / width, k % width, height, width), d0))
            .collect(),
    );
    mask.spatial_dims = Some((height, width));
    Ok(mask)
}

impl LowPassMask {
    /// All-pass temporal mask.
    pub fn identity(frames: usize) -> Self {
        Self {
            temporal: vec![1.0; frames],
            spatial: None,
            spatial_dims: None,
            d0: f64::INFINITY,
        }
    }

    pub fn max_gain_above(&self, cutoff: f64) -> f64 {
        let n = self.temporal.len();
        (0..n)
            .filter(|&k| bin_frequency(k, n).abs() > cutoff)
            .map(|k| self.temporal[k])
            .fold(0.0, f64::max)
    }
}

/// Filters `video` with `mask` along the selected axes; output is real and
/// has the input's shape.
pub fn lpff(video: &LatentVideo, mask: &LowPassMask, axes: FilterAxes) -> Result<LatentVideo> {
    Ok(lpff_with_residual(video, mask, axes)?.0)
}

/// As [`lpff`], also returning the largest imaginary part discarded.
pub fn lpff_with_residual(
    video: &LatentVideo,
    mask: &LowPassMask,
    axes: FilterAxes,
) -> Result<(LatentVideo, f64)> {
    let shape = video.shape();
    if mask.temporal.len() != shape.frames {
        return Err(Error::MaskShapeMismatch(format!(
            "temporal mask has {} bins, video has {} frames",
            mask.temporal.len(),
            shape.frames
        )));
    }
    let mut residual = 0.0f64;
    let mut data = video.data().to_vec();

    // temporal pass, one pixel series at a time
    let fft = Fft1::new(shape.frames);
    let stride = shape.frame_len();
    let mut buf = vec![Complex64::new(0.0, 0.0); shape.frames];
    for p in 0..stride {
        for (f, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(data[f * stride + p], 0.0);
        }
        fft.forward(&mut buf);
        for (b, g) in buf.iter_mut().zip(&mask.temporal) {
            *b *= *g;
        }
        fft.inverse(&mut buf);
        for (f, b) in buf.iter().enumerate() {
            data[f * stride + p] = b.re;
            residual = residual.max(b.im.abs());
        }
    }

    if axes == FilterAxes::SpatialTemporal {
        let (gains, dims) = match (&mask.spatial, mask.spatial_dims) {
            (Some(g), Some(d)) => (g, d),
            _ => {
                return Err(Error::MaskShapeMismatch(
                    "spatial-temporal filtering needs a spatial mask".into(),
                ))
            }
        };
        if dims != (shape.height, shape.width) || gains.len() != shape.plane_len() {
            return Err(Error::MaskShapeMismatch(format!(
                "spatial mask is {}x{}, video planes are {}x{}",
                dims.0, dims.1, shape.height, shape.width
            )));
        }
        let fft2 = Fft2::new(shape.height, shape.width);
        for plane in data.chunks_exact_mut(shape.plane_len()) {
            let mut spec = fft2.forward_real(plane);
            for (b, g) in spec.iter_mut().zip(gains) {
                *b *= *g;
            }
            fft2.inverse(&mut spec);
            for (d, b) in plane.iter_mut().zip(&spec) {
                *d = b.re;
                residual = residual.max(b.im.abs());
            }
        }
    }

    Ok((LatentVideo::from_vec(shape, data)?, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_evaluated_two_bin_mask() {
        let m = gaussian_mask(2, 0.25).unwrap();
        assert_eq!(m.temporal[0], 1.0);
        assert!((m.temporal[1] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((m.temporal[1] - 0.1353).abs() < 1e-4);
    }

    #[test]
    fn mask_properties() {
        for f in [1, 2, 7, 16] {
            let m = gaussian_mask(f, 0.25).unwrap();
            assert_eq!(m.temporal[0], 1.0);
            for k in 1..f {
                assert_eq!(m.temporal[k], m.temporal[f - k]);
                assert!((0.0..=1.0).contains(&m.temporal[k]));
            }
        }
        let wide = gaussian_mask(16, f64::INFINITY).unwrap();
        assert!(wide.temporal.iter().all(|&g| g == 1.0));
        assert!(matches!(gaussian_mask(4, 0.0), Err(Error::InvalidCutoff(_))));
        assert!(gaussian_mask(4, -1.0).is_err());
    }

    #[test]
    fn constant_in_time_is_a_fixed_point() {
        let shape = Shape::new(8, 2, 4, 4).unwrap();
        let base = LatentVideo::randn(shape.with_frames(1), &mut ChaCha8Rng::seed_from_u64(1));
        let v = LatentVideo::from_fn(shape, |_, c, h, w| base.get(0, c, h, w));
        let out = lpff(&v, &gaussian_mask(8, 0.1).unwrap(), FilterAxes::Temporal).unwrap();
        assert!(out.max_abs_diff(&v).unwrap() < 1e-12);
    }

    #[test]
    fn identity_mask_and_real_output() {
        let shape = Shape::new(6, 2, 4, 4).unwrap();
        let v = LatentVideo::randn(shape, &mut ChaCha8Rng::seed_from_u64(2));
        let out = lpff(&v, &LowPassMask::identity(6), FilterAxes::Temporal).unwrap();
        assert!(out.max_abs_diff(&v).unwrap() < 1e-12);
        let mask = gaussian_mask_3d(6, 4, 4, 0.25).unwrap();
        let (_, resid) = lpff_with_residual(&v, &mask, FilterAxes::SpatialTemporal).unwrap();
        assert!(resid < 1e-9);
    }

    #[test]
    fn mask_shape_errors() {
        let v = LatentVideo::zeros(Shape::new(4, 1, 4, 4).unwrap());
        assert!(matches!(
            lpff(&v, &gaussian_mask(5, 0.25).unwrap(), FilterAxes::Temporal),
            Err(Error::MaskShapeMismatch(_))
        ));
        assert!(matches!(
            lpff(&v, &gaussian_mask(4, 0.25).unwrap(), FilterAxes::SpatialTemporal),
            Err(Error::MaskShapeMismatch(_))
        ));
        assert!(lpff(&v, &gaussian_mask_3d(4, 4, 2, 0.25).unwrap(), FilterAxes::SpatialTemporal).is_err());
    }

    #[test]
    fn high_band_energy_is_bounded_by_mask_gain() {
        let shape = Shape::new(16, 1, 4, 4).unwrap();
        let d0 = 0.25;
        let mask = gaussian_mask(16, d0).unwrap();
        let gmax = mask.max_gain_above(d0);
        let v = LatentVideo::randn(shape, &mut ChaCha8Rng::seed_from_u64(3));
        let out = lpff(&v, &mask, FilterAxes::Temporal).unwrap();
        let band = |x: &LatentVideo| -> f64 {
            let fft = Fft1::new(16);
            let stride = shape.frame_len();
            let mut e = 0.0;
            for p in 0..stride {
                let mut b: Vec<Complex64> = (0..16).map(|f| Complex64::new(x.data()[f * stride + p], 0.0)).collect();
                fft.forward(&mut b);
                e += (0..16)
                    .filter(|&k| bin_frequency(k, 16).abs() > d0)
                    .map(|k| b[k].norm_sqr())
                    .sum::<f64>();
            }
            e
        };
        assert!(band(&out) <= gmax * gmax * band(&v) + 1e-6);
    }

    proptest! {
        #[test]
        fn linear_and_contractive(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            seed in 0u64..1000,
            d0 in 0.05f64..1.0,
        ) {
            let shape = Shape::new(8, 1, 2, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = LatentVideo::randn(shape, &mut rng);
            let y = LatentVideo::randn(shape, &mut rng);
            let mask = gaussian_mask(8, d0).unwrap();
            let lhs = lpff(&x.axpby(a, &y, b).unwrap(), &mask, FilterAxes::Temporal).unwrap();
            let rhs = lpff(&x, &mask, FilterAxes::Temporal).unwrap()
                .axpby(a, &lpff(&y, &mask, FilterAxes::Temporal).unwrap(), b).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);

            // per-bin magnitude never grows
            let out = lpff(&x, &mask, FilterAxes::Temporal).unwrap();
            let fft = Fft1::new(8);
            for p in 0..shape.frame_len() {
                let series = |v: &LatentVideo| {
                    let mut s: Vec<Complex64> = (0..8).map(|f| Complex64::new(v.data()[f * 4 + p], 0.0)).collect();
                    fft.forward(&mut s);
                    s
                };
                let (si, so) = (series(&x), series(&out));
                for k in 0..8 {
                    prop_assert!(so[k].norm() <= si[k].norm() + 1e-9);
                }
            }
        }
    }
}
