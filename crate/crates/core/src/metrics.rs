//! Latent-space quality metrics: temporal consistency, flicker, spatial
//! detail, and distance to a prior's spatial spectrum.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::denoiser::GaussianPrior;
use crate::fft::{bin_frequency, radial_frequency, Fft1, Fft2};
use crate::{Error, LatentVideo, Result};

/// Default cutoff for [`flicker_energy`], cycles per frame.
pub const FLICKER_CUTOFF: f64 = 0.25;
/// Default band edge for [`spatial_detail`], cycles per pixel.
pub const DETAIL_BAND: f64 = 0.25;

/// Mean cosine similarity of adjacent flattened frames.
pub fn frame_consistency(v: &LatentVideo) -> Result<f64> {
    let frames = v.shape().frames;
    if frames < 2 {
        return Err(Error::TooFewFrames {
            needed: 2,
            found: frames,
        });
    }
    let norms: Vec<f64> = (0..frames)
        .map(|f| v.frame(f).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if let Some(f) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroFrame(f));
    }
    let total: f64 = (0..frames - 1)
        .map(|f| {
            let dot: f64 = v.frame(f).iter().zip(v.frame(f + 1)).map(|(a, b)| a * b).sum();
            dot / (norms[f] * norms[f + 1])
        })
        .sum();
    Ok(total / (frames - 1) as f64)
}

/// Fraction of temporal-DFT energy in bins with `|f| > cutoff`, averaged
/// over pixel series. Series with no energy at all are skipped.
pub fn flicker_energy(v: &LatentVideo, cutoff: f64) -> Result<f64> {
    let shape = v.shape();
    if shape.frames < 2 {
        return Err(Error::TooFewFrames {
            needed: 2,
            found: shape.frames,
        });
    }
    let fft = Fft1::new(shape.frames);
    let stride = shape.frame_len();
    let high: Vec<bool> = (0..shape.frames)
        .map(|k| bin_frequency(k, shape.frames).abs() > cutoff)
        .collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); shape.frames];
    let (mut sum, mut count) = (0.0, 0usize);
    for p in 0..stride {
        for (f, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(v.data()[f * stride + p], 0.0);
        }
        fft.forward(&mut buf);
        let total: f64 = buf.iter().map(|b| b.norm_sqr()).sum();
        if total == 0.0 {
            continue;
        }
        let hi: f64 = buf.iter().zip(&high).filter(|(_, &h)| h).map(|(b, _)| b.norm_sqr()).sum();
        sum += hi / total;
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateInput("video is identically zero".into()));
    }
    Ok(sum / count as f64)
}

/// Per-frame fraction of spatial-DFT energy (summed over channels) at
/// radial frequency above `band`, averaged over frames with nonzero energy.
pub fn spatial_detail(v: &LatentVideo, band: f64) -> Result<f64> {
    let shape = v.shape();
    if shape.height < 2 || shape.width < 2 {
        return Err(Error::DegenerateInput(format!(
            "spatial detail needs H, W >= 2, got {}x{}",
            shape.height, shape.width
        )));
    }
    let fft = Fft2::new(shape.height, shape.width);
    let high: Vec<bool> = (0..shape.plane_len())
        .map(|k| radial_frequency(k / shape.width, k % shape.width, shape.height, shape.width) > band)
        .collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for f in 0..shape.frames {
        let (mut hi, mut total) = (0.0, 0.0);
        for plane in v.frame(f).chunks_exact(shape.plane_len()) {
            for (b, &h) in fft.forward_real(plane).iter().zip(&high) {
                let e = b.norm_sqr();
                total += e;
                if h {
                    hi += e;
                }
            }
        }
        if total > 0.0 {
            sum += hi / total;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateInput("video is identically zero".into()));
    }
    Ok(sum / count as f64)
}

/// Spatial-DFT energy above radial frequency `band`, summed over all planes
/// and divided by `H·W`, so it is on the scale of a sum of squares.
pub fn high_band_energy(v: &LatentVideo, band: f64) -> Result<f64> {
    let shape = v.shape();
    let fft = Fft2::new(shape.height, shape.width);
    let n = shape.plane_len();
    let mut e = 0.0;
    for plane in v.data().chunks_exact(n) {
        for (k, b) in fft.forward_real(plane).iter().enumerate() {
            if radial_frequency(k / shape.width, k % shape.width, shape.height, shape.width) > band {
                e += b.norm_sqr();
            }
        }
    }
    Ok(e / n as f64)
}

fn normalized(mut e: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = e.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateInput("spectrum has no energy".into()));
    }
    e.iter_mut().for_each(|x| *x /= total);
    Ok(e)
}

/// Mean per-bin spatial energy of `v` over frames and channels, summing to 1.
pub fn empirical_spectrum(v: &LatentVideo) -> Result<Vec<f64>> {
    let shape = v.shape();
    let fft = Fft2::new(shape.height, shape.width);
    let mut e = vec![0.0; shape.plane_len()];
    for plane in v.data().chunks_exact(shape.plane_len()) {
        for (acc, b) in e.iter_mut().zip(fft.forward_real(plane)) {
            *acc += b.norm_sqr();
        }
    }
    normalized(e)
}

/// Expected per-bin spatial energy of a draw from `prior`, summing to 1:
/// the scaled spectrum plus the energy of the mean.
pub fn prior_spectrum(prior: &GaussianPrior) -> Result<Vec<f64>> {
    let shape = prior.shape;
    let planes = (shape.frames * shape.channels) as f64;
    let n = shape.plane_len() as f64;
    let mut e: Vec<f64> = prior
        .spatial_spectrum
        .iter()
        .map(|s| planes * n * prior.variance_scale * s)
        .collect();
    let fft = Fft2::new(shape.height, shape.width);
    for plane in prior.mean.data().chunks_exact(shape.plane_len()) {
        for (acc, b) in e.iter_mut().zip(fft.forward_real(plane)) {
            *acc += b.norm_sqr();
        }
    }
    normalized(e)
}

/// L1 distance between the normalized empirical spectrum of `v` and the
/// prior's expected normalized spectrum; lies in `[0, 2]`.
pub fn spectrum_distance(v: &LatentVideo, prior: &GaussianPrior) -> Result<f64> {
    let (vs, ps) = (v.shape(), prior.shape);
    if (vs.height, vs.width) != (ps.height, ps.width) {
        return Err(Error::ShapeMismatch {
            expected: ps,
            found: vs,
        });
    }
    let a = empirical_spectrum(v)?;
    let b = prior_spectrum(prior)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame_consistency: f64,
    pub flicker_energy: f64,
    pub spatial_detail: f64,
    pub spectrum_distance_t2i: f64,
    pub spectrum_distance_t2v: f64,
}

impl MetricReport {
    pub const FIELDS: [&'static str; 5] = [
        "frame_consistency",
        "flicker_energy",
        "spatial_detail",
        "spectrum_distance_t2i",
        "spectrum_distance_t2v",
    ];

    /// All metrics at the default cutoffs.
    pub fn compute(v: &LatentVideo, t2i: &GaussianPrior, t2v: &GaussianPrior) -> Result<Self> {
        let r = Self {
            frame_consistency: frame_consistency(v)?,
            flicker_energy: flicker_energy(v, FLICKER_CUTOFF)?,
            spatial_detail: spatial_detail(v, DETAIL_BAND)?,
            spectrum_distance_t2i: spectrum_distance(v, t2i)?,
            spectrum_distance_t2v: spectrum_distance(v, t2v)?,
        };
        if r.values().iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateInput("non-finite metric".into()));
        }
        Ok(r)
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.frame_consistency,
            self.flicker_energy,
            self.spatial_detail,
            self.spectrum_distance_t2i,
            self.spectrum_distance_t2v,
        ]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        Self {
            frame_consistency: v[0],
            flicker_energy: v[1],
            spatial_detail: v[2],
            spectrum_distance_t2i: v[3],
            spectrum_distance_t2v: v[4],
        }
    }

    /// Field-wise median; `None` for an empty slice.
    pub fn median(reports: &[Self]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let mut out = [0.0; 5];
        for (i, o) in out.iter_mut().enumerate() {
            *o = median(&reports.iter().map(|r| r.values()[i]).collect::<Vec<_>>());
        }
        Some(Self::from_values(out))
    }
}

/// Median of a slice (mean of the middle pair for even lengths); NaN when
/// empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
