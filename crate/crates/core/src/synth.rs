//! Synthetic latent-video priors and exact draws from them.

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::denoiser::GaussianPrior;
use crate::fft::{radial_frequency, Fft2};
use crate::{Error, LatentVideo, Result, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    /// `1 / (1 + (f/0.1)^4)`: smooth, low-detail fields.
    Lowpass,
    /// `1 / (1 + (f/0.35)^4)`: substantially more high-frequency power.
    Broadband,
    /// White.
    Flat,
}

impl SpectrumKind {
    fn corner(self) -> Option<f64> {
        match self {
            Self::Lowpass => Some(0.1),
            Self::Broadband => Some(0.35),
            Self::Flat => None,
        }
    }
}

/// Per-bin spatial variances for an `h × w` grid, normalized to mean 1
/// (unit per-pixel variance).
pub fn spectrum(kind: SpectrumKind, h: usize, w: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..h * w)
        .map(|k| match kind.corner() {
            Some(f0) => {
                let f = radial_frequency(k / w, k % w, h, w);
                1.0 / (1.0 + (f / f0).powi(4))
            }
            None => 1.0,
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|v| v / mean).collect()
}

/// Serializable description of a synthetic prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub rho: f64,
    pub spectrum: SpectrumKind,
    #[serde(default = "one")]
    pub variance_scale: f64,
    /// Constant added to every entry of the (otherwise zero) mean.
    #[serde(default)]
    pub mean_offset: f64,
}

fn one() -> f64 {
    1.0
}

impl PriorSpec {
    /// Temporally coherent, low-detail prior.
    pub fn t2v_default() -> Self {
        Self {
            rho: 0.9,
            spectrum: SpectrumKind::Lowpass,
            variance_scale: 1.0,
            mean_offset: 0.0,
        }
    }

    /// Per-frame, detail-rich prior.
    pub fn t2i_default() -> Self {
        Self {
            rho: 0.0,
            spectrum: SpectrumKind::Broadband,
            variance_scale: 1.0,
            mean_offset: 0.0,
        }
    }

    pub fn build(&self, shape: Shape) -> Result<GaussianPrior> {
        let mut prior = make_gp_prior(shape, self.rho, self.spectrum, self.variance_scale)?;
        if self.mean_offset != 0.0 {
            if !self.mean_offset.is_finite() {
                return Err(Error::InvalidParams("mean_offset must be finite".into()));
            }
            prior.mean = LatentVideo::filled(shape, self.mean_offset);
        }
        Ok(prior)
    }
}

/// Zero-mean prior with AR(1) temporal correlation `rho` and a named
/// spatial spectrum.
pub fn make_gp_prior(
    shape: Shape,
    rho: f64,
    kind: SpectrumKind,
    variance_scale: f64,
) -> Result<GaussianPrior> {
    GaussianPrior::new(
        LatentVideo::zeros(shape),
        rho,
        spectrum(kind, shape.height, shape.width),
        variance_scale,
    )
    .map_err(|e| match e {
        Error::InvalidPrior(m) => Error::InvalidParams(m),
        other => other,
    })
}

/// Draws one exact sample: white noise shaped by `sqrt(spectrum)` in the
/// spatial Fourier domain, an AR(1) recursion across frames, then scaled
/// and shifted by the mean.
pub fn sample_prior<R: Rng + ?Sized>(prior: &GaussianPrior, rng: &mut R) -> Result<LatentVideo> {
    prior.validate()?;
    let shape = prior.shape;
    let plane = shape.plane_len();
    let white = LatentVideo::randn(shape, rng);
    if prior.variance_scale == 0.0 {
        return Ok(prior.mean.clone());
    }

    let fft = Fft2::new(shape.height, shape.width);
    let amp: Vec<f64> = prior.spatial_spectrum.iter().map(|s| s.sqrt()).collect();
    let mut spatial = Vec::with_capacity(shape.len());
    for p in white.data().chunks_exact(plane) {
        let mut buf = fft.forward_real(p);
        for (b, a) in buf.iter_mut().zip(&amp) {
            *b *= *a;
        }
        fft.inverse(&mut buf);
        spatial.extend(buf.iter().map(|v: &Complex64| v.re));
    }

    let rho = prior.temporal_rho;
    let innov = (1.0 - rho * rho).sqrt();
    let frame = shape.frame_len();
    let mut out = spatial;
    for f in 1..shape.frames {
        let (prev, cur) = out.split_at_mut(f * frame);
        let prev = &prev[(f - 1) * frame..];
        for (c, p) in cur[..frame].iter_mut().zip(prev) {
            *c = rho * p + innov * *c;
        }
    }

    let scale = prior.variance_scale.sqrt();
    let data = out
        .iter()
        .zip(prior.mean.data())
        .map(|(x, m)| m + scale * x)
        .collect();
    LatentVideo::from_vec(shape, data)
}
