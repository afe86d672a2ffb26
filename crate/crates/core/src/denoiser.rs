//! The ε-prediction interface and exact denoisers for Gaussian priors.
//!
//! A [`GaussianPrior`] has covariance
//! `variance_scale · R_rho ⊗ I_C ⊗ S`, where `R_rho[i][j] = rho^|i−j|` is
//! the stationary AR(1) correlation across frames and `S` is a stationary
//! (circulant) spatial covariance whose eigenvalues are `spatial_spectrum`
//! in the 2-D DFT basis. Under the forward process the posterior noise
//! estimate is
//!
//! `E[eps | z_t] = sqrt(1 − ab) · (ab·Σ + (1 − ab)·I)^{-1} · (z_t − sqrt(ab)·m)`,
//!
//! which [`AnalyticDenoiser`] evaluates mode by mode in the joint
//! eigenbasis (temporal eigenvectors × spatial Fourier modes).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fft::{mirror_bin, Fft2};
use crate::schedule::NoiseSchedule;
use crate::{Error, LatentVideo, Result, Shape};

/// Conditioning signal: an optional mean shift plus a CFG scale.
///
/// A missing shift is the null condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub shift: Option<LatentVideo>,
    pub guidance_scale: f64,
}

impl Default for Condition {
    fn default() -> Self {
        Self::null()
    }
}

impl Condition {
    pub fn null() -> Self {
        Self {
            shift: None,
            guidance_scale: 1.0,
        }
    }

    pub fn shifted(shift: LatentVideo, guidance_scale: f64) -> Self {
        Self {
            shift: Some(shift),
            guidance_scale,
        }
    }

    pub fn is_null(&self) -> bool {
        self.shift.is_none()
    }

    /// The same condition with the shift removed.
    pub fn to_null(&self) -> Self {
        Self {
            shift: None,
            guidance_scale: self.guidance_scale,
        }
    }
}

/// An ε-prediction model.
///
/// Implementations must be deterministic and shape-preserving, and
/// callable concurrently from several threads.
pub trait Denoiser: Send + Sync + fmt::Debug {
    fn shape(&self) -> Shape;

    fn predict_eps(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: &Condition,
        s: &NoiseSchedule,
    ) -> Result<LatentVideo>;
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn shape(&self) -> Shape {
        (**self).shape()
    }

    fn predict_eps(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: &Condition,
        s: &NoiseSchedule,
    ) -> Result<LatentVideo> {
        (**self).predict_eps(z, t, cond, s)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn shape(&self) -> Shape {
        (**self).shape()
    }

    fn predict_eps(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: &Condition,
        s: &NoiseSchedule,
    ) -> Result<LatentVideo> {
        (**self).predict_eps(z, t, cond, s)
    }
}

/// Classifier-free guidance: `eps(∅) + w·(eps(y) − eps(∅))`.
///
/// `w = 1` and `w = 0` short-circuit to a single model call, so they are
/// bitwise equal to the conditional and unconditional predictions.
pub fn cfg_eps<D: Denoiser + ?Sized>(
    model: &D,
    z_t: &LatentVideo,
    t: usize,
    cond: &Condition,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    let w = cond.guidance_scale;
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "guidance scale must be finite and >= 0, got {w}"
        )));
    }
    if cond.is_null() || w == 0.0 {
        return model.predict_eps(z_t, t, &Condition::null(), s);
    }
    if w == 1.0 {
        return model.predict_eps(z_t, t, cond, s);
    }
    let uncond = model.predict_eps(z_t, t, &Condition::null(), s)?;
    let c = model.predict_eps(z_t, t, cond, s)?;
    uncond.axpby(1.0 - w, &c, w)
}

/// Separable Gaussian prior over latent videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub shape: Shape,
    pub mean: LatentVideo,
    pub temporal_rho: f64,
    /// `H·W` per-frequency variances, row-major over `(ky, kx)`.
    pub spatial_spectrum: Vec<f64>,
    pub variance_scale: f64,
}

impl GaussianPrior {
    pub fn new(
        mean: LatentVideo,
        temporal_rho: f64,
        spatial_spectrum: Vec<f64>,
        variance_scale: f64,
    ) -> Result<Self> {
        let p = Self {
            shape: mean.shape(),
            mean,
            temporal_rho,
            spatial_spectrum,
            variance_scale,
        };
        p.validate()?;
        Ok(p)
    }

    /// Zero-mean, unit-variance white prior.
    pub fn standard_normal(shape: Shape) -> Self {
        Self {
            shape,
            mean: LatentVideo::zeros(shape),
            temporal_rho: 0.0,
            spatial_spectrum: vec![1.0; shape.plane_len()],
            variance_scale: 1.0,
        }
    }

    /// Checks positivity, `|rho| < 1`, shapes, and that the spectrum is
    /// symmetric under `k -> −k` (a real covariance).
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.shape.height, self.shape.width);
        if self.mean.shape() != self.shape {
            return Err(Error::InvalidPrior(format!(
                "mean has shape {}, prior declares {}",
                self.mean.shape(),
                self.shape
            )));
        }
        if !(self.temporal_rho.abs() < 1.0) {
            return Err(Error::InvalidPrior(format!(
                "temporal_rho must satisfy |rho| < 1, got {}",
                self.temporal_rho
            )));
        }
        if !(self.variance_scale >= 0.0 && self.variance_scale.is_finite()) {
            return Err(Error::InvalidPrior(format!(
                "variance_scale must be finite and >= 0, got {}",
                self.variance_scale
            )));
        }
        if self.spatial_spectrum.len() != h * w {
            return Err(Error::InvalidPrior(format!(
                "spectrum has {} entries, expected {}",
                self.spatial_spectrum.len(),
                h * w
            )));
        }
        for ky in 0..h {
            for kx in 0..w {
                let v = self.spatial_spectrum[ky * w + kx];
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidPrior(format!(
                        "spectrum entry ({ky}, {kx}) = {v} must be positive"
                    )));
                }
                let m = self.spatial_spectrum[mirror_bin(ky, h) * w + mirror_bin(kx, w)];
                if (v - m).abs() > 1e-12 * v.max(m) {
                    return Err(Error::InvalidPrior(format!(
                        "spectrum is not symmetric at ({ky}, {kx})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The AR(1) correlation matrix across frames.
    pub fn temporal_correlation(&self) -> DMatrix<f64> {
        let f = self.shape.frames;
        DMatrix::from_fn(f, f, |i, j| {
            self.temporal_rho.powi((i as i32 - j as i32).abs())
        })
    }

    /// The same prior with `delta` added to the mean.
    pub fn shifted(&self, delta: &LatentVideo) -> Result<Self> {
        Ok(Self {
            mean: self.mean.add(delta)?,
            ..self.clone()
        })
    }
}

/// Bayes-optimal ε-predictor for a [`GaussianPrior`].
#[derive(Clone)]
pub struct AnalyticDenoiser {
    prior: GaussianPrior,
    /// Columns are orthonormal eigenvectors of the temporal correlation.
    temporal_vectors: DMatrix<f64>,
    temporal_values: Vec<f64>,
    fft: Fft2,
}

impl fmt::Debug for AnalyticDenoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticDenoiser")
            .field("shape", &self.prior.shape)
            .field("temporal_rho", &self.prior.temporal_rho)
            .field("variance_scale", &self.prior.variance_scale)
            .finish()
    }
}

impl AnalyticDenoiser {
    pub fn new(prior: GaussianPrior) -> Result<Self> {
        prior.validate()?;
        let eig = SymmetricEigen::new(prior.temporal_correlation());
        let temporal_values: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        Ok(Self {
            fft: Fft2::new(prior.shape.height, prior.shape.width),
            temporal_vectors: eig.eigenvectors,
            temporal_values,
            prior,
        })
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    /// Applies `diag(gain(eigenvalue))` in the prior's eigenbasis to `x`.
    fn apply_spectral(&self, x: &LatentVideo, gain: impl Fn(f64) -> f64) -> LatentVideo {
        let shape = self.prior.shape;
        let (nf, nc, plane) = (shape.frames, shape.channels, shape.plane_len());

        // spatial DFT of every (frame, channel) plane
        let mut spec: Vec<Complex64> = Vec::with_capacity(shape.len());
        for p in x.data().chunks_exact(plane) {
            spec.extend(self.fft.forward_real(p));
        }

        let u = &self.temporal_vectors;
        let mut out = vec![Complex64::new(0.0, 0.0); shape.len()];
        let mut coeffs = vec![Complex64::new(0.0, 0.0); nf];
        for c in 0..nc {
            for k in 0..plane {
                let at = |f: usize| (f * nc + c) * plane + k;
                let s_k = self.prior.spatial_spectrum[k];
                for (j, coef) in coeffs.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for f in 0..nf {
                        acc += spec[at(f)] * u[(f, j)];
                    }
                    let lambda = self.prior.variance_scale * self.temporal_values[j] * s_k;
                    *coef = acc * gain(lambda);
                }
                for f in 0..nf {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (j, coef) in coeffs.iter().enumerate() {
                        acc += coef * u[(f, j)];
                    }
                    out[at(f)] = acc;
                }
            }
        }

        let mut data = Vec::with_capacity(shape.len());
        for p in out.chunks_exact_mut(plane) {
            self.fft.inverse(p);
            data.extend(p.iter().map(|v| v.re));
        }
        LatentVideo::from_raw(shape, data)
    }

    /// Posterior mean `E[z0 | z_t]` under the prior (mean shifted by `cond`).
    pub fn posterior_mean(
        &self,
        z_t: &LatentVideo,
        t: usize,
        cond: &Condition,
        s: &NoiseSchedule,
    ) -> Result<LatentVideo> {
        let (ab, mean, resid) = self.residual(z_t, t, cond, s)?;
        let sab = ab.sqrt();
        let filtered = self.apply_spectral(&resid, |lambda| sab * lambda / (ab * lambda + 1.0 - ab));
        mean.add(&filtered)
    }

    fn residual(
        &self,
        z_t: &LatentVideo,
        t: usize,
        cond: &Condition,
        s: &NoiseSchedule,
    ) -> Result<(f64, LatentVideo, LatentVideo)> {
        z_t.ensure_shape(self.prior.shape)?;
        if t == 0 || t > s.total_steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                min: 1,
                max: s.total_steps(),
            });
        }
        let ab = s.alpha_bar(t)?;
        let mean = match &cond.shift {
            Some(shift) => self.prior.mean.add(shift)?,
            None => self.prior.mean.clone(),
        };
        let resid = z_t.axpby(1.0, &mean, -ab.sqrt())?;
        Ok((ab, mean, resid))
    }
}

impl Denoiser for AnalyticDenoiser {
    fn shape(&self) -> Shape {
        self.prior.shape
    }

    fn predict_eps(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: &Condition,
        s: &NoiseSchedule,
    ) -> Result<LatentVideo> {
        let (ab, _, resid) = self.residual(z, t, cond, s)?;
        let snoise = (1.0 - ab).sqrt();
        Ok(self.apply_spectral(&resid, |lambda| snoise / (ab * lambda + 1.0 - ab)))
    }
}

/// Exact ε-predictor of the Gaussian prior at timestep `t`.
pub fn analytic_eps(
    prior: &GaussianPrior,
    z_t: &LatentVideo,
    t: usize,
    cond: &Condition,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    AnalyticDenoiser::new(prior.clone())?.predict_eps(z_t, t, cond, s)
}

/// Zero-mean, unit-scale denoiser over a temporally correlated prior.
pub fn make_t2v_toy(shape: Shape, rho: f64, spectrum: Vec<f64>) -> Result<AnalyticDenoiser> {
    AnalyticDenoiser::new(GaussianPrior::new(
        LatentVideo::zeros(shape),
        rho,
        spectrum,
        1.0,
    )?)
}

/// Zero-mean, unit-scale denoiser over a per-frame (rho = 0) prior.
pub fn make_t2i_toy(shape: Shape, spectrum: Vec<f64>) -> Result<AnalyticDenoiser> {
    make_t2v_toy(shape, 0.0, spectrum)
}
