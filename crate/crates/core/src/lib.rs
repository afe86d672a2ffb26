//! Decomposed video diffusion sampling with exact Gaussian denoisers.
//!
//! A latent video is refined in two alternating phases. A temporally
//! coherent "T2V" model imprints motion through low-pass filtering,
//! partial re-noising and a few denoising steps; the result is handed back
//! to a detail-rich "T2I" model through clean-latent projection and DDIM
//! inversion, and the T2I model (with first-only cross-frame attention)
//! takes the actual sampling step.
//!
//! Every denoiser here is the Bayes-optimal ε-predictor of a Gaussian
//! prior with separable temporal (AR(1)) and stationary spatial
//! covariance, so each stage can be checked against closed forms.

pub mod attention;
pub mod denoiser;
pub mod elevator;
mod error;
pub mod fft;
pub mod freqfilter;
pub mod latent;
pub mod metrics;
#[cfg(any(test, feature = "test-oracles"))]
pub mod oracles;
pub mod sampler;
pub mod schedule;
pub mod synth;

pub use error::{Error, Result};
pub use latent::{LatentVideo, Shape};
