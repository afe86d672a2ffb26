//! Slow, direct reference implementations used to check the fast paths.
//!
//! Everything here is written from the defining formulas with dense
//! matrices and explicit sums. Only enabled for tests.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;

use crate::attention::AttentionParams;
use crate::denoiser::GaussianPrior;
use crate::fft::radial_frequency;
use crate::freqfilter::{FilterAxes, LowPassMask};
use crate::{LatentVideo, Result};

/// Dense `n × n` prior covariance, `n = F·C·H·W`, in frame-major order.
pub fn dense_covariance(prior: &GaussianPrior) -> DMatrix<f64> {
    let s = prior.shape;
    let (h, w) = (s.height, s.width);
    let hw = (h * w) as f64;
    // circulant spatial covariance from its DFT eigenvalues
    let spatial = DMatrix::from_fn(h * w, h * w, |p, q| {
        let (dy, dx) = ((p / w) as f64 - (q / w) as f64, (p % w) as f64 - (q % w) as f64);
        let mut acc = 0.0;
        for ky in 0..h {
            for kx in 0..w {
                let phase = 2.0 * PI * (ky as f64 * dy / h as f64 + kx as f64 * dx / w as f64);
                acc += prior.spatial_spectrum[ky * w + kx] * phase.cos();
            }
        }
        acc / hw
    });
    let temporal = prior.temporal_correlation();
    let n = s.len();
    let (plane, frame) = (s.plane_len(), s.frame_len());
    DMatrix::from_fn(n, n, |i, j| {
        let (fi, fj) = (i / frame, j / frame);
        let (ci, cj) = ((i % frame) / plane, (j % frame) / plane);
        if ci != cj {
            return 0.0;
        }
        prior.variance_scale * temporal[(fi, fj)] * spatial[(i % plane, j % plane)]
    })
}

/// `sqrt(1 − ab) · (ab·Σ + (1 − ab)·I)^{-1} · (z − sqrt(ab)·m)` by a dense
/// linear solve.
pub fn dense_posterior_eps(prior: &GaussianPrior, z: &LatentVideo, ab: f64) -> LatentVideo {
    let n = prior.shape.len();
    let a = dense_covariance(prior) * ab + DMatrix::identity(n, n) * (1.0 - ab);
    let r = DVector::from_iterator(
        n,
        z.data().iter().zip(prior.mean.data()).map(|(z, m)| z - ab.sqrt() * m),
    );
    let x = a.lu().solve(&r).expect("posterior system is positive definite");
    LatentVideo::from_vec(prior.shape, (x * (1.0 - ab).sqrt()).iter().copied().collect())
        .expect("shape matches")
}

/// Naive DFT of `x` (`sign` −1 forward, +1 inverse, no scaling).
fn dft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, sign * 2.0 * PI * (k * j) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// Low-pass filtering through explicit DFT sums: the temporal mask on each
/// pixel series, then (for spatial-temporal) the radial Gaussian on each
/// plane via a direct 2-D DFT.
pub fn naive_lpff(v: &LatentVideo, mask: &LowPassMask, axes: FilterAxes) -> LatentVideo {
    let s = v.shape();
    let (f, stride) = (s.frames, s.frame_len());
    let mut out = v.data().to_vec();
    for p in 0..stride {
        let series: Vec<Complex64> = (0..f).map(|i| Complex64::new(out[i * stride + p], 0.0)).collect();
        let spec: Vec<Complex64> = dft(&series, -1.0).iter().zip(&mask.temporal).map(|(b, g)| b * g).collect();
        for (i, b) in dft(&spec, 1.0).iter().enumerate() {
            out[i * stride + p] = b.re / f as f64;
        }
    }
    if axes == FilterAxes::SpatialTemporal {
        let (h, w) = (s.height, s.width);
        let d0 = mask.d0;
        for plane in out.chunks_exact_mut(h * w) {
            let mut spec = vec![Complex64::new(0.0, 0.0); h * w];
            for ky in 0..h {
                for kx in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let ph = -2.0 * PI * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                            acc += plane[y * w + x] * Complex64::from_polar(1.0, ph);
                        }
                    }
                    let fr = radial_frequency(ky, kx, h, w);
                    spec[ky * w + kx] = acc * (-fr * fr / (2.0 * d0 * d0)).exp();
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for ky in 0..h {
                        for kx in 0..w {
                            let ph = 2.0 * PI * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                            acc += spec[ky * w + kx] * Complex64::from_polar(1.0, ph);
                        }
                    }
                    plane[y * w + x] = acc.re / (h * w) as f64;
                }
            }
        }
    }
    LatentVideo::from_vec(s, out).expect("shape matches")
}

/// Softmax attention as a double loop over queries and keys.
pub fn naive_attention(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let d = q.ncols() as f64;
    let mut out = DMatrix::zeros(q.nrows(), v.ncols());
    for i in 0..q.nrows() {
        let logits: Vec<f64> = (0..k.nrows())
            .map(|j| (0..q.ncols()).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() / d.sqrt())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for j in 0..k.nrows() {
            for c in 0..v.ncols() {
                out[(i, c)] += weights[j] / total * v[(j, c)];
            }
        }
    }
    out
}

/// Every frame's queries against frame 0's keys and values.
pub fn naive_cross_frame(frames: &[DMatrix<f64>], params: &AttentionParams) -> Vec<DMatrix<f64>> {
    let k0 = &frames[0] * &params.w_k;
    let v0 = &frames[0] * &params.w_v;
    frames
        .iter()
        .map(|x| naive_attention(&(x * &params.w_q), &k0, &v0))
        .collect()
}

/// Sample covariance of flattened draws.
pub fn sample_covariance(samples: &[LatentVideo]) -> Result<DMatrix<f64>> {
    let n = samples[0].shape().len();
    let mut mean = DVector::zeros(n);
    for s in samples {
        mean += DVector::from_column_slice(s.data());
    }
    mean /= samples.len() as f64;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = DVector::from_column_slice(s.data()) - &mean;
        cov += &d * d.transpose();
    }
    Ok(cov / (samples.len() - 1) as f64)
}
