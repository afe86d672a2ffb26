//! Small FFT helpers on top of `rustfft`.
//!
//! Forward transforms are unnormalized; inverse transforms divide by the
//! transform length (numpy convention).

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Signed normalized frequency of DFT bin `k` out of `n`, in `[-0.5, 0.5]`.
///
/// For even `n` the Nyquist bin maps to `+0.5`.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// Radial normalized frequency of 2-D bin `(ky, kx)` on an `h × w` grid.
pub fn radial_frequency(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    let fy = bin_frequency(ky, h);
    let fx = bin_frequency(kx, w);
    (fy * fy + fx * fx).sqrt()
}

/// Index of the bin holding the negated frequency of bin `k`.
pub fn mirror_bin(k: usize, n: usize) -> usize {
    (n - k) % n
}

/// Pre-planned 2-D transform for row-major `height × width` planes.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward(&self, plane: &mut [Complex64]) {
        self.apply(plane, false);
    }

    /// Inverse transform including the `1/(H·W)` normalization.
    pub fn inverse(&self, plane: &mut [Complex64]) {
        self.apply(plane, true);
        let norm = 1.0 / (self.height * self.width) as f64;
        for v in plane.iter_mut() {
            *v *= norm;
        }
    }

    fn apply(&self, plane: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        debug_assert_eq!(plane.len(), h * w);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in plane.chunks_exact_mut(w) {
            row.process(r);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y];
            }
        }
    }

    /// Forward transform of a real plane.
    pub fn forward_real(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

/// Pre-planned 1-D transform of length `n` applied along a strided axis.
#[derive(Clone)]
pub struct Fft1 {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft1").field("len", &self.len).finish()
    }
}

impl Fft1 {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
        let norm = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft2(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((ky * y) as f64 / h as f64 + (kx * xx) as f64 / w as f64);
                        acc += x[y * w + xx] * Complex64::new(ph.cos(), ph.sin());
                    }
                }
                out[ky * w + kx] = acc;
            }
        }
        out
    }

    #[test]
    fn fft2_matches_naive_dft_and_inverts() {
        let (h, w) = (3, 4);
        let x: Vec<f64> = (0..h * w).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let plan = Fft2::new(h, w);
        let got = plan.forward_real(&x);
        let want = naive_dft2(&x, h, w);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).norm() < 1e-10);
        }
        let mut back = got.clone();
        plan.inverse(&mut back);
        for (a, b) in back.iter().zip(&x) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn frequencies() {
        assert_eq!(bin_frequency(0, 4), 0.0);
        assert_eq!(bin_frequency(2, 4), 0.5);
        assert_eq!(bin_frequency(3, 4), -0.25);
        assert_eq!(bin_frequency(1, 2), 0.5);
        assert_eq!(mirror_bin(0, 5), 0);
        assert_eq!(mirror_bin(1, 5), 4);
    }
}
