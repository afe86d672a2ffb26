//! Scaled dot-product attention, its first-only cross-frame inflation, and
//! a denoiser wrapper that shares frame-0 appearance across frames.
//!
//! Token matrices are row-per-token: a frame of an `F×C×H×W` latent is an
//! `(H·W) × C` matrix. Projections act on the right (`Q = X·W_Q`).
//!
//! Per-frame convolutions need no inflation here: the analytic denoisers
//! already act on each frame independently in space, which is exactly what
//! a `1×k×k` kernel does.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::denoiser::{Condition, Denoiser};
use crate::schedule::NoiseSchedule;
use crate::{Error, LatentVideo, Result, Shape};

/// `softmax(Q·Kᵀ / sqrt(d)) · V`, softmax taken row-wise.
pub fn attention(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() || k.nrows() == 0 || q.ncols() == 0 {
        return Err(Error::IncompatibleShape(format!(
            "attention got Q {}x{}, K {}x{}, V {}x{}",
            q.nrows(),
            q.ncols(),
            k.nrows(),
            k.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let (n, dv) = (q.nrows(), v.ncols());
    let mut out = vec![0.0; n * dv];
    attend(
        &row_major(q),
        &row_major(k),
        &row_major(v),
        q.ncols(),
        dv,
        &mut out,
    );
    Ok(DMatrix::from_row_slice(n, dv, &out))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Row-major kernel: `q` is `n×d`, `k` is `m×d`, `v` is `m×dv`, `out` is
/// `n×dv`.
fn attend(q: &[f64], k: &[f64], v: &[f64], d: usize, dv: usize, out: &mut [f64]) {
    let m = k.len() / d;
    // column-major copies so the inner loops run over contiguous keys
    let kt = transpose(k, m, d);
    let vt = transpose(v, m, dv);
    let scale = 1.0 / (d as f64).sqrt();
    let mut logits = vec![0.0; m];
    for (qi, oi) in q.chunks_exact(d).zip(out.chunks_exact_mut(dv)) {
        logits.fill(0.0);
        for (c, col) in kt.chunks_exact(m).enumerate() {
            let qc = scale * qi[c];
            for (l, kv) in logits.iter_mut().zip(col) {
                *l += qc * kv;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for (o, col) in oi.iter_mut().zip(vt.chunks_exact(m)) {
            *o = dot(&logits, col) / sum;
        }
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Projection matrices for one attention layer (`d_in × d` each).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub d: usize,
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
}

impl AttentionParams {
    pub fn new(w_q: DMatrix<f64>, w_k: DMatrix<f64>, w_v: DMatrix<f64>) -> Result<Self> {
        let d = w_q.ncols();
        let d_in = w_q.nrows();
        for (name, m) in [("W_Q", &w_q), ("W_K", &w_k), ("W_V", &w_v)] {
            if m.nrows() != d_in || m.ncols() != d || d == 0 {
                return Err(Error::IncompatibleShape(format!(
                    "{name} is {}x{}, expected {d_in}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { d, w_q, w_k, w_v })
    }

    /// Three independent seeded random orthonormal `dim × dim` matrices.
    pub fn random_orthonormal(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("attention width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ortho = || {
            let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
            let qr = g.qr();
            let (mut q, r) = (qr.q(), qr.r());
            // sign-fix so the draw is Haar-distributed and deterministic
            for j in 0..dim {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            q
        };
        let (w_q, w_k, w_v) = (ortho(), ortho(), ortho());
        Self::new(w_q, w_k, w_v)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let i = DMatrix::identity(dim, dim);
        Self::new(i.clone(), i.clone(), i)
    }

    pub fn d_in(&self) -> usize {
        self.w_q.nrows()
    }
}

/// Every frame's queries attend to frame 0's keys and values.
pub fn first_only_cross_frame(
    frames: &[DMatrix<f64>],
    params: &AttentionParams,
) -> Result<Vec<DMatrix<f64>>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::RaggedFrames("no frames".into()))?;
    if let Some((i, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.shape() != first.shape())
    {
        return Err(Error::RaggedFrames(format!(
            "frame {i} is {}x{}, frame 0 is {}x{}",
            f.nrows(),
            f.ncols(),
            first.nrows(),
            first.ncols()
        )));
    }
    if first.ncols() != params.d_in() {
        return Err(Error::IncompatibleShape(format!(
            "token width {} does not match projection input {}",
            first.ncols(),
            params.d_in()
        )));
    }
    let k0 = first * &params.w_k;
    let v0 = first * &params.w_v;
    frames
        .par_iter()
        .map(|x| attention(&(x * &params.w_q), &k0, &v0))
        .collect()
}

/// Row-major `(H·W) × d` projection of one frame of a latent.
fn project_frame(frame: &[f64], plane: usize, w: &DMatrix<f64>) -> Vec<f64> {
    let (d_in, d) = (w.nrows(), w.ncols());
    let mut out = vec![0.0; plane * d];
    for (tok, row) in out.chunks_exact_mut(d).enumerate() {
        for c in 0..d_in {
            let x = frame[c * plane + tok];
            for (j, o) in row.iter_mut().enumerate() {
                *o += x * w[(c, j)];
            }
        }
    }
    out
}

/// First-only cross-frame attention applied directly to a latent whose
/// channels are the token features.
fn cross_frame_latent(v: &LatentVideo, params: &AttentionParams) -> LatentVideo {
    let shape = v.shape();
    let plane = shape.plane_len();
    let d = params.d;
    let k0 = project_frame(v.frame(0), plane, &params.w_k);
    let v0 = project_frame(v.frame(0), plane, &params.w_v);
    let frames: Vec<Vec<f64>> = (0..shape.frames)
        .into_par_iter()
        .map(|f| {
            let q = project_frame(v.frame(f), plane, &params.w_q);
            let mut out = vec![0.0; plane * d];
            attend(&q, &k0, &v0, d, d, &mut out);
            out
        })
        .collect();
    LatentVideo::from_fn(shape, |f, c, h, w| frames[f][(h * shape.width + w) * d + c])
}

/// A denoiser whose predictions are blended with their first-only
/// cross-frame attention output:
/// `eps = (1 − mix)·eps_base + mix·cross_frame(eps_base)`.
#[derive(Debug, Clone)]
pub struct CrossFrameDenoiser<D> {
    base: D,
    params: AttentionParams,
    mix: f64,
}

impl<D: Denoiser> CrossFrameDenoiser<D> {
    pub fn base(&self) -> &D {
        &self.base
    }

    pub fn mix(&self) -> f64 {
        self.mix
    }
}

pub fn wrap_crossframe<D: Denoiser>(
    base: D,
    params: AttentionParams,
    mix: f64,
) -> Result<CrossFrameDenoiser<D>> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::InvalidParams(format!("mix must lie in [0, 1], got {mix}")));
    }
    let c = base.shape().channels;
    if params.d_in() != c || params.d != c {
        return Err(Error::IncompatibleShape(format!(
            "attention is {}→{}, latent has {c} channels",
            params.d_in(),
            params.d
        )));
    }
    Ok(CrossFrameDenoiser { base, params, mix })
}

impl<D: Denoiser> Denoiser for CrossFrameDenoiser<D> {
    fn shape(&self) -> Shape {
        self.base.shape()
    }

    fn predict_eps(
        &self,
        z: &LatentVideo,
        t: usize,
        cond: &Condition,
        s: &NoiseSchedule,
    ) -> Result<LatentVideo> {
        let eps = self.base.predict_eps(z, t, cond, s)?;
        if self.mix == 0.0 {
            return Ok(eps);
        }
        eps.axpby(1.0 - self.mix, &cross_frame_latent(&eps, &self.params), self.mix)
    }
}
