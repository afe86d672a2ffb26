//! Noise schedules, the forward process, clean-latent projection and
//! timestep grids.
//!
//! `alpha_bar[t]` is always the cumulative signal coefficient, with
//! `alpha_bar[0] = 1`. The forward process is
//! `z_t = sqrt(alpha_bar[t])·z0 + sqrt(1 − alpha_bar[t])·eps`.

use serde::{Deserialize, Serialize};

use crate::{Error, LatentVideo, Result};

/// Projection refuses to divide by `sqrt(alpha_bar)` below this value.
pub const ALPHA_BAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `beta_t` linear in `t` from `beta_start` to `beta_end`.
    LinearBeta { beta_start: f64, beta_end: f64 },
    /// `sqrt(beta_t)` linear in `t` (Stable Diffusion's "scaled_linear").
    ScaledLinearBeta { beta_start: f64, beta_end: f64 },
    /// Squared-cosine `alpha_bar` with offset `s`; betas clipped at `max_beta`.
    Cosine { offset: f64, max_beta: f64 },
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LinearBeta { .. } => "linear_beta",
            Self::ScaledLinearBeta { .. } => "scaled_linear_beta",
            Self::Cosine { .. } => "cosine",
        }
    }

    /// Default T2I schedule.
    pub fn default_t2i() -> Self {
        Self::LinearBeta {
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }

    /// Default T2V schedule.
    pub fn default_t2v() -> Self {
        Self::ScaledLinearBeta {
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }

    fn betas(&self, total_steps: usize) -> Result<Vec<f64>> {
        let frac = |i: usize| {
            if total_steps == 1 {
                0.0
            } else {
                i as f64 / (total_steps - 1) as f64
            }
        };
        match *self {
            Self::LinearBeta {
                beta_start,
                beta_end,
            } => {
                check_beta_range(beta_start, beta_end)?;
                Ok((0..total_steps)
                    .map(|i| beta_start + (beta_end - beta_start) * frac(i))
                    .collect())
            }
            Self::ScaledLinearBeta {
                beta_start,
                beta_end,
            } => {
                check_beta_range(beta_start, beta_end)?;
                let (a, b) = (beta_start.sqrt(), beta_end.sqrt());
                Ok((0..total_steps)
                    .map(|i| {
                        let r = a + (b - a) * frac(i);
                        r * r
                    })
                    .collect())
            }
            Self::Cosine { offset, max_beta } => {
                if !(offset >= 0.0 && offset.is_finite()) || !(max_beta > 0.0 && max_beta < 1.0) {
                    return Err(Error::InvalidParams(format!(
                        "cosine schedule needs offset >= 0 and 0 < max_beta < 1, got {offset}, {max_beta}"
                    )));
                }
                let f = |t: usize| {
                    let x = (t as f64 / total_steps as f64 + offset) / (1.0 + offset);
                    let c = (x * std::f64::consts::FRAC_PI_2).cos();
                    c * c
                };
                Ok((1..=total_steps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, max_beta))
                    .collect())
            }
        }
    }
}

fn check_beta_range(start: f64, end: f64) -> Result<()> {
    if !(start > 0.0 && start <= end && end < 1.0) {
        return Err(Error::InvalidParams(format!(
            "beta range must satisfy 0 < beta_start <= beta_end < 1, got {start} -> {end}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleRecord {
    #[serde(flatten)]
    kind: ScheduleKind,
    total_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_bar: Option<Vec<f64>>,
}

/// A discrete noise schedule over integer timesteps `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRecord", into = "ScheduleRecord")]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    total_steps: usize,
    alpha_bar: Vec<f64>,
}

impl TryFrom<ScheduleRecord> for NoiseSchedule {
    type Error = Error;

    fn try_from(rec: ScheduleRecord) -> Result<Self> {
        let s = make_schedule(rec.kind, rec.total_steps)?;
        if let Some(stored) = rec.alpha_bar {
            let matches = stored.len() == s.alpha_bar.len()
                && stored
                    .iter()
                    .zip(&s.alpha_bar)
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            if !matches {
                return Err(Error::InvalidParams(
                    "stored alpha_bar does not match the schedule parameters".into(),
                ));
            }
        }
        Ok(s)
    }
}

impl From<NoiseSchedule> for ScheduleRecord {
    fn from(s: NoiseSchedule) -> Self {
        Self {
            kind: s.kind,
            total_steps: s.total_steps,
            alpha_bar: Some(s.alpha_bar),
        }
    }
}

/// Builds a schedule with `alpha_bar[t] = Π_{s≤t} (1 − beta_s)`.
pub fn make_schedule(kind: ScheduleKind, total_steps: usize) -> Result<NoiseSchedule> {
    if total_steps == 0 {
        return Err(Error::InvalidParams("total_steps must be >= 1".into()));
    }
    let betas = kind.betas(total_steps)?;
    let mut alpha_bar = Vec::with_capacity(total_steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for b in betas {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    let s = NoiseSchedule {
        kind,
        total_steps,
        alpha_bar,
    };
    s.validate()?;
    Ok(s)
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t, 0)?;
        Ok(self.alpha_bar[t])
    }

    fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.total_steps {
            return Err(Error::TimestepOutOfRange {
                t,
                min,
                max: self.total_steps,
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.alpha_bar[0] != 1.0 {
            return Err(Error::InvalidParams("alpha_bar[0] must be 1".into()));
        }
        for w in self.alpha_bar.windows(2) {
            if !(w[1] < w[0] && w[1] > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "alpha_bar must be strictly decreasing and positive ({} -> {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

/// `sqrt(alpha_bar[t])·z0 + sqrt(1 − alpha_bar[t])·eps`.
pub fn forward_diffuse(
    z0: &LatentVideo,
    t: usize,
    eps: &LatentVideo,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    let ab = s.alpha_bar(t)?;
    z0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Clean-latent estimate `(z_t − sqrt(1 − alpha_bar[t])·eps_pred) / sqrt(alpha_bar[t])`.
pub fn project_clean(
    z_t: &LatentVideo,
    eps_pred: &LatentVideo,
    t: usize,
    s: &NoiseSchedule,
) -> Result<LatentVideo> {
    let ab = s.alpha_bar(t)?;
    if ab < ALPHA_BAR_FLOOR {
        return Err(Error::DegenerateAlpha { t, alpha_bar: ab });
    }
    let inv = 1.0 / ab.sqrt();
    z_t.axpby(inv, eps_pred, -(1.0 - ab).sqrt() * inv)
}

/// Signal-to-noise ratio `alpha_bar[t] / (1 − alpha_bar[t])` for `1 ≤ t ≤ T`.
pub fn snr(s: &NoiseSchedule, t: usize) -> Result<f64> {
    s.check_t(t, 1)?;
    let ab = s.alpha_bar[t];
    Ok(ab / (1.0 - ab))
}

/// Timestep of `to` whose SNR is closest (in log space) to `snr(from, t)`.
pub fn snr_match(from: &NoiseSchedule, to: &NoiseSchedule, t: usize) -> Result<usize> {
    if t == 0 {
        return Ok(0);
    }
    let target = snr(from, t)?.ln();
    let mut best = (1, f64::INFINITY);
    for cand in 1..=to.total_steps {
        let d = (snr(to, cand)?.ln() - target).abs();
        if d < best.1 {
            best = (cand, d);
        }
    }
    Ok(best.0)
}

/// A strictly decreasing sampling subsequence with an optional set of
/// temporal-refining steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepGrid {
    steps: Vec<usize>,
    refine_set: Vec<usize>,
}

impl TimestepGrid {
    /// Validates that `steps` is strictly decreasing within `[1, total_steps]`.
    pub fn new(steps: Vec<usize>, total_steps: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidParams("grid needs at least one step".into()));
        }
        for &t in &steps {
            if t == 0 || t > total_steps {
                return Err(Error::TimestepOutOfRange {
                    t,
                    min: 1,
                    max: total_steps,
                });
            }
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParams(
                "grid steps must be strictly decreasing".into(),
            ));
        }
        Ok(Self {
            steps,
            refine_set: Vec::new(),
        })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn refine_set(&self) -> &[usize] {
        &self.refine_set
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn position(&self, t: usize) -> Option<usize> {
        self.steps.iter().position(|&s| s == t)
    }

    pub fn is_refine_step(&self, t: usize) -> bool {
        self.refine_set.contains(&t)
    }

    /// Timestep following grid position `pos`, or 0 past the end.
    pub fn step_after(&self, pos: usize) -> usize {
        self.steps.get(pos + 1).copied().unwrap_or(0)
    }

    /// `(t, t_prev)` pairs along the chain, ending with `(t_last, 0)`.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.steps.len()).map(|i| (self.steps[i], self.step_after(i)))
    }

    /// Replaces the refining set; every entry must lie on the grid.
    pub fn with_refine_set(mut self, mut refine: Vec<usize>) -> Result<Self> {
        refine.sort_unstable_by(|a, b| b.cmp(a));
        refine.dedup();
        if let Some(&t) = refine.iter().find(|t| !self.steps.contains(t)) {
            return Err(Error::NotOnGrid(t));
        }
        self.refine_set = refine;
        Ok(self)
    }
}

/// `K` evenly strided steps `T, T − T/K, …`, all positive, descending.
pub fn select_timesteps(s: &NoiseSchedule, k: usize) -> Result<TimestepGrid> {
    let t = s.total_steps;
    if k == 0 || k > t {
        return Err(Error::StepsOutOfRange { k, min: 1, max: t });
    }
    let steps = (0..k).map(|i| t - (i * t) / k).collect();
    TimestepGrid::new(steps, t)
}

/// Marks `k` refining steps spread evenly over the high-noise half of the
/// grid, always including the first step.
///
/// The window is the first `max(ceil(n/2), k)` steps and the chosen
/// positions are `round(i·(window − 1)/(k − 1))`.
pub fn select_refine_steps(grid: &TimestepGrid, k: usize) -> Result<TimestepGrid> {
    let n = grid.len();
    if k > n {
        return Err(Error::StepsOutOfRange { k, min: 0, max: n });
    }
    let refine = match k {
        0 => Vec::new(),
        1 => vec![grid.steps[0]],
        _ => {
            let window = n.div_ceil(2).max(k);
            (0..k)
                .map(|i| {
                    let num = 2 * i * (window - 1) + (k - 1);
                    grid.steps[num / (2 * (k - 1))]
                })
                .collect()
        }
    };
    grid.clone().with_refine_set(refine)
}
