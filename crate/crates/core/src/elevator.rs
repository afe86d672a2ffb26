//! The decomposed sampling loop: temporal motion refining on the T2V side
//! interleaved with spatial quality elevating on the T2I side.
//!
//! Latents never pass directly between the two models. Every hand-off goes
//! through a clean-latent projection, so the two noise schedules never have
//! to agree. Each phase is recorded in a [`TraceEvent`] so that property can
//! be checked after the fact with [`check_handoff`] and
//! [`check_schedule_isolation`].

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{wrap_crossframe, AttentionParams};
use crate::denoiser::{cfg_eps, AnalyticDenoiser, Condition, Denoiser, GaussianPrior};
use crate::freqfilter::{gaussian_mask, gaussian_mask_3d, lpff, FilterAxes, LowPassMask};
use crate::metrics::frame_consistency;
use crate::sampler::{
    ddim_invert, ddim_step_detail, InversionConfig, SamplerConfig,
};
use crate::schedule::{
    forward_diffuse, make_schedule, project_clean, select_refine_steps, select_timesteps,
    snr_match, NoiseSchedule, ScheduleKind, TimestepGrid,
};
use crate::synth::PriorSpec;
use crate::{Error, LatentVideo, Result, Shape};

/// How a refined clean latent is brought back to the T2I noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionStrategy {
    /// Deterministic DDIM inversion under the T2I model, null condition.
    #[default]
    DdimInversion,
    /// Forward diffusion with one noise field shared by every frame.
    SameNoise,
    /// Forward diffusion with independent noise.
    RandomNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub enabled: bool,
    pub d0: f64,
    pub axes: FilterAxes,
    /// Filter at every refining step rather than only the first.
    pub apply_every_refine: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            d0: 0.25,
            axes: FilterAxes::Temporal,
            apply_every_refine: true,
        }
    }
}

/// Prompt stand-in: a constant mean shift applied to both models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// `None` is the null condition.
    pub shift: Option<f64>,
    pub scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            shift: None,
            scale: 1.0,
        }
    }
}

impl GuidanceConfig {
    pub fn condition(&self, shape: Shape) -> Condition {
        match self.shift {
            Some(v) => Condition::shifted(LatentVideo::filled(shape, v), self.scale),
            None => Condition {
                shift: None,
                guidance_scale: self.scale,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorPair {
    pub t2v: PriorSpec,
    pub t2i: PriorSpec,
}

impl Default for PriorPair {
    fn default() -> Self {
        Self {
            t2v: PriorSpec::t2v_default(),
            t2i: PriorSpec::t2i_default(),
        }
    }
}

/// Serializable plan parameters; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub shape: Shape,
    pub total_steps: usize,
    pub t2v_schedule: ScheduleKind,
    pub t2i_schedule: ScheduleKind,
    pub steps: usize,
    /// Number of refining steps; 0 runs pure T2I sampling.
    pub refine_steps: usize,
    /// Explicit refining timesteps, overriding `refine_steps`.
    pub refine_set: Option<Vec<usize>>,
    pub n_sdedit: usize,
    pub filter: FilterConfig,
    pub eta_t2v: f64,
    pub eta_t2i: f64,
    pub guidance: GuidanceConfig,
    pub attention_mix: f64,
    pub attention_seed: u64,
    pub inversion: InversionStrategy,
    pub fixed_point_iters: usize,
    /// Start the T2V leg at the grid step whose T2V SNR best matches the
    /// T2I SNR, instead of at the same index.
    pub snr_remap: bool,
    pub priors: PriorPair,
    pub seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            shape: Shape {
                frames: 16,
                channels: 4,
                height: 16,
                width: 16,
            },
            total_steps: 1000,
            t2v_schedule: ScheduleKind::default_t2v(),
            t2i_schedule: ScheduleKind::default_t2i(),
            steps: 50,
            refine_steps: 5,
            refine_set: None,
            n_sdedit: 9,
            filter: FilterConfig::default(),
            eta_t2v: 0.0,
            eta_t2i: DEFAULT_ETA_T2I,
            guidance: GuidanceConfig::default(),
            attention_mix: DEFAULT_ATTENTION_MIX,
            attention_seed: 0,
            inversion: InversionStrategy::DdimInversion,
            fixed_point_iters: InversionConfig::default().fixed_point_iters,
            snr_remap: false,
            priors: PriorPair::default(),
            seed: 0,
        }
    }
}

/// Default T2I stochasticity.
pub const DEFAULT_ETA_T2I: f64 = 0.0;
/// Default weight of the cross-frame attention branch.
pub const DEFAULT_ATTENTION_MIX: f64 = 0.05;

/// Which side of the pipeline an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    T2v,
    T2i,
}

/// Distribution a latent lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Clean,
    NoisyT2i,
    NoisyT2v,
}

impl Space {
    fn noisy(side: Side) -> Self {
        match side {
            Side::T2v => Self::NoisyT2v,
            Side::T2i => Self::NoisyT2i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Initial Gaussian draw.
    Init,
    /// Clean-latent projection.
    Project,
    /// Low-pass frequency filtering.
    Filter,
    /// Forward diffusion.
    Diffuse,
    /// One T2V denoising step inside the refining leg.
    Refine,
    /// DDIM inversion back to the T2I noise level.
    Invert,
    /// One T2I (or baseline) denoising step.
    Elevate,
}

/// One record of the step-by-step trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Grid position of the outer step.
    pub step: usize,
    /// Timestep of the output latent.
    pub timestep: usize,
    pub phase: Phase,
    pub model: Option<Side>,
    pub schedule: Option<Side>,
    pub input: Option<Space>,
    pub output: Space,
    pub mean: f64,
    pub std: f64,
    /// Adjacent-frame consistency of the clean projection, when one exists.
    pub clean_fc: Option<f64>,
}

/// Output latent and its trace.
#[derive(Debug, Clone)]
pub struct SampleRun {
    pub output: LatentVideo,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Default)]
struct Tracer {
    events: Vec<TraceEvent>,
}

impl Tracer {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        step: usize,
        timestep: usize,
        phase: Phase,
        side: Option<Side>,
        input: Option<Space>,
        output: Space,
        z: &LatentVideo,
        clean: Option<&LatentVideo>,
    ) {
        self.events.push(TraceEvent {
            step,
            timestep,
            phase,
            model: side.filter(|_| !matches!(phase, Phase::Filter | Phase::Diffuse)),
            schedule: side,
            input,
            output,
            mean: z.mean(),
            std: z.std(),
            clean_fc: clean.and_then(|c| frame_consistency(c).ok()),
        });
    }
}

#[derive(Debug, Clone)]
pub struct FilterSettings {
    pub enabled: bool,
    pub mask: LowPassMask,
    pub axes: FilterAxes,
    pub apply_every_refine: bool,
}

/// A fully built recipe.
#[derive(Clone)]
pub struct ElevatorPlan {
    pub t2v: Arc<dyn Denoiser>,
    pub t2v_schedule: NoiseSchedule,
    /// The inflated (cross-frame) T2I model used for every T2I-side call.
    pub t2i: Arc<dyn Denoiser>,
    pub t2i_schedule: NoiseSchedule,
    pub grid: TimestepGrid,
    pub n_sdedit: usize,
    pub filter: FilterSettings,
    pub sampler_cfg_t2v: SamplerConfig,
    pub sampler_cfg_t2i: SamplerConfig,
    pub inversion: InversionStrategy,
    pub inversion_cfg: InversionConfig,
    pub snr_remap: bool,
    pub seed: u64,
}

impl fmt::Debug for ElevatorPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ElevatorPlan")
            .field("grid", &self.grid)
            .field("n_sdedit", &self.n_sdedit)
            .field("inversion", &self.inversion)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Models and priors built from a [`PlanConfig`].
#[derive(Debug, Clone)]
pub struct Toys {
    pub t2v_prior: GaussianPrior,
    pub t2i_prior: GaussianPrior,
    pub t2v: Arc<dyn Denoiser>,
    /// Cross-frame-wrapped T2I model.
    pub t2i: Arc<dyn Denoiser>,
}

impl Toys {
    pub fn build(cfg: &PlanConfig) -> Result<Self> {
        let t2v_prior = cfg.priors.t2v.build(cfg.shape)?;
        let t2i_prior = cfg.priors.t2i.build(cfg.shape)?;
        let t2v: Arc<dyn Denoiser> = Arc::new(AnalyticDenoiser::new(t2v_prior.clone())?);
        let params = AttentionParams::random_orthonormal(cfg.shape.channels, cfg.attention_seed)?;
        let t2i: Arc<dyn Denoiser> = Arc::new(wrap_crossframe(
            AnalyticDenoiser::new(t2i_prior.clone())?,
            params,
            cfg.attention_mix,
        )?);
        Ok(Self {
            t2v_prior,
            t2i_prior,
            t2v,
            t2i,
        })
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta_t2v", self.eta_t2v), ("eta_t2i", self.eta_t2i)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::PlanInvalid(format!("{name} must lie in [0, 1], got {eta}")));
            }
        }
        if !(0.0..=1.0).contains(&self.attention_mix) {
            return Err(Error::PlanInvalid(format!(
                "attention_mix must lie in [0, 1], got {}",
                self.attention_mix
            )));
        }
        if self.filter.enabled && !(self.filter.d0 > 0.0) {
            return Err(Error::InvalidCutoff(self.filter.d0));
        }
        Ok(())
    }

    pub fn schedules(&self) -> Result<(NoiseSchedule, NoiseSchedule)> {
        Ok((
            make_schedule(self.t2v_schedule, self.total_steps)?,
            make_schedule(self.t2i_schedule, self.total_steps)?,
        ))
    }

    /// The sampling grid with its refining set.
    pub fn grid(&self, s: &NoiseSchedule) -> Result<TimestepGrid> {
        let grid = select_timesteps(s, self.steps)?;
        match &self.refine_set {
            Some(set) => grid.with_refine_set(set.clone()),
            None => select_refine_steps(&grid, self.refine_steps),
        }
    }

    pub fn sampler_configs(&self) -> (SamplerConfig, SamplerConfig) {
        let cond = self.guidance.condition(self.shape);
        (
            SamplerConfig {
                eta: self.eta_t2v,
                guidance: cond.clone(),
            },
            SamplerConfig {
                eta: self.eta_t2i,
                guidance: cond,
            },
        )
    }

    pub fn filter_settings(&self) -> Result<FilterSettings> {
        let f = self.shape.frames;
        let mask = if !self.filter.enabled {
            LowPassMask::identity(f)
        } else {
            match self.filter.axes {
                FilterAxes::Temporal => gaussian_mask(f, self.filter.d0)?,
                FilterAxes::SpatialTemporal => {
                    gaussian_mask_3d(f, self.shape.height, self.shape.width, self.filter.d0)?
                }
            }
        };
        Ok(FilterSettings {
            enabled: self.filter.enabled,
            mask,
            axes: if self.filter.enabled {
                self.filter.axes
            } else {
                FilterAxes::Temporal
            },
            apply_every_refine: self.filter.apply_every_refine,
        })
    }
}

impl ElevatorPlan {
    pub fn from_config(cfg: &PlanConfig) -> Result<Self> {
        Self::with_toys(cfg, &Toys::build(cfg)?)
    }

    /// Builds a plan around already-constructed models.
    pub fn with_toys(cfg: &PlanConfig, toys: &Toys) -> Result<Self> {
        cfg.validate()?;
        let (t2v_schedule, t2i_schedule) = cfg.schedules()?;
        let grid = cfg.grid(&t2i_schedule)?;
        let (sampler_cfg_t2v, sampler_cfg_t2i) = cfg.sampler_configs();
        let plan = Self {
            t2v: toys.t2v.clone(),
            t2v_schedule,
            t2i: toys.t2i.clone(),
            t2i_schedule,
            grid,
            n_sdedit: cfg.n_sdedit,
            filter: cfg.filter_settings()?,
            sampler_cfg_t2v,
            sampler_cfg_t2i,
            inversion: cfg.inversion,
            inversion_cfg: InversionConfig {
                fixed_point_iters: cfg.fixed_point_iters,
            },
            snr_remap: cfg.snr_remap,
            seed: cfg.seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t2v_schedule.total_steps() != self.t2i_schedule.total_steps() {
            return Err(Error::PlanInvalid(format!(
                "schedules disagree on T: {} vs {}",
                self.t2v_schedule.total_steps(),
                self.t2i_schedule.total_steps()
            )));
        }
        if self.t2v.shape() != self.t2i.shape() {
            return Err(Error::PlanInvalid(format!(
                "model shapes differ: {} vs {}",
                self.t2v.shape(),
                self.t2i.shape()
            )));
        }
        if self.filter.mask.temporal.len() != self.t2i.shape().frames {
            return Err(Error::PlanInvalid("filter mask does not match frame count".into()));
        }
        self.sampler_cfg_t2v.validate()?;
        self.sampler_cfg_t2i.validate()?;
        for &t in self.grid.refine_set() {
            let start = self.t2v_start(t)?;
            let pos = self.grid.position(start).ok_or(Error::NotOnGrid(start))?;
            let depth = self.grid.len() - pos;
            if self.n_sdedit > depth {
                return Err(Error::PlanInvalid(format!(
                    "n_sdedit = {} exceeds the {depth} grid steps below t = {t}",
                    self.n_sdedit
                )));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.t2i.shape()
    }

    /// Grid timestep at which the T2V leg starts for refining step `t`.
    fn t2v_start(&self, t: usize) -> Result<usize> {
        if !self.snr_remap {
            return Ok(t);
        }
        let target = snr_match(&self.t2i_schedule, &self.t2v_schedule, t)?;
        // snap to the nearest grid step
        Ok(*self
            .grid
            .steps()
            .iter()
            .min_by_key(|&&s| s.abs_diff(target))
            .expect("grid is never empty"))
    }

    /// Temporal motion refining at a refining step `t`; returns a latent in
    /// the T2I noise distribution at `t`.
    pub fn refine_temporal<R: Rng + ?Sized>(
        &self,
        z_t: &LatentVideo,
        t: usize,
        rng: &mut R,
    ) -> Result<LatentVideo> {
        self.refine_traced(z_t, t, rng, &mut Tracer::default())
    }

    fn refine_traced<R: Rng + ?Sized>(
        &self,
        z_t: &LatentVideo,
        t: usize,
        rng: &mut R,
        tr: &mut Tracer,
    ) -> Result<LatentVideo> {
        let pos = self.grid.position(t).ok_or(Error::StepNotRefinable(t))?;
        if !self.grid.is_refine_step(t) {
            return Err(Error::StepNotRefinable(t));
        }
        let (ts, vs) = (&self.t2i_schedule, &self.t2v_schedule);

        let eps = cfg_eps(&*self.t2i, z_t, t, &self.sampler_cfg_t2i.guidance, ts)?;
        let mut clean = project_clean(z_t, &eps, t, ts)?;
        tr.push(pos, 0, Phase::Project, Some(Side::T2i), Some(Space::NoisyT2i), Space::Clean, &clean, Some(&clean));

        let first_refine = self.grid.refine_set().first() == Some(&t);
        if self.filter.enabled && (self.filter.apply_every_refine || first_refine) {
            clean = lpff(&clean, &self.filter.mask, self.filter.axes)?;
            tr.push(pos, 0, Phase::Filter, None, Some(Space::Clean), Space::Clean, &clean, Some(&clean));
        }

        if self.n_sdedit > 0 {
            let start = self.t2v_start(t)?;
            let spos = self.grid.position(start).ok_or(Error::NotOnGrid(start))?;
            let noise = LatentVideo::randn(clean.shape(), rng);
            let mut z = forward_diffuse(&clean, start, &noise, vs)?;
            tr.push(pos, start, Phase::Diffuse, Some(Side::T2v), Some(Space::Clean), Space::NoisyT2v, &z, None);
            for i in spos..spos + self.n_sdedit {
                let (cur, next) = (self.grid.steps()[i], self.grid.step_after(i));
                let out = ddim_step_detail(&*self.t2v, &z, cur, next, vs, &self.sampler_cfg_t2v, rng)?;
                z = out.z_prev;
                let space = if next == 0 { Space::Clean } else { Space::NoisyT2v };
                tr.push(pos, next, Phase::Refine, Some(Side::T2v), Some(Space::NoisyT2v), space, &z, Some(&out.x0));
                if next == 0 {
                    break;
                }
            }
            let t_out = self.grid.step_after(spos + self.n_sdedit - 1);
            clean = if t_out == 0 {
                z
            } else {
                let eps = cfg_eps(&*self.t2v, &z, t_out, &self.sampler_cfg_t2v.guidance, vs)?;
                let c = project_clean(&z, &eps, t_out, vs)?;
                tr.push(pos, 0, Phase::Project, Some(Side::T2v), Some(Space::NoisyT2v), Space::Clean, &c, Some(&c));
                c
            };
        }

        let out = match self.inversion {
            InversionStrategy::DdimInversion => {
                let z = ddim_invert(&*self.t2i, &clean, &self.grid, t, ts, self.inversion_cfg)?;
                tr.push(pos, t, Phase::Invert, Some(Side::T2i), Some(Space::Clean), Space::NoisyT2i, &z, Some(&clean));
                z
            }
            InversionStrategy::SameNoise | InversionStrategy::RandomNoise => {
                let shape = clean.shape();
                let noise = if self.inversion == InversionStrategy::SameNoise {
                    let one = LatentVideo::randn(shape.with_frames(1), rng);
                    LatentVideo::from_fn(shape, |_, c, h, w| one.get(0, c, h, w))
                } else {
                    LatentVideo::randn(shape, rng)
                };
                let z = forward_diffuse(&clean, t, &noise, ts)?;
                tr.push(pos, t, Phase::Diffuse, Some(Side::T2i), Some(Space::Clean), Space::NoisyT2i, &z, Some(&clean));
                z
            }
        };
        Ok(out)
    }

    /// One T2I step `t -> t_prev` with the inflated model.
    pub fn elevate_spatial<R: Rng + ?Sized>(
        &self,
        z_t: &LatentVideo,
        t: usize,
        t_prev: usize,
        rng: &mut R,
    ) -> Result<LatentVideo> {
        crate::sampler::ddim_step(&*self.t2i, z_t, t, t_prev, &self.t2i_schedule, &self.sampler_cfg_t2i, rng)
    }

    /// Full decomposed sampling from the plan's seed.
    pub fn elevate_sample(&self) -> Result<SampleRun> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut tr = Tracer::default();
        let mut z = LatentVideo::randn(self.shape(), &mut rng);
        tr.push(0, self.grid.steps()[0], Phase::Init, None, None, Space::NoisyT2i, &z, None);
        for (pos, (t, t_prev)) in self.grid.transitions().enumerate() {
            if self.grid.is_refine_step(t) {
                z = self.refine_traced(&z, t, &mut rng, &mut tr)?;
            }
            let out = ddim_step_detail(&*self.t2i, &z, t, t_prev, &self.t2i_schedule, &self.sampler_cfg_t2i, &mut rng)?;
            z = out.z_prev;
            let space = if t_prev == 0 { Space::Clean } else { Space::NoisyT2i };
            tr.push(pos, t_prev, Phase::Elevate, Some(Side::T2i), Some(Space::NoisyT2i), space, &z, Some(&out.x0));
        }
        Ok(SampleRun {
            output: z,
            trace: tr.events,
        })
    }
}

/// Plain sampling with one model, seeded and traced like
/// [`ElevatorPlan::elevate_sample`].
pub fn baseline_sample(
    model: &dyn Denoiser,
    side: Side,
    s: &NoiseSchedule,
    grid: &TimestepGrid,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SampleRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracer::default();
    let mut z = LatentVideo::randn(model.shape(), &mut rng);
    let noisy = Space::noisy(side);
    tr.push(0, grid.steps()[0], Phase::Init, None, None, noisy, &z, None);
    for (pos, (t, t_prev)) in grid.transitions().enumerate() {
        let out = ddim_step_detail(model, &z, t, t_prev, s, cfg, &mut rng)?;
        z = out.z_prev;
        let space = if t_prev == 0 { Space::Clean } else { noisy };
        tr.push(pos, t_prev, Phase::Elevate, Some(side), Some(noisy), space, &z, Some(&out.x0));
    }
    Ok(SampleRun {
        output: z,
        trace: tr.events,
    })
}

/// Every event consumes the latent the previous event produced, and a
/// noisy latent is only ever consumed by the side that made it.
pub fn check_handoff(trace: &[TraceEvent]) -> std::result::Result<(), String> {
    for (i, pair) in trace.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let Some(input) = b.input else {
            return Err(format!("event {} has no input", i + 1));
        };
        if input != a.output {
            return Err(format!(
                "event {} consumes {:?} but event {i} produced {:?}",
                i + 1,
                input,
                a.output
            ));
        }
        let noisy_side = match input {
            Space::NoisyT2i => Some(Side::T2i),
            Space::NoisyT2v => Some(Side::T2v),
            Space::Clean => None,
        };
        if let Some(side) = noisy_side {
            if b.model.is_some_and(|m| m != side) || b.schedule.is_some_and(|m| m != side) {
                return Err(format!(
                    "event {} hands a {:?} latent directly to {:?}",
                    i + 1,
                    input,
                    b.model.or(b.schedule)
                ));
            }
        }
    }
    Ok(())
}

/// Each event's model, schedule, and noisy output space all name the same
/// side.
pub fn check_schedule_isolation(trace: &[TraceEvent]) -> std::result::Result<(), String> {
    for (i, e) in trace.iter().enumerate() {
        if let (Some(m), Some(s)) = (e.model, e.schedule) {
            if m != s {
                return Err(format!("event {i}: {m:?} model used with {s:?} schedule"));
            }
        }
        if e.model.is_some() && e.schedule.is_none() {
            return Err(format!("event {i}: model call without a schedule"));
        }
        let out_side = match e.output {
            Space::NoisyT2i => Some(Side::T2i),
            Space::NoisyT2v => Some(Side::T2v),
            Space::Clean => None,
        };
        if let (Some(o), Some(s)) = (out_side, e.schedule) {
            if o != s {
                return Err(format!("event {i}: {s:?} schedule produced a {:?} latent", e.output));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{high_band_energy, median, DETAIL_BAND};
    use crate::sampler::{ddim_sample, ddim_step};
    use crate::synth::{sample_prior, SpectrumKind};

    fn small() -> PlanConfig {
        PlanConfig {
            shape: Shape::new(6, 2, 8, 8).unwrap(),
            steps: 20,
            refine_steps: 3,
            n_sdedit: 4,
            ..PlanConfig::default()
        }
    }

    #[test]
    fn default_plan_shape() {
        let plan = ElevatorPlan::from_config(&PlanConfig::default()).unwrap();
        assert_eq!(plan.grid.len(), 50);
        assert_eq!(plan.grid.refine_set(), &[1000, 880, 760, 640, 520]);
        assert_eq!(plan.n_sdedit, 9);
    }

    #[test]
    fn empty_refine_set_is_plain_t2i() {
        let cfg = PlanConfig {
            refine_steps: 0,
            seed: 11,
            ..small()
        };
        let plan = ElevatorPlan::from_config(&cfg).unwrap();
        let run = plan.elevate_sample().unwrap();
        let base = baseline_sample(&*plan.t2i, Side::T2i, &plan.t2i_schedule, &plan.grid, &plan.sampler_cfg_t2i, 11).unwrap();
        assert!(run.output.bitwise_eq(&base.output));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = LatentVideo::randn(cfg.shape, &mut rng);
        let direct = ddim_sample(&*plan.t2i, &z, &plan.grid, &plan.t2i_schedule, &plan.sampler_cfg_t2i, &mut rng).unwrap();
        assert!(base.output.bitwise_eq(&direct));
    }

    #[test]
    fn deterministic_and_trace_invariants() {
        let cfg = PlanConfig { seed: 3, ..small() };
        let plan = ElevatorPlan::from_config(&cfg).unwrap();
        let a = plan.elevate_sample().unwrap();
        let b = plan.elevate_sample().unwrap();
        assert!(a.output.bitwise_eq(&b.output));
        assert_eq!(a.trace, b.trace);
        check_handoff(&a.trace).unwrap();
        check_schedule_isolation(&a.trace).unwrap();
        assert!(a.trace.iter().any(|e| e.phase == Phase::Refine));
        assert!(a.trace.iter().any(|e| e.phase == Phase::Invert));
        for strategy in [InversionStrategy::SameNoise, InversionStrategy::RandomNoise] {
            let plan = ElevatorPlan::from_config(&PlanConfig { inversion: strategy, ..cfg.clone() }).unwrap();
            let run = plan.elevate_sample().unwrap();
            check_handoff(&run.trace).unwrap();
            check_schedule_isolation(&run.trace).unwrap();
        }
    }

    #[test]
    fn checks_catch_direct_handoff() {
        let plan = ElevatorPlan::from_config(&small()).unwrap();
        let mut trace = plan.elevate_sample().unwrap().trace;
        let i = trace.iter().position(|e| e.phase == Phase::Refine).unwrap();
        trace[i].input = Some(Space::NoisyT2i);
        trace[i - 1].output = Space::NoisyT2i;
        assert!(check_handoff(&trace).is_err());
        let mut trace = plan.elevate_sample().unwrap().trace;
        trace[i].schedule = Some(Side::T2i);
        assert!(check_schedule_isolation(&trace).is_err());
    }

    #[test]
    fn elevate_spatial_delegates() {
        let plan = ElevatorPlan::from_config(&small()).unwrap();
        let z = LatentVideo::randn(plan.shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let a = plan.elevate_spatial(&z, 500, 450, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = ddim_step(&*plan.t2i, &z, 500, 450, &plan.t2i_schedule, &plan.sampler_cfg_t2i, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn refine_rejects_non_refine_steps() {
        let plan = ElevatorPlan::from_config(&small()).unwrap();
        let z = LatentVideo::zeros(plan.shape());
        let t = plan.grid.steps()[1];
        assert!(!plan.grid.is_refine_step(t));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(plan.refine_temporal(&z, t, &mut rng), Err(Error::StepNotRefinable(_))));
        assert!(matches!(plan.refine_temporal(&z, 7, &mut rng), Err(Error::StepNotRefinable(7))));
    }

    #[test]
    fn plan_validation() {
        let too_deep = PlanConfig { n_sdedit: 50, ..small() };
        assert!(matches!(ElevatorPlan::from_config(&too_deep), Err(Error::PlanInvalid(_))));
        let bad_eta = PlanConfig { eta_t2i: 2.0, ..small() };
        assert!(ElevatorPlan::from_config(&bad_eta).is_err());
        let off_grid = PlanConfig { refine_set: Some(vec![999]), ..small() };
        assert!(matches!(ElevatorPlan::from_config(&off_grid), Err(Error::NotOnGrid(999))));
    }

    #[test]
    fn degenerate_refine_round_trip_at_lowest_step() {
        // N = 0 and no filter: project, then invert straight back. Only the
        // lowest grid step is a single inversion hop from clean.
        let cfg = PlanConfig {
            n_sdedit: 0,
            filter: FilterConfig { enabled: false, ..FilterConfig::default() },
            attention_mix: 0.0,
            fixed_point_iters: 5,
            ..small()
        };
        let base = ElevatorPlan::from_config(&cfg).unwrap();
        let t = *base.grid.steps().last().unwrap();
        let plan = ElevatorPlan::from_config(&PlanConfig { refine_set: Some(vec![t]), ..cfg }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = LatentVideo::randn(plan.shape(), &mut rng);
        let out = plan.refine_temporal(&z, t, &mut rng).unwrap();
        assert!(out.relative_error(&z).unwrap() < 1e-3);
    }

    #[test]
    fn refining_raises_clean_consistency() {
        let cfg = PlanConfig { inversion: InversionStrategy::DdimInversion, ..small() };
        let toys = Toys::build(&cfg).unwrap();
        let plan = ElevatorPlan::with_toys(&cfg, &toys).unwrap();
        let t = plan.grid.refine_set()[1];
        let ts = &plan.t2i_schedule;
        let mut before = Vec::new();
        let mut after = Vec::new();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z0 = sample_prior(&toys.t2i_prior, &mut rng).unwrap();
            let z = forward_diffuse(&z0, t, &LatentVideo::randn(cfg.shape, &mut rng), ts).unwrap();
            let clean = |z: &LatentVideo| {
                let e = plan.t2i.predict_eps(z, t, &Condition::null(), ts).unwrap();
                project_clean(z, &e, t, ts).unwrap()
            };
            before.push(frame_consistency(&clean(&z)).unwrap());
            let refined = plan.refine_temporal(&z, t, &mut rng).unwrap();
            after.push(frame_consistency(&clean(&refined)).unwrap());
        }
        assert!(median(&after) > median(&before), "{} <= {}", median(&after), median(&before));
    }

    #[test]
    fn elevating_adds_high_band_detail() {
        let cfg = small();
        let toys = Toys::build(&cfg).unwrap();
        let plan = ElevatorPlan::with_toys(&cfg, &toys).unwrap();
        let ts = &plan.t2i_schedule;
        let pos = plan.grid.len() / 2;
        let (t, tp) = (plan.grid.steps()[pos], plan.grid.step_after(pos));
        let t2v_like = crate::synth::make_gp_prior(cfg.shape, 0.9, SpectrumKind::Lowpass, 1.0).unwrap();
        let (mut before, mut after) = (Vec::new(), Vec::new());
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z0 = sample_prior(&t2v_like, &mut rng).unwrap();
            let z = forward_diffuse(&z0, t, &LatentVideo::randn(cfg.shape, &mut rng), ts).unwrap();
            let clean = |z: &LatentVideo, t| {
                let e = plan.t2i.predict_eps(z, t, &Condition::null(), ts).unwrap();
                project_clean(z, &e, t, ts).unwrap()
            };
            before.push(high_band_energy(&clean(&z, t), DETAIL_BAND).unwrap());
            let z1 = plan.elevate_spatial(&z, t, tp, &mut rng).unwrap();
            after.push(high_band_energy(&clean(&z1, tp), DETAIL_BAND).unwrap());
        }
        assert!(median(&after) >= median(&before), "{} < {}", median(&after), median(&before));
    }

    #[test]
    fn config_round_trips_through_defaults() {
        let cfg = PlanConfig::default();
        assert_eq!(cfg.fixed_point_iters, 0);
        assert!(cfg.validate().is_ok());
        let g = GuidanceConfig { shift: Some(0.5), scale: 2.0 }.condition(cfg.shape);
        assert_eq!(g.guidance_scale, 2.0);
        assert_eq!(g.shift.unwrap().data()[0], 0.5);
    }

    #[test]
    fn snr_remap_plan_runs() {
        let cfg = PlanConfig { snr_remap: true, seed: 2, ..small() };
        let plan = ElevatorPlan::from_config(&cfg).unwrap();
        let run = plan.elevate_sample().unwrap();
        assert!(run.output.is_finite());
        check_schedule_isolation(&run.trace).unwrap();
    }
}
