//! Executes a [`RunConfig`]: per-seed runs in parallel, then a single-threaded
//! pass that writes the tables and the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use elevator_core::denoiser::AnalyticDenoiser;
use elevator_core::elevator::{
    baseline_sample, check_handoff, check_schedule_isolation, ElevatorPlan, InversionStrategy,
    PlanConfig, Side, Toys, TraceEvent,
};
use elevator_core::freqfilter::FilterAxes;
use elevator_core::metrics::MetricReport;
use elevator_core::sampler::{ddim_invert, ddim_sample, InversionConfig, SamplerConfig};
use elevator_core::schedule::select_timesteps;
use elevator_core::synth::sample_prior;
use elevator_core::LatentVideo;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::error::{CliError, Result};
use crate::latent_io::save_latent;
use crate::manifest::{
    file_record, sha256_hex, CheckRecord, GridRecord, RunManifest, Schedules, SeedRecord, Timings,
    MANIFEST_FILE,
};
use crate::render::{render_frames, Normalization};

/// Bound on the reconstruction error reported by `roundtrip` runs.
pub const ROUNDTRIP_TOLERANCE: f64 = 1e-3;
/// Minimum frame-consistency gap between same-noise and random-noise
/// re-noising.
pub const INVERSION_SEPARATION: f64 = 0.02;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    /// Evaluate the invariant suite and record it in the manifest.
    pub check: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArmKind {
    T2v,
    T2i,
    Elevated,
    Roundtrip,
}

#[derive(Debug, Clone)]
struct Arm {
    name: String,
    kind: ArmKind,
    plan: PlanConfig,
}

fn arm(name: impl Into<String>, kind: ArmKind, plan: PlanConfig) -> Arm {
    Arm {
        name: name.into(),
        kind,
        plan,
    }
}

fn arms(cfg: &RunConfig) -> Vec<Arm> {
    let p = &cfg.plan;
    let with_filter = |enabled: bool, axes: FilterAxes| {
        let mut q = p.clone();
        q.filter.enabled = enabled;
        q.filter.axes = axes;
        q
    };
    let with_inversion = |inversion: InversionStrategy| PlanConfig {
        inversion,
        ..p.clone()
    };
    match cfg.mode {
        Mode::BaselineT2v => vec![arm("t2v", ArmKind::T2v, p.clone())],
        Mode::BaselineT2i => vec![arm("t2i", ArmKind::T2i, p.clone())],
        Mode::Elevate => vec![arm("elevated", ArmKind::Elevated, p.clone())],
        Mode::AblateFilter => vec![
            arm("temporal", ArmKind::Elevated, with_filter(true, FilterAxes::Temporal)),
            arm("none", ArmKind::Elevated, with_filter(false, FilterAxes::Temporal)),
            arm(
                "spatial_temporal",
                ArmKind::Elevated,
                with_filter(true, FilterAxes::SpatialTemporal),
            ),
        ],
        Mode::AblateInversion => vec![
            arm("same_noise", ArmKind::Elevated, with_inversion(InversionStrategy::SameNoise)),
            arm("ddim_inversion", ArmKind::Elevated, with_inversion(InversionStrategy::DdimInversion)),
            arm("random_noise", ArmKind::Elevated, with_inversion(InversionStrategy::RandomNoise)),
        ],
        Mode::AblateSteps => {
            let mut out: Vec<Arm> = cfg
                .compare_steps
                .iter()
                .map(|&n| arm(format!("t2v_{n}"), ArmKind::T2v, PlanConfig { steps: n, ..p.clone() }))
                .collect();
            out.push(arm("t2i", ArmKind::T2i, p.clone()));
            out.push(arm("elevated", ArmKind::Elevated, p.clone()));
            out
        }
        Mode::Roundtrip => vec![arm("roundtrip", ArmKind::Roundtrip, p.clone())],
    }
}

struct SeedOutput {
    latent: LatentVideo,
    trace: Vec<TraceEvent>,
    roundtrip_error: Option<f64>,
}

fn run_seed(a: &Arm, toys: &Toys, seed: u64, roundtrip_iters: usize) -> Result<SeedOutput> {
    let p = &a.plan;
    let (vs, is) = p.schedules()?;
    let (cv, ci) = p.sampler_configs();
    let out = match a.kind {
        ArmKind::T2v => {
            let run = baseline_sample(&*toys.t2v, Side::T2v, &vs, &p.grid(&is)?, &cv, seed)?;
            (run.output, run.trace, None)
        }
        ArmKind::T2i => {
            let run = baseline_sample(&*toys.t2i, Side::T2i, &is, &p.grid(&is)?, &ci, seed)?;
            (run.output, run.trace, None)
        }
        ArmKind::Elevated => {
            let plan = ElevatorPlan::with_toys(&PlanConfig { seed, ..p.clone() }, toys)?;
            let run = plan.elevate_sample()?;
            (run.output, run.trace, None)
        }
        ArmKind::Roundtrip => {
            // bare analytic T2I model: invert a prior sample, then sample back
            let model = AnalyticDenoiser::new(toys.t2i_prior.clone())?;
            let grid = select_timesteps(&is, p.steps)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z0 = sample_prior(&toys.t2i_prior, &mut rng)?;
            let inv = InversionConfig::refined(roundtrip_iters);
            let z_t = ddim_invert(&model, &z0, &grid, grid.steps()[0], &is, inv)?;
            let back = ddim_sample(&model, &z_t, &grid, &is, &SamplerConfig::default(), &mut rng)?;
            let err = back.relative_error(&z0)?;
            (back, Vec::new(), Some(err))
        }
    };
    Ok(SeedOutput {
        latent: out.0,
        trace: out.1,
        roundtrip_error: out.2,
    })
}

struct Finished {
    arm: usize,
    seed: u64,
    out: SeedOutput,
    metrics: MetricReport,
    files: Vec<String>,
    latent: String,
    sha256: String,
    render: Option<Normalization>,
    ms: f64,
}

fn rel(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned()
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    if entries.next().is_some() {
        return Err(CliError::InvalidConfig(format!(
            "output directory {} is not empty",
            dir.display()
        )));
    }
    Ok(())
}

/// Runs every arm over every seed and writes all artifacts into the
/// resolved output directory, which must be empty or absent.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    let resolved = RunConfig {
        output_dir: Some(dir.clone()),
        ..cfg.clone()
    };
    prepare_dir(&dir)?;

    let arms = arms(cfg);
    let toys = arms.iter().map(|a| Toys::build(&a.plan)).collect::<elevator_core::Result<Vec<_>>>()?;
    let (vs, is) = cfg.plan.schedules()?;
    let grid = cfg.plan.grid(&is)?;

    let tasks: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let jobs = pool.current_num_threads();
    let finished: Vec<Finished> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(ai, seed)| -> Result<Finished> {
                let t0 = Instant::now();
                let a = &arms[ai];
                let out = run_seed(a, &toys[ai], seed, cfg.roundtrip_fixed_point_iters)?;
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                let metrics = MetricReport::compute(&out.latent, &toys[ai].t2i_prior, &toys[ai].t2v_prior)?;
                let stem = format!("{}_seed{seed}", a.name);
                let latent_path = dir.join(format!("{stem}.elvt"));
                save_latent(&out.latent, &latent_path)?;
                let sha256 = sha256_hex(&fs::read(&latent_path).map_err(|e| CliError::io(&latent_path, e))?);
                let mut files = vec![rel(&dir, &latent_path)];
                let render = if cfg.render {
                    let (frames, norm) = render_frames(&out.latent, &dir.join(&stem))?;
                    files.extend(frames.iter().map(|f| rel(&dir, f)));
                    Some(norm)
                } else {
                    None
                };
                Ok(Finished {
                    arm: ai,
                    seed,
                    out,
                    metrics,
                    latent: rel(&dir, &latent_path),
                    files,
                    sha256,
                    render,
                    ms,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    // join point: everything below is single-threaded
    let mut written: Vec<String> = finished.iter().flat_map(|f| f.files.clone()).collect();
    written.push(write_metrics_csv(&dir, &arms, &finished)?);
    written.push(write_trace(&dir, &arms, &finished)?);

    let runs: Vec<SeedRecord> = finished
        .iter()
        .map(|f| SeedRecord {
            arm: arms[f.arm].name.clone(),
            seed: f.seed,
            latent: f.latent.clone(),
            sha256: f.sha256.clone(),
            metrics: f.metrics,
            ms: f.ms,
            render: f.render,
            roundtrip_error: f.out.roundtrip_error,
        })
        .collect();
    let medians: BTreeMap<String, MetricReport> = arms
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            let reports: Vec<MetricReport> = finished.iter().filter(|f| f.arm == i).map(|f| f.metrics).collect();
            MetricReport::median(&reports).map(|m| (a.name.clone(), m))
        })
        .collect();
    let roundtrip_max_error = finished
        .iter()
        .filter_map(|f| f.out.roundtrip_error)
        .reduce(f64::max);
    let checks = if opts.check {
        checks(cfg, &arms, &finished, &medians, roundtrip_max_error)
    } else {
        Vec::new()
    };

    written.sort();
    let files = written
        .iter()
        .map(|r| file_record(&dir, r))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: cfg.mode,
        config: resolved,
        schedules: Schedules { t2v: vs, t2i: is },
        grid: GridRecord {
            steps: grid.steps().to_vec(),
            refine: grid.refine_set().to_vec(),
        },
        jobs,
        files,
        runs,
        medians,
        roundtrip_max_error,
        checks,
        timings: Timings {
            total_ms: started.elapsed().as_secs_f64() * 1e3,
            seeds_ms: finished.iter().map(|f| f.ms).sum(),
        },
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn write_metrics_csv(dir: &Path, arms: &[Arm], finished: &[Finished]) -> Result<String> {
    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["arm", "seed"];
    header.extend(MetricReport::FIELDS);
    w.write_record(&header)?;
    for f in finished {
        let mut row = vec![arms[f.arm].name.clone(), f.seed.to_string()];
        row.extend(f.metrics.values().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rel(dir, &path))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    arm: &'a str,
    seed: u64,
    #[serde(flatten)]
    event: &'a TraceEvent,
}

fn write_trace(dir: &Path, arms: &[Arm], finished: &[Finished]) -> Result<String> {
    let path = dir.join("trace.jsonl");
    let mut buf = Vec::new();
    for f in finished {
        for event in &f.out.trace {
            let line = TraceLine {
                arm: &arms[f.arm].name,
                seed: f.seed,
                event,
            };
            serde_json::to_writer(&mut buf, &line).map_err(|source| CliError::Json {
                path: path.clone(),
                source,
            })?;
            buf.push(b'\n');
        }
    }
    let mut file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    file.write_all(&buf).map_err(|e| CliError::io(&path, e))?;
    Ok(rel(dir, &path))
}

fn check(name: impl Into<String>, passed: bool, detail: String) -> CheckRecord {
    CheckRecord {
        name: name.into(),
        passed,
        detail,
    }
}

fn checks(
    cfg: &RunConfig,
    arms: &[Arm],
    finished: &[Finished],
    medians: &BTreeMap<String, MetricReport>,
    roundtrip_max_error: Option<f64>,
) -> Vec<CheckRecord> {
    let mut out = Vec::new();
    for (i, a) in arms.iter().enumerate() {
        let mine = || finished.iter().filter(move |f| f.arm == i);
        let non_finite: Vec<u64> = mine().filter(|f| !f.out.latent.is_finite()).map(|f| f.seed).collect();
        out.push(check(
            format!("finite/{}", a.name),
            non_finite.is_empty(),
            format!("non-finite seeds {non_finite:?}"),
        ));
        if a.kind == ArmKind::Roundtrip {
            continue;
        }
        let failure = mine().find_map(|f| {
            check_handoff(&f.out.trace)
                .and_then(|_| check_schedule_isolation(&f.out.trace))
                .err()
                .map(|e| format!("seed {}: {e}", f.seed))
        });
        out.push(check(
            format!("handoff/{}", a.name),
            failure.is_none(),
            failure.unwrap_or_else(|| "all traces pass".into()),
        ));
    }
    let m = |arm: &str| medians[arm];
    match cfg.mode {
        Mode::AblateInversion => {
            let (same, ddim, random) = (
                m("same_noise").frame_consistency,
                m("ddim_inversion").frame_consistency,
                m("random_noise").frame_consistency,
            );
            out.push(check(
                "inversion/fc_order",
                same >= ddim && ddim >= random,
                format!("same {same:.4} >= ddim {ddim:.4} >= random {random:.4}"),
            ));
            out.push(check(
                "inversion/fc_separation",
                same - random > INVERSION_SEPARATION,
                format!("same - random = {:.4} > {INVERSION_SEPARATION}", same - random),
            ));
        }
        Mode::AblateFilter => {
            let (t, n, st) = (m("temporal"), m("none"), m("spatial_temporal"));
            out.push(check(
                "filter/flicker",
                t.flicker_energy < n.flicker_energy,
                format!("temporal {:.4} < none {:.4}", t.flicker_energy, n.flicker_energy),
            ));
            out.push(check(
                "filter/detail",
                t.spatial_detail > st.spatial_detail,
                format!("temporal {:.4} > spatial_temporal {:.4}", t.spatial_detail, st.spatial_detail),
            ));
        }
        Mode::AblateSteps => {
            let base = format!("t2v_{}", cfg.compare_steps[0]);
            let (v, i, e) = (m(&base), m("t2i"), m("elevated"));
            let gain_sd = v.spectrum_distance_t2i - e.spectrum_distance_t2i;
            let gain_fc = e.frame_consistency - i.frame_consistency;
            out.push(check(
                "steps/elevation_spectrum",
                gain_sd > 0.0,
                format!("elevated {:.4} < {base} {:.4}", e.spectrum_distance_t2i, v.spectrum_distance_t2i),
            ));
            out.push(check(
                "steps/elevation_fc",
                gain_fc > 0.0,
                format!("elevated {:.4} > t2i {:.4}", e.frame_consistency, i.frame_consistency),
            ));
            for &n in &cfg.compare_steps[1..] {
                let other = m(&format!("t2v_{n}"));
                let d_sd = (other.spectrum_distance_t2i - v.spectrum_distance_t2i).abs();
                let d_fc = (other.frame_consistency - v.frame_consistency).abs();
                out.push(check(
                    format!("steps/t2v_{n}_spectrum"),
                    d_sd < 0.5 * gain_sd,
                    format!("|delta| {d_sd:.4} < half gain {:.4}", 0.5 * gain_sd),
                ));
                out.push(check(
                    format!("steps/t2v_{n}_fc"),
                    d_fc < 0.5 * gain_fc,
                    format!("|delta| {d_fc:.4} < half gain {:.4}", 0.5 * gain_fc),
                ));
            }
        }
        Mode::Roundtrip => {
            let err = roundtrip_max_error.unwrap_or(f64::NAN);
            out.push(check(
                "roundtrip/max_error",
                err < ROUNDTRIP_TOLERANCE,
                format!("{err:.3e} < {ROUNDTRIP_TOLERANCE:e}"),
            ));
        }
        Mode::BaselineT2v | Mode::BaselineT2i | Mode::Elevate => {}
    }
    out
}

/// Result of re-running a manifest.
#[derive(Debug)]
pub struct ReplayReport {
    pub original: RunManifest,
    pub replayed: RunManifest,
    /// One entry per latent whose checksum differs or is missing.
    pub mismatches: Vec<String>,
}

/// Re-runs the resolved config recorded in a manifest into `output` and
/// compares latent checksums.
pub fn replay(manifest_path: &Path, output: PathBuf, opts: &RunOptions) -> Result<ReplayReport> {
    let original = RunManifest::load(manifest_path)?;
    let cfg = RunConfig {
        output_dir: Some(output),
        ..original.config.clone()
    };
    let replayed = run(&cfg, opts)?;
    let mut mismatches = Vec::new();
    for r in &original.runs {
        match replayed.run(&r.arm, r.seed) {
            Some(n) if n.sha256 == r.sha256 => {}
            Some(n) => mismatches.push(format!("{}: {} != {}", r.latent, n.sha256, r.sha256)),
            None => mismatches.push(format!("{}: missing from replay", r.latent)),
        }
    }
    if replayed.runs.len() != original.runs.len() {
        mismatches.push(format!(
            "replay produced {} latents, manifest lists {}",
            replayed.runs.len(),
            original.runs.len()
        ));
    }
    Ok(ReplayReport {
        original,
        replayed,
        mismatches,
    })
}
