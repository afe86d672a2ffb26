use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use elevator_cli::{parse_seeds, replay, run, Mode, RunConfig, RunManifest, RunOptions};

#[derive(Parser)]
#[command(name = "elevator", version, about = "Run and ablate the video elevator pipeline on toy denoisers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plain T2V sampling.
    #[command(name = "baseline_t2v", alias = "baseline-t2v")]
    BaselineT2v(RunArgs),
    /// Plain T2I sampling with the cross-frame-wrapped model.
    #[command(name = "baseline_t2i", alias = "baseline-t2i")]
    BaselineT2i(RunArgs),
    /// Decomposed sampling.
    Elevate(RunArgs),
    /// Temporal vs no vs spatial-temporal low-pass filtering.
    #[command(name = "ablate_filter", alias = "ablate-filter")]
    AblateFilter(RunArgs),
    /// Same noise vs DDIM inversion vs random noise re-noising.
    #[command(name = "ablate_inversion", alias = "ablate-inversion")]
    AblateInversion(RunArgs),
    /// T2V baselines at each of `compare_steps`, plus T2I and elevated.
    #[command(name = "ablate_steps", alias = "ablate-steps")]
    AblateSteps(RunArgs),
    /// Invert-then-sample reconstruction with the analytic T2I model.
    Roundtrip(RunArgs),
    /// Re-run a manifest's resolved config and compare latent checksums.
    Replay {
        manifest: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory [default: $ELEVATOR_OUTPUT_DIR, then ./elevator-output].
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
    /// Evaluate the invariant suite; exit nonzero if any check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds as `a..b`, `a..=b` or `1,2,3`.
    #[arg(long)]
    seeds: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

fn options(c: &CommonArgs) -> RunOptions {
    RunOptions {
        jobs: c.jobs,
        check: c.check,
    }
}

fn resolve(mode: Mode, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.mode = mode;
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(o) = &args.common.output {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn summarize(m: &RunManifest) {
    let dir = m.config.output_dir.as_deref().unwrap_or_else(|| "?".as_ref());
    println!("{} run: {} latents in {}", m.mode, m.runs.len(), dir.display());
    for (arm, r) in &m.medians {
        println!(
            "  {arm:<18} fc {:.4}  flicker {:.4}  detail {:.4}  d_t2i {:.4}  d_t2v {:.4}",
            r.frame_consistency, r.flicker_energy, r.spatial_detail, r.spectrum_distance_t2i, r.spectrum_distance_t2v
        );
    }
    if let Some(e) = m.roundtrip_max_error {
        println!("  max round-trip relative error {e:.3e}");
    }
    for c in &m.checks {
        println!("  [{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    println!("  {:.1} s", m.timings.total_ms / 1e3);
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::BaselineT2v(a) => (Mode::BaselineT2v, a),
        Command::BaselineT2i(a) => (Mode::BaselineT2i, a),
        Command::Elevate(a) => (Mode::Elevate, a),
        Command::AblateFilter(a) => (Mode::AblateFilter, a),
        Command::AblateInversion(a) => (Mode::AblateInversion, a),
        Command::AblateSteps(a) => (Mode::AblateSteps, a),
        Command::Roundtrip(a) => (Mode::Roundtrip, a),
        Command::Replay { manifest, common } => {
            let out = common.output.clone().unwrap_or_else(|| {
                RunConfig::default().resolved_output_dir().join("replay")
            });
            let report = replay(manifest, out, &options(common))
                .with_context(|| format!("replaying {}", manifest.display()))?;
            summarize(&report.replayed);
            if report.mismatches.is_empty() {
                println!("all {} latent checksums match", report.original.runs.len());
                return Ok(ExitCode::SUCCESS);
            }
            eprintln!("{} checksum mismatch(es):", report.mismatches.len());
            for m in &report.mismatches {
                eprintln!("  {m}");
            }
            return Ok(ExitCode::FAILURE);
        }
    };
    let cfg = resolve(mode, args)?;
    let manifest = run(&cfg, &options(&args.common)).with_context(|| format!("running {mode}"))?;
    summarize(&manifest);
    let failed = manifest.failed_checks();
    if failed.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{}", elevator_cli::CliError::CheckFailed(failed));
    Ok(ExitCode::FAILURE)
}
