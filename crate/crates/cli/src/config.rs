//! Run configuration: one JSON document, every field defaulted.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use elevator_core::elevator::PlanConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    BaselineT2v,
    BaselineT2i,
    #[default]
    Elevate,
    AblateFilter,
    AblateInversion,
    AblateSteps,
    Roundtrip,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::BaselineT2v,
        Mode::BaselineT2i,
        Mode::Elevate,
        Mode::AblateFilter,
        Mode::AblateInversion,
        Mode::AblateSteps,
        Mode::Roundtrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::BaselineT2v => "baseline_t2v",
            Mode::BaselineT2i => "baseline_t2i",
            Mode::Elevate => "elevate",
            Mode::AblateFilter => "ablate_filter",
            Mode::AblateInversion => "ablate_inversion",
            Mode::AblateSteps => "ablate_steps",
            Mode::Roundtrip => "roundtrip",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything a run needs. Omitted fields take the defaults below, and the
/// manifest records the resolved document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Default `elevate`. The CLI subcommand overrides it.
    pub mode: Mode,
    /// Plan parameters, including both priors (`plan.priors`).
    pub plan: PlanConfig,
    /// Default `[0]`.
    pub seeds: Vec<u64>,
    /// Falls back to `ELEVATOR_OUTPUT_DIR`, then `elevator-output`.
    pub output_dir: Option<PathBuf>,
    /// Write one PPM per frame next to each latent. Default true.
    pub render: bool,
    /// Step counts of the T2V baselines in `ablate_steps`. Default `[50, 100]`.
    pub compare_steps: Vec<usize>,
    /// Fixed-point passes used by `roundtrip` inversion. Default 5.
    pub roundtrip_fixed_point_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            plan: PlanConfig::default(),
            seeds: vec![0],
            output_dir: None,
            render: true,
            compare_steps: vec![50, 100],
            roundtrip_fixed_point_iters: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.into(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::InvalidConfig("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::InvalidConfig("seeds must be distinct".into()));
        }
        self.plan.validate()?;
        match self.mode {
            Mode::AblateSteps => {
                if self.compare_steps.len() < 2 {
                    return Err(CliError::InvalidConfig(
                        "ablate_steps needs at least two compare_steps".into(),
                    ));
                }
                if self.compare_steps.contains(&0) {
                    return Err(CliError::InvalidConfig("compare_steps must be positive".into()));
                }
            }
            Mode::Roundtrip if self.plan.steps == 0 => {
                return Err(CliError::InvalidConfig("roundtrip needs at least one step".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// The output directory after applying the fallbacks.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os("ELEVATOR_OUTPUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("elevator-output"))
    }
}

/// Parses `a..b` (exclusive), `a..=b`, or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || CliError::InvalidConfig(format!("cannot parse seeds {text:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_plan_keeps_other_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"mode":"ablate_filter","plan":{"steps":20},"seeds":[3,4]}"#).unwrap();
        assert_eq!(c.mode, Mode::AblateFilter);
        assert_eq!(c.plan.steps, 20);
        assert_eq!(c.plan.n_sdedit, PlanConfig::default().n_sdedit);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = RunConfig {
            seeds: vec![],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        c.seeds = vec![1];
        c.mode = Mode::AblateSteps;
        c.compare_steps = vec![50];
        assert!(c.validate().is_err());
        c.compare_steps = vec![50, 100];
        c.validate().unwrap();
        c.plan.attention_mix = 2.0;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 9,11").unwrap(), vec![7, 9, 11]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a,b").is_err());
    }
}
