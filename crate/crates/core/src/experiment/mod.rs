//! Desk-scale experiment drivers behind the `sgmcmc` binary. Each run reads
//! a [`ConfigFile`], resolves every setting before sampling, writes its
//! outputs under one directory and echoes the resolved configuration there.

mod config;
mod lda_run;
mod suite;
mod synthetic;

pub use config::{ConfigFile, List, Settings};
pub use lda_run::{LdaChainResult, LdaRun};
pub use suite::{SuiteCheck, VerifySuite};
pub use synthetic::{ChainMetrics, Synthetic1d, Synthetic2d};

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::energy::Mass;
use crate::error::{Error, Result};
use crate::linalg::FieldMatrix;
use crate::presets::{PresetConfig, PresetKind};
use crate::schedule::StepSchedule;

/// File holding the resolved configuration in every output directory.
pub const RESOLVED_CONFIG: &str = "config.resolved";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Synthetic1d,
    Synthetic2d,
    Verify,
    Lda,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Synthetic1d => "synthetic-1d",
            ExperimentKind::Synthetic2d => "synthetic-2d",
            ExperimentKind::Verify => "verify",
            ExperimentKind::Lda => "lda",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic-1d" => Ok(ExperimentKind::Synthetic1d),
            "synthetic-2d" => Ok(ExperimentKind::Synthetic2d),
            "verify" => Ok(ExperimentKind::Verify),
            "lda" => Ok(ExperimentKind::Lda),
            other => Err(Error::Config(format!(
                "unknown experiment `{other}`; expected synthetic-1d, synthetic-2d, verify or lda"
            ))),
        }
    }
}

/// What a finished run reports back to the caller.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    /// Human-readable lines, also printed by the binary.
    pub summary: Vec<String>,
    pub verification_failed: bool,
    /// One message per chain that stopped on a non-finite state.
    pub divergences: Vec<String>,
}

impl Outcome {
    /// 0 ok, 2 verification failure, 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        if self.verification_failed {
            2
        } else if !self.divergences.is_empty() {
            3
        } else {
            0
        }
    }
}

/// Exit code for a run that returned an error.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::Numeric(_) | Error::Domain(_) => 3,
        Error::Structure(_) => 2,
        _ => 1,
    }
}

/// Resolves the configuration, then runs the experiment into `out`.
///
/// Every configuration problem, unknown keys included, is reported before
/// any sampling starts.
pub fn run(kind: ExperimentKind, file: ConfigFile, out: &Path) -> Result<Outcome> {
    let settings = Settings::new(file);
    let plan: Box<dyn Fn(&Path) -> Result<Outcome>> = match kind {
        ExperimentKind::Synthetic1d => {
            let p = Synthetic1d::from_settings(&settings)?;
            Box::new(move |o| p.execute(o))
        }
        ExperimentKind::Synthetic2d => {
            let p = Synthetic2d::from_settings(&settings)?;
            Box::new(move |o| p.execute(o))
        }
        ExperimentKind::Verify => {
            let p = VerifySuite::from_settings(&settings)?;
            Box::new(move |o| p.execute(o))
        }
        ExperimentKind::Lda => {
            let p = LdaRun::from_settings(&settings)?;
            Box::new(move |o| p.execute(o))
        }
    };
    settings.finish()?;
    fs::create_dir_all(out)?;
    fs::write(
        out.join(RESOLVED_CONFIG),
        format!("# sgmcmc {kind}\n{}", settings.echo()),
    )?;
    plan(out)
}

/// Floats in output files: 17 significant digits.
pub(crate) fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-preset section: step size (constant `epsilon`, or `schedule_a/b/c`
/// for `(a(1 + t/b))^(−c)`), plus scalar `friction`, `mass`, `diffusion`,
/// `thermostat` and `resample_every`. A `qualifier` lets
/// `epsilon.<qualifier>` override `epsilon`.
pub(crate) fn preset_section(
    s: &Settings,
    section: &str,
    preset: PresetKind,
    qualifier: Option<&str>,
    default_epsilon: f64,
    dim: usize,
) -> Result<PresetConfig> {
    let schedule = match s.optional::<f64>(section, "schedule_a")? {
        Some(a) => {
            let need = |k: &str| -> Result<f64> {
                s.optional::<f64>(section, k)?
                    .ok_or_else(|| Error::Config(format!("[{section}] schedule_a needs {k}")))
            };
            StepSchedule::polynomial(a, need("schedule_b")?, need("schedule_c")?)?
        }
        None => {
            let base = s.optional::<f64>(section, "epsilon")?;
            let eps = match qualifier {
                Some(q) => s.value(section, &format!("epsilon.{q}"), base.unwrap_or(default_epsilon))?,
                None => s.value(section, "epsilon", default_epsilon)?,
            };
            StepSchedule::constant(eps)?
        }
    };
    let mut cfg = PresetConfig::new(preset, schedule);
    if let Some(c) = s.optional::<f64>(section, "friction")? {
        cfg = cfg.with_friction(FieldMatrix::Diagonal(vec![c; dim]));
    }
    if let Some(m) = s.optional::<f64>(section, "mass")? {
        cfg = cfg.with_mass(Mass::diagonal(vec![m; dim])?);
    }
    if let Some(d) = s.optional::<f64>(section, "diffusion")? {
        cfg = cfg.with_diffusion(FieldMatrix::Diagonal(vec![d; dim]));
    }
    if let Some(a) = s.optional::<f64>(section, "thermostat")? {
        cfg = cfg.with_thermostat(a);
    }
    if let Some(l) = s.optional::<usize>(section, "resample_every")? {
        cfg = cfg.with_resample_every(l);
    }
    cfg.validate()
        .map_err(|e| Error::Config(format!("[{section}] {e}")))?;
    Ok(cfg)
}

/// Parses a preset list and checks it against the presets an experiment
/// supports. `label` names presets in the echo and in error messages.
pub(crate) fn preset_list(
    s: &Settings,
    allowed: &[PresetKind],
    label: fn(PresetKind) -> &'static str,
) -> Result<Vec<PresetKind>> {
    let names: List<String> = s.value(
        "",
        "presets",
        List(allowed.iter().map(|p| label(*p).to_string()).collect()),
    )?;
    if names.0.is_empty() {
        return Err(Error::Config("`presets` is empty".into()));
    }
    let mut out = Vec::new();
    for n in &names.0 {
        let p: PresetKind = n.parse()?;
        if !allowed.contains(&p) {
            let names: Vec<&str> = allowed.iter().map(|p| label(*p)).collect();
            return Err(Error::Config(format!(
                "preset `{n}` is not part of this experiment; choose from {}",
                names.join(", ")
            )));
        }
        if out.contains(&p) {
            return Err(Error::Config(format!("preset `{n}` is listed twice")));
        }
        out.push(p);
    }
    Ok(out)
}

/// Shared top-level settings: seed, chain count and step count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct RunBasics {
    pub seed: u64,
    pub chains: usize,
    pub steps: usize,
}

impl RunBasics {
    pub fn read(s: &Settings, default_steps: usize) -> Result<Self> {
        let b = RunBasics {
            seed: s.value("", "seed", 1u64)?,
            chains: s.value("", "chains", 3usize)?,
            steps: s.value("", "steps", default_steps)?,
        };
        if b.chains == 0 || b.steps == 0 {
            return Err(Error::Config("`chains` and `steps` must be at least 1".into()));
        }
        Ok(b)
    }

    /// Chain `c` runs on seed `seed + c`.
    pub fn chain_seed(&self, c: usize) -> u64 {
        self.seed.wrapping_add(c as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for k in [
            ExperimentKind::Synthetic1d,
            ExperimentKind::Synthetic2d,
            ExperimentKind::Verify,
            ExperimentKind::Lda,
        ] {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("synthetic-3d".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Outcome::default().exit_code(), 0);
        let diverged = Outcome {
            divergences: vec!["x".into()],
            ..Outcome::default()
        };
        assert_eq!(diverged.exit_code(), 3);
        let failed = Outcome {
            verification_failed: true,
            ..diverged
        };
        assert_eq!(failed.exit_code(), 2);
        assert_eq!(error_exit_code(&Error::Config("x".into())), 1);
        assert_eq!(error_exit_code(&Error::Parse { line: 1, message: "x".into() }), 1);
        assert_eq!(error_exit_code(&Error::NonFinite { block: "theta".into() }), 3);
    }

    #[test]
    fn preset_sections() {
        let s = Settings::new(ConfigFile::parse("[sghmc]\nepsilon = 0.2\nepsilon.two-peaks = 0.05\nfriction = 2\n").unwrap());
        let one = preset_section(&s, "sghmc", PresetKind::Sghmc, Some("one-peak"), 0.1, 1).unwrap();
        let two = preset_section(&s, "sghmc", PresetKind::Sghmc, Some("two-peaks"), 0.1, 1).unwrap();
        assert_eq!(one.schedule.epsilon(0), 0.2);
        assert_eq!(two.schedule.epsilon(0), 0.05);
        assert_eq!(one.friction, Some(FieldMatrix::Diagonal(vec![2.0])));
        s.finish().unwrap();

        let s = Settings::new(ConfigFile::parse("[sgld]\nfriction = 2\n").unwrap());
        let err = preset_section(&s, "sgld", PresetKind::Sgld, None, 0.1, 1).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("friction")), "{err}");

        let s = Settings::new(ConfigFile::parse("[sgrld]\nschedule_a = 10\nschedule_b = 100\n").unwrap());
        assert!(preset_section(&s, "sgrld", PresetKind::Sgrld, None, 0.1, 1).is_err());
    }

    #[test]
    fn preset_lists_are_checked() {
        let allowed = [PresetKind::Sgld, PresetKind::Sghmc];
        let s = Settings::new(ConfigFile::parse("presets = sgld, hmc\n").unwrap());
        assert!(preset_list(&s, &allowed, PresetKind::as_str).is_err());
        let s = Settings::new(ConfigFile::parse("presets = sgld, langevin\n").unwrap());
        assert!(preset_list(&s, &allowed, PresetKind::as_str).is_err());
        let s = Settings::new(ConfigFile::parse("presets = sgld, sgld\n").unwrap());
        assert!(preset_list(&s, &allowed, PresetKind::as_str).is_err());
        let s = Settings::new(ConfigFile::default());
        assert_eq!(preset_list(&s, &allowed, PresetKind::as_str).unwrap(), allowed.to_vec());
    }
}
