use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{num, preset_list, preset_section, List, Outcome, RunBasics, Settings};
use crate::chain::{initial_state, run_chain_with_rng, ChainOptions, Trace};
use crate::energy::Potential;
use crate::error::{Error, Result};
use crate::metric::MetricSpec;
use crate::presets::{build_sampler, PresetConfig, PresetKind, DEFAULT_REFRESH};
use crate::stochastic::{GradientSource, InjectedNoise};
use crate::targets::{Correlated2d, OnePeak, TargetName, TwoPeaks};
use crate::verify::{autocorrelation_time, kl_divergence, mc_standard_error, Axis, Grid, GridDensity, HistogramBox};

const PRESETS_1D: [PresetKind; 4] = [
    PresetKind::Sgld,
    PresetKind::Sghmc,
    PresetKind::NaiveSgrhmc,
    PresetKind::Gsgrhmc,
];
const PRESETS_2D: [PresetKind; 3] = [PresetKind::Sgld, PresetKind::Sghmc, PresetKind::Gsgrhmc];

/// Step sizes used when a preset section sets none, picked by pilot runs.
fn default_epsilon(preset: PresetKind, target: TargetName) -> f64 {
    use PresetKind::*;
    use TargetName::*;
    match (preset, target) {
        (Sgld, _) => 0.01,
        (Sghmc, OnePeak) => 0.05,
        (Sghmc, TwoPeaks) => 0.02,
        (_, OnePeak) => 0.02,
        _ => 0.01,
    }
}

/// Smoothing width of the potential-level metric where `U + offset` crosses zero.
const METRIC_WIDTH: f64 = 0.05;

fn potential_of(target: TargetName) -> Arc<dyn Potential> {
    match target {
        TargetName::OnePeak => Arc::new(OnePeak),
        TargetName::TwoPeaks => Arc::new(TwoPeaks),
        _ => Arc::new(Correlated2d),
    }
}

/// Preset section with the potential-level metric `scale · √|U + offset|`
/// attached to the Riemannian presets. On the 2-D target momentum presets
/// keep their momentum unless `resample_every` asks otherwise.
fn synthetic_preset(
    s: &Settings,
    preset: PresetKind,
    target: TargetName,
    potential: &Arc<dyn Potential>,
) -> Result<PresetConfig> {
    let section = preset.as_str();
    let mut cfg = preset_section(
        s,
        section,
        preset,
        Some(target.as_str()),
        default_epsilon(preset, target),
        potential.dim(),
    )?;
    if preset != PresetKind::Sgld && cfg.resample_every.is_none() {
        let every = if potential.dim() == 2 { 0 } else { DEFAULT_REFRESH };
        cfg = cfg.with_resample_every(s.value(section, "resample_every", every)?);
    }
    if matches!(preset, PresetKind::NaiveSgrhmc | PresetKind::Gsgrhmc) {
        let scale = s.value(section, "metric_scale", 1.5f64)?;
        let offset = s.value(section, "metric_offset", 0.5f64)?;
        let width = s.value(section, "metric_width", METRIC_WIDTH)?;
        if !(scale > 0.0) {
            return Err(Error::Config(format!("[{section}] metric_scale must be positive")));
        }
        if !(width >= 0.0) {
            return Err(Error::Config(format!("[{section}] metric_width must be non-negative")));
        }
        return Ok(cfg.with_metric(MetricSpec::PotentialLevel {
            scale,
            offset,
            width,
            potential: potential.clone(),
        }));
    }
    Ok(cfg)
}

/// One sampled chain and its wall-clock time.
struct ChainRun {
    trace: Trace,
    runtime_s: f64,
}

fn sample_chain(
    potential: &Arc<dyn Potential>,
    cfg: &PresetConfig,
    noise: f64,
    init: &[f64],
    steps: usize,
    seed: u64,
) -> Result<ChainRun> {
    let grads: Arc<dyn GradientSource> = Arc::new(InjectedNoise::new(potential.clone(), noise)?);
    let sampler = build_sampler(potential.clone(), cfg, Some(grads))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = initial_state(sampler.model(), init, &mut rng)?;
    let start = Instant::now();
    let trace = run_chain_with_rng(sampler.as_ref(), z0, ChainOptions::new(steps), seed, &mut rng)?;
    Ok(ChainRun {
        trace,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Metrics of one chain. `kl` and `autocorr_time` are NaN for a chain that diverged.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainMetrics {
    pub preset: PresetKind,
    pub target: TargetName,
    pub chain: usize,
    pub n_steps: usize,
    pub kl: f64,
    /// Integrated autocorrelation time of the last `θ` coordinate.
    pub autocorr_time: f64,
    /// Per-coordinate sample means, MC standard errors and time constants.
    pub means: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub autocorr_times: Vec<f64>,
    pub runtime_s: f64,
    pub diverged_at: Option<usize>,
}

fn chain_metrics(
    run: &ChainRun,
    potential: &dyn Potential,
    hbox: &HistogramBox,
    burn_in: usize,
    ids: (PresetKind, TargetName, usize, usize),
) -> Result<ChainMetrics> {
    let (preset, target, chain, n_steps) = ids;
    let d = potential.dim();
    let mut m = ChainMetrics {
        preset,
        target,
        chain,
        n_steps,
        kl: f64::NAN,
        autocorr_time: f64::NAN,
        means: vec![f64::NAN; d],
        standard_errors: vec![f64::NAN; d],
        autocorr_times: vec![f64::NAN; d],
        runtime_s: run.runtime_s,
        diverged_at: run.trace.divergence.as_ref().map(|x| x.step),
    };
    if m.diverged_at.is_some() {
        return Ok(m);
    }
    let kept = &run.trace.states[burn_in.min(run.trace.len())..];
    m.kl = kl_divergence(kept, potential, hbox)?.kl;
    let max_lag = (kept.len() / 10).max(1);
    for i in 0..d {
        let x: Vec<f64> = kept.iter().map(|s| s[i]).collect();
        m.means[i] = x.iter().sum::<f64>() / x.len() as f64;
        m.autocorr_times[i] = autocorrelation_time(&x, max_lag)?.tau;
        m.standard_errors[i] = mc_standard_error(&x, max_lag)?;
    }
    m.autocorr_time = m.autocorr_times[d - 1];
    Ok(m)
}

fn write_timings(path: &Path, rows: &[ChainMetrics]) -> Result<()> {
    let mut s = String::from("preset,target,chain,runtime_s\n");
    for r in rows {
        writeln!(s, "{},{},{},{:.3}", r.preset, r.target.as_str(), r.chain, r.runtime_s).unwrap();
    }
    Ok(fs::write(path, s)?)
}

fn note_divergences(rows: &[ChainMetrics], outcome: &mut Outcome) {
    for r in rows {
        if let Some(step) = r.diverged_at {
            outcome.divergences.push(format!(
                "{} on {} chain {} diverged at step {step}",
                r.preset,
                r.target.as_str(),
                r.chain
            ));
        }
    }
}

fn write_trace(dir: &Path, name: &str, trace: &Trace, every: usize, meta: &[(&str, String)]) -> Result<()> {
    let meta: Vec<(String, String)> = meta.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    trace.thinned(every).write_csv(dir.join(name), &meta)
}

/// Shared run settings of the synthetic experiments.
#[derive(Clone, Debug)]
struct SyntheticCommon {
    basics: RunBasics,
    burn_in: usize,
    trace_every: usize,
    noise: f64,
}

impl SyntheticCommon {
    fn read(s: &Settings) -> Result<Self> {
        let basics = RunBasics::read(s, 100_000)?;
        let c = SyntheticCommon {
            basics,
            burn_in: s.value("", "burn_in", 1000usize)?,
            trace_every: s.value("", "trace_every", 100usize)?,
            noise: s.value("", "gradient_noise", 1.0f64)?,
        };
        if c.trace_every == 0 {
            return Err(Error::Config("`trace_every` must be at least 1".into()));
        }
        if !(c.noise >= 0.0) {
            return Err(Error::Config("`gradient_noise` must be non-negative".into()));
        }
        if c.basics.steps < c.burn_in + crate::verify::MIN_KL_SAMPLES {
            return Err(Error::Config(format!(
                "`steps` ({}) must exceed `burn_in` ({}) by at least {} samples",
                c.basics.steps,
                c.burn_in,
                crate::verify::MIN_KL_SAMPLES
            )));
        }
        Ok(c)
    }
}

/// One-peak and two-peaks comparison: KL divergence of each preset's
/// samples from the target, per chain.
#[derive(Debug)]
pub struct Synthetic1d {
    common: SyntheticCommon,
    init: f64,
    hbox: HistogramBox,
    /// `(target, preset, config)` in output order.
    runs: Vec<(TargetName, PresetKind, PresetConfig)>,
}

impl Synthetic1d {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let common = SyntheticCommon::read(s)?;
        let presets = preset_list(s, &PRESETS_1D, PresetKind::as_str)?;
        let targets: List<String> = s.value("", "targets", List(vec!["one-peak".into(), "two-peaks".into()]))?;
        let mut runs = Vec::new();
        for name in &targets.0 {
            let t: TargetName = name.parse()?;
            if !matches!(t, TargetName::OnePeak | TargetName::TwoPeaks) {
                return Err(Error::Config(format!("synthetic-1d runs one-peak and two-peaks, not `{name}`")));
            }
            let potential = potential_of(t);
            for &p in &presets {
                runs.push((t, p, synthetic_preset(s, p, t, &potential)?));
            }
        }
        let hbox = HistogramBox::new(
            vec![s.value("", "kl_min", -4.0f64)?],
            vec![s.value("", "kl_max", 4.0f64)?],
            vec![s.value("", "kl_bins", 100usize)?],
        )?;
        Ok(Synthetic1d {
            common,
            init: s.value("", "init", 0.0f64)?,
            hbox,
            runs,
        })
    }

    /// Runs every `(target, preset, chain)` and returns the metric rows in output order.
    pub fn sample(&self) -> Result<(Vec<ChainMetrics>, Vec<Trace>)> {
        let c = &self.common;
        let jobs: Vec<(usize, usize)> = (0..self.runs.len())
            .flat_map(|r| (0..c.basics.chains).map(move |k| (r, k)))
            .collect();
        let results = jobs
            .par_iter()
            .map(|&(r, k)| {
                let (target, preset, cfg) = &self.runs[r];
                let potential = potential_of(*target);
                let run = sample_chain(&potential, cfg, c.noise, &[self.init], c.basics.steps, c.basics.chain_seed(k))?;
                let m = chain_metrics(&run, potential.as_ref(), &self.hbox, c.burn_in, (*preset, *target, k, c.basics.steps))?;
                Ok((m, run.trace.thinned(c.trace_every)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(results.into_iter().unzip())
    }

    pub fn execute(&self, out: &Path) -> Result<Outcome> {
        let (rows, traces) = self.sample()?;
        let traces_dir = out.join("traces");
        fs::create_dir_all(&traces_dir)?;
        let mut csv = String::from("preset,target,chain,n_steps,kl,autocorr_time\n");
        let mut outcome = Outcome::default();
        for (r, t) in rows.iter().zip(&traces) {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.preset,
                r.target.as_str(),
                r.chain,
                r.n_steps,
                num(r.kl),
                num(r.autocorr_time)
            )
            .unwrap();
            let name = format!("{}_{}_chain{}.csv", r.target.as_str(), r.preset, r.chain);
            write_trace(&traces_dir, &name, t, 1, &[("target", r.target.as_str().to_string()), ("thinned_every", self.common.trace_every.to_string())])?;
            outcome.summary.push(format!(
                "{:>13} {:>9} chain {}: KL {:.4}  tau {:.1}",
                r.preset,
                r.target.as_str(),
                r.chain,
                r.kl,
                r.autocorr_time
            ));
        }
        fs::write(out.join("metrics.csv"), csv)?;
        write_timings(&out.join("timings.csv"), &rows)?;
        note_divergences(&rows, &mut outcome);
        Ok(outcome)
    }
}

/// Correlated 2-D target: autocorrelation times, sample means against a
/// grid-integrated truth, and the first sampled points of each chain.
#[derive(Debug)]
pub struct Synthetic2d {
    common: SyntheticCommon,
    init: Vec<f64>,
    path_points: usize,
    hbox: HistogramBox,
    truth: Vec<f64>,
    runs: Vec<(PresetKind, PresetConfig)>,
}

/// Mean of `θ` under `exp(−U)` by trapezoid integration over a box.
pub(crate) fn grid_mean(potential: &dyn Potential, lo: &[f64], hi: &[f64], h: f64) -> Result<Vec<f64>> {
    let axes = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| Axis::with_spacing(*a, *b, h))
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid::new(axes)?;
    let energies: Vec<f64> = (0..grid.len()).map(|k| potential.value(&grid.point(k))).collect();
    let p = GridDensity::from_energy(grid.clone(), &energies)?;
    Ok((0..lo.len())
        .map(|i| {
            let v: Vec<f64> = (0..grid.len()).map(|k| grid.point(k)[i] * p.values()[k]).collect();
            grid.trapezoid(&v)
        })
        .collect())
}

impl Synthetic2d {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let common = SyntheticCommon::read(s)?;
        let presets = preset_list(s, &PRESETS_2D, PresetKind::as_str)?;
        let potential = potential_of(TargetName::Correlated2d);
        let runs = presets
            .iter()
            .map(|&p| Ok((p, synthetic_preset(s, p, TargetName::Correlated2d, &potential)?)))
            .collect::<Result<Vec<_>>>()?;
        let pair = |key: &str, default: [f64; 2]| -> Result<Vec<f64>> {
            let v: List<f64> = s.value("", key, List(default.to_vec()))?;
            if v.0.len() != 2 {
                return Err(Error::Config(format!("`{key}` needs two values")));
            }
            Ok(v.0)
        };
        let lo = pair("box_min", [-4.0, -3.0])?;
        let hi = pair("box_max", [4.0, 4.0])?;
        let bins = s.value("", "kl_bins", 50usize)?;
        let truth_h = s.value("", "truth_spacing", 0.01f64)?;
        let init = pair("init", [0.0, 0.0])?;
        let path_points = s.value("", "path_points", 10usize)?;
        if path_points > common.basics.steps {
            return Err(Error::Config("`path_points` exceeds `steps`".into()));
        }
        Ok(Synthetic2d {
            truth: grid_mean(potential.as_ref(), &lo, &hi, truth_h)?,
            hbox: HistogramBox::new(lo, hi, vec![bins; 2])?,
            common,
            init,
            path_points,
            runs,
        })
    }

    /// Grid-integrated target mean of `(θ₁, θ₂)`.
    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    /// Metric rows, thinned traces and the first `path_points` samples of each chain.
    pub fn sample(&self) -> Result<Vec<(ChainMetrics, Trace, Vec<Vec<f64>>)>> {
        let c = &self.common;
        let jobs: Vec<(usize, usize)> = (0..self.runs.len())
            .flat_map(|r| (0..c.basics.chains).map(move |k| (r, k)))
            .collect();
        let potential = potential_of(TargetName::Correlated2d);
        jobs.par_iter()
            .map(|&(r, k)| {
                let (preset, cfg) = &self.runs[r];
                let run = sample_chain(&potential, cfg, c.noise, &self.init, c.basics.steps, c.basics.chain_seed(k))?;
                let m = chain_metrics(
                    &run,
                    potential.as_ref(),
                    &self.hbox,
                    c.burn_in,
                    (*preset, TargetName::Correlated2d, k, c.basics.steps),
                )?;
                let path = run.trace.states.iter().take(self.path_points).cloned().collect();
                Ok((m, run.trace.thinned(c.trace_every), path))
            })
            .collect()
    }

    pub fn execute(&self, out: &Path) -> Result<Outcome> {
        let results = self.sample()?;
        let traces_dir = out.join("traces");
        let paths_dir = out.join("paths");
        fs::create_dir_all(&traces_dir)?;
        fs::create_dir_all(&paths_dir)?;
        let mut csv = String::from(
            "preset,target,chain,n_steps,kl,autocorr_time,autocorr_time_theta_0,mean_theta_0,mean_theta_1,mcse_theta_0,mcse_theta_1,truth_theta_0,truth_theta_1\n",
        );
        let mut outcome = Outcome::default();
        for (r, t, first) in &results {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.preset,
                r.target.as_str(),
                r.chain,
                r.n_steps,
                num(r.kl),
                num(r.autocorr_time),
                num(r.autocorr_times[0]),
                num(r.means[0]),
                num(r.means[1]),
                num(r.standard_errors[0]),
                num(r.standard_errors[1]),
                num(self.truth[0]),
                num(self.truth[1]),
            )
            .unwrap();
            let name = format!("{}_chain{}.csv", r.preset, r.chain);
            write_trace(&traces_dir, &name, t, 1, &[("thinned_every", self.common.trace_every.to_string())])?;
            let mut path = String::from("theta_0,theta_1\n");
            for s in first {
                writeln!(path, "{},{}", num(s[0]), num(s[1])).unwrap();
            }
            fs::write(paths_dir.join(&name), path)?;
            outcome.summary.push(format!(
                "{:>8} chain {}: tau(θ₂) {:.1}  mean ({:.3}, {:.3}) ± ({:.3}, {:.3})  truth ({:.3}, {:.3})",
                r.preset,
                r.chain,
                r.autocorr_time,
                r.means[0],
                r.means[1],
                r.standard_errors[0],
                r.standard_errors[1],
                self.truth[0],
                self.truth[1]
            ));
        }
        let rows: Vec<ChainMetrics> = results.into_iter().map(|(m, _, _)| m).collect();
        fs::write(out.join("metrics.csv"), csv)?;
        write_timings(&out.join("timings.csv"), &rows)?;
        note_divergences(&rows, &mut outcome);
        Ok(outcome)
    }
}
