//! What the correction terms buy. Naive SGHMC drops the friction that
//! balances gradient noise; naive SGRHMC drops the `∇θ G^(−1/2)` term that a
//! position-dependent metric needs.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgmcmc::chain::{initial_state, run_chain, ChainOptions};
use sgmcmc::metric::MetricSpec;
use sgmcmc::presets::{build_sampler, PresetConfig, PresetKind};
use sgmcmc::stochastic::{GradientSource, InjectedNoise};
use sgmcmc::targets::{GaussianNd, OnePeak};
use sgmcmc::verify::{kl_divergence, HistogramBox};
use sgmcmc::{FieldMatrix, NoiseCompensation, Potential, StepSchedule};

fn samples(u: &Arc<dyn Potential>, cfg: &PresetConfig, steps: usize) -> sgmcmc::Result<Vec<Vec<f64>>> {
    let g: Arc<dyn GradientSource> = Arc::new(InjectedNoise::new(u.clone(), 1.0)?);
    let sampler = build_sampler(u.clone(), cfg, Some(g))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = initial_state(sampler.model(), &[0.0], &mut rng)?;
    let trace = run_chain(sampler.as_ref(), init, ChainOptions::new(steps), 1)?;
    Ok(trace.states[steps / 100..].to_vec())
}

fn main() -> sgmcmc::Result<()> {
    let e = StepSchedule::constant(0.05)?;
    let gauss: Arc<dyn Potential> = Arc::new(GaussianNd::standard(1));
    let naive = PresetConfig::new(PresetKind::NaiveSghmc, e).with_resample_every(50);
    let corrected = PresetConfig::new(PresetKind::Sghmc, e)
        .with_friction(FieldMatrix::scalar(1, 1.0))
        .with_compensation(NoiseCompensation::Empirical(DMatrix::from_element(1, 1, 1.0)))
        .with_resample_every(50);
    for (name, cfg) in [("naive sghmc", naive), ("sghmc", corrected)] {
        let x: Vec<f64> = samples(&gauss, &cfg, 400_000)?.iter().map(|s| s[0]).collect();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|t| (t - m).powi(2)).sum::<f64>() / x.len() as f64;
        println!("{name:>12}: variance {var:.3} (target 1)");
    }

    let one: Arc<dyn Potential> = Arc::new(OnePeak);
    let metric = MetricSpec::potential_level(one.clone());
    let hbox = HistogramBox::new(vec![-4.0], vec![4.0], vec![100])?;
    let e = StepSchedule::constant(0.02)?;
    for (name, preset) in [("naive sgrhmc", PresetKind::NaiveSgrhmc), ("gsgrhmc", PresetKind::Gsgrhmc)] {
        let cfg = PresetConfig::new(preset, e).with_metric(metric.clone());
        let kl = kl_divergence(&samples(&one, &cfg, 1_000_000)?, one.as_ref(), &hbox)?;
        println!("{name:>12}: KL {:.4}", kl.kl);
    }
    Ok(())
}
