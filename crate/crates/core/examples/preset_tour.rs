//! Every preset on the one-peak target `U = θ²/2`, with exact gradients for
//! HMC and `∇U + N(0, 1)` for the stochastic-gradient presets.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgmcmc::chain::{initial_state, run_chain, ChainOptions};
use sgmcmc::metric::MetricSpec;
use sgmcmc::presets::{build_sampler, PresetConfig, PresetKind};
use sgmcmc::stochastic::{GradientSource, InjectedNoise};
use sgmcmc::targets::OnePeak;
use sgmcmc::{Potential, StepSchedule};

fn main() -> sgmcmc::Result<()> {
    let u: Arc<dyn Potential> = Arc::new(OnePeak);
    let noisy: Arc<dyn GradientSource> = Arc::new(InjectedNoise::new(u.clone(), 1.0)?);
    let level = MetricSpec::potential_level(u.clone());
    println!("{:>13} {:>8} {:>8}", "preset", "mean", "var");
    for preset in PresetKind::ALL {
        let mut cfg = PresetConfig::new(preset, StepSchedule::constant(0.02)?);
        let mut gradients = Some(noisy.clone());
        match preset {
            PresetKind::Hmc => gradients = None,
            PresetKind::Sgrld | PresetKind::Gsgrhmc | PresetKind::NaiveSgrhmc => {
                cfg = cfg.with_metric(level.clone())
            }
            // no friction: without resampling its energy grows without bound
            PresetKind::NaiveSghmc => cfg = cfg.with_resample_every(50),
            _ => {}
        }
        let sampler = build_sampler(u.clone(), &cfg, gradients)?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let init = initial_state(sampler.model(), &[1.0], &mut rng)?;
        let trace = run_chain(sampler.as_ref(), init, ChainOptions::new(200_000), 7)?;
        let x = &trace.theta_column(0)[1000..];
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        println!("{:>13} {mean:>8.3} {var:>8.3}", preset.as_str());
    }
    println!("target: mean 0, variance 1 (naive-sghmc keeps the gradient noise as extra heat)");
    Ok(())
}
