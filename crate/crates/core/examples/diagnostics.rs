//! Sample-quality measures on one chain: histogram KL against the target,
//! integrated autocorrelation time, effective sample size and MC error.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgmcmc::chain::{initial_state, run_chain, ChainOptions};
use sgmcmc::presets::{build_sampler, PresetConfig, PresetKind};
use sgmcmc::targets::TwoPeaks;
use sgmcmc::verify::{autocorrelation_time, effective_sample_size, kl_divergence, mc_standard_error, HistogramBox};
use sgmcmc::{Potential, StepSchedule};

fn main() -> sgmcmc::Result<()> {
    let u: Arc<dyn Potential> = Arc::new(TwoPeaks);
    let hbox = HistogramBox::new(vec![-4.0], vec![4.0], vec![100])?;
    for (preset, eps) in [(PresetKind::Sgld, 0.01), (PresetKind::Sghmc, 0.02)] {
        let cfg = PresetConfig::new(preset, StepSchedule::constant(eps)?);
        let sampler = build_sampler(u.clone(), &cfg, None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = initial_state(sampler.model(), &[0.0], &mut rng)?;
        let trace = run_chain(sampler.as_ref(), init, ChainOptions::new(300_000), 2)?;
        let samples = &trace.states[1000..];
        let x: Vec<f64> = samples.iter().map(|s| s[0]).collect();
        let kl = kl_divergence(samples, u.as_ref(), &hbox)?;
        let tau = autocorrelation_time(&x, 20_000)?;
        println!(
            "{:>6}: KL {:.4}, tau {:.0} steps, ESS {:.0}, mean {:.3} ± {:.3}",
            preset.as_str(),
            kl.kl,
            tau.tau,
            effective_sample_size(&x, 20_000)?,
            x.iter().sum::<f64>() / x.len() as f64,
            mc_standard_error(&x, 20_000)?,
        );
    }
    Ok(())
}
