//! Posterior of a Gaussian mean from minibatches. SGHMC subtracts an
//! empirical estimate of the minibatch noise from its injected noise.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sgmcmc::chain::{initial_state, run_chain, ChainOptions};
use sgmcmc::presets::{build_sampler, PresetConfig, PresetKind};
use sgmcmc::stochastic::{
    estimate_gradient_noise, CovarianceMode, Dataset, GaussianLikelihood, GradientSource, MinibatchGradient,
};
use sgmcmc::{FieldMatrix, FnPotential, NoiseCompensation, Potential, StepSchedule};

fn main() -> sgmcmc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(1.5, 1.0).unwrap();
    let xs: Vec<f64> = (0..500).map(|_| noise.sample(&mut rng)).collect();
    let n = xs.len() as f64;
    let prior_var = 10.0;

    // x ~ N(θ, 1), θ ~ N(0, 10)
    let post_var = 1.0 / (n + 1.0 / prior_var);
    let post_mean = post_var * xs.iter().sum::<f64>();
    let sum = xs.iter().sum::<f64>();
    let u: Arc<dyn Potential> = Arc::new(
        FnPotential::new(1, move |t| 0.5 * n * t[0] * t[0] - sum * t[0] + t[0] * t[0] / (2.0 * prior_var))
            .with_gradient(move |t| vec![n * t[0] - sum + t[0] / prior_var]),
    );

    let model = GaussianLikelihood { dim: 1, noise_variance: 1.0, prior_variance: Some(prior_var) };
    let data = Arc::new(Dataset::from_scalars(&xs)?);
    let batch = 25;
    let grads: Arc<dyn GradientSource> = Arc::new(MinibatchGradient::new(Arc::new(model), data.clone(), batch)?);
    let v = estimate_gradient_noise(&model, &data, &[post_mean], batch, 400, CovarianceMode::Dense, &mut rng)?;
    println!("minibatch gradient variance at the posterior mean: {:.1}", v.to_dense()[(0, 0)]);

    let eps = 1e-3;
    let runs = [
        ("sgld", PresetConfig::new(PresetKind::Sgld, StepSchedule::constant(1e-4)?)),
        (
            "sghmc",
            PresetConfig::new(PresetKind::Sghmc, StepSchedule::constant(eps)?)
                .with_friction(FieldMatrix::scalar(1, 50.0))
                .with_compensation(NoiseCompensation::Empirical(v.to_dense())),
        ),
    ];
    // SGLD's injected noise ignores the minibatch noise εV, which adds to its spread
    println!("exact posterior: mean {post_mean:.4}, sd {:.4}", post_var.sqrt());
    for (name, cfg) in runs {
        let sampler = build_sampler(u.clone(), &cfg, Some(grads.clone()))?;
        let init = initial_state(sampler.model(), &[0.0], &mut rng)?;
        let trace = run_chain(sampler.as_ref(), init, ChainOptions::new(100_000), 3)?;
        let x = &trace.theta_column(0)[10_000..];
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let sd = (x.iter().map(|t| (t - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        println!("{name:>15}: mean {m:.4}, sd {sd:.4}");
    }
    Ok(())
}
