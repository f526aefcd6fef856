//! A sampler written directly as (H, D, Q): underdamped Langevin on the
//! two-peaks target with a hand-built friction and curl.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgmcmc::chain::{initial_state, run_chain, ChainOptions, RecipeSampler};
use sgmcmc::targets::TwoPeaks;
use sgmcmc::{
    validate_spec, EnergyModel, FieldMatrix, FieldRole, Mass, MatrixField, NoiseCompensation, SamplerSpec,
    StateVector, StepSchedule,
};

fn main() -> sgmcmc::Result<()> {
    // z = (θ, r), H = U(θ) + r²/2
    let model = EnergyModel::new(Arc::new(TwoPeaks)).with_momentum(Mass::Identity)?;
    let friction = 0.8;
    let d = MatrixField::constant(FieldRole::Diffusion, FieldMatrix::Diagonal(vec![0.0, friction]));
    let q = MatrixField::constant(
        FieldRole::Curl,
        FieldMatrix::Dense(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])),
    );
    let spec = SamplerSpec::new(model, d, q, NoiseCompensation::None, StepSchedule::constant(0.02)?)?;

    // D must be PSD and Q skew everywhere the chain can go
    let probes: Vec<StateVector> = (-20..=20)
        .map(|i| StateVector::unflatten(spec.model.layout().clone(), vec![0.15 * i as f64, 0.5]).unwrap())
        .collect();
    println!("structure clean: {}", validate_spec(&spec, &probes)?.is_clean());

    let sampler = RecipeSampler::new("underdamped", spec).with_refresh(50);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = initial_state(&sampler.spec().model, &[0.0], &mut rng)?;
    let trace = run_chain(&sampler, init, ChainOptions::new(200_000), 1)?;
    let theta = trace.theta_column(0);
    let right = theta.iter().filter(|t| **t > 0.0).count() as f64 / theta.len() as f64;
    let mean_abs = theta.iter().map(|t| t.abs()).sum::<f64>() / theta.len() as f64;
    println!("mass right of zero {right:.3} (target 0.5), mean |θ| {mean_abs:.3}");
    Ok(())
}
