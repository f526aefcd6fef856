use super::*;
use nalgebra::DMatrix;
use crate::chain::{initial_state, run_chain, ChainOptions};
use crate::energy::FnPotential;
use crate::engine::{gamma_correction, standard_normals, step_full_data, step_minibatch, validate_spec};
use crate::state::{BlockKind, Layout, StateVector};
use crate::stochastic::InjectedNoise;
use crate::targets::{OnePeak, TwoPeaks};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eps(e: f64) -> StepSchedule {
    StepSchedule::constant(e).unwrap()
}

fn gamma21() -> Arc<dyn Potential> {
    Arc::new(
        FnPotential::new(2, |t| t.iter().map(|x| x - x.ln()).sum())
            .with_gradient(|t| t.iter().map(|x| 1.0 - 1.0 / x).collect()),
    )
}

fn state(layout: Layout, v: &[f64]) -> StateVector {
    StateVector::unflatten(layout, v.to_vec()).unwrap()
}

#[test]
fn preset_names_round_trip() {
    for p in PresetKind::ALL {
        assert_eq!(p.as_str().parse::<PresetKind>().unwrap(), p);
    }
    assert_eq!("sgrhmc".parse::<PresetKind>().unwrap(), PresetKind::Gsgrhmc);
    assert!("mala".parse::<PresetKind>().is_err());
}

#[test]
fn irrelevant_parameters_are_rejected() {
    let cfg = PresetConfig::new(PresetKind::Sgld, eps(0.1)).with_friction(FieldMatrix::identity(1));
    let err = make_sgld(Arc::new(OnePeak), &cfg).unwrap_err().to_string();
    assert!(err.contains("friction"), "{err}");
    let cfg = PresetConfig::new(PresetKind::Hmc, eps(0.1)).with_thermostat(1.0);
    assert!(make_hmc(Arc::new(OnePeak), &cfg).is_err());
    let cfg = PresetConfig::new(PresetKind::Sghmc, eps(0.1)).with_friction(FieldMatrix::Diagonal(vec![-1.0]));
    assert!(make_sghmc(Arc::new(OnePeak), &cfg).is_err());
}

#[test]
fn hmc_rejects_stochastic_gradients() {
    let cfg = PresetConfig::new(PresetKind::Hmc, eps(0.1));
    let g: Arc<dyn GradientSource> = Arc::new(InjectedNoise::new(Arc::new(OnePeak), 1.0).unwrap());
    assert!(matches!(build_sampler(Arc::new(OnePeak), &cfg, Some(g)), Err(Error::Config(_))));
}

#[test]
fn hmc_euler_step_matches_hand_update() {
    let potential: Arc<dyn Potential> = Arc::new(TwoPeaks);
    let cfg = PresetConfig::new(PresetKind::Hmc, eps(0.05))
        .with_mass(Mass::diagonal(vec![2.0]).unwrap())
        .with_integrator(Integrator::Euler);
    let hmc = make_hmc(potential.clone(), &cfg).unwrap();
    let z = state(Layout::with_momentum(1), &[0.7, -0.4]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let next = hmc.step(&z, 0, &mut rng).unwrap();
    let theta = 0.7 + 0.05 * (-0.4 / 2.0);
    let r = -0.4 - 0.05 * potential.gradient(&[0.7])[0];
    assert!((next.as_slice()[0] - theta).abs() <= 1e-12);
    assert!((next.as_slice()[1] - r).abs() <= 1e-12);
}

#[test]
fn leapfrog_and_euler_from_rest_position() {
    let potential: Arc<dyn Potential> = Arc::new(OnePeak);
    let z = state(Layout::with_momentum(1), &[0.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let lf = make_hmc(potential.clone(), &PresetConfig::new(PresetKind::Hmc, eps(0.1)))
        .unwrap()
        .step(&z, 0, &mut rng)
        .unwrap();
    // r½ = 1, θ' = 0.1, r' = 1 − 0.05·0.1
    assert!((lf.as_slice()[0] - 0.1).abs() < 1e-15);
    assert!((lf.as_slice()[1] - 0.995).abs() < 1e-15);
    let eu = make_hmc(
        potential,
        &PresetConfig::new(PresetKind::Hmc, eps(0.1)).with_integrator(Integrator::Euler),
    )
    .unwrap()
    .step(&z, 0, &mut rng)
    .unwrap();
    assert!((eu.as_slice()[0] - 0.1).abs() < 1e-15 && (eu.as_slice()[1] - 1.0).abs() < 1e-15);
    assert!((lf.as_slice()[1] - eu.as_slice()[1]).abs() <= 0.01);
}

#[test]
fn leapfrog_conserves_energy_along_a_trajectory() {
    let hmc = make_hmc(Arc::new(OnePeak), &PresetConfig::new(PresetKind::Hmc, eps(0.01))).unwrap();
    let model = hmc.model().clone();
    let mut z = state(Layout::with_momentum(1), &[0.5, 1.2]);
    let h0 = model.energy(&z).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        z = HmcSampler::leapfrog(&model, &z, 0.01).unwrap();
        worst = worst.max((model.energy(&z).unwrap() - h0).abs());
    }
    assert!(worst <= 1e-3, "energy drift {worst}");
}

#[test]
fn sghmc_step_matches_hand_update() {
    let potential: Arc<dyn Potential> = Arc::new(TwoPeaks);
    let c = 0.7;
    let e = 0.05;
    let spec = make_sghmc(
        potential.clone(),
        &PresetConfig::new(PresetKind::Sghmc, eps(e)).with_friction(FieldMatrix::scalar(1, c)),
    )
    .unwrap();
    let z = state(Layout::with_momentum(1), &[1.3, 0.4]);
    let noisy = vec![potential.gradient(&[1.3])[0] + 0.37];
    let grad_h = spec.model.grad_with_potential_gradient(&z, &noisy).unwrap();
    let mut a = ChaCha8Rng::seed_from_u64(21);
    let mut b = a.clone();
    let next = step_minibatch(&spec, &z, 0, grad_h.as_slice(), &mut a).unwrap();
    let eta = standard_normals(2, &mut b);
    let theta = 1.3 + e * 0.4;
    let r = 0.4 - e * noisy[0] - e * c * 0.4 + (2.0 * e * c).sqrt() * eta[1];
    assert!((next.as_slice()[0] - theta).abs() <= 1e-12);
    assert!((next.as_slice()[1] - r).abs() <= 1e-12);
}

#[test]
fn sghmc_boundary_compensation_stays_psd() {
    // C = εV̂ exactly: injected covariance ε(2C − εV̂) = εV̂
    let e = 0.1;
    let v = 2.0;
    let cfg = PresetConfig::new(PresetKind::Sghmc, eps(e))
        .with_friction(FieldMatrix::scalar(1, e * v))
        .with_compensation(NoiseCompensation::Empirical(DMatrix::from_element(1, 1, v)));
    let spec = make_sghmc(Arc::new(OnePeak), &cfg).unwrap();
    let z = state(Layout::with_momentum(1), &[0.2, 0.1]);
    let g = spec.model.grad(&z).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(step_minibatch(&spec, &z, 0, g.as_slice(), &mut rng).is_ok());
    let too_small = PresetConfig::new(PresetKind::Sghmc, eps(e))
        .with_friction(FieldMatrix::scalar(1, 0.5 * e * v))
        .with_compensation(NoiseCompensation::Empirical(DMatrix::from_element(1, 1, v)));
    assert!(make_sghmc(Arc::new(OnePeak), &too_small).is_err());
}


#[test]
fn sgrld_step_matches_hand_update() {
    let e = 0.01;
    let cfg = PresetConfig::new(PresetKind::Sgrld, eps(e)).with_metric(MetricSpec::FisherDiagonal { dim: 2 });
    let spec = make_sgrld(gamma21(), &cfg).unwrap();
    let theta = [2.0, 3.0];
    let z = StateVector::theta_only(theta.to_vec());
    assert_eq!(gamma_correction(&spec.diffusion, &spec.curl, &z).unwrap(), vec![1.0, 1.0]);
    let mut a = ChaCha8Rng::seed_from_u64(8);
    let mut b = a.clone();
    let next = step_full_data(&spec, &z, 0, &mut a).unwrap();
    let eta = standard_normals(2, &mut b);
    for i in 0..2 {
        let t = theta[i];
        let hand = t - e * t * (1.0 - 1.0 / t) + e * 1.0 + (2.0 * e * t).sqrt() * eta[i];
        assert!((next.as_slice()[i] - hand).abs() <= 1e-12);
    }
}

#[test]
fn identity_metric_sgrld_is_sgld() {
    let potential: Arc<dyn Potential> = Arc::new(TwoPeaks);
    let sgrld = make_sgrld(potential.clone(), &PresetConfig::new(PresetKind::Sgrld, eps(0.1))).unwrap();
    let sgld = make_sgld(potential, &PresetConfig::new(PresetKind::Sgld, eps(0.1))).unwrap();
    let z = StateVector::theta_only(vec![0.3]);
    let mut a = ChaCha8Rng::seed_from_u64(2);
    let mut b = a.clone();
    assert_eq!(
        step_full_data(&sgrld, &z, 0, &mut a).unwrap(),
        step_full_data(&sgld, &z, 0, &mut b).unwrap()
    );
}

#[test]
fn sgnht_correction_and_step_match_hand_update() {
    let d = 3;
    let a_th = 1.7;
    let e = 0.02;
    let potential: Arc<dyn Potential> = Arc::new(crate::targets::GaussianNd::standard(d));
    let spec = make_sgnht(
        potential.clone(),
        &PresetConfig::new(PresetKind::Sgnht, eps(e)).with_thermostat(a_th),
    )
    .unwrap();
    let theta = [0.3, -0.2, 1.1];
    let r = [0.5, -1.5, 0.25];
    let xi = 0.8;
    let mut v = theta.to_vec();
    v.extend(r);
    v.push(xi);
    let z = state(Layout::with_thermostat(d), &v);

    let gamma = gamma_correction(&spec.diffusion, &spec.curl, &z).unwrap();
    let mut expected = vec![0.0; 2 * d + 1];
    expected[2 * d] = -1.0;
    assert_eq!(gamma, expected);
    let numeric = spec.curl.numeric_divergence(z.as_slice()).unwrap();
    assert!(numeric.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-8));

    let grad_h = spec.model.grad(&z).unwrap();
    let f = crate::engine::drift(&spec, &z, grad_h.as_slice()).unwrap();
    let rr: f64 = r.iter().map(|x| x * x).sum();
    assert!((f[2 * d] - (rr / d as f64 - 1.0)).abs() < 1e-12);

    let mut a = ChaCha8Rng::seed_from_u64(4);
    let mut b = a.clone();
    let next = step_full_data(&spec, &z, 0, &mut a).unwrap();
    let eta = standard_normals(2 * d + 1, &mut b);
    let g = potential.gradient(&theta);
    for i in 0..d {
        assert!((next.as_slice()[i] - (theta[i] + e * r[i])).abs() <= 1e-12);
        let hand = r[i] - e * g[i] - e * xi * r[i] + (2.0 * e * a_th).sqrt() * eta[d + i];
        assert!((next.as_slice()[d + i] - hand).abs() <= 1e-12);
    }
    assert!((next.as_slice()[2 * d] - (xi + e * (rr / d as f64 - 1.0))).abs() <= 1e-12);
}

#[test]
fn gsgrhmc_step_matches_hand_update() {
    let potential: Arc<dyn Potential> = Arc::new(OnePeak);
    let metric = MetricSpec::potential_level(potential.clone());
    let e = 0.03;
    let spec = make_gsgrhmc(
        potential.clone(),
        &PresetConfig::new(PresetKind::Gsgrhmc, eps(e)).with_metric(metric),
    )
    .unwrap();
    let (theta, r) = (0.9, -0.6);
    let z = state(Layout::with_momentum(1), &[theta, r]);
    let mut a = ChaCha8Rng::seed_from_u64(13);
    let mut b = a.clone();
    let next = step_full_data(&spec, &z, 0, &mut a).unwrap();
    let eta = standard_normals(2, &mut b);

    let s_level = theta * theta / 2.0 + 0.5;
    let ginv = 1.5 * s_level.sqrt();
    let s = ginv.sqrt();
    let ds = 1.5f64.sqrt() * theta / (4.0 * s_level.powf(0.75));
    let theta_hand = theta + e * s * r;
    let r_hand = r - e * (s * theta - ds + ginv * r) + (2.0 * e * ginv).sqrt() * eta[1];
    assert!((next.as_slice()[0] - theta_hand).abs() <= 1e-12);
    assert!((next.as_slice()[1] - r_hand).abs() <= 1e-12, "{} vs {r_hand}", next.as_slice()[1]);
}

#[test]
fn identity_metric_gsgrhmc_is_unit_friction_sghmc() {
    let potential: Arc<dyn Potential> = Arc::new(TwoPeaks);
    let g = make_gsgrhmc(potential.clone(), &PresetConfig::new(PresetKind::Gsgrhmc, eps(0.1))).unwrap();
    let s = make_sghmc(potential, &PresetConfig::new(PresetKind::Sghmc, eps(0.1))).unwrap();
    let z = state(Layout::with_momentum(1), &[0.4, -1.0]);
    let mut a = ChaCha8Rng::seed_from_u64(5);
    let mut b = a.clone();
    let x = step_full_data(&g, &z, 0, &mut a).unwrap();
    let y = step_full_data(&s, &z, 0, &mut b).unwrap();
    for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
        assert!((u - v).abs() <= 1e-12);
    }
}

fn random_probes(layout: &Layout, n: usize, positive_theta: bool, seed: u64) -> Vec<StateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut z = StateVector::zeros(layout.clone());
            for v in z.as_mut_slice() {
                *v = rng.random_range(-3.0..3.0);
            }
            if positive_theta {
                for t in z.theta_mut() {
                    *t = rng.random_range(0.05..5.0);
                }
            }
            z
        })
        .collect()
}

#[test]
fn corrected_presets_validate_at_random_probes() {
    let one: Arc<dyn Potential> = Arc::new(OnePeak);
    let cases: Vec<(SamplerSpec, bool)> = vec![
        (make_spec(one.clone(), &PresetConfig::new(PresetKind::Hmc, eps(0.1))).unwrap(), false),
        (make_sgld(one.clone(), &PresetConfig::new(PresetKind::Sgld, eps(0.1))).unwrap(), false),
        (make_sghmc(one.clone(), &PresetConfig::new(PresetKind::Sghmc, eps(0.1))).unwrap(), false),
        (
            make_sgrld(
                gamma21(),
                &PresetConfig::new(PresetKind::Sgrld, eps(0.1)).with_metric(MetricSpec::FisherDiagonal { dim: 2 }),
            )
            .unwrap(),
            true,
        ),
        (
            make_sgrld(
                one.clone(),
                &PresetConfig::new(PresetKind::Sgrld, eps(0.1)).with_metric(MetricSpec::potential_level(one.clone())),
            )
            .unwrap(),
            false,
        ),
        (make_sgnht(Arc::new(crate::targets::GaussianNd::standard(2)), &PresetConfig::new(PresetKind::Sgnht, eps(0.1))).unwrap(), false),
        (
            make_gsgrhmc(
                one.clone(),
                &PresetConfig::new(PresetKind::Gsgrhmc, eps(0.1)).with_metric(MetricSpec::potential_level(one.clone())),
            )
            .unwrap(),
            false,
        ),
    ];
    for (k, (spec, positive)) in cases.iter().enumerate() {
        let probes = random_probes(spec.model.layout(), 1000, *positive, k as u64);
        let report = validate_spec(spec, &probes).unwrap();
        assert!(report.is_clean(), "case {k}: {report:?}");
    }
}

#[test]
fn naive_updaters_cannot_be_cast() {
    let one: Arc<dyn Potential> = Arc::new(OnePeak);
    let noisy: Arc<dyn GradientSource> = Arc::new(InjectedNoise::new(one.clone(), 1.0).unwrap());
    let naive = make_naive_sghmc(one.clone(), &PresetConfig::new(PresetKind::NaiveSghmc, eps(0.1)), noisy).unwrap();
    let probes = random_probes(naive.layout(), 50, false, 1);
    let report = recipe_cast_residual(&naive, &probes).unwrap();
    assert!(!report.castable && report.residual > CAST_TOLERANCE, "{report:?}");

    // without gradient noise the same updater is plain Euler HMC
    let exact: Arc<dyn GradientSource> = Arc::new(InjectedNoise::new(one.clone(), 0.0).unwrap());
    let clean = make_naive_sghmc(one.clone(), &PresetConfig::new(PresetKind::NaiveSghmc, eps(0.1)), exact).unwrap();
    let report = recipe_cast_residual(&clean, &probes).unwrap();
    assert!(report.castable, "{report:?}");
    assert!((report.coefficients[0] - 1.0).abs() < 1e-9);

    let cfg = PresetConfig::new(PresetKind::NaiveSgrhmc, eps(0.1)).with_metric(MetricSpec::potential_level(one.clone()));
    let naive = make_naive_sgrhmc(one.clone(), &cfg, None).unwrap();
    let report = recipe_cast_residual(&naive, &probes).unwrap();
    assert!(!report.castable, "{report:?}");

    // the flat-metric version coincides with SGHMC and is castable
    let flat = make_naive_sgrhmc(one, &PresetConfig::new(PresetKind::NaiveSgrhmc, eps(0.1)), None).unwrap();
    assert!(recipe_cast_residual(&flat, &probes).unwrap().castable);
}

#[test]
fn naive_presets_have_no_spec() {
    let cfg = PresetConfig::new(PresetKind::NaiveSgrhmc, eps(0.1));
    assert!(matches!(make_spec(Arc::new(OnePeak), &cfg), Err(Error::Structure(_))));
}

#[test]
fn sgrld_positive_metric_stays_positive_with_reflection() {
    let cfg = PresetConfig::new(PresetKind::Sgrld, eps(0.05))
        .with_metric(MetricSpec::FisherDiagonal { dim: 2 })
        .with_boundary(Boundary::ReflectPositive);
    let sampler = build_sampler(gamma21(), &cfg, None).unwrap();
    let trace = run_chain(
        sampler.as_ref(),
        StateVector::theta_only(vec![0.01, 0.02]),
        ChainOptions::new(5000),
        3,
    )
    .unwrap();
    assert!(!trace.diverged());
    assert!(trace.states.iter().flatten().all(|t| *t > 0.0));
}

#[test]
fn built_samplers_run() {
    let one: Arc<dyn Potential> = Arc::new(OnePeak);
    let noisy: Arc<dyn GradientSource> = Arc::new(InjectedNoise::new(one.clone(), 1.0).unwrap());
    for kind in PresetKind::ALL {
        let cfg = PresetConfig::new(kind, eps(0.05));
        let g = (kind != PresetKind::Hmc).then(|| noisy.clone());
        let s = build_sampler(one.clone(), &cfg, g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = initial_state(s.model(), &[0.5], &mut rng).unwrap();
        let t = run_chain(s.as_ref(), z, ChainOptions::new(200), 1).unwrap();
        assert_eq!(t.len(), 200, "{kind}");
        assert!(!t.diverged(), "{kind}");
        if kind == PresetKind::Sgnht {
            assert!(s.layout().contains(BlockKind::Thermostat));
        }
    }
}
