//! Drift assembly and Euler–Maruyama steps for a `(D, Q, H)` triple.
//!
//! A step moves `z' = z + ε (−(D + Q)∇H + Γ) + ξ` with
//! `Γᵢ = Σⱼ ∂ⱼ(Dᵢⱼ + Qᵢⱼ)` and `ξ ~ N(0, ε(2D − εB̂))`.

use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::field::{FieldRole, MatrixField};
use crate::linalg::{symmetric_sqrt, FieldMatrix, PSD_TOLERANCE};
use crate::schedule::StepSchedule;
use crate::state::{BlockKind, StateVector};

/// Estimate `B̂` of the covariance that gradient noise adds to the drift.
#[derive(Clone, Debug, Default)]
pub enum NoiseCompensation {
    /// `B̂ = 0`.
    #[default]
    None,
    /// Fixed `B̂`, given in the full state space.
    Constant(FieldMatrix),
    /// Covariance `V̂` of the potential-gradient noise in θ-space; mapped to
    /// `B̂ = A V̂ Aᵀ` with `A` the θ-columns of `D + Q`.
    Empirical(DMatrix<f64>),
}

/// Immutable sampler definition; shareable across chains.
#[derive(Clone, Debug)]
pub struct SamplerSpec {
    pub model: EnergyModel,
    pub diffusion: MatrixField,
    pub curl: MatrixField,
    pub compensation: NoiseCompensation,
    pub schedule: StepSchedule,
}

impl SamplerSpec {
    pub fn new(
        model: EnergyModel,
        diffusion: MatrixField,
        curl: MatrixField,
        compensation: NoiseCompensation,
        schedule: StepSchedule,
    ) -> Result<Self> {
        if diffusion.role() != FieldRole::Diffusion {
            return Err(Error::Structure("diffusion slot holds a curl field".into()));
        }
        if curl.role() != FieldRole::Curl {
            return Err(Error::Structure("curl slot holds a diffusion field".into()));
        }
        let d = model.dim();
        if diffusion.dim() != d {
            return Err(Error::dimension("diffusion field", d, diffusion.dim()));
        }
        if curl.dim() != d {
            return Err(Error::dimension("curl field", d, curl.dim()));
        }
        match &compensation {
            NoiseCompensation::Constant(b) if b.dim() != d => {
                return Err(Error::dimension("noise compensation", d, b.dim()))
            }
            NoiseCompensation::Empirical(v) if v.nrows() != model.theta_dim() || v.ncols() != model.theta_dim() => {
                return Err(Error::dimension("empirical gradient covariance", model.theta_dim(), v.nrows()))
            }
            _ => {}
        }
        Ok(Self {
            model,
            diffusion,
            curl,
            compensation,
            schedule,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn with_compensation(mut self, compensation: NoiseCompensation) -> Result<Self> {
        let Self {
            model,
            diffusion,
            curl,
            schedule,
            ..
        } = self;
        self = Self::new(model, diffusion, curl, compensation, schedule)?;
        Ok(self)
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// `B̂` at `z` in the full state space.
    pub fn compensation_at(&self, z: &StateVector, dq: &FieldMatrix) -> Result<FieldMatrix> {
        let d = self.dim();
        Ok(match &self.compensation {
            NoiseCompensation::None => FieldMatrix::Zero(d),
            NoiseCompensation::Constant(b) => b.clone(),
            NoiseCompensation::Empirical(v) => {
                let range = z
                    .layout()
                    .range(BlockKind::Theta)
                    .expect("layouts always carry theta");
                let a = dq.to_dense().columns(range.start, range.len()).into_owned();
                FieldMatrix::Dense(&a * v * a.transpose())
            }
        })
    }
}

/// `Γᵢ(z) = Σⱼ ∂ⱼ (Dᵢⱼ + Qᵢⱼ)`.
pub fn gamma_correction(diffusion: &MatrixField, curl: &MatrixField, z: &StateVector) -> Result<Vec<f64>> {
    let mut g = diffusion.divergence(z.as_slice())?;
    for (gi, qi) in g.iter_mut().zip(curl.divergence(z.as_slice())?) {
        *gi += qi;
    }
    Ok(g)
}

/// `f(z) = −(D + Q)∇H + Γ`.
pub fn drift(spec: &SamplerSpec, z: &StateVector, grad_h: &[f64]) -> Result<Vec<f64>> {
    let d = spec.dim();
    if z.dim() != d {
        return Err(Error::dimension("drift state", d, z.dim()));
    }
    if grad_h.len() != d {
        return Err(Error::dimension("drift gradient", d, grad_h.len()));
    }
    let dq = spec.diffusion.eval(z.as_slice())?.add(&spec.curl.eval(z.as_slice())?)?;
    let mut f = gamma_correction(&spec.diffusion, &spec.curl, z)?;
    dq.mul_vec_add(-1.0, grad_h, &mut f);
    Ok(f)
}

/// Full-gradient step with noise `N(0, 2εD(z))`.
pub fn step_full_data(spec: &SamplerSpec, z: &StateVector, t: usize, rng: &mut dyn RngCore) -> Result<StateVector> {
    let grad = spec.model.grad(z)?;
    advance(spec, z, t, grad.as_slice(), false, rng)
}

/// Step with a noisy `∇H̃` and noise `N(0, ε(2D(z) − εB̂))`.
pub fn step_minibatch(
    spec: &SamplerSpec,
    z: &StateVector,
    t: usize,
    noisy_grad_h: &[f64],
    rng: &mut dyn RngCore,
) -> Result<StateVector> {
    advance(spec, z, t, noisy_grad_h, true, rng)
}

fn advance(
    spec: &SamplerSpec,
    z: &StateVector,
    t: usize,
    grad_h: &[f64],
    compensate: bool,
    rng: &mut dyn RngCore,
) -> Result<StateVector> {
    let d = spec.dim();
    if z.dim() != d {
        return Err(Error::dimension("step state", d, z.dim()));
    }
    if grad_h.len() != d {
        return Err(Error::dimension("step gradient", d, grad_h.len()));
    }
    let eps = spec.schedule.epsilon(t);
    let dmat = spec.diffusion.eval(z.as_slice())?;
    let dq = dmat.add(&spec.curl.eval(z.as_slice())?)?;

    let mut next = z.as_slice().to_vec();
    let gamma = gamma_correction(&spec.diffusion, &spec.curl, z)?;
    for (n, g) in next.iter_mut().zip(&gamma) {
        *n += eps * g;
    }
    dq.mul_vec_add(-eps, grad_h, &mut next);

    let mut cov = dmat.scaled(2.0 * eps);
    if compensate && !matches!(spec.compensation, NoiseCompensation::None) {
        let b = spec.compensation_at(z, &dq)?;
        cov = cov.add(&b.scaled(-eps * eps))?;
    }
    if !cov.is_zero() {
        let factor = symmetric_sqrt(&cov).map_err(|lambda| {
            if compensate {
                Error::Structure(format!(
                    "noise covariance ε(2D − εB̂) is not positive semidefinite (eigenvalue {lambda:.3e}) at z = {:?}; use a smaller step size",
                    z.as_slice()
                ))
            } else {
                Error::Structure(format!(
                    "diffusion D is not positive semidefinite (eigenvalue {lambda:.3e}) at z = {:?}",
                    z.as_slice()
                ))
            }
        })?;
        let normals = standard_normals(d, rng);
        for (n, xi) in next.iter_mut().zip(factor.apply(&normals)) {
            *n += xi;
        }
    }

    let out = StateVector::unflatten(z.layout().clone(), next)?;
    if let Some(block) = out.first_non_finite_block() {
        return Err(Error::NonFinite {
            block: block.name().to_string(),
        });
    }
    Ok(out)
}

/// `n` independent standard normals, drawn in order.
pub fn standard_normals(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// A single finding from [`validate_spec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    /// Index into the probe list.
    pub probe: usize,
    pub state: Vec<f64>,
    /// Eigenvalue, skew defect or divergence mismatch.
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub psd_violations: Vec<Violation>,
    pub skew_violations: Vec<Violation>,
    pub gamma_mismatches: Vec<Violation>,
    pub evaluation_failures: Vec<(usize, String)>,
    pub probes: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.psd_violations.is_empty()
            && self.skew_violations.is_empty()
            && self.gamma_mismatches.is_empty()
            && self.evaluation_failures.is_empty()
    }
}

/// Tolerance on `‖Q + Qᵀ‖∞`.
pub const SKEW_TOLERANCE: f64 = 1e-12;
/// Relative tolerance between analytic and finite-difference `Γ`.
pub const GAMMA_TOLERANCE: f64 = 1e-4;

/// Checks PSD of `D`, skew-symmetry of `Q` and analytic-vs-numeric `Γ` at each probe.
pub fn validate_spec(spec: &SamplerSpec, probes: &[StateVector]) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(Error::Config("validate_spec needs at least one probe state".into()));
    }
    let mut report = ValidationReport {
        probes: probes.len(),
        ..Default::default()
    };
    for (k, z) in probes.iter().enumerate() {
        if z.dim() != spec.dim() {
            return Err(Error::dimension("probe state", spec.dim(), z.dim()));
        }
        let state = z.as_slice().to_vec();
        let finding = |value| Violation {
            probe: k,
            state: state.clone(),
            value,
        };
        let (dmat, qmat) = match (spec.diffusion.eval(&state), spec.curl.eval(&state)) {
            (Ok(d), Ok(q)) => (d, q),
            (Err(e), _) | (_, Err(e)) => {
                report.evaluation_failures.push((k, e.to_string()));
                continue;
            }
        };
        let sym = dmat.symmetry_defect();
        let lambda = if sym > SKEW_TOLERANCE { -sym } else { dmat.min_eigenvalue() };
        if !(lambda >= -PSD_TOLERANCE) {
            report.psd_violations.push(finding(lambda));
        }
        let skew = qmat.skew_defect();
        if !(skew <= SKEW_TOLERANCE) {
            report.skew_violations.push(finding(skew));
        }
        for field in [&spec.diffusion, &spec.curl] {
            if field.is_constant() || !field.has_analytic_divergence() {
                continue;
            }
            let analytic = field.divergence(&state)?;
            let numeric = field.numeric_divergence(&state)?;
            let worst = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
                .fold(0.0, f64::max);
            if !(worst <= GAMMA_TOLERANCE) {
                report.gamma_mismatches.push(finding(worst));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{FnPotential, Mass};
    use crate::field::FieldKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn quadratic(d: usize) -> EnergyModel {
        EnergyModel::new(Arc::new(
            FnPotential::new(d, |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>()).with_gradient(|x| x.to_vec()),
        ))
    }

    fn symplectic(d: usize) -> FieldMatrix {
        let mut entries = Vec::new();
        for i in 0..d {
            entries.push((i, d + i, -1.0));
            entries.push((d + i, i, 1.0));
        }
        FieldMatrix::Sparse { dim: 2 * d, entries }
    }

    fn hmc(eps: f64) -> SamplerSpec {
        let model = quadratic(1).with_momentum(Mass::Identity).unwrap();
        SamplerSpec::new(
            model,
            MatrixField::zero(FieldRole::Diffusion, 2),
            MatrixField::constant(FieldRole::Curl, symplectic(1)),
            NoiseCompensation::None,
            StepSchedule::constant(eps).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_fields_have_no_correction() {
        let d = MatrixField::constant(FieldRole::Diffusion, FieldMatrix::Diagonal(vec![0.3, 2.0]));
        let q = MatrixField::constant(FieldRole::Curl, symplectic(1));
        let z = StateVector::theta_only(vec![0.4, -7.0]);
        assert_eq!(gamma_correction(&d, &q, &z).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn positive_orthant_metric_correction() {
        let d = MatrixField::from_fn(FieldRole::Diffusion, FieldKind::Diagonal, 2, |z| {
            Ok(FieldMatrix::Diagonal(z.to_vec()))
        });
        let q = MatrixField::zero(FieldRole::Curl, 2);
        let g = gamma_correction(&d, &q, &StateVector::theta_only(vec![2.0, 3.0])).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8 && (g[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn hamiltonian_drift_is_velocity_and_force() {
        let spec = hmc(0.1);
        let z = StateVector::unflatten(spec.model.layout().clone(), vec![0.7, -0.3]).unwrap();
        let g = spec.model.grad(&z).unwrap();
        let f = drift(&spec, &z, g.as_slice()).unwrap();
        assert_eq!(f, vec![-0.3, -0.7]);
    }

    #[test]
    fn hamiltonian_euler_step() {
        let spec = hmc(0.1);
        let z = StateVector::unflatten(spec.model.layout().clone(), vec![0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = step_full_data(&spec, &z, 0, &mut rng).unwrap();
        assert!((next.as_slice()[0] - 0.1).abs() < 1e-15);
        assert!((next.as_slice()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_fields_are_identity_and_skip_the_rng() {
        let spec = SamplerSpec::new(
            quadratic(2),
            MatrixField::zero(FieldRole::Diffusion, 2),
            MatrixField::zero(FieldRole::Curl, 2),
            NoiseCompensation::None,
            StepSchedule::constant(0.5).unwrap(),
        )
        .unwrap();
        let z = StateVector::theta_only(vec![1.5, -2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let before = rng.clone();
        assert_eq!(step_full_data(&spec, &z, 0, &mut rng).unwrap(), z);
        assert_eq!(rng, before);
    }

    #[test]
    fn langevin_step_matches_hand_coded_update() {
        let spec = SamplerSpec::new(
            quadratic(3),
            MatrixField::constant(FieldRole::Diffusion, FieldMatrix::identity(3)),
            MatrixField::zero(FieldRole::Curl, 3),
            NoiseCompensation::None,
            StepSchedule::constant(0.01).unwrap(),
        )
        .unwrap();
        let theta = vec![0.3, -1.2, 2.0];
        let z = StateVector::theta_only(theta.clone());
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = a.clone();
        let next = step_full_data(&spec, &z, 0, &mut a).unwrap();
        let eta = standard_normals(3, &mut b);
        for i in 0..3 {
            let hand = theta[i] - 0.01 * theta[i] + (2.0f64 * 0.01).sqrt() * eta[i];
            assert!((next.as_slice()[i] - hand).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_compensation_equals_full_data_step() {
        let spec = SamplerSpec::new(
            quadratic(2),
            MatrixField::constant(FieldRole::Diffusion, FieldMatrix::identity(2)),
            MatrixField::zero(FieldRole::Curl, 2),
            NoiseCompensation::Constant(FieldMatrix::Zero(2)),
            StepSchedule::constant(0.05).unwrap(),
        )
        .unwrap();
        let z = StateVector::theta_only(vec![1.0, 2.0]);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = a.clone();
        let full = step_full_data(&spec, &z, 0, &mut a).unwrap();
        let mini = step_minibatch(&spec, &z, 0, &[1.0, 2.0], &mut b).unwrap();
        assert_eq!(full, mini);
    }

    #[test]
    fn oversized_compensation_asks_for_smaller_step() {
        let spec = SamplerSpec::new(
            quadratic(1),
            MatrixField::constant(FieldRole::Diffusion, FieldMatrix::identity(1)),
            MatrixField::zero(FieldRole::Curl, 1),
            NoiseCompensation::Constant(FieldMatrix::scalar(1, 100.0)),
            StepSchedule::constant(0.1).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = step_minibatch(&spec, &StateVector::theta_only(vec![0.0]), 0, &[0.0], &mut rng).unwrap_err();
        assert!(err.to_string().contains("smaller step size"));
    }

    #[test]
    fn empirical_compensation_lands_on_momentum_block() {
        let model = quadratic(1).with_momentum(Mass::Identity).unwrap();
        let spec = SamplerSpec::new(
            model,
            MatrixField::constant(FieldRole::Diffusion, FieldMatrix::Diagonal(vec![0.0, 1.0])),
            MatrixField::constant(FieldRole::Curl, symplectic(1)),
            NoiseCompensation::Empirical(DMatrix::from_element(1, 1, 4.0)),
            StepSchedule::constant(0.1).unwrap(),
        )
        .unwrap();
        let z = StateVector::unflatten(spec.model.layout().clone(), vec![0.0, 0.0]).unwrap();
        let dq = spec.diffusion.eval(z.as_slice()).unwrap().add(&spec.curl.eval(z.as_slice()).unwrap()).unwrap();
        let b = spec.compensation_at(&z, &dq).unwrap().to_dense();
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 4.0]));
    }

    #[test]
    fn validation_flags_broken_fields() {
        assert!(validate_spec(&hmc(0.1), &[StateVector::unflatten(
            crate::state::Layout::with_momentum(1),
            vec![0.2, 0.3]
        )
        .unwrap()])
        .unwrap()
        .is_clean());

        let bad_q = SamplerSpec::new(
            quadratic(2),
            MatrixField::zero(FieldRole::Diffusion, 2),
            MatrixField::constant(FieldRole::Curl, FieldMatrix::Dense(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 0.5, 0.0]))),
            NoiseCompensation::None,
            StepSchedule::constant(0.1).unwrap(),
        )
        .unwrap();
        let probe = [StateVector::theta_only(vec![0.0, 0.0])];
        let report = validate_spec(&bad_q, &probe).unwrap();
        assert_eq!(report.skew_violations.len(), 1);
        assert!((report.skew_violations[0].value - 0.5).abs() < 1e-15);

        let bad_d = SamplerSpec::new(
            quadratic(2),
            MatrixField::constant(FieldRole::Diffusion, FieldMatrix::Diagonal(vec![1.0, -0.1])),
            MatrixField::zero(FieldRole::Curl, 2),
            NoiseCompensation::None,
            StepSchedule::constant(0.1).unwrap(),
        )
        .unwrap();
        let report = validate_spec(&bad_d, &probe).unwrap();
        assert_eq!(report.psd_violations.len(), 1);
        assert!((report.psd_violations[0].value + 0.1).abs() < 1e-15);
    }

    #[test]
    fn wrong_roles_are_rejected() {
        let r = SamplerSpec::new(
            quadratic(1),
            MatrixField::zero(FieldRole::Curl, 1),
            MatrixField::zero(FieldRole::Curl, 1),
            NoiseCompensation::None,
            StepSchedule::constant(0.1).unwrap(),
        );
        assert!(matches!(r, Err(Error::Structure(_))));
    }
}
