use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::riemannian_curl;
use crate::chain::{refresh_due, refresh_momentum, Boundary, Transition};
use crate::energy::EnergyModel;
use crate::engine::standard_normals;
use crate::error::{Error, Result};
use crate::field::{FieldKind, FieldRole, MatrixField};
use crate::linalg::{symmetric_sqrt, FieldMatrix};
use crate::metric::MetricSpec;
use crate::schedule::StepSchedule;
use crate::state::{BlockKind, StateVector};
use crate::stochastic::GradientSource;

/// Residual above which an updater is declared not expressible as a recipe.
pub const CAST_TOLERANCE: f64 = 1e-3;

/// A hand-written update rule that is not built from `(D, Q, H)`.
///
/// It exposes the pieces needed to test whether some curl field would
/// reproduce it: its mean drift per unit step and the diffusion implied by
/// the noise it injects.
pub trait RawUpdater: Transition {
    /// `E[z' − z] / ε` with exact gradients.
    fn mean_drift(&self, z: &StateVector) -> Result<Vec<f64>>;
    /// `D` such that the per-step noise covariance is `2εD`.
    fn implied_diffusion(&self) -> MatrixField;
    /// State-dependent curl fields worth trying besides constant ones.
    fn curl_candidates(&self) -> Vec<MatrixField> {
        Vec::new()
    }
}

/// Outcome of fitting `−(D + Q)∇H + Γ` to a raw updater's drift.
#[derive(Clone, Debug, PartialEq)]
pub struct CastReport {
    /// Max absolute drift mismatch over probes after the least-squares fit.
    pub residual: f64,
    /// Fitted weights of the constant skew basis followed by the candidates.
    pub coefficients: Vec<f64>,
    pub castable: bool,
}

/// Least-squares fit of the updater's drift by recipe drifts with its implied
/// `D` and `Q = Σ cₖ Qₖ`, where `Qₖ` spans constant skew matrices plus
/// [`RawUpdater::curl_candidates`].
pub fn recipe_cast_residual(raw: &dyn RawUpdater, probes: &[StateVector]) -> Result<CastReport> {
    if probes.is_empty() {
        return Err(Error::Config("cast check needs at least one probe state".into()));
    }
    let model = raw.model();
    let n = model.dim();
    let mut basis = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            basis.push(MatrixField::constant(
                FieldRole::Curl,
                FieldMatrix::Sparse {
                    dim: n,
                    entries: vec![(a, b, -1.0), (b, a, 1.0)],
                },
            ));
        }
    }
    basis.extend(raw.curl_candidates());
    let diffusion = raw.implied_diffusion();

    let rows = probes.len() * n;
    let mut x = DMatrix::zeros(rows, basis.len());
    let mut y = DVector::zeros(rows);
    for (p, z) in probes.iter().enumerate() {
        let grad = model.grad(z)?;
        let mut target = raw.mean_drift(z)?;
        let d = diffusion.eval(z.as_slice())?;
        d.mul_vec_add(1.0, grad.as_slice(), &mut target);
        for (t, g) in target.iter_mut().zip(diffusion.divergence(z.as_slice())?) {
            *t -= g;
        }
        for i in 0..n {
            y[p * n + i] = target[i];
        }
        for (k, q) in basis.iter().enumerate() {
            let mut col = q.divergence(z.as_slice())?;
            q.eval(z.as_slice())?.mul_vec_add(-1.0, grad.as_slice(), &mut col);
            for i in 0..n {
                x[(p * n + i, k)] = col[i];
            }
        }
    }
    let coefficients = if basis.is_empty() {
        DVector::zeros(0)
    } else {
        x.clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Numeric(format!("least-squares cast failed: {e}")))?
    };
    let fitted = if basis.is_empty() { DVector::zeros(rows) } else { &x * &coefficients };
    let residual = (&y - fitted).amax();
    Ok(CastReport {
        residual,
        coefficients: coefficients.as_slice().to_vec(),
        castable: residual <= CAST_TOLERANCE,
    })
}

/// `θ' = θ + εM⁻¹r`, `r' = r − ε∇Ũ(θ)`: HMC with stochastic gradients and no
/// friction to balance their noise.
#[derive(Clone)]
pub struct NaiveSghmc {
    model: EnergyModel,
    gradients: Arc<dyn GradientSource>,
    schedule: StepSchedule,
    refresh_every: Option<usize>,
}

impl fmt::Debug for NaiveSghmc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NaiveSghmc")
            .field("schedule", &self.schedule)
            .field("refresh_every", &self.refresh_every)
            .finish()
    }
}

impl NaiveSghmc {
    pub fn new(
        model: EnergyModel,
        gradients: Arc<dyn GradientSource>,
        schedule: StepSchedule,
        refresh_every: usize,
    ) -> Result<Self> {
        if gradients.dim() != model.theta_dim() {
            return Err(Error::dimension("gradient source", model.theta_dim(), gradients.dim()));
        }
        Ok(Self {
            model,
            gradients,
            schedule,
            refresh_every: (refresh_every > 0).then_some(refresh_every),
        })
    }
}

impl Transition for NaiveSghmc {
    fn name(&self) -> &str {
        "naive-sghmc"
    }

    fn model(&self) -> &EnergyModel {
        &self.model
    }

    fn epsilon(&self, t: usize) -> f64 {
        self.schedule.epsilon(t)
    }

    fn step(&self, z: &StateVector, t: usize, rng: &mut dyn RngCore) -> Result<StateVector> {
        let mut next = z.clone();
        if refresh_due(self.refresh_every, t) {
            refresh_momentum(&self.model, &mut next, rng);
        }
        let eps = self.epsilon(t);
        let grad = self.gradients.gradient(next.theta(), rng)?;
        let v = self.model.mass().inverse_times(next.block(BlockKind::Momentum).unwrap());
        for (th, vi) in next.theta_mut().iter_mut().zip(&v) {
            *th += eps * vi;
        }
        for (r, g) in next.block_mut(BlockKind::Momentum).unwrap().iter_mut().zip(&grad) {
            *r -= eps * g;
        }
        if let Some(block) = next.first_non_finite_block() {
            return Err(Error::NonFinite {
                block: block.name().to_string(),
            });
        }
        Ok(next)
    }
}

impl RawUpdater for NaiveSghmc {
    fn mean_drift(&self, z: &StateVector) -> Result<Vec<f64>> {
        let mut f = self.model.mass().inverse_times(z.block(BlockKind::Momentum).unwrap());
        f.extend(self.model.potential().gradient(z.theta()).into_iter().map(|g| -g));
        Ok(f)
    }

    /// `diag(0, εV/2)`: the gradient noise `N(0, ε²V)` read as `2εD`.
    fn implied_diffusion(&self) -> MatrixField {
        let d = self.model.theta_dim();
        let eps = self.schedule.epsilon(0);
        let source = self.gradients.clone();
        MatrixField::from_fn(FieldRole::Diffusion, FieldKind::Dense, 2 * d, move |z| {
            let v = source
                .noise_covariance(&z[..d])
                .unwrap_or_else(|| DMatrix::zeros(d, d));
            Ok(FieldMatrix::embed(2 * d, &[(d, d, &FieldMatrix::Dense(v * (0.5 * eps)))]))
        })
    }
}

/// Preconditioned SGHMC with friction `G⁻¹` but without the
/// `∇θ G^(−1/2)` term.
#[derive(Clone)]
pub struct NaiveSgrhmc {
    model: EnergyModel,
    metric: MetricSpec,
    gradients: Option<Arc<dyn GradientSource>>,
    schedule: StepSchedule,
    refresh_every: Option<usize>,
    gradient_covariance: Option<DMatrix<f64>>,
    boundary: Boundary,
}

impl fmt::Debug for NaiveSgrhmc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NaiveSgrhmc")
            .field("metric", &self.metric)
            .field("schedule", &self.schedule)
            .field("refresh_every", &self.refresh_every)
            .finish()
    }
}

impl NaiveSgrhmc {
    pub fn new(
        model: EnergyModel,
        metric: MetricSpec,
        gradients: Option<Arc<dyn GradientSource>>,
        schedule: StepSchedule,
        refresh_every: usize,
        gradient_covariance: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = model.theta_dim();
        if metric.dim() != d {
            return Err(Error::dimension("metric", d, metric.dim()));
        }
        if let Some(g) = &gradients {
            if g.dim() != d {
                return Err(Error::dimension("gradient source", d, g.dim()));
            }
        }
        Ok(Self {
            model,
            metric,
            gradients,
            schedule,
            refresh_every: (refresh_every > 0).then_some(refresh_every),
            gradient_covariance,
            boundary: Boundary::None,
        })
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }
}

impl Transition for NaiveSgrhmc {
    fn name(&self) -> &str {
        "naive-sgrhmc"
    }

    fn model(&self) -> &EnergyModel {
        &self.model
    }

    fn epsilon(&self, t: usize) -> f64 {
        self.schedule.epsilon(t)
    }

    fn step(&self, z: &StateVector, t: usize, rng: &mut dyn RngCore) -> Result<StateVector> {
        let mut next = z.clone();
        if refresh_due(self.refresh_every, t) {
            refresh_momentum(&self.model, &mut next, rng);
        }
        let eps = self.epsilon(t);
        let theta = next.theta().to_vec();
        let r = next.block(BlockKind::Momentum).unwrap().to_vec();
        let grad = match &self.gradients {
            Some(g) => g.gradient(&theta, rng)?,
            None => self.model.potential().gradient(&theta),
        };
        let s = self.metric.inverse_sqrt(&theta)?;
        let ginv = self.metric.inverse(&theta)?;

        let mut cov = ginv.scaled(2.0 * eps);
        if let Some(v) = &self.gradient_covariance {
            let sd = s.to_dense();
            cov = cov.add(&FieldMatrix::Dense(&sd * v * &sd).scaled(-eps * eps))?;
        }
        let factor = symmetric_sqrt(&cov).map_err(|lambda| {
            Error::Structure(format!(
                "noise covariance is not positive semidefinite (eigenvalue {lambda:.3e}) at θ = {theta:?}; use a smaller step size"
            ))
        })?;
        let noise = factor.apply(&standard_normals(r.len(), rng));

        s.mul_vec_add(eps, &r, next.theta_mut());
        let momentum = next.block_mut(BlockKind::Momentum).unwrap();
        s.mul_vec_add(-eps, &grad, momentum);
        ginv.mul_vec_add(-eps, &r, momentum);
        for (m, n) in momentum.iter_mut().zip(noise) {
            *m += n;
        }
        self.boundary.apply(&mut next);
        if let Some(block) = next.first_non_finite_block() {
            return Err(Error::NonFinite {
                block: block.name().to_string(),
            });
        }
        Ok(next)
    }
}

impl RawUpdater for NaiveSgrhmc {
    fn mean_drift(&self, z: &StateVector) -> Result<Vec<f64>> {
        let theta = z.theta();
        let r = z.block(BlockKind::Momentum).unwrap();
        let s = self.metric.inverse_sqrt(theta)?;
        let ginv = self.metric.inverse(theta)?;
        let mut f = s.mul_vec(r);
        let mut fr = vec![0.0; r.len()];
        s.mul_vec_add(-1.0, &self.model.potential().gradient(theta), &mut fr);
        ginv.mul_vec_add(-1.0, r, &mut fr);
        f.extend(fr);
        Ok(f)
    }

    fn implied_diffusion(&self) -> MatrixField {
        super::riemannian_diffusion(&self.metric)
    }

    fn curl_candidates(&self) -> Vec<MatrixField> {
        vec![riemannian_curl(&self.metric)]
    }
}
