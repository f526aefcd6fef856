use rand::RngCore;

use crate::chain::{refresh_due, refresh_momentum, Transition};
use crate::energy::EnergyModel;
use crate::engine::{step_full_data, SamplerSpec};
use crate::error::{Error, Result};
use crate::state::{BlockKind, StateVector};

/// Discretisation of Hamiltonian dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Integrator {
    /// `θ' = θ + εM⁻¹r`, `r' = r − ε∇U(θ)`, through the generic engine.
    Euler,
    /// Half-step momentum, full-step position, half-step momentum.
    #[default]
    Leapfrog,
}

impl std::str::FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "leapfrog" => Ok(Integrator::Leapfrog),
            other => Err(Error::Config(format!("unknown integrator `{other}`"))),
        }
    }
}

/// Full-gradient Hamiltonian Monte Carlo without accept/reject, with
/// momentum resampled every `L` steps.
#[derive(Clone, Debug)]
pub struct HmcSampler {
    spec: SamplerSpec,
    integrator: Integrator,
    refresh_every: Option<usize>,
}

impl HmcSampler {
    pub fn new(spec: SamplerSpec, integrator: Integrator, refresh_every: usize) -> Self {
        Self {
            spec,
            integrator,
            refresh_every: (refresh_every > 0).then_some(refresh_every),
        }
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    /// One leapfrog step of size `eps`.
    pub fn leapfrog(model: &EnergyModel, z: &StateVector, eps: f64) -> Result<StateVector> {
        let potential = model.potential();
        let theta = z.theta();
        let r = z
            .block(BlockKind::Momentum)
            .ok_or_else(|| Error::Structure("leapfrog needs a momentum block".into()))?;
        let g0 = potential.gradient(theta);
        let r_half: Vec<f64> = r.iter().zip(&g0).map(|(r, g)| r - 0.5 * eps * g).collect();
        let v = model.mass().inverse_times(&r_half);
        let mut next = z.clone();
        for (t, vi) in next.theta_mut().iter_mut().zip(&v) {
            *t += eps * vi;
        }
        let g1 = potential.gradient(next.theta());
        for ((r, rh), g) in next.block_mut(BlockKind::Momentum).unwrap().iter_mut().zip(&r_half).zip(&g1) {
            *r = rh - 0.5 * eps * g;
        }
        if let Some(block) = next.first_non_finite_block() {
            return Err(Error::NonFinite {
                block: block.name().to_string(),
            });
        }
        Ok(next)
    }
}

impl Transition for HmcSampler {
    fn name(&self) -> &str {
        "hmc"
    }

    fn model(&self) -> &EnergyModel {
        &self.spec.model
    }

    fn epsilon(&self, t: usize) -> f64 {
        self.spec.schedule.epsilon(t)
    }

    fn step(&self, z: &StateVector, t: usize, rng: &mut dyn RngCore) -> Result<StateVector> {
        let mut current;
        let z = if refresh_due(self.refresh_every, t) {
            current = z.clone();
            refresh_momentum(&self.spec.model, &mut current, rng);
            &current
        } else {
            z
        };
        match self.integrator {
            Integrator::Euler => step_full_data(&self.spec, z, t, rng),
            Integrator::Leapfrog => Self::leapfrog(&self.spec.model, z, self.epsilon(t)),
        }
    }
}
