//! Potentials `U(θ)` and Hamiltonians `H(z) = U(θ) + g(θ, r) (+ thermostat)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state::{BlockKind, Layout, StateVector};

/// A negative log target density over θ, up to a constant.
///
/// Implementations must be safe to evaluate from several chains at once.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> f64;

    /// Gradient of `U`. Falls back to central differences; that path exists
    /// for testing and prototyping only.
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        finite_difference_gradient(|x| self.value(x), theta)
    }

    fn has_analytic_gradient(&self) -> bool {
        false
    }
}

/// Central differences with step `1e-5 · max(1, |x_i|)`.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A potential built from user closures.
#[derive(Clone)]
pub struct FnPotential {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradFn>>,
}

impl FnPotential {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }
}

impl Potential for FnPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &[f64]) -> f64 {
        (self.value)(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(theta),
            None => finite_difference_gradient(|x| (self.value)(x), theta),
        }
    }

    fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }
}

/// Mass matrix `M` of the kinetic term `½ rᵀ M⁻¹ r`.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Mass {
    #[default]
    Identity,
    /// Diagonal of `M`.
    Diagonal(Vec<f64>),
    Dense {
        mass: DMatrix<f64>,
        inverse: DMatrix<f64>,
        /// Lower Cholesky factor of `M`, used to draw `r ~ N(0, M)`.
        factor: DMatrix<f64>,
    },
}

impl Mass {
    pub fn diagonal(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Config("diagonal mass entries must be positive".into()));
        }
        Ok(Mass::Diagonal(masses))
    }

    pub fn dense(mass: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(mass.clone())
            .ok_or_else(|| Error::Config("mass matrix is not positive definite".into()))?;
        Ok(Mass::Dense {
            inverse: chol.inverse(),
            factor: chol.l(),
            mass,
        })
    }

    /// `M⁻¹ r`.
    pub fn inverse_times(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Mass::Identity => r.to_vec(),
            Mass::Diagonal(m) => r.iter().zip(m).map(|(a, b)| a / b).collect(),
            Mass::Dense { inverse, .. } => (inverse * DVector::from_column_slice(r)).as_slice().to_vec(),
        }
    }

    /// Maps standard normals to a draw from `N(0, M)`.
    pub fn momentum_from_normals(&self, normals: &[f64]) -> Vec<f64> {
        match self {
            Mass::Identity => normals.to_vec(),
            Mass::Diagonal(m) => normals.iter().zip(m).map(|(n, m)| n * m.sqrt()).collect(),
            Mass::Dense { factor, .. } => (factor * DVector::from_column_slice(normals)).as_slice().to_vec(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Mass::Identity)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let n = match self {
            Mass::Identity => return Ok(()),
            Mass::Diagonal(m) => m.len(),
            Mass::Dense { mass, .. } => mass.nrows(),
        };
        if n != d {
            return Err(Error::dimension("mass matrix", d, n));
        }
        Ok(())
    }
}

/// `H(z)` over a block layout.
#[derive(Clone)]
pub struct EnergyModel {
    layout: Layout,
    potential: Arc<dyn Potential>,
    mass: Mass,
    thermostat_target: Option<f64>,
}

impl fmt::Debug for EnergyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnergyModel")
            .field("layout", &self.layout)
            .field("mass", &self.mass)
            .field("thermostat_target", &self.thermostat_target)
            .finish_non_exhaustive()
    }
}

impl EnergyModel {
    /// `H = U(θ)` on a θ-only layout.
    pub fn new(potential: Arc<dyn Potential>) -> Self {
        Self {
            layout: Layout::theta(potential.dim()),
            potential,
            mass: Mass::Identity,
            thermostat_target: None,
        }
    }

    /// Adds a momentum block with kinetic term `½ rᵀ M⁻¹ r`.
    pub fn with_momentum(mut self, mass: Mass) -> Result<Self> {
        if self.layout.contains(BlockKind::Momentum) {
            return Err(Error::Config("model already has a momentum block".into()));
        }
        let d = self.potential.dim();
        mass.check_dim(d)?;
        self.layout = Layout::with_momentum(d);
        self.mass = mass;
        Ok(self)
    }

    /// Adds the scalar thermostat `ξ` with energy `(d/2)(ξ − A)²`.
    pub fn with_thermostat(mut self, target: f64) -> Result<Self> {
        if !self.layout.contains(BlockKind::Momentum) {
            return Err(Error::Config("thermostat requires a momentum block".into()));
        }
        if !self.mass.is_identity() {
            return Err(Error::Config("thermostat dynamics assume identity mass".into()));
        }
        self.layout = Layout::with_thermostat(self.potential.dim());
        self.thermostat_target = Some(target);
        Ok(self)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn theta_dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn potential(&self) -> &Arc<dyn Potential> {
        &self.potential
    }

    pub fn mass(&self) -> &Mass {
        &self.mass
    }

    pub fn thermostat_target(&self) -> Option<f64> {
        self.thermostat_target
    }

    fn check_layout(&self, z: &StateVector) -> Result<()> {
        if z.layout() != &self.layout {
            return Err(Error::dimension("state layout", self.layout.dim(), z.dim()));
        }
        Ok(())
    }

    /// `H(z)`.
    pub fn energy(&self, z: &StateVector) -> Result<f64> {
        self.check_layout(z)?;
        let mut h = self.potential.value(z.theta());
        if let Some(r) = z.block(BlockKind::Momentum) {
            let minv_r = self.mass.inverse_times(r);
            h += 0.5 * r.iter().zip(&minv_r).map(|(a, b)| a * b).sum::<f64>();
        }
        if let (Some(xi), Some(a)) = (z.block(BlockKind::Thermostat), self.thermostat_target) {
            let d = self.theta_dim() as f64;
            h += 0.5 * d * (xi[0] - a).powi(2);
        }
        Ok(h)
    }

    /// `∇H(z)`, block by block.
    pub fn grad(&self, z: &StateVector) -> Result<StateVector> {
        self.check_layout(z)?;
        let grad_u = self.potential.gradient(z.theta());
        self.grad_with_potential_gradient(z, &grad_u)
    }

    /// `∇H(z)` with the θ block replaced by a supplied (possibly stochastic) `∇U`.
    pub fn grad_with_potential_gradient(&self, z: &StateVector, grad_u: &[f64]) -> Result<StateVector> {
        self.check_layout(z)?;
        if grad_u.len() != self.theta_dim() {
            return Err(Error::dimension("potential gradient", self.theta_dim(), grad_u.len()));
        }
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(grad_u);
        if let Some(r) = z.block(BlockKind::Momentum) {
            out.extend(self.mass.inverse_times(r));
        }
        if let (Some(xi), Some(a)) = (z.block(BlockKind::Thermostat), self.thermostat_target) {
            out.push(self.theta_dim() as f64 * (xi[0] - a));
        }
        let g = StateVector::unflatten(self.layout.clone(), out)?;
        if let Some(block) = g.first_non_finite_block() {
            return Err(Error::NonFinite {
                block: block.name().to_string(),
            });
        }
        Ok(g)
    }
}

/// Free-function form of [`EnergyModel::energy`].
pub fn energy(model: &EnergyModel, z: &StateVector) -> Result<f64> {
    model.energy(z)
}

/// Free-function form of [`EnergyModel::grad`].
pub fn grad_energy(model: &EnergyModel, z: &StateVector) -> Result<StateVector> {
    model.grad(z)
}
