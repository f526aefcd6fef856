//! The samplers of the stochastic-gradient MCMC literature written as
//! `(D, Q, H)` triples, plus two naive updaters kept as negative controls.

mod hmc;
mod naive;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use hmc::{HmcSampler, Integrator};
pub use naive::{recipe_cast_residual, CastReport, NaiveSghmc, NaiveSgrhmc, RawUpdater, CAST_TOLERANCE};

use crate::chain::{Boundary, RecipeSampler, Transition};
use crate::energy::{EnergyModel, Mass, Potential};
use crate::engine::{NoiseCompensation, SamplerSpec};
use crate::error::{Error, Result};
use crate::field::{FieldKind, FieldRole, MatrixField};
use crate::linalg::{FieldMatrix, PSD_TOLERANCE};
use crate::metric::MetricSpec;
use crate::schedule::StepSchedule;
use crate::stochastic::GradientSource;

/// Default momentum resampling period.
pub const DEFAULT_REFRESH: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PresetKind {
    Hmc,
    Sgld,
    NaiveSghmc,
    Sghmc,
    Sgrld,
    Sgnht,
    NaiveSgrhmc,
    Gsgrhmc,
}

impl PresetKind {
    pub const ALL: [PresetKind; 8] = [
        PresetKind::Hmc,
        PresetKind::Sgld,
        PresetKind::NaiveSghmc,
        PresetKind::Sghmc,
        PresetKind::Sgrld,
        PresetKind::Sgnht,
        PresetKind::NaiveSgrhmc,
        PresetKind::Gsgrhmc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetKind::Hmc => "hmc",
            PresetKind::Sgld => "sgld",
            PresetKind::NaiveSghmc => "naive-sghmc",
            PresetKind::Sghmc => "sghmc",
            PresetKind::Sgrld => "sgrld",
            PresetKind::Sgnht => "sgnht",
            PresetKind::NaiveSgrhmc => "naive-sgrhmc",
            PresetKind::Gsgrhmc => "gsgrhmc",
        }
    }

    pub fn is_naive(self) -> bool {
        matches!(self, PresetKind::NaiveSghmc | PresetKind::NaiveSgrhmc)
    }

    pub fn has_momentum(self) -> bool {
        !matches!(self, PresetKind::Sgld | PresetKind::Sgrld)
    }

    fn allows(self, param: Param) -> bool {
        use Param::*;
        use PresetKind::*;
        match param {
            Mass => matches!(self, Hmc | NaiveSghmc | Sghmc),
            Friction => self == Sghmc,
            Thermostat => self == Sgnht,
            Diffusion => self == Sgld,
            Metric => matches!(self, Sgrld | NaiveSgrhmc | Gsgrhmc),
            Refresh => matches!(self, Hmc | NaiveSghmc | Sghmc | NaiveSgrhmc | Gsgrhmc),
            Integrator => self == Hmc,
            Compensation => !matches!(self, Hmc | NaiveSghmc),
            Boundary => self != Hmc,
        }
    }
}

impl fmt::Display for PresetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgrhmc" => Ok(PresetKind::Gsgrhmc),
            _ => PresetKind::ALL
                .into_iter()
                .find(|p| p.as_str() == s)
                .ok_or_else(|| Error::Config(format!("unknown preset `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Param {
    Mass,
    Friction,
    Thermostat,
    Diffusion,
    Metric,
    Refresh,
    Integrator,
    Compensation,
    Boundary,
}

impl Param {
    fn key(self) -> &'static str {
        match self {
            Param::Mass => "mass",
            Param::Friction => "friction",
            Param::Thermostat => "thermostat",
            Param::Diffusion => "diffusion",
            Param::Metric => "metric",
            Param::Refresh => "resample_every",
            Param::Integrator => "integrator",
            Param::Compensation => "compensation",
            Param::Boundary => "boundary",
        }
    }
}

/// Preset parameters. Unset fields take per-preset defaults; setting a field
/// the preset does not use is a configuration error.
#[derive(Clone, Debug)]
pub struct PresetConfig {
    pub preset: PresetKind,
    pub schedule: StepSchedule,
    /// `M`, default `I`.
    pub mass: Option<Mass>,
    /// `C` (θ-dimensional), default `I`.
    pub friction: Option<FieldMatrix>,
    /// `A`, default 1.
    pub thermostat: Option<f64>,
    /// Constant SGLD `D` (θ-dimensional), default `I`.
    pub diffusion: Option<FieldMatrix>,
    /// Default identity.
    pub metric: Option<MetricSpec>,
    /// Momentum resampling period `L`; `Some(0)` disables.
    pub resample_every: Option<usize>,
    pub integrator: Option<Integrator>,
    pub compensation: Option<NoiseCompensation>,
    pub boundary: Option<Boundary>,
}

impl PresetConfig {
    pub fn new(preset: PresetKind, schedule: StepSchedule) -> Self {
        Self {
            preset,
            schedule,
            mass: None,
            friction: None,
            thermostat: None,
            diffusion: None,
            metric: None,
            resample_every: None,
            integrator: None,
            compensation: None,
            boundary: None,
        }
    }

    pub fn with_mass(mut self, mass: Mass) -> Self {
        self.mass = Some(mass);
        self
    }

    pub fn with_friction(mut self, c: FieldMatrix) -> Self {
        self.friction = Some(c);
        self
    }

    pub fn with_thermostat(mut self, a: f64) -> Self {
        self.thermostat = Some(a);
        self
    }

    pub fn with_diffusion(mut self, d: FieldMatrix) -> Self {
        self.diffusion = Some(d);
        self
    }

    pub fn with_metric(mut self, metric: MetricSpec) -> Self {
        self.metric = Some(metric);
        self
    }

    pub fn with_resample_every(mut self, l: usize) -> Self {
        self.resample_every = Some(l);
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = Some(integrator);
        self
    }

    pub fn with_compensation(mut self, compensation: NoiseCompensation) -> Self {
        self.compensation = Some(compensation);
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = Some(boundary);
        self
    }

    /// Rejects parameters the preset does not use.
    pub fn validate(&self) -> Result<()> {
        let set = [
            (Param::Mass, self.mass.is_some()),
            (Param::Friction, self.friction.is_some()),
            (Param::Thermostat, self.thermostat.is_some()),
            (Param::Diffusion, self.diffusion.is_some()),
            (Param::Metric, self.metric.is_some()),
            (Param::Refresh, self.resample_every.is_some()),
            (Param::Integrator, self.integrator.is_some()),
            (Param::Compensation, self.compensation.is_some()),
            (Param::Boundary, self.boundary.is_some()),
        ];
        for (param, present) in set {
            if present && !self.preset.allows(param) {
                return Err(Error::Config(format!(
                    "`{}` does not apply to preset `{}`",
                    param.key(),
                    self.preset
                )));
            }
        }
        Ok(())
    }

    fn expect(&self, kind: PresetKind) -> Result<()> {
        if self.preset != kind {
            return Err(Error::Config(format!(
                "configuration is for `{}`, not `{kind}`",
                self.preset
            )));
        }
        self.validate()
    }

    fn refresh(&self) -> usize {
        self.resample_every.unwrap_or(DEFAULT_REFRESH)
    }

    fn compensation(&self) -> NoiseCompensation {
        self.compensation.clone().unwrap_or_default()
    }

    fn metric_for(&self, potential: &Arc<dyn Potential>) -> Result<MetricSpec> {
        let metric = self.metric.clone().unwrap_or(MetricSpec::Identity { dim: potential.dim() });
        if metric.dim() != potential.dim() {
            return Err(Error::dimension("metric", potential.dim(), metric.dim()));
        }
        Ok(metric)
    }
}

fn check_psd(name: &str, m: &FieldMatrix, d: usize) -> Result<()> {
    if m.dim() != d {
        return Err(Error::dimension(name, d, m.dim()));
    }
    if m.symmetry_defect() > 1e-12 || m.min_eigenvalue() < -PSD_TOLERANCE {
        return Err(Error::Config(format!("{name} must be symmetric positive semidefinite")));
    }
    Ok(())
}

/// `[[0, −S], [S, 0]]` on `(θ, r)`; `S = I` for Hamiltonian presets.
pub fn symplectic_curl(s: &FieldMatrix) -> FieldMatrix {
    let d = s.dim();
    FieldMatrix::embed(2 * d, &[(0, d, &s.scaled(-1.0)), (d, 0, s)])
}

/// HMC: `D = 0`, `Q = [[0, −I], [I, 0]]`, `H = U + ½ rᵀM⁻¹r`.
pub fn make_hmc(potential: Arc<dyn Potential>, cfg: &PresetConfig) -> Result<HmcSampler> {
    cfg.expect(PresetKind::Hmc)?;
    let d = potential.dim();
    let model = EnergyModel::new(potential).with_momentum(cfg.mass.clone().unwrap_or_default())?;
    let spec = SamplerSpec::new(
        model,
        MatrixField::zero(FieldRole::Diffusion, 2 * d),
        MatrixField::constant(FieldRole::Curl, symplectic_curl(&FieldMatrix::identity(d))),
        NoiseCompensation::None,
        cfg.schedule,
    )?;
    Ok(HmcSampler::new(
        spec,
        cfg.integrator.unwrap_or_default(),
        cfg.refresh(),
    ))
}

/// SGLD: `z = θ`, `H = U`, constant `D`, `Q = 0`.
pub fn make_sgld(potential: Arc<dyn Potential>, cfg: &PresetConfig) -> Result<SamplerSpec> {
    cfg.expect(PresetKind::Sgld)?;
    let d = potential.dim();
    let dmat = cfg.diffusion.clone().unwrap_or(FieldMatrix::identity(d));
    check_psd("diffusion", &dmat, d)?;
    SamplerSpec::new(
        EnergyModel::new(potential),
        MatrixField::constant(FieldRole::Diffusion, dmat),
        MatrixField::zero(FieldRole::Curl, d),
        cfg.compensation(),
        cfg.schedule,
    )
}

/// SGHMC: `D = diag(0, C)`, `Q = [[0, −I], [I, 0]]`.
pub fn make_sghmc(potential: Arc<dyn Potential>, cfg: &PresetConfig) -> Result<SamplerSpec> {
    cfg.expect(PresetKind::Sghmc)?;
    let d = potential.dim();
    let c = cfg.friction.clone().unwrap_or(FieldMatrix::identity(d));
    check_psd("friction", &c, d)?;
    let compensation = cfg.compensation();
    if let NoiseCompensation::Empirical(v) = &compensation {
        // C ⪰ ε V̂ at the largest step size
        let slack = c.to_dense() - v * cfg.schedule.epsilon(0);
        if FieldMatrix::Dense(slack).min_eigenvalue() < -PSD_TOLERANCE {
            return Err(Error::Config(
                "friction C must dominate ε·V̂; increase C or decrease the step size".into(),
            ));
        }
    }
    let model = EnergyModel::new(potential).with_momentum(cfg.mass.clone().unwrap_or_default())?;
    SamplerSpec::new(
        model,
        MatrixField::constant(FieldRole::Diffusion, FieldMatrix::embed(2 * d, &[(d, d, &c)])),
        MatrixField::constant(FieldRole::Curl, symplectic_curl(&FieldMatrix::identity(d))),
        compensation,
        cfg.schedule,
    )
}

/// SGRLD: `D(θ) = G(θ)⁻¹`, `Q = 0`.
pub fn make_sgrld(potential: Arc<dyn Potential>, cfg: &PresetConfig) -> Result<SamplerSpec> {
    cfg.expect(PresetKind::Sgrld)?;
    let d = potential.dim();
    let metric = cfg.metric_for(&potential)?;
    let diffusion = if metric.is_constant() {
        MatrixField::constant(FieldRole::Diffusion, metric.inverse(&vec![0.0; d])?)
    } else {
        let (m1, m2) = (metric.clone(), metric.clone());
        MatrixField::from_fn(FieldRole::Diffusion, FieldKind::Diagonal, d, move |z| m1.inverse(z))
            .with_divergence(move |z| m2.inverse_divergence(z))
    };
    SamplerSpec::new(
        EnergyModel::new(potential),
        diffusion,
        MatrixField::zero(FieldRole::Curl, d),
        cfg.compensation(),
        cfg.schedule,
    )
}

/// SGNHT: `z = (θ, r, ξ)`, `D = diag(0, A·I, 0)`,
/// `Q = [[0, −I, 0], [I, 0, r/d], [0, −rᵀ/d, 0]]`, `Γ = (0, 0, −1)`.
pub fn make_sgnht(potential: Arc<dyn Potential>, cfg: &PresetConfig) -> Result<SamplerSpec> {
    cfg.expect(PresetKind::Sgnht)?;
    let d = potential.dim();
    let a = cfg.thermostat.unwrap_or(1.0);
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Config(format!("thermostat A must be positive, got {a}")));
    }
    let model = EnergyModel::new(potential)
        .with_momentum(Mass::Identity)?
        .with_thermostat(a)?;
    let n = 2 * d + 1;
    let mut diag = vec![0.0; n];
    diag[d..2 * d].fill(a);
    let base = symplectic_curl(&FieldMatrix::identity(d)).triplets();
    let curl = MatrixField::from_fn(FieldRole::Curl, FieldKind::Dense, n, move |z| {
        let mut entries = base.clone();
        let inv = 1.0 / d as f64;
        for i in 0..d {
            let r = z[d + i];
            entries.push((d + i, 2 * d, r * inv));
            entries.push((2 * d, d + i, -r * inv));
        }
        Ok(FieldMatrix::Sparse { dim: n, entries })
    })
    .with_divergence(move |_| {
        let mut g = vec![0.0; n];
        g[2 * d] = -1.0;
        Ok(g)
    });
    SamplerSpec::new(
        model,
        MatrixField::constant(FieldRole::Diffusion, FieldMatrix::Diagonal(diag)),
        curl,
        cfg.compensation(),
        cfg.schedule,
    )
}

/// Curl `[[0, −G^(−1/2)], [G^(−1/2), 0]]` with its analytic divergence.
pub fn riemannian_curl(metric: &MetricSpec) -> MatrixField {
    let d = metric.dim();
    if metric.is_constant() {
        let s = metric.inverse_sqrt(&vec![0.0; d]).expect("constant metric");
        return MatrixField::constant(FieldRole::Curl, symplectic_curl(&s));
    }
    let (m1, m2) = (metric.clone(), metric.clone());
    MatrixField::from_fn(FieldRole::Curl, FieldKind::Dense, 2 * d, move |z| {
        Ok(symplectic_curl(&m1.inverse_sqrt(&z[..d])?))
    })
    .with_divergence(move |z| {
        let mut g = vec![0.0; 2 * d];
        g[d..].copy_from_slice(&m2.inverse_sqrt_divergence(&z[..d])?);
        Ok(g)
    })
}

/// Diffusion `diag(0, G(θ)⁻¹)`; divergence vanishes since it depends on `θ` only.
pub fn riemannian_diffusion(metric: &MetricSpec) -> MatrixField {
    let d = metric.dim();
    if metric.is_constant() {
        let g = metric.inverse(&vec![0.0; d]).expect("constant metric");
        return MatrixField::constant(FieldRole::Diffusion, FieldMatrix::embed(2 * d, &[(d, d, &g)]));
    }
    let m = metric.clone();
    MatrixField::from_fn(FieldRole::Diffusion, FieldKind::Diagonal, 2 * d, move |z| {
        Ok(FieldMatrix::embed(2 * d, &[(d, d, &m.inverse(&z[..d])?)]))
    })
    .with_divergence(move |_| Ok(vec![0.0; 2 * d]))
}

/// gSGRHMC: `H = U + ½rᵀr`, `D = diag(0, G⁻¹)`, `Q = [[0, −G^(−1/2)], [G^(−1/2), 0]]`.
pub fn make_gsgrhmc(potential: Arc<dyn Potential>, cfg: &PresetConfig) -> Result<SamplerSpec> {
    cfg.expect(PresetKind::Gsgrhmc)?;
    let metric = cfg.metric_for(&potential)?;
    let model = EnergyModel::new(potential).with_momentum(Mass::Identity)?;
    SamplerSpec::new(
        model,
        riemannian_diffusion(&metric),
        riemannian_curl(&metric),
        cfg.compensation(),
        cfg.schedule,
    )
}

/// Naive SGHMC: HMC with the stochastic gradient substituted, no friction.
pub fn make_naive_sghmc(
    potential: Arc<dyn Potential>,
    cfg: &PresetConfig,
    gradients: Arc<dyn GradientSource>,
) -> Result<NaiveSghmc> {
    cfg.expect(PresetKind::NaiveSghmc)?;
    let model = EnergyModel::new(potential).with_momentum(cfg.mass.clone().unwrap_or_default())?;
    NaiveSghmc::new(model, gradients, cfg.schedule, cfg.resample_every.unwrap_or(0))
}

/// Naive SGRHMC: preconditioned SGHMC with state-dependent friction but no
/// `∇θ G^(−1/2)` correction.
pub fn make_naive_sgrhmc(
    potential: Arc<dyn Potential>,
    cfg: &PresetConfig,
    gradients: Option<Arc<dyn GradientSource>>,
) -> Result<NaiveSgrhmc> {
    cfg.expect(PresetKind::NaiveSgrhmc)?;
    let metric = cfg.metric_for(&potential)?;
    let model = EnergyModel::new(potential).with_momentum(Mass::Identity)?;
    let v = match cfg.compensation() {
        NoiseCompensation::None => None,
        NoiseCompensation::Empirical(v) => Some(v),
        NoiseCompensation::Constant(_) => {
            return Err(Error::Config(
                "naive-sgrhmc takes an empirical gradient covariance, not a state-space B̂".into(),
            ))
        }
    };
    NaiveSgrhmc::new(model, metric, gradients, cfg.schedule, cfg.refresh(), v)
}

/// The recipe spec of a corrected preset (HMC included).
pub fn make_spec(potential: Arc<dyn Potential>, cfg: &PresetConfig) -> Result<SamplerSpec> {
    match cfg.preset {
        PresetKind::Hmc => Ok(make_hmc(potential, cfg)?.spec().clone()),
        PresetKind::Sgld => make_sgld(potential, cfg),
        PresetKind::Sghmc => make_sghmc(potential, cfg),
        PresetKind::Sgrld => make_sgrld(potential, cfg),
        PresetKind::Sgnht => make_sgnht(potential, cfg),
        PresetKind::Gsgrhmc => make_gsgrhmc(potential, cfg),
        naive => Err(Error::Structure(format!(
            "`{naive}` cannot be written as a (D, Q, H) recipe"
        ))),
    }
}

/// Any preset as a runnable transition. A gradient source switches the
/// corrected presets to minibatch steps; HMC rejects one.
pub fn build_sampler(
    potential: Arc<dyn Potential>,
    cfg: &PresetConfig,
    gradients: Option<Arc<dyn GradientSource>>,
) -> Result<Box<dyn Transition>> {
    cfg.validate()?;
    let name = cfg.preset.as_str();
    let recipe = |spec: SamplerSpec, refresh: usize| -> Result<Box<dyn Transition>> {
        let mut s = RecipeSampler::new(name, spec)
            .with_refresh(refresh)
            .with_boundary(cfg.boundary.unwrap_or_default());
        if let Some(g) = gradients.clone() {
            s = s.with_gradients(g)?;
        }
        Ok(Box::new(s))
    };
    match cfg.preset {
        PresetKind::Hmc => {
            if gradients.is_some() {
                return Err(Error::Config(
                    "hmc runs on full gradients; use naive-sghmc or sghmc for stochastic gradients".into(),
                ));
            }
            Ok(Box::new(make_hmc(potential, cfg)?))
        }
        PresetKind::Sgld => recipe(make_sgld(potential, cfg)?, 0),
        PresetKind::Sgrld => recipe(make_sgrld(potential, cfg)?, 0),
        PresetKind::Sgnht => recipe(make_sgnht(potential, cfg)?, 0),
        PresetKind::Sghmc => recipe(make_sghmc(potential, cfg)?, cfg.refresh()),
        PresetKind::Gsgrhmc => recipe(make_gsgrhmc(potential, cfg)?, cfg.refresh()),
        PresetKind::NaiveSghmc => {
            let g = gradients.ok_or_else(|| Error::Config("naive-sghmc needs a stochastic gradient source".into()))?;
            Ok(Box::new(make_naive_sghmc(potential, cfg, g)?))
        }
        PresetKind::NaiveSgrhmc => Ok(Box::new(
            make_naive_sgrhmc(potential, cfg, gradients)?.with_boundary(cfg.boundary.unwrap_or_default()),
        )),
    }
}

#[cfg(test)]
mod tests;
