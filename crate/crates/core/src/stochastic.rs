//! Minibatch gradients `∇Ũ(θ) = −(|S|/|S̃|) Σ_{x∈S̃} ∇log p(x|θ) − ∇log p(θ)`
//! and the covariance of their noise.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::RngCore;

use crate::energy::Potential;
use crate::engine::standard_normals;
use crate::error::{Error, Result};
use crate::linalg::FieldMatrix;

/// Observations, one row per item, kept in load order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Config("dataset must contain at least one observation".into()));
        };
        let width = first.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::dimension(format!("dataset row {bad}"), width, rows[bad].len()));
        }
        Ok(Self { rows })
    }

    /// One scalar observation per item.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| vec![*v]).collect())
    }

    /// Parses rows of numbers separated by whitespace or commas. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("`{t}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Subset `S̃` with scale `|S| / |S̃|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub indices: Vec<usize>,
    pub scale: f64,
}

impl Minibatch {
    pub fn new(indices: Vec<usize>, dataset_size: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("minibatch must be nonempty".into()));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() || *sorted.last().unwrap() >= dataset_size {
            return Err(Error::Config("minibatch indices must be distinct and in range".into()));
        }
        Ok(Self {
            scale: dataset_size as f64 / indices.len() as f64,
            indices,
        })
    }

    pub fn full(dataset_size: usize) -> Self {
        Self {
            indices: (0..dataset_size).collect(),
            scale: 1.0,
        }
    }
}

/// Uniform subset of size `m` drawn without replacement.
pub fn sample_minibatch(dataset: &Dataset, m: usize, rng: &mut dyn RngCore) -> Result<Minibatch> {
    let n = dataset.len();
    if m == 0 || m > n {
        return Err(Error::Config(format!("minibatch size {m} outside 1..={n}")));
    }
    if m == n {
        return Ok(Minibatch::full(n));
    }
    Ok(Minibatch {
        indices: index::sample(rng, n, m).into_vec(),
        scale: n as f64 / m as f64,
    })
}

/// Per-observation likelihood `p(x | θ)` and prior `p(θ)`.
pub trait LikelihoodModel: Send + Sync {
    fn dim(&self) -> usize;
    /// `∇θ log p(x | θ)`.
    fn grad_log_likelihood(&self, theta: &[f64], x: &[f64]) -> Vec<f64>;
    /// `∇θ log p(θ)`; flat by default.
    fn grad_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        vec![0.0; theta.len()]
    }
}

/// `x ~ N(θ, σ² I)` with an optional `N(0, τ² I)` prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianLikelihood {
    pub dim: usize,
    pub noise_variance: f64,
    pub prior_variance: Option<f64>,
}

impl GaussianLikelihood {
    pub fn unit(dim: usize) -> Self {
        Self {
            dim,
            noise_variance: 1.0,
            prior_variance: None,
        }
    }
}

impl LikelihoodModel for GaussianLikelihood {
    fn dim(&self) -> usize {
        self.dim
    }
    fn grad_log_likelihood(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        theta.iter().zip(x).map(|(t, x)| (x - t) / self.noise_variance).collect()
    }
    fn grad_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        match self.prior_variance {
            Some(v) => theta.iter().map(|t| -t / v).collect(),
            None => vec![0.0; theta.len()],
        }
    }
}

/// `∇Ũ(θ)` over one minibatch.
pub fn stochastic_potential_grad(
    model: &dyn LikelihoodModel,
    dataset: &Dataset,
    theta: &[f64],
    minibatch: &Minibatch,
) -> Result<Vec<f64>> {
    let d = model.dim();
    if theta.len() != d {
        return Err(Error::dimension("stochastic gradient parameter", d, theta.len()));
    }
    if minibatch.indices.is_empty() {
        return Err(Error::Config("minibatch must be nonempty".into()));
    }
    let mut sum = vec![0.0; d];
    for &i in &minibatch.indices {
        let g = model.grad_log_likelihood(theta, dataset.get(i));
        if g.len() != d {
            return Err(Error::dimension("log-likelihood gradient", d, g.len()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite log-likelihood gradient for item {i}")));
        }
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    let prior = model.grad_log_prior(theta);
    Ok(sum
        .iter()
        .zip(prior)
        .map(|(s, p)| -minibatch.scale * s - p)
        .collect())
}

/// Empirical covariance `V̂` of minibatch gradients at a fixed `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseEstimate {
    /// Diagonal or dense symmetric PSD matrix.
    pub covariance: FieldMatrix,
    pub samples: usize,
}

impl NoiseEstimate {
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.covariance.to_dense()
    }
}

/// Dense or diagonal noise estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CovarianceMode {
    /// Diagonal above 100 dimensions, dense otherwise.
    #[default]
    Auto,
    Dense,
    Diagonal,
}

/// Sample covariance (denominator `n − 1`) of `trials` independent `∇Ũ(θ)`.
pub fn estimate_gradient_noise(
    model: &dyn LikelihoodModel,
    dataset: &Dataset,
    theta: &[f64],
    m: usize,
    trials: usize,
    mode: CovarianceMode,
    rng: &mut dyn RngCore,
) -> Result<NoiseEstimate> {
    if trials < 2 {
        return Err(Error::Config(format!("noise estimation needs at least 2 trials, got {trials}")));
    }
    let draws = (0..trials)
        .map(|_| {
            let batch = sample_minibatch(dataset, m, rng)?;
            stochastic_potential_grad(model, dataset, theta, &batch)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sample_covariance(&draws, mode))
}

/// Covariance of a set of gradient draws.
pub fn sample_covariance(draws: &[Vec<f64>], mode: CovarianceMode) -> NoiseEstimate {
    let n = draws.len();
    let d = draws[0].len();
    let mut mean = vec![0.0; d];
    for g in draws {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v / n as f64;
        }
    }
    let diagonal = match mode {
        CovarianceMode::Auto => d > 100,
        CovarianceMode::Dense => false,
        CovarianceMode::Diagonal => true,
    };
    let denom = (n - 1) as f64;
    let covariance = if diagonal {
        let mut var = vec![0.0; d];
        for g in draws {
            for i in 0..d {
                var[i] += (g[i] - mean[i]).powi(2) / denom;
            }
        }
        FieldMatrix::Diagonal(var)
    } else {
        let mut c = DMatrix::zeros(d, d);
        for g in draws {
            for i in 0..d {
                for j in 0..=i {
                    c[(i, j)] += (g[i] - mean[i]) * (g[j] - mean[j]) / denom;
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                c[(j, i)] = c[(i, j)];
            }
        }
        FieldMatrix::Dense(c)
    };
    NoiseEstimate { covariance, samples: n }
}

/// Something that produces a (possibly noisy) potential gradient `∇Ũ(θ)`.
pub trait GradientSource: Send + Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
    /// Covariance of the gradient noise at `θ`, when known.
    fn noise_covariance(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// `∇U(θ) + N(0, V I)`: the exact gradient corrupted by Gaussian noise.
#[derive(Clone)]
pub struct InjectedNoise {
    potential: Arc<dyn Potential>,
    variance: f64,
}

impl fmt::Debug for InjectedNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InjectedNoise").field("variance", &self.variance).finish()
    }
}

impl InjectedNoise {
    pub fn new(potential: Arc<dyn Potential>, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::Config(format!("gradient noise variance must be >= 0, got {variance}")));
        }
        Ok(Self { potential, variance })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl GradientSource for InjectedNoise {
    fn dim(&self) -> usize {
        self.potential.dim()
    }
    fn gradient(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut g = self.potential.gradient(theta);
        if self.variance > 0.0 {
            let sd = self.variance.sqrt();
            for (gi, n) in g.iter_mut().zip(standard_normals(theta.len(), rng)) {
                *gi += sd * n;
            }
        }
        Ok(g)
    }
    fn noise_covariance(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let d = theta.len();
        Some(DMatrix::identity(d, d) * self.variance)
    }
}

/// Minibatch estimator over a dataset.
#[derive(Clone)]
pub struct MinibatchGradient {
    model: Arc<dyn LikelihoodModel>,
    dataset: Arc<Dataset>,
    batch_size: usize,
}

impl fmt::Debug for MinibatchGradient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MinibatchGradient")
            .field("items", &self.dataset.len())
            .field("batch_size", &self.batch_size)
            .finish()
    }
}

impl MinibatchGradient {
    pub fn new(model: Arc<dyn LikelihoodModel>, dataset: Arc<Dataset>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > dataset.len() {
            return Err(Error::Config(format!(
                "minibatch size {batch_size} outside 1..={}",
                dataset.len()
            )));
        }
        Ok(Self {
            model,
            dataset,
            batch_size,
        })
    }
}

impl GradientSource for MinibatchGradient {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn gradient(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let batch = sample_minibatch(&self.dataset, self.batch_size, rng)?;
        stochastic_potential_grad(self.model.as_ref(), &self.dataset, theta, &batch)
    }
}
