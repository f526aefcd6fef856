//! Synthetic target distributions used by the experiments.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::energy::{EnergyModel, Potential};
use crate::error::{Error, Result};

/// `U(θ) = θ²/2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct OnePeak;

/// `U(θ) = θ⁴ − 2θ²`, modes at `±1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TwoPeaks;

/// `U(θ₁, θ₂) = θ₁⁴/10 + (4(θ₂ + 1.2) − θ₁²)²/2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Correlated2d;

/// Multivariate normal `N(μ, Σ)`; `U = ½ (θ − μ)ᵀ Σ⁻¹ (θ − μ)`.
#[derive(Clone, Debug)]
pub struct GaussianNd {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl Potential for OnePeak {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, theta: &[f64]) -> f64 {
        0.5 * theta[0] * theta[0]
    }
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0]]
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
}

impl Potential for TwoPeaks {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, theta: &[f64]) -> f64 {
        let t2 = theta[0] * theta[0];
        t2 * t2 - 2.0 * t2
    }
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let t = theta[0];
        vec![4.0 * t * t * t - 4.0 * t]
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
}

impl Potential for Correlated2d {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, theta: &[f64]) -> f64 {
        let (a, b) = (theta[0], theta[1]);
        let u = 4.0 * (b + 1.2) - a * a;
        a.powi(4) / 10.0 + 0.5 * u * u
    }
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (a, b) = (theta[0], theta[1]);
        let u = 4.0 * (b + 1.2) - a * a;
        vec![0.4 * a.powi(3) - 2.0 * a * u, 4.0 * u]
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
}

impl GaussianNd {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Config("gaussian mean/covariance shapes disagree".into()));
        }
        let chol = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::Config("gaussian covariance is not positive definite".into()))?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            precision: chol.inverse(),
            covariance,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim)).expect("identity covariance")
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

impl Potential for GaussianNd {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn value(&self, theta: &[f64]) -> f64 {
        let x = DVector::from_column_slice(theta) - &self.mean;
        0.5 * x.dot(&(&self.precision * &x))
    }
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(theta) - &self.mean;
        (&self.precision * x).as_slice().to_vec()
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
}

/// Names accepted by [`make_synthetic_target`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetName {
    OnePeak,
    TwoPeaks,
    Correlated2d,
    GaussianNd,
}

impl TargetName {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetName::OnePeak => "one-peak",
            TargetName::TwoPeaks => "two-peaks",
            TargetName::Correlated2d => "correlated-2d",
            TargetName::GaussianNd => "gaussian-nd",
        }
    }
}

impl FromStr for TargetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-peak" => Ok(TargetName::OnePeak),
            "two-peaks" => Ok(TargetName::TwoPeaks),
            "correlated-2d" => Ok(TargetName::Correlated2d),
            "gaussian-nd" => Ok(TargetName::GaussianNd),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

/// Parameters for `gaussian-nd`; ignored by the fixed targets.
#[derive(Clone, Debug, Default)]
pub struct TargetParams {
    pub mean: Option<Vec<f64>>,
    pub covariance: Option<DMatrix<f64>>,
}

/// Potential of a named synthetic target.
pub fn synthetic_potential(name: &str, params: &TargetParams) -> Result<Arc<dyn Potential>> {
    Ok(match name.parse::<TargetName>()? {
        TargetName::OnePeak => Arc::new(OnePeak),
        TargetName::TwoPeaks => Arc::new(TwoPeaks),
        TargetName::Correlated2d => Arc::new(Correlated2d),
        TargetName::GaussianNd => {
            let mean = params
                .mean
                .clone()
                .ok_or_else(|| Error::Config("gaussian-nd needs a mean".into()))?;
            let d = mean.len();
            let cov = params.covariance.clone().unwrap_or_else(|| DMatrix::identity(d, d));
            Arc::new(GaussianNd::new(mean, cov)?)
        }
    })
}

/// Energy model `H = U(θ)` for a named target; attach momentum with
/// [`EnergyModel::with_momentum`].
pub fn make_synthetic_target(name: &str, params: &TargetParams) -> Result<EnergyModel> {
    Ok(EnergyModel::new(synthetic_potential(name, params)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::finite_difference_gradient;
    use crate::state::StateVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_values() {
        let none = TargetParams::default();
        let one = make_synthetic_target("one-peak", &none).unwrap();
        assert_eq!(one.energy(&StateVector::theta_only(vec![0.0])).unwrap(), 0.0);
        assert_eq!(one.energy(&StateVector::theta_only(vec![3.0])).unwrap(), 4.5);
        let two = make_synthetic_target("two-peaks", &none).unwrap();
        assert_eq!(two.energy(&StateVector::theta_only(vec![1.0])).unwrap(), -1.0);
        assert_eq!(two.energy(&StateVector::theta_only(vec![-1.0])).unwrap(), -1.0);
        let corr = make_synthetic_target("correlated-2d", &none).unwrap();
        assert_eq!(corr.energy(&StateVector::theta_only(vec![0.0, -1.2])).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_gradients() {
        assert_eq!(TwoPeaks.gradient(&[1.0]), vec![0.0]);
        assert_eq!(OnePeak.gradient(&[2.0]), vec![2.0]);
        let g = Correlated2d.gradient(&[0.0, -1.2]);
        let fd = finite_difference_gradient(|x| Correlated2d.value(x), &[0.0, -1.2]);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        assert!(fd.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn two_peaks_minima_by_grid_search() {
        // grid minimisation over [-2, 2]
        let grid: Vec<f64> = (0..=40_000).map(|i| -2.0 + i as f64 * 1e-4).collect();
        let best = grid
            .iter()
            .copied()
            .min_by(|a, b| TwoPeaks.value(&[*a]).partial_cmp(&TwoPeaks.value(&[*b])).unwrap())
            .unwrap();
        assert!((best.abs() - 1.0).abs() < 1e-4);
        assert!((TwoPeaks.value(&[best]) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn unknown_target_is_config_error() {
        assert!(matches!(
            make_synthetic_target("three-peaks", &TargetParams::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let gauss = GaussianNd::new(vec![1.0, -1.0, 0.5], cov).unwrap();
        let potentials: Vec<Box<dyn Potential>> =
            vec![Box::new(OnePeak), Box::new(TwoPeaks), Box::new(Correlated2d), Box::new(gauss)];
        for p in &potentials {
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let g = p.gradient(&x);
                let fd = finite_difference_gradient(|v| p.value(v), &x);
                let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
                worst = worst.max(num / den);
            }
            assert!(worst <= 1e-5, "relative gradient error {worst}");
        }
    }

    #[test]
    fn gaussian_energy_is_quadratic_form() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let g = GaussianNd::new(vec![0.5, -1.0], cov.clone()).unwrap();
        let inv = cov.try_inverse().unwrap();
        let x = DVector::from_vec(vec![1.3, 0.2]);
        let diff = &x - DVector::from_vec(vec![0.5, -1.0]);
        let direct = 0.5 * diff.dot(&(inv * &diff));
        assert!((g.value(x.as_slice()) - direct).abs() < 1e-12);
    }
}
