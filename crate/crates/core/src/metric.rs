//! Riemannian metrics `G(θ)` used by the adaptive presets.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::energy::Potential;
use crate::error::{Error, Result};
use crate::linalg::FieldMatrix;

type DenseFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// A positive definite metric, exposed through `G⁻¹`, `G^(−1/2)` and their
/// row divergences `Σⱼ ∂θⱼ (·)ᵢⱼ`.
#[derive(Clone)]
pub enum MetricSpec {
    /// `G = I`.
    Identity { dim: usize },
    /// `G⁻¹ = diag(θ)` on the positive orthant.
    FisherDiagonal { dim: usize },
    /// `G⁻¹ = scale · (s² + width²)^¼ · I` with `s = U(θ) + offset`, which
    /// is `scale · √|s|` at `width = 0`. A positive width keeps the metric
    /// definite where `s` crosses zero.
    PotentialLevel {
        scale: f64,
        offset: f64,
        width: f64,
        potential: Arc<dyn Potential>,
    },
    /// User-supplied dense `G⁻¹(θ)`; divergences by finite differences.
    UserDense { dim: usize, inverse: Arc<DenseFn> },
}

impl fmt::Debug for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Identity { dim } => write!(f, "Identity({dim})"),
            MetricSpec::FisherDiagonal { dim } => write!(f, "FisherDiagonal({dim})"),
            MetricSpec::PotentialLevel { scale, offset, width, .. } => {
                write!(f, "PotentialLevel {{ scale: {scale}, offset: {offset}, width: {width} }}")
            }
            MetricSpec::UserDense { dim, .. } => write!(f, "UserDense({dim})"),
        }
    }
}

impl MetricSpec {
    /// The synthetic-experiment metric `1.5 · √|U + 0.5|`.
    pub fn potential_level(potential: Arc<dyn Potential>) -> Self {
        MetricSpec::PotentialLevel {
            scale: 1.5,
            offset: 0.5,
            width: 0.0,
            potential,
        }
    }

    pub fn user_dense(dim: usize, inverse: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        MetricSpec::UserDense {
            dim,
            inverse: Arc::new(inverse),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MetricSpec::Identity { dim } | MetricSpec::FisherDiagonal { dim } | MetricSpec::UserDense { dim, .. } => *dim,
            MetricSpec::PotentialLevel { potential, .. } => potential.dim(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MetricSpec::Identity { .. })
    }

    /// Whether the divergences below are closed form.
    pub fn has_analytic_divergence(&self) -> bool {
        !matches!(self, MetricSpec::UserDense { .. })
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::dimension("metric argument", self.dim(), theta.len()));
        }
        Ok(())
    }

    /// `s = U(θ) + offset`, `q = s² + width²` and the scalar `g = scale·q^¼`.
    fn level(&self, theta: &[f64]) -> Option<(f64, f64, f64)> {
        match self {
            MetricSpec::PotentialLevel {
                scale,
                offset,
                width,
                potential,
            } => {
                let s = potential.value(theta) + offset;
                let q = s * s + width * width;
                Some((s, q, scale * q.sqrt().sqrt()))
            }
            _ => None,
        }
    }

    fn singular(theta: &[f64], component: usize, value: f64) -> Error {
        Error::Domain(format!(
            "metric is not positive definite at θ = {theta:?}: component {component} of G⁻¹ is {value:e}"
        ))
    }

    /// `G(θ)⁻¹`.
    pub fn inverse(&self, theta: &[f64]) -> Result<FieldMatrix> {
        self.check(theta)?;
        let d = self.dim();
        match self {
            MetricSpec::Identity { .. } => Ok(FieldMatrix::identity(d)),
            MetricSpec::FisherDiagonal { .. } => {
                if let Some(i) = theta.iter().position(|t| !(*t > 0.0)) {
                    return Err(Self::singular(theta, i, theta[i]));
                }
                Ok(FieldMatrix::Diagonal(theta.to_vec()))
            }
            MetricSpec::PotentialLevel { .. } => {
                let (_, _, g) = self.level(theta).unwrap();
                if !(g > 0.0) || !g.is_finite() {
                    return Err(Self::singular(theta, 0, g));
                }
                Ok(FieldMatrix::scalar(d, g))
            }
            MetricSpec::UserDense { inverse, .. } => {
                let m = inverse(theta);
                if m.nrows() != d || m.ncols() != d {
                    return Err(Error::dimension("user metric", d, m.nrows()));
                }
                let lambda = SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.min();
                if !(lambda > 0.0) {
                    return Err(Error::Domain(format!(
                        "metric is not positive definite at θ = {theta:?}: smallest eigenvalue of G⁻¹ is {lambda:e}"
                    )));
                }
                Ok(FieldMatrix::Dense(m))
            }
        }
    }

    /// `G(θ)^(−1/2)`: entrywise for diagonal metrics, eigendecomposition otherwise.
    pub fn inverse_sqrt(&self, theta: &[f64]) -> Result<FieldMatrix> {
        Ok(match self.inverse(theta)? {
            FieldMatrix::Diagonal(v) => FieldMatrix::Diagonal(v.into_iter().map(f64::sqrt).collect()),
            FieldMatrix::Dense(m) => {
                let eig = SymmetricEigen::new(m);
                let u = &eig.eigenvectors;
                let s = eig.eigenvalues.map(f64::sqrt);
                FieldMatrix::Dense(u * DMatrix::from_diagonal(&s) * u.transpose())
            }
            other => other,
        })
    }

    /// `Σⱼ ∂θⱼ (G⁻¹)ᵢⱼ`.
    pub fn inverse_divergence(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let d = self.dim();
        match self {
            MetricSpec::Identity { .. } => Ok(vec![0.0; d]),
            MetricSpec::FisherDiagonal { .. } => Ok(vec![1.0; d]),
            MetricSpec::PotentialLevel { scale, potential, .. } => {
                let (s, q, _) = self.level(theta).unwrap();
                if q == 0.0 {
                    return Err(Self::singular(theta, 0, 0.0));
                }
                // ∂ q^¼ = s ∂s / (2 q^¾)
                let c = scale * s / (2.0 * q.powf(0.75));
                Ok(potential.gradient(theta).into_iter().map(|g| c * g).collect())
            }
            MetricSpec::UserDense { .. } => self.numeric_divergence(theta, false),
        }
    }

    /// `Σⱼ ∂θⱼ (G^(−1/2))ᵢⱼ`.
    pub fn inverse_sqrt_divergence(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let d = self.dim();
        match self {
            MetricSpec::Identity { .. } => Ok(vec![0.0; d]),
            MetricSpec::FisherDiagonal { .. } => {
                if let Some(i) = theta.iter().position(|t| !(*t > 0.0)) {
                    return Err(Self::singular(theta, i, theta[i]));
                }
                Ok(theta.iter().map(|t| 0.5 / t.sqrt()).collect())
            }
            MetricSpec::PotentialLevel { scale, potential, .. } => {
                let (s, q, _) = self.level(theta).unwrap();
                if q == 0.0 {
                    return Err(Self::singular(theta, 0, 0.0));
                }
                // ∂ (scale·q^¼)^½ = √scale · s ∂s / (4 q^⅞)
                let c = scale.sqrt() * s / (4.0 * q.powf(0.875));
                Ok(potential.gradient(theta).into_iter().map(|g| c * g).collect())
            }
            MetricSpec::UserDense { .. } => self.numeric_divergence(theta, true),
        }
    }

    fn numeric_divergence(&self, theta: &[f64], sqrt: bool) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut probe = theta.to_vec();
        let eval = |x: &[f64]| if sqrt { self.inverse_sqrt(x) } else { self.inverse(x) };
        for j in 0..d {
            let h = 1e-4 * theta[j].abs().max(1.0);
            probe[j] = theta[j] + h;
            let up = eval(&probe)?;
            probe[j] = theta[j] - h;
            let down = eval(&probe)?;
            probe[j] = theta[j];
            for (i, o) in out.iter_mut().enumerate() {
                *o += (up.get(i, j) - down.get(i, j)) / (2.0 * h);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{Correlated2d, OnePeak, TwoPeaks};
    use proptest::prelude::*;

    fn fd(metric: &MetricSpec, theta: &[f64], sqrt: bool) -> Vec<f64> {
        metric.numeric_divergence(theta, sqrt).unwrap()
    }

    #[test]
    fn identity_metric_is_flat() {
        let m = MetricSpec::Identity { dim: 2 };
        assert_eq!(m.inverse(&[3.0, 4.0]).unwrap(), FieldMatrix::identity(2));
        assert_eq!(m.inverse_sqrt_divergence(&[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn fisher_diagonal_closed_forms() {
        let m = MetricSpec::FisherDiagonal { dim: 2 };
        assert_eq!(m.inverse_divergence(&[2.0, 3.0]).unwrap(), vec![1.0, 1.0]);
        let g = m.inverse_sqrt_divergence(&[4.0, 1.0]).unwrap();
        assert_eq!(g, vec![0.25, 0.5]);
        let err = m.inverse(&[1.0, -0.5]).unwrap_err().to_string();
        assert!(err.contains("component 1"), "{err}");
    }

    #[test]
    fn potential_level_divergences_match_finite_differences() {
        for (potential, theta) in [
            (Arc::new(OnePeak) as Arc<dyn Potential>, vec![0.7]),
            (Arc::new(TwoPeaks), vec![1.6]),
            (Arc::new(TwoPeaks), vec![0.2]),
            (Arc::new(Correlated2d), vec![0.4, -0.9]),
        ] {
            let m = MetricSpec::potential_level(potential);
            for sqrt in [false, true] {
                let analytic = if sqrt {
                    m.inverse_sqrt_divergence(&theta).unwrap()
                } else {
                    m.inverse_divergence(&theta).unwrap()
                };
                for (a, n) in analytic.iter().zip(fd(&m, &theta, sqrt)) {
                    assert!((a - n).abs() <= 1e-4 * n.abs().max(1.0), "{a} vs {n} at {theta:?}");
                }
            }
        }
    }

    #[test]
    fn scalar_square_root_correction() {
        // G^(-1/2)(θ) = θ on θ > 0 has divergence 1
        let m = MetricSpec::user_dense(1, |t| DMatrix::from_element(1, 1, t[0] * t[0]));
        let g = m.inverse_sqrt_divergence(&[2.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn user_dense_square_root() {
        let m = MetricSpec::user_dense(2, |t| {
            DMatrix::from_row_slice(2, 2, &[2.0 + t[0] * t[0], 0.3, 0.3, 1.0 + t[1].abs()])
        });
        let s = m.inverse_sqrt(&[0.5, -1.0]).unwrap().to_dense();
        let back = &s * &s;
        assert!((back - m.inverse(&[0.5, -1.0]).unwrap().to_dense()).amax() < 1e-10);
    }

    #[test]
    fn smoothed_level_is_definite_where_the_level_crosses_zero() {
        // U + 0.5 = 0 at θ² = 1 − √0.5 on two-peaks
        let root = (1.0 - 0.5f64.sqrt()).sqrt();
        let exact = MetricSpec::potential_level(Arc::new(TwoPeaks));
        assert!(exact.inverse(&[root]).is_err() || exact.inverse(&[root]).unwrap().get(0, 0) < 1e-7);
        let smooth = MetricSpec::PotentialLevel {
            scale: 1.5,
            offset: 0.5,
            width: 0.05,
            potential: Arc::new(TwoPeaks),
        };
        let g = smooth.inverse(&[root]).unwrap().get(0, 0);
        assert!((g - 1.5 * 0.05f64.sqrt()).abs() < 1e-6, "{g}");
        for theta in [root, root + 0.01, 1.6] {
            for sqrt in [false, true] {
                let analytic = if sqrt {
                    smooth.inverse_sqrt_divergence(&[theta]).unwrap()
                } else {
                    smooth.inverse_divergence(&[theta]).unwrap()
                };
                let n = fd(&smooth, &[theta], sqrt)[0];
                assert!((analytic[0] - n).abs() <= 1e-4 * n.abs().max(1.0), "{} vs {n} at {theta}", analytic[0]);
            }
        }
        // far from the crossing the smoothing is invisible
        let far = exact.inverse(&[2.0]).unwrap().get(0, 0);
        let near = smooth.inverse(&[2.0]).unwrap().get(0, 0);
        assert!((far - near).abs() < 1e-4 * far);
    }

    proptest! {
        #[test]
        fn potential_level_sqrt_squares_back(t in -3.0f64..3.0) {
            let m = MetricSpec::potential_level(Arc::new(TwoPeaks));
            if let (Ok(inv), Ok(s)) = (m.inverse(&[t]), m.inverse_sqrt(&[t])) {
                let s = s.get(0, 0);
                prop_assert!((s * s - inv.get(0, 0)).abs() <= 1e-10 * inv.get(0, 0).max(1.0));
                prop_assert!(inv.get(0, 0) > 0.0);
            }
        }
    }
}
