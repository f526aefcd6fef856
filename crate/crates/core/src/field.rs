//! State-dependent diffusion (`D`) and curl (`Q`) fields.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::FieldMatrix;

/// Which side of the recipe a field sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldRole {
    /// Positive semidefinite `D(z)`.
    Diffusion,
    /// Skew-symmetric `Q(z)`.
    Curl,
}

/// Structure hint for a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Constant,
    Diagonal,
    Dense,
}

type EvalFn = dyn Fn(&[f64]) -> Result<FieldMatrix> + Send + Sync;
type DivergenceFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;

/// A square matrix field `z ↦ M(z)` with an optional analytic row divergence
/// `Σⱼ ∂M_ij/∂z_j`.
#[derive(Clone)]
pub struct MatrixField {
    role: FieldRole,
    kind: FieldKind,
    dim: usize,
    constant: Option<FieldMatrix>,
    eval: Option<Arc<EvalFn>>,
    divergence: Option<Arc<DivergenceFn>>,
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixField")
            .field("role", &self.role)
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("analytic_divergence", &self.divergence.is_some())
            .finish()
    }
}

impl MatrixField {
    pub fn zero(role: FieldRole, dim: usize) -> Self {
        Self::constant(role, FieldMatrix::Zero(dim))
    }

    pub fn constant(role: FieldRole, value: FieldMatrix) -> Self {
        Self {
            role,
            kind: FieldKind::Constant,
            dim: value.dim(),
            constant: Some(value),
            eval: None,
            divergence: None,
        }
    }

    pub fn from_fn(
        role: FieldRole,
        kind: FieldKind,
        dim: usize,
        eval: impl Fn(&[f64]) -> Result<FieldMatrix> + Send + Sync + 'static,
    ) -> Self {
        Self {
            role,
            kind,
            dim,
            constant: None,
            eval: Some(Arc::new(eval)),
            divergence: None,
        }
    }

    /// Attaches the analytic divergence `Σⱼ ∂M_ij/∂z_j`.
    pub fn with_divergence(mut self, div: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.divergence = Some(Arc::new(div));
        self
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    pub fn is_identically_zero(&self) -> bool {
        self.constant.as_ref().is_some_and(FieldMatrix::is_zero)
    }

    pub fn has_analytic_divergence(&self) -> bool {
        self.constant.is_some() || self.divergence.is_some()
    }

    pub fn eval(&self, z: &[f64]) -> Result<FieldMatrix> {
        if z.len() != self.dim {
            return Err(Error::dimension("matrix field argument", self.dim, z.len()));
        }
        let m = match (&self.constant, &self.eval) {
            (Some(c), _) => c.clone(),
            (None, Some(f)) => f(z)?,
            (None, None) => unreachable!("field has neither constant nor closure"),
        };
        if m.dim() != self.dim {
            return Err(Error::dimension("matrix field value", self.dim, m.dim()));
        }
        Ok(m)
    }

    /// `Σⱼ ∂M_ij/∂z_j`: analytic when available, otherwise central differences.
    pub fn divergence(&self, z: &[f64]) -> Result<Vec<f64>> {
        if self.constant.is_some() {
            return Ok(vec![0.0; self.dim]);
        }
        match &self.divergence {
            Some(div) => {
                let v = div(z)?;
                if v.len() != self.dim {
                    return Err(Error::dimension("field divergence", self.dim, v.len()));
                }
                Ok(v)
            }
            None => self.numeric_divergence(z),
        }
    }

    /// Central-difference divergence with step `1e-4 · max(1, |z_j|)`.
    pub fn numeric_divergence(&self, z: &[f64]) -> Result<Vec<f64>> {
        if self.constant.is_some() {
            return Ok(vec![0.0; self.dim]);
        }
        let mut out = vec![0.0; self.dim];
        let mut probe = z.to_vec();
        for j in 0..self.dim {
            let h = 1e-4 * z[j].abs().max(1.0);
            probe[j] = z[j] + h;
            let up = self.eval(&probe)?;
            probe[j] = z[j] - h;
            let down = self.eval(&probe)?;
            probe[j] = z[j];
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

    fn diag_theta() -> MatrixField {
        MatrixField::from_fn(FieldRole::Diffusion, FieldKind::Diagonal, 2, |z| {
            Ok(FieldMatrix::Diagonal(z.to_vec()))
        })
    }

    #[test]
    fn constant_fields_have_zero_divergence() {
        let q = MatrixField::constant(
            FieldRole::Curl,
            FieldMatrix::Sparse {
                dim: 2,
                entries: vec![(0, 1, -3.0), (1, 0, 3.0)],
            },
        );
        assert_eq!(q.divergence(&[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn numeric_divergence_of_diagonal_theta() {
        let d = diag_theta();
        let g = d.divergence(&[2.0, 3.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-10 && (g[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eval_checks_dimensions() {
        let d = diag_theta();
        assert!(d.eval(&[1.0]).is_err());
        let bad = MatrixField::from_fn(FieldRole::Diffusion, FieldKind::Dense, 2, |_| Ok(FieldMatrix::Zero(3)));
        assert!(bad.eval(&[0.0, 0.0]).is_err());
    }
}
