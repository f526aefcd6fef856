//! Structured square matrices used for diffusion, curl and covariance values.
//!
//! Presets with diagonal or block-symplectic structure never touch a dense
//! `d × d` array; only genuinely dense fields go through `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_TOLERANCE, 0)` are treated as roundoff and clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// A `d × d` matrix with its storage structure.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldMatrix {
    Zero(usize),
    Diagonal(Vec<f64>),
    /// Triplets `(row, col, value)`; repeated coordinates add up.
    Sparse {
        dim: usize,
        entries: Vec<(usize, usize, f64)>,
    },
    Dense(DMatrix<f64>),
}

impl FieldMatrix {
    pub fn identity(dim: usize) -> Self {
        FieldMatrix::Diagonal(vec![1.0; dim])
    }

    pub fn scalar(dim: usize, value: f64) -> Self {
        FieldMatrix::Diagonal(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            FieldMatrix::Zero(d) => *d,
            FieldMatrix::Diagonal(v) => v.len(),
            FieldMatrix::Sparse { dim, .. } => *dim,
            FieldMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            FieldMatrix::Zero(_) => 0.0,
            FieldMatrix::Diagonal(v) => {
                if i == j {
                    v[i]
                } else {
                    0.0
                }
            }
            FieldMatrix::Sparse { entries, .. } => entries
                .iter()
                .filter(|(r, c, _)| *r == i && *c == j)
                .map(|(_, _, v)| v)
                .sum(),
            FieldMatrix::Dense(m) => m[(i, j)],
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            FieldMatrix::Zero(_) => true,
            FieldMatrix::Diagonal(v) => v.iter().all(|x| *x == 0.0),
            FieldMatrix::Sparse { entries, .. } => entries.iter().all(|e| e.2 == 0.0),
            FieldMatrix::Dense(m) => m.iter().all(|x| *x == 0.0),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        match self {
            FieldMatrix::Zero(_) => DMatrix::zeros(d, d),
            FieldMatrix::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
            FieldMatrix::Sparse { entries, .. } => {
                let mut m = DMatrix::zeros(d, d);
                for &(i, j, v) in entries {
                    m[(i, j)] += v;
                }
                m
            }
            FieldMatrix::Dense(m) => m.clone(),
        }
    }

    /// `M v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.mul_vec_add(1.0, v, &mut out);
        out
    }

    /// `out += alpha · M v`.
    pub fn mul_vec_add(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim());
        match self {
            FieldMatrix::Zero(_) => {}
            FieldMatrix::Diagonal(d) => {
                for ((o, di), vi) in out.iter_mut().zip(d).zip(v) {
                    *o += alpha * di * vi;
                }
            }
            FieldMatrix::Sparse { entries, .. } => {
                for &(i, j, m) in entries {
                    out[i] += alpha * m * v[j];
                }
            }
            FieldMatrix::Dense(m) => {
                let n = m.nrows();
                for j in 0..n {
                    let vj = alpha * v[j];
                    if vj == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        out[i] += m[(i, j)] * vj;
                    }
                }
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> FieldMatrix {
        match self {
            FieldMatrix::Zero(d) => FieldMatrix::Zero(*d),
            FieldMatrix::Diagonal(v) => FieldMatrix::Diagonal(v.iter().map(|x| alpha * x).collect()),
            FieldMatrix::Sparse { dim, entries } => FieldMatrix::Sparse {
                dim: *dim,
                entries: entries.iter().map(|&(i, j, v)| (i, j, alpha * v)).collect(),
            },
            FieldMatrix::Dense(m) => FieldMatrix::Dense(m * alpha),
        }
    }

    /// Places `blocks` (row offset, column offset, matrix) into a `dim × dim`
    /// zero matrix. Stays diagonal when every block is diagonal and sits on
    /// the diagonal, sparse otherwise.
    pub fn embed(dim: usize, blocks: &[(usize, usize, &FieldMatrix)]) -> FieldMatrix {
        let diagonal = blocks
            .iter()
            .all(|(r, c, m)| r == c && matches!(m, FieldMatrix::Zero(_) | FieldMatrix::Diagonal(_)));
        if diagonal {
            let mut v = vec![0.0; dim];
            for (r, _, m) in blocks {
                if let FieldMatrix::Diagonal(d) = m {
                    v[*r..*r + d.len()].copy_from_slice(d);
                }
            }
            return if v.iter().all(|x| *x == 0.0) {
                FieldMatrix::Zero(dim)
            } else {
                FieldMatrix::Diagonal(v)
            };
        }
        let mut entries = Vec::new();
        for (r, c, m) in blocks {
            entries.extend(m.triplets().into_iter().map(|(i, j, v)| (i + r, j + c, v)));
        }
        FieldMatrix::Sparse { dim, entries }
    }

    /// Sum keeping the sparsest structure that can hold it.
    pub fn add(&self, other: &FieldMatrix) -> Result<FieldMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::dimension("matrix sum", self.dim(), other.dim()));
        }
        let d = self.dim();
        Ok(match (self, other) {
            (FieldMatrix::Zero(_), m) | (m, FieldMatrix::Zero(_)) => m.clone(),
            (FieldMatrix::Diagonal(a), FieldMatrix::Diagonal(b)) => {
                FieldMatrix::Diagonal(a.iter().zip(b).map(|(x, y)| x + y).collect())
            }
            (FieldMatrix::Dense(a), b) | (b, FieldMatrix::Dense(a)) => FieldMatrix::Dense(a + b.to_dense()),
            (a, b) => {
                let mut entries = a.triplets();
                entries.extend(b.triplets());
                FieldMatrix::Sparse { dim: d, entries }
            }
        })
    }

    /// Nonzero entries as `(row, col, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        match self {
            FieldMatrix::Zero(_) => Vec::new(),
            FieldMatrix::Diagonal(v) => v.iter().enumerate().map(|(i, &x)| (i, i, x)).collect(),
            FieldMatrix::Sparse { entries, .. } => entries.clone(),
            FieldMatrix::Dense(m) => {
                let mut t = Vec::new();
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        if m[(i, j)] != 0.0 {
                            t.push((i, j, m[(i, j)]));
                        }
                    }
                }
                t
            }
        }
    }

    /// `max |M_ij + M_ji|`, zero for a skew-symmetric matrix.
    pub fn skew_defect(&self) -> f64 {
        match self {
            FieldMatrix::Zero(_) => 0.0,
            FieldMatrix::Diagonal(v) => v.iter().map(|x| (2.0 * x).abs()).fold(0.0, f64::max),
            _ => {
                let m = self.to_dense();
                (&m + m.transpose()).amax()
            }
        }
    }

    /// `max |M_ij - M_ji|`, zero for a symmetric matrix.
    pub fn symmetry_defect(&self) -> f64 {
        match self {
            FieldMatrix::Zero(_) | FieldMatrix::Diagonal(_) => 0.0,
            _ => {
                let m = self.to_dense();
                (&m - m.transpose()).amax()
            }
        }
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            FieldMatrix::Zero(_) => 0.0,
            FieldMatrix::Diagonal(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
            _ => {
                let m = self.to_dense();
                let sym = (&m + m.transpose()) * 0.5;
                SymmetricEigen::new(sym).eigenvalues.min()
            }
        }
    }
}

/// Symmetric square root `L` of a covariance, `L Lᵀ = Σ`.
#[derive(Clone, Debug)]
pub enum NoiseFactor {
    Zero,
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl NoiseFactor {
    /// Maps standard normals to correlated noise.
    pub fn apply(&self, normals: &[f64]) -> Vec<f64> {
        match self {
            NoiseFactor::Zero => vec![0.0; normals.len()],
            NoiseFactor::Diagonal(s) => s.iter().zip(normals).map(|(a, b)| a * b).collect(),
            NoiseFactor::Dense(l) => FieldMatrix::Dense(l.clone()).mul_vec(normals),
        }
    }
}

/// Symmetric square root of a PSD matrix via eigendecomposition.
///
/// Returns the offending eigenvalue when the matrix is negative beyond
/// [`PSD_TOLERANCE`] or not symmetric.
pub fn symmetric_sqrt(cov: &FieldMatrix) -> std::result::Result<NoiseFactor, f64> {
    match cov {
        FieldMatrix::Zero(_) => Ok(NoiseFactor::Zero),
        FieldMatrix::Diagonal(v) => {
            let mut s = Vec::with_capacity(v.len());
            for &x in v {
                if x < -PSD_TOLERANCE || x.is_nan() {
                    return Err(x);
                }
                s.push(x.max(0.0).sqrt());
            }
            Ok(NoiseFactor::Diagonal(s))
        }
        other => {
            let m = other.to_dense();
            let scale = m.amax().max(1.0);
            if (&m - m.transpose()).amax() > 1e-12 * scale {
                return Err(f64::NAN);
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(f64::NAN);
            }
            let eig = SymmetricEigen::new(m);
            let mut sqrt_vals = eig.eigenvalues.clone();
            for v in sqrt_vals.iter_mut() {
                if *v < -PSD_TOLERANCE {
                    return Err(*v);
                }
                *v = v.max(0.0).sqrt();
            }
            let u = &eig.eigenvectors;
            let l = u * DMatrix::from_diagonal(&sqrt_vals) * u.transpose();
            Ok(NoiseFactor::Dense(l))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn symplectic(d: usize) -> FieldMatrix {
        let mut entries = Vec::new();
        for i in 0..d {
            entries.push((i, d + i, -1.0));
            entries.push((d + i, i, 1.0));
        }
        FieldMatrix::Sparse { dim: 2 * d, entries }
    }

    #[test]
    fn sparse_product_matches_dense() {
        let q = symplectic(2);
        let v = [1.0, 2.0, 3.0, 4.0];
        let dense = q.to_dense() * nalgebra::DVector::from_column_slice(&v);
        assert_eq!(q.mul_vec(&v), dense.as_slice());
        assert_eq!(q.skew_defect(), 0.0);
    }

    #[test]
    fn embedding_blocks() {
        let c = FieldMatrix::Diagonal(vec![2.0, 3.0]);
        assert_eq!(
            FieldMatrix::embed(4, &[(2, 2, &c)]),
            FieldMatrix::Diagonal(vec![0.0, 0.0, 2.0, 3.0])
        );
        let q = FieldMatrix::embed(4, &[(0, 2, &c.scaled(-1.0)), (2, 0, &c)]);
        assert_eq!(q.get(0, 2), -2.0);
        assert_eq!(q.get(3, 1), 3.0);
        assert_eq!(q.skew_defect(), 0.0);
    }

    #[test]
    fn sum_keeps_structure() {
        let a = FieldMatrix::Diagonal(vec![1.0, 2.0]);
        let b = FieldMatrix::Diagonal(vec![0.5, 0.5]);
        assert_eq!(a.add(&b).unwrap(), FieldMatrix::Diagonal(vec![1.5, 2.5]));
        let s = a.add(&symplectic(1)).unwrap();
        assert!(matches!(s, FieldMatrix::Sparse { .. }));
        assert_eq!(s.get(0, 1), -1.0);
        assert_eq!(s.get(1, 1), 2.0);
    }

    #[test]
    fn dense_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let NoiseFactor::Dense(l) = symmetric_sqrt(&FieldMatrix::Dense(m.clone())).unwrap() else {
            panic!("expected dense factor");
        };
        let back = &l * l.transpose();
        for (a, b) in back.iter().zip(m.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn tiny_negative_eigenvalues_are_clipped_large_ones_rejected() {
        assert!(symmetric_sqrt(&FieldMatrix::Diagonal(vec![1.0, -1e-12])).is_ok());
        assert_eq!(symmetric_sqrt(&FieldMatrix::Diagonal(vec![1.0, -0.1])).unwrap_err(), -0.1);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let err = symmetric_sqrt(&FieldMatrix::Dense(m)).unwrap_err();
        assert_abs_diff_eq!(err, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn min_eigenvalue_of_indefinite_matrix() {
        let m = FieldMatrix::Dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]));
        assert_abs_diff_eq!(m.min_eigenvalue(), -0.1, epsilon = 1e-14);
    }
}
