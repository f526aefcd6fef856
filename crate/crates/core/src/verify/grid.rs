use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::MatrixField;
use crate::linalg::FieldMatrix;

/// Fewest points per axis for which central differences leave an interior.
pub const MIN_POINTS: usize = 5;

/// Uniformly spaced axis `min, min + h, …, max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::Config(format!("axis bounds [{min}, {max}] are not an interval")));
        }
        if n < MIN_POINTS {
            return Err(Error::Config(format!(
                "grid too coarse: {n} points per axis, need at least {MIN_POINTS}"
            )));
        }
        Ok(Self { min, max, n })
    }

    /// Axis starting at `min` with spacing `h`; `max` is rounded to the
    /// nearest whole number of cells.
    pub fn with_spacing(min: f64, max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid spacing {h} must be positive")));
        }
        let cells = ((max - min) / h).round();
        Self::new(min, min + cells * h, cells as usize + 1)
    }

    pub fn h(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.min + i as f64 * self.h()
    }
}

/// Tensor grid over one or two state coordinates, stored row-major with the
/// last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Config(format!(
                "grid checks support 1 or 2 dimensions, got {}",
                axes.len()
            )));
        }
        Ok(Self { axes })
    }

    /// `[min, max]^dim` with spacing `h` on every axis.
    pub fn cube(dim: usize, min: f64, max: f64, h: f64) -> Result<Self> {
        let axis = Axis::with_spacing(min, max, h)?;
        Self::new(vec![axis; dim])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.axes[axis].h()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.axes[axis + 1..].iter().map(|a| a.n).product()
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        (0..self.dims()).map(|a| (idx / self.stride(a)) % self.axes[a].n).collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().enumerate().map(|(a, c)| c * self.stride(a)).sum()
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.coords(idx)
            .iter()
            .zip(&self.axes)
            .map(|(&c, axis)| axis.point(c))
            .collect()
    }

    /// Whether `idx` lies at least `margin` cells from every edge.
    pub fn is_interior(&self, idx: usize, margin: usize) -> bool {
        self.coords(idx)
            .iter()
            .zip(&self.axes)
            .all(|(&c, a)| c >= margin && c + margin < a.n)
    }

    /// Whether `idx` lies in the middle `fraction` of every axis.
    pub fn is_central(&self, idx: usize, fraction: f64) -> bool {
        self.point(idx).iter().zip(&self.axes).all(|(x, a)| {
            let mid = 0.5 * (a.min + a.max);
            (x - mid).abs() <= 0.5 * fraction * (a.max - a.min) + 1e-12
        })
    }

    /// Trapezoid-rule integral of grid values.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        let mut total = 0.0;
        for (idx, v) in values.iter().enumerate() {
            let mut w = 1.0;
            for (c, a) in self.coords(idx).iter().zip(&self.axes) {
                w *= a.h() * if *c == 0 || *c + 1 == a.n { 0.5 } else { 1.0 };
            }
            total += w * v;
        }
        total
    }

    /// Central difference of `values` along `axis` at an interior point.
    pub(crate) fn central(&self, values: &[f64], idx: usize, axis: usize) -> f64 {
        let s = self.stride(axis);
        (values[idx + s] - values[idx - s]) / (2.0 * self.h(axis))
    }

    pub(crate) fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::dimension(what, self.len(), len));
        }
        Ok(())
    }

    /// CSV with columns `z1[,z2],value`.
    pub fn write_csv(&self, path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
        self.check_len("grid values", values.len())?;
        let mut out = String::new();
        let names: Vec<String> = (1..=self.dims()).map(|i| format!("z{i}")).collect();
        writeln!(out, "{},value", names.join(",")).unwrap();
        for (idx, v) in values.iter().enumerate() {
            for x in self.point(idx) {
                write!(out, "{x:.10e},").unwrap();
            }
            writeln!(out, "{v:.16e}").unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Non-negative density values on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
    normalized: bool,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len("density values", values.len())?;
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("density value {v} is not a finite non-negative number")));
        }
        Ok(Self {
            grid,
            values,
            normalized: false,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, values)
    }

    /// Normalized `exp(−H)` from energies on the grid.
    pub fn from_energy(grid: Grid, energies: &[f64]) -> Result<Self> {
        grid.check_len("energies", energies.len())?;
        let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return Err(Error::Numeric("energy is not finite on the grid".into()));
        }
        Self::new(grid, energies.iter().map(|e| (min - e).exp()).collect())?.normalized()
    }

    /// Rescaled so that the trapezoid integral is one.
    pub fn normalized(mut self) -> Result<Self> {
        let z = self.integral();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::Numeric(format!("density integral {z} cannot be normalized")));
        }
        self.values.iter_mut().for_each(|v| *v /= z);
        self.normalized = true;
        Ok(self)
    }

    pub fn integral(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-point vector (`cols == 1`) or square matrix field sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOnGrid {
    grid: Grid,
    rows: usize,
    cols: usize,
    matrix: bool,
    values: Vec<f64>,
}

impl FieldOnGrid {
    pub fn zeros_vector(grid: &Grid) -> Self {
        let d = grid.dims();
        Self {
            grid: grid.clone(),
            rows: d,
            cols: 1,
            matrix: false,
            values: vec![0.0; grid.len() * d],
        }
    }

    pub fn zeros_matrix(grid: &Grid) -> Self {
        let d = grid.dims();
        Self {
            grid: grid.clone(),
            rows: d,
            cols: d,
            matrix: true,
            values: vec![0.0; grid.len() * d * d],
        }
    }

    pub fn vector_from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let mut out = Self::zeros_vector(grid);
        let d = out.rows;
        for idx in 0..grid.len() {
            let v = f(&grid.point(idx))?;
            if v.len() != d {
                return Err(Error::dimension("vector field", d, v.len()));
            }
            out.values[idx * d..(idx + 1) * d].copy_from_slice(&v);
        }
        Ok(out)
    }

    pub fn matrix_from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Result<FieldMatrix>) -> Result<Self> {
        let mut out = Self::zeros_matrix(grid);
        let d = out.rows;
        for idx in 0..grid.len() {
            let m = f(&grid.point(idx))?;
            if m.dim() != d {
                return Err(Error::dimension("matrix field", d, m.dim()));
            }
            for (i, j, v) in m.triplets() {
                out.values[idx * d * d + i * d + j] += v;
            }
        }
        Ok(out)
    }

    pub fn from_matrix_field(grid: &Grid, field: &MatrixField) -> Result<Self> {
        if field.dim() != grid.dims() {
            return Err(Error::dimension("matrix field on grid", grid.dims(), field.dim()));
        }
        Self::matrix_from_fn(grid, |z| field.eval(z))
    }

    /// Central-difference gradient of scalar grid values; one-sided at edges.
    pub fn gradient_of(grid: &Grid, values: &[f64]) -> Result<Self> {
        grid.check_len("scalar values", values.len())?;
        let mut out = Self::zeros_vector(grid);
        let d = grid.dims();
        for idx in 0..grid.len() {
            let c = grid.coords(idx);
            for a in 0..d {
                let s = grid.stride(a);
                let h = grid.h(a);
                out.values[idx * d + a] = if c[a] == 0 {
                    (values[idx + s] - values[idx]) / h
                } else if c[a] + 1 == grid.axes[a].n {
                    (values[idx] - values[idx - s]) / h
                } else {
                    (values[idx + s] - values[idx - s]) / (2.0 * h)
                };
            }
        }
        Ok(out)
    }

    pub(crate) fn from_vector_values(grid: Grid, values: Vec<f64>) -> Self {
        let d = grid.dims();
        debug_assert_eq!(values.len(), grid.len() * d);
        Self {
            grid,
            rows: d,
            cols: 1,
            matrix: false,
            values,
        }
    }

    /// Curl field `[[0, −q21], [q21, 0]]` from its lower-left entry.
    pub fn curl_from_q21(q21: &GridArray) -> Result<Self> {
        let grid = q21.grid();
        if grid.dims() != 2 {
            return Err(Error::Config("a Q₂₁ field needs a 2-D grid".into()));
        }
        let mut out = Self::zeros_matrix(grid);
        for (idx, q) in q21.values().iter().enumerate() {
            out.values[idx * 4 + 1] = -q;
            out.values[idx * 4 + 2] = *q;
        }
        Ok(out)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_matrix(&self) -> bool {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.rows
    }

    pub fn get(&self, idx: usize, i: usize, j: usize) -> f64 {
        self.values[(idx * self.rows + i) * self.cols + j]
    }

    pub fn component(&self, idx: usize, i: usize) -> f64 {
        self.get(idx, i, 0)
    }

    pub fn add(&self, other: &FieldOnGrid) -> Result<FieldOnGrid> {
        if self.grid != other.grid || self.rows != other.rows || self.matrix != other.matrix {
            return Err(Error::Structure("fields live on different grids or shapes".into()));
        }
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub(crate) fn expect(&self, what: &str, grid: &Grid, matrix: bool) -> Result<()> {
        if &self.grid != grid {
            return Err(Error::Structure(format!("{what} lives on a different grid")));
        }
        if self.is_matrix() != matrix {
            let kind = if matrix { "matrix" } else { "vector" };
            return Err(Error::Structure(format!("{what} must be a {kind} field")));
        }
        Ok(())
    }
}

/// Scalar result on a grid, valid only `margin` cells away from the edges.
#[derive(Clone, Debug, PartialEq)]
pub struct GridArray {
    grid: Grid,
    values: Vec<f64>,
    margin: usize,
}

impl GridArray {
    pub(crate) fn new(grid: Grid, values: Vec<f64>, margin: usize) -> Self {
        Self { grid, values, margin }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.values[self.grid.index(coords)]
    }

    fn valid(&self, margin: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let m = margin.max(self.margin);
        self.values
            .iter()
            .enumerate()
            .filter(move |(i, _)| self.grid.is_interior(*i, m))
            .map(|(i, v)| (i, *v))
    }

    /// Max absolute value over valid cells.
    pub fn sup_norm(&self) -> f64 {
        self.valid(0).map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    /// Max absolute deviation from `target` over valid cells in the central
    /// `fraction` of every axis.
    pub fn central_deviation(&self, target: f64, fraction: f64) -> f64 {
        self.valid(0)
            .filter(|(i, _)| self.grid.is_central(*i, fraction))
            .map(|(_, v)| (v - target).abs())
            .fold(0.0, f64::max)
    }

    /// Sup-norm of the difference over cells valid for both arrays.
    pub fn sup_gap(&self, other: &GridArray) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Structure("arrays live on different grids".into()));
        }
        Ok(self
            .valid(other.margin)
            .map(|(i, v)| (v - other.values[i]).abs())
            .fold(0.0, f64::max))
    }

    /// Trapezoid integral with invalid cells counted as zero.
    pub fn integral(&self) -> f64 {
        let masked: Vec<f64> = (0..self.values.len())
            .map(|i| if self.grid.is_interior(i, self.margin) { self.values[i] } else { 0.0 })
            .collect();
        self.grid.trapezoid(&masked)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.grid.write_csv(path, &self.values)
    }
}
