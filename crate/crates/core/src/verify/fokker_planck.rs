use super::grid::{FieldOnGrid, Grid, GridArray, GridDensity};
use crate::engine::{drift, SamplerSpec};
use crate::error::{Error, Result};
use crate::state::StateVector;

/// Largest `|∇·F|` accepted before Q reconstruction is refused.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-3;

fn check_density(p: &GridDensity, fields: &[(&str, &FieldOnGrid, bool)]) -> Result<()> {
    for (name, field, matrix) in fields {
        field.expect(name, p.grid(), *matrix)?;
    }
    Ok(())
}

/// `−Σᵢ ∂ᵢ(fᵢ p) + Σᵢⱼ ∂ᵢ∂ⱼ(Dᵢⱼ p)` by central differences, valid one cell
/// in from the edges.
pub fn fp_rhs_direct(f: &FieldOnGrid, d: &FieldOnGrid, p: &GridDensity) -> Result<GridArray> {
    check_density(p, &[("drift f", f, false), ("diffusion D", d, true)])?;
    let grid = p.grid();
    let n = grid.dims();
    let pv = p.values();
    let fp: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..grid.len()).map(|k| f.component(k, i) * pv[k]).collect())
        .collect();
    let dp: Vec<Vec<f64>> = (0..n * n)
        .map(|ij| (0..grid.len()).map(|k| d.get(k, ij / n, ij % n) * pv[k]).collect())
        .collect();
    let mut out = vec![0.0; grid.len()];
    for (k, o) in out.iter_mut().enumerate() {
        if !grid.is_interior(k, 1) {
            continue;
        }
        let mut acc = 0.0;
        for i in 0..n {
            acc -= grid.central(&fp[i], k, i);
            let (si, hi) = (grid.stride(i), grid.h(i));
            for j in 0..n {
                let v = &dp[i * n + j];
                if i == j {
                    acc += (v[k + si] - 2.0 * v[k] + v[k - si]) / (hi * hi);
                } else {
                    let (sj, hj) = (grid.stride(j), grid.h(j));
                    acc += (v[k + si + sj] - v[k + si - sj] - v[k - si + sj] + v[k - si - sj]) / (4.0 * hi * hj);
                }
            }
        }
        *o = acc;
    }
    Ok(GridArray::new(grid.clone(), out, 1))
}

/// `∇·([D + Q][p∇H + ∇p])` by nested central differences, valid two cells in
/// from the edges.
pub fn fp_rhs_compact(d: &FieldOnGrid, q: &FieldOnGrid, grad_h: &FieldOnGrid, p: &GridDensity) -> Result<GridArray> {
    check_density(p, &[("diffusion D", d, true), ("curl Q", q, true), ("energy gradient", grad_h, false)])?;
    let grid = p.grid();
    let n = grid.dims();
    let pv = p.values();
    let mut bracket = vec![vec![0.0; grid.len()]; n];
    for k in (0..grid.len()).filter(|k| grid.is_interior(*k, 1)) {
        for (i, b) in bracket.iter_mut().enumerate() {
            b[k] = pv[k] * grad_h.component(k, i) + grid.central(pv, k, i);
        }
    }
    let mut flux = vec![vec![0.0; grid.len()]; n];
    for k in (0..grid.len()).filter(|k| grid.is_interior(*k, 1)) {
        for (i, w) in flux.iter_mut().enumerate() {
            w[k] = (0..n).map(|j| (d.get(k, i, j) + q.get(k, i, j)) * bracket[j][k]).sum();
        }
    }
    let mut out = vec![0.0; grid.len()];
    for (k, o) in out.iter_mut().enumerate() {
        if grid.is_interior(k, 2) {
            *o = (0..n).map(|i| grid.central(&flux[i], k, i)).sum();
        }
    }
    Ok(GridArray::new(grid.clone(), out, 2))
}

/// `f = −(D + Q)∇H + Γ` with `Γ` from central differences of the gridded
/// fields, valid one cell in from the edges.
pub fn drift_from_fields(d: &FieldOnGrid, q: &FieldOnGrid, grad_h: &FieldOnGrid) -> Result<FieldOnGrid> {
    let grid = d.grid().clone();
    q.expect("curl Q", &grid, true)?;
    grad_h.expect("energy gradient", &grid, false)?;
    let dq = d.add(q)?;
    let n = grid.dims();
    let entries: Vec<Vec<f64>> = (0..n * n)
        .map(|ij| (0..grid.len()).map(|k| dq.get(k, ij / n, ij % n)).collect())
        .collect();
    let mut values = Vec::with_capacity(grid.len() * n);
    for k in 0..grid.len() {
        for i in 0..n {
            let fi = if grid.is_interior(k, 1) {
                (0..n)
                    .map(|j| -dq.get(k, i, j) * grad_h.component(k, j) + grid.central(&entries[i * n + j], k, j))
                    .sum()
            } else {
                0.0
            };
            values.push(fi);
        }
    }
    Ok(FieldOnGrid::from_vector_values(grid, values))
}

/// A sampler's fields and its target `exp(−H)` evaluated on a grid.
#[derive(Clone, Debug)]
pub struct SpecOnGrid {
    pub diffusion: FieldOnGrid,
    pub curl: FieldOnGrid,
    pub grad_h: FieldOnGrid,
    /// `f = −(D + Q)∇H + Γ` with the spec's own `Γ`.
    pub drift: FieldOnGrid,
    pub density: GridDensity,
}

impl SpecOnGrid {
    pub fn assemble(spec: &SamplerSpec, grid: &Grid) -> Result<Self> {
        if spec.dim() != grid.dims() {
            return Err(Error::Config(format!(
                "grid checks need the state dimension ({}) to match the grid ({}); states above 2-D are unsupported",
                spec.dim(),
                grid.dims()
            )));
        }
        let layout = spec.model.layout().clone();
        let state = |z: &[f64]| StateVector::unflatten(layout.clone(), z.to_vec());
        let energies = (0..grid.len())
            .map(|k| spec.model.energy(&state(&grid.point(k))?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            diffusion: FieldOnGrid::from_matrix_field(grid, &spec.diffusion)?,
            curl: FieldOnGrid::from_matrix_field(grid, &spec.curl)?,
            grad_h: FieldOnGrid::vector_from_fn(grid, |z| Ok(spec.model.grad(&state(z)?)?.as_slice().to_vec()))?,
            drift: FieldOnGrid::vector_from_fn(grid, |z| {
                let s = state(z)?;
                drift(spec, &s, spec.model.grad(&s)?.as_slice())
            })?,
            density: GridDensity::from_energy(grid.clone(), &energies)?,
        })
    }

    pub fn compact(&self) -> Result<GridArray> {
        fp_rhs_compact(&self.diffusion, &self.curl, &self.grad_h, &self.density)
    }

    pub fn direct(&self) -> Result<GridArray> {
        fp_rhs_direct(&self.drift, &self.diffusion, &self.density)
    }
}

/// Residuals of normalized `exp(−H)` under both Fokker–Planck forms.
#[derive(Clone, Debug, PartialEq)]
pub struct StationarityReport {
    pub h: f64,
    /// Sup-norm of the compact form; blind to a non-skew `Q`.
    pub compact: f64,
    /// Sup-norm of the direct form with the spec's drift.
    pub direct: f64,
    /// Sup-norm gap between the two forms.
    pub gap: f64,
    /// `max(compact, direct)`.
    pub residual: f64,
}

/// Checks that `exp(−H)` is stationary for the spec on a 1-D or 2-D grid.
pub fn stationarity_residual(spec: &SamplerSpec, grid: &Grid) -> Result<StationarityReport> {
    let g = SpecOnGrid::assemble(spec, grid)?;
    let compact = g.compact()?;
    let direct = g.direct()?;
    let (c, d) = (compact.sup_norm(), direct.sup_norm());
    Ok(StationarityReport {
        h: grid.h(0),
        compact: c,
        direct: d,
        gap: direct.sup_gap(&compact)?,
        residual: c.max(d),
    })
}

/// One row of an h-refinement study.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementRow {
    pub report: StationarityReport,
    /// Previous row's compact residual over this one's.
    pub residual_ratio: Option<f64>,
    /// Previous row's direct/compact gap over this one's.
    pub gap_ratio: Option<f64>,
}

/// Stationarity reports on grids built by `grid_for(h)` for each spacing.
pub fn refinement_study(
    spec: &SamplerSpec,
    spacings: &[f64],
    grid_for: impl Fn(f64) -> Result<Grid>,
) -> Result<Vec<RefinementRow>> {
    let mut rows: Vec<RefinementRow> = Vec::with_capacity(spacings.len());
    for &h in spacings {
        let report = stationarity_residual(spec, &grid_for(h)?)?;
        let (residual_ratio, gap_ratio) = match rows.last() {
            Some(prev) => (
                Some(prev.report.compact / report.compact),
                Some(prev.report.gap / report.gap),
            ),
            None => (None, None),
        };
        rows.push(RefinementRow {
            report,
            residual_ratio,
            gap_ratio,
        });
    }
    Ok(rows)
}

/// Output of the 2-D curl reconstruction.
#[derive(Clone, Debug)]
pub struct QReconstruction {
    /// `Q₂₁` on the grid; `Q₁₂ = −Q₂₁`.
    pub q21: GridArray,
    /// Sup-norm of `∇·F` that was checked against the tolerance.
    pub divergence: f64,
}

fn cumulative(values: &[f64], h: f64, origin: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in origin + 1..values.len() {
        out[i] = out[i - 1] + 0.5 * h * (values[i - 1] + values[i]);
    }
    for i in (0..origin).rev() {
        out[i] = out[i + 1] - 0.5 * h * (values[i] + values[i + 1]);
    }
    out
}

/// Recovers the curl of a 2-D stationary system from its drift, diffusion
/// and stationary density.
///
/// With `F = f p − ∇·(D p)` stationarity means `F = (∂₂(Q₁₂p), −∂₁(Q₁₂p))`,
/// so `Q₁₂ p` is a line integral of `F` from the reference cell (the lower
/// left interior corner by default), where `p` is negligible.
pub fn reconstruct_q_2d(
    f: &FieldOnGrid,
    d: &FieldOnGrid,
    p: &GridDensity,
    reference: Option<[usize; 2]>,
) -> Result<QReconstruction> {
    check_density(p, &[("drift f", f, false), ("diffusion D", d, true)])?;
    let grid = p.grid();
    if grid.dims() != 2 {
        return Err(Error::Config("Q reconstruction is implemented for 2-D systems only".into()));
    }
    let pv = p.values();
    if let Some(k) = pv.iter().position(|v| *v <= 0.0) {
        return Err(Error::Domain(format!(
            "stationary density vanishes at {:?}; reconstruction divides by it",
            grid.point(k)
        )));
    }
    let dp: Vec<Vec<f64>> = (0..4)
        .map(|ij| (0..grid.len()).map(|k| d.get(k, ij / 2, ij % 2) * pv[k]).collect())
        .collect();
    let mut flux = vec![vec![0.0; grid.len()]; 2];
    for k in (0..grid.len()).filter(|k| grid.is_interior(*k, 1)) {
        for (i, fl) in flux.iter_mut().enumerate() {
            fl[k] = f.component(k, i) * pv[k]
                - grid.central(&dp[i * 2], k, 0)
                - grid.central(&dp[i * 2 + 1], k, 1);
        }
    }
    let divergence = (0..grid.len())
        .filter(|k| grid.is_interior(*k, 2))
        .map(|k| (grid.central(&flux[0], k, 0) + grid.central(&flux[1], k, 1)).abs())
        .fold(0.0, f64::max);
    if divergence > DIVERGENCE_TOLERANCE {
        return Err(Error::Structure(format!(
            "system is not stationary for the given density: sup |∇·F| = {divergence:.3e} exceeds {DIVERGENCE_TOLERANCE:e}"
        )));
    }

    let (n1, n2) = (grid.axes()[0].n, grid.axes()[1].n);
    let [r1, r2] = reference.unwrap_or([1, 1]);
    if !(1..n1 - 1).contains(&r1) || !(1..n2 - 1).contains(&r2) {
        return Err(Error::Config(format!("reference cell ({r1}, {r2}) is not interior")));
    }
    // φ = Q₁₂ p, integrated over interior cells only.
    let edge: Vec<f64> = (1..n1 - 1).map(|i| -flux[1][grid.index(&[i, r2])]).collect();
    let along_edge = cumulative(&edge, grid.h(0), r1 - 1);
    let mut q21 = vec![0.0; grid.len()];
    for i in 1..n1 - 1 {
        let column: Vec<f64> = (1..n2 - 1).map(|j| flux[0][grid.index(&[i, j])]).collect();
        let up = cumulative(&column, grid.h(1), r2 - 1);
        for j in 1..n2 - 1 {
            let k = grid.index(&[i, j]);
            q21[k] = -(along_edge[i - 1] + up[j - 1]) / pv[k];
        }
    }
    Ok(QReconstruction {
        q21: GridArray::new(grid.clone(), q21, 1),
        divergence,
    })
}
