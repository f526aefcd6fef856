//! Recovers the curl of a 2-D sampler from its drift, diffusion and
//! stationary density alone. For HMC on a standard Gaussian, Q₂₁ = 1.

use sgmcmc::verify::{reconstruct_q_2d, Axis, FieldOnGrid, Grid, GridDensity};
use sgmcmc::FieldMatrix;

fn main() -> sgmcmc::Result<()> {
    let h = 0.02;
    let grid = Grid::new(vec![Axis::with_spacing(-3.0, 3.0, h)?, Axis::with_spacing(-3.0, 3.0, h)?])?;
    let p = GridDensity::from_fn(grid.clone(), |z| (-(z[0] * z[0] + z[1] * z[1]) / 2.0).exp())?.normalized()?;
    for (name, friction) in [("hmc", 0.0), ("sghmc, C = 0.5", 0.5)] {
        // f = (r, −θ − C r), D = diag(0, C)
        let f = FieldOnGrid::vector_from_fn(&grid, |z| Ok(vec![z[1], -z[0] - friction * z[1]]))?;
        let d = FieldOnGrid::matrix_from_fn(&grid, |_| Ok(FieldMatrix::Diagonal(vec![0.0, friction])))?;
        let q = reconstruct_q_2d(&f, &d, &p, None)?;
        let worst = q.q21.central_deviation(1.0, 0.5);
        println!("{name}: max |Q21 - 1| on the central half {worst:.2e}, divergence residual {:.1e}", q.divergence);
    }
    Ok(())
}
