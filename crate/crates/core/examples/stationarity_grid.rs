//! Fokker–Planck residual of `exp(−H)` on a grid. A valid (D, Q) pair leaves
//! it at discretisation level and halving the spacing divides it by about
//! four; a curl that is not skew-symmetric does not.

use std::sync::Arc;

use nalgebra::DMatrix;
use sgmcmc::presets::{make_sghmc, PresetConfig, PresetKind};
use sgmcmc::targets::OnePeak;
use sgmcmc::verify::{refinement_study, Axis, Grid};
use sgmcmc::{FieldMatrix, FieldRole, MatrixField, SamplerSpec, StepSchedule};

fn grid(h: f64) -> sgmcmc::Result<Grid> {
    Grid::new(vec![Axis::with_spacing(-4.0, 4.0, h)?, Axis::with_spacing(-4.0, 4.0, h)?])
}

fn main() -> sgmcmc::Result<()> {
    let cfg = PresetConfig::new(PresetKind::Sghmc, StepSchedule::constant(0.1)?);
    let spec = make_sghmc(Arc::new(OnePeak), &cfg)?;
    for row in refinement_study(&spec, &[0.04, 0.02, 0.01], grid)? {
        let ratio = row.residual_ratio.map_or(String::from("-"), |r| format!("{r:.2}"));
        println!("sghmc h {:.2}: residual {:.2e}, ratio {ratio}", row.report.h, row.report.residual);
    }

    // Q₁₂ = −1 but Q₂₁ = 0.5
    let broken = MatrixField::from_fn(FieldRole::Curl, sgmcmc::FieldKind::Dense, 2, |_| {
        Ok(FieldMatrix::Dense(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 0.5, 0.0])))
    });
    let bad = SamplerSpec {
        curl: broken,
        ..spec
    };
    let row = &refinement_study(&bad, &[0.02], grid)?[0];
    println!("non-skew Q h 0.02: residual {:.2e} (accepted up to 1e-3)", row.report.residual);
    Ok(())
}
