//! Numerical checks on samplers: Fokker–Planck residuals of `exp(−H)` on 1-D
//! and 2-D grids, curl reconstruction, and sample-quality metrics.

mod fokker_planck;
mod grid;
mod metrics;

pub use fokker_planck::{
    drift_from_fields, fp_rhs_compact, fp_rhs_direct, reconstruct_q_2d, refinement_study, stationarity_residual,
    QReconstruction, RefinementRow, SpecOnGrid, StationarityReport, DIVERGENCE_TOLERANCE,
};
pub use grid::{Axis, FieldOnGrid, Grid, GridArray, GridDensity, MIN_POINTS};
pub use metrics::{
    autocorrelation, autocorrelation_time, box_mass_fraction, effective_sample_size, histogram_kl, kl_divergence,
    mc_standard_error, reference_histogram, AutocorrTime, HistogramBox, KlEstimate, MIN_BOX_MASS, MIN_KL_SAMPLES,
};
