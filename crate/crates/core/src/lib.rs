//! Stochastic-gradient MCMC samplers assembled from an energy `H`, a
//! diffusion field `D` and a curl field `Q`.

pub mod chain;
pub mod energy;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod field;
pub mod lda;
pub mod linalg;
pub mod metric;
pub mod presets;
pub mod schedule;
pub mod state;
pub mod stochastic;
pub mod targets;
pub mod verify;

pub use energy::{EnergyModel, FnPotential, Mass, Potential};
pub use error::{Error, Result};
pub use field::{FieldKind, FieldRole, MatrixField};
pub use linalg::FieldMatrix;
pub use schedule::StepSchedule;
pub use state::{BlockKind, Layout, StateVector};
pub use engine::{
    drift, gamma_correction, step_full_data, step_minibatch, validate_spec, NoiseCompensation, SamplerSpec,
    ValidationReport,
};
