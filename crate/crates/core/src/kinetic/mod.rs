//! Kinetic solver for the scaled coupled system: state, discrete operators,
//! the split-step integrator, the fixed-point construction, the linear
//! fiber-equation oracle, and runtime diagnostics.

pub mod exact;
pub mod monitor;
pub mod ops;
pub mod picard;
pub mod state;
pub mod step;

pub use exact::exact_q_solution;
pub use monitor::{DiagRow, Monitor};
pub use ops::{
    apply_activity_transfer, apply_chemotaxis, apply_haptotaxis, apply_transport, apply_turning,
    build_activity_flux, chem_moments, grad_field, laplacian, ActivityFlux, ChemMoments,
};
pub use picard::{
    coupled_trajectory, picard_iterate, trajectory_distance, PicardOptions, PicardOutcome,
    Trajectory,
};
pub use state::{profile_value, InitialProfile, KineticState};
pub use step::{StageCoeffs, StepRecord, Stepper};
