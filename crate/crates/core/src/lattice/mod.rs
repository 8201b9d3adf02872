//! Truncated lattice system `du = L u dt + sigma(u) dB` on a finite box,
//! with exact noise coupling across runs and a mild-form Picard oracle.

mod geometry;
mod initial;
mod nonlinearity;
mod picard;
mod solver;

pub use geometry::{generator_apply, Boundary, LatticeBox};
pub use initial::InitialProfile;
pub use nonlinearity::{Nonlinearity, SigmaFn, SigmaKind};
pub use picard::{periodized_kernel, picard_mild_solve, PicardSolution};
pub use solver::{
    coupled_replicas, coupled_simulate, field_norms, simulate, simulate_replicas, CoupledRun,
    FieldNorms, FieldState, Observable, RunDiagnostics, Scheme, SimulationSpec, Simulator,
    Snapshot, SolverConfig, Trajectory,
};

#[cfg(test)]
mod tests;
