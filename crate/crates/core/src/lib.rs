//! Finite element discretization of the heat equation with dynamic
//! (Wentzell) boundary conditions, with tools for Carleman weights,
//! observability constants and boundary null control.
//!
//! The state is a trace-coupled P1 field: one value per mesh node, where the
//! boundary values double as the surface component. Mass lumping makes the
//! 𝕏² inner product diagonal.

pub mod assembly;
pub mod carleman;
pub mod control;
pub mod error;
pub mod evolution;
pub mod mesh;
pub mod observability;
pub mod sampling;
pub mod sparse;

pub use assembly::{assemble, beta_from_fn, estimate_coercivity, CoercivityEstimate, DiscreteSystem, StatePair};
pub use carleman::{carleman_lhs, carleman_rhs, carleman_sweep, eval_weights, CarlemanParams, RhsPath, SweepSpec, SweepTable, WeightEval};
pub use control::{gramian_apply, synthesize_control, verify_null, ControlProblem, ControlResult, Gramian, NullReport};
pub use error::{Error, Result};
pub use evolution::{
    duality_residual, duhamel_final, recover_normal_flux, solve_backward, solve_forward, BoundarySignal, Propagator,
    Scheme, Trajectory,
};
pub use mesh::{build_disk_mesh, build_eta, build_interval_mesh, build_rect_mesh, BulkSurfaceMesh, EtaField, Geometry};
pub use nalgebra::DVector;
pub use observability::{check_energy_identity, check_interpolation, estimate_ct, ObservabilityReport};
pub use sparse::{CsrMatrix, EnvelopeCholesky};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
