//! Flows of vector fields, exit detection, and the exact outflow transfer
//! operator.

mod field;
mod integrate;
mod testfn;
mod transfer;

pub use field::{fd_divergence, fd_jacobian, CustomField, FieldSpec, VectorField};
pub use integrate::{integrate, integrate_checkpoints, IntegratorOptions, TrajectoryResult};
pub use testfn::{FunctionClass, FunctionSpec, TestFunction};
pub use transfer::{
    apply_generator_analytic, transfer_exact, transfer_exact_at_times, transfer_exact_grid,
    transfer_exact_grid_times,
};
