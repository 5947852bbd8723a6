//! Discretization and solver engine.

pub mod assembly;
pub mod basis;
pub mod bdf;
pub mod lu;
pub mod newton;
pub mod sparse;

pub use assembly::{Assembler, FormProblem, QpContext, WeakForm};
pub use bdf::{bdf_coefficients, bdf_step, StepHistory};
pub use lu::{sparse_lu_solve, BandLu};
pub use newton::{newton_solve, NewtonConfig, NewtonReport, NonlinearProblem};
pub use sparse::CsrMatrix;
