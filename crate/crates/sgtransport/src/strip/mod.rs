//! Per-strip discrete systems: time basis, problem description, Kronecker
//! assembly of the stabilized weak form, and the energy diagnostics.

pub mod assemble;
pub mod diagnostics;
pub mod problem;
pub mod time_basis;

pub use assemble::{assemble_strip, StripSystem};
pub use diagnostics::{bilinear_energy, sd_norm_sq, StripFunction};
pub use problem::{AdvectionTerm, BoundarySegment, Factor, TransportProblem};
pub use time_basis::TimeBasis;
