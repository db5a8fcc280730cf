//! Solver for high-dimensional linear transport equations
//!
//! ```text
//!     du/dt + beta(t,r) . grad_r u + sigma(t,r) u = f(t,r)    on (0,T) x Omega
//! ```
//!
//! on product domains `Omega = Omega1 x Omega2` (phase space `r = (x,v)`),
//! discretized by a sparse tensor-product space built from nested multilevel
//! finite element spaces on each factor, discontinuous piecewise polynomials in
//! time and streamline-diffusion stabilization. All computations run on the
//! sequence of anisotropic full grids of the combination technique: functions
//! are stored blockwise per level pair, operators act as sums of Kronecker
//! products, and the per-strip systems are solved by a Richardson iteration
//! preconditioned with combination-technique block solves.
//!
//! A nonlinear Vlasov-Poisson driver couples the linear transport solver with
//! a Poisson solve through a per-strip fixed-point iteration (Landau damping
//! benchmarks in 1+1 and 2+2 dimensions).
//!
//! Entry points:
//! - [`fem::FactorSpace`]: hierarchy of FE spaces on one factor domain,
//! - [`strip::TransportProblem`]: full problem description,
//! - [`driver::run`]: implicit time stepping over all strips,
//! - [`vlasov::LandauConfig`] / [`vlasov::run_landau`]: nonlinear driver,
//! - [`experiments`]: the configured experiment families used by the CLI.

pub mod config;
pub mod driver;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod snapshot;
pub mod solver;
pub mod sparse;
pub mod strip;
pub mod tensor;
pub mod verify;
pub mod vlasov;

pub use error::{Error, Result};
