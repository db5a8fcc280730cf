//! Hierarchical finite element spaces on the factor domains and all
//! factor-level assembly.

pub mod assemble;
pub mod fields;
pub mod lagrange;
pub mod mesh;
pub mod quadrature;
pub mod space;

pub use assemble::{
    assemble_advection, assemble_boundary_trace, assemble_directional_advection,
    assemble_directional_grad_pair, assemble_grad_pair, assemble_load, assemble_load_deriv,
    assemble_mass, assemble_trace_load, assemble_volume, FacetSelector, FactorMatrix,
    MatrixFamily, MatrixKind,
};
pub use fields::{sine_sum_mode, Rank1Term, ScalarField, SeparableField};
pub use mesh::{lshape_mesh, BoxMesh, MAX_DIM};
pub use quadrature::QuadRule;
pub use space::FactorSpace;
