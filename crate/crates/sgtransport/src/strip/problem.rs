//! Transport problem description: separable coefficients, boundary segments
//! with their tensor factorization, and discretization parameters.

use crate::fem::{FacetSelector, ScalarField, SeparableField};
use crate::tensor::ProductSpace;

/// Which factor domain a quantity lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    X,
    V,
}

/// One separable advection term of the transport field:
/// `x_weight(t,x) * v_weight(t,v) * sum_a c_a d/d(factor_a)`.
#[derive(Clone)]
pub struct AdvectionTerm {
    /// factor whose gradient is taken
    pub factor: Factor,
    /// directional derivative within that factor: axis indices with coefficients
    pub dirs: Vec<(usize, f64)>,
    pub x_weight: ScalarField,
    pub v_weight: ScalarField,
}

impl AdvectionTerm {
    /// Constant advection with direction `sum_a e_a` on the given factor.
    pub fn constant_ones(factor: Factor, dim: usize) -> Self {
        AdvectionTerm {
            factor,
            dirs: (0..dim).map(|a| (a, 1.0)).collect(),
            x_weight: ScalarField::one(),
            v_weight: ScalarField::one(),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        self.x_weight.is_time_dependent() || self.v_weight.is_time_dependent()
    }

    /// weight on the factor carrying the derivative / the other factor
    pub fn weight_on(&self, f: Factor) -> &ScalarField {
        match f {
            Factor::X => &self.x_weight,
            Factor::V => &self.v_weight,
        }
    }
}

/// One factorized piece of the inflow/outflow boundary: a set of facets of
/// one factor's boundary (constant normal direction per facet) paired with
/// the `beta . n` weight on the other factor, split into its negative
/// (inflow) and positive (outflow) parts.
#[derive(Clone)]
pub struct BoundarySegment {
    pub trace_factor: Factor,
    pub selector: FacetSelector,
    /// weight on the trace factor along the facets (usually 1)
    pub trace_weight: ScalarField,
    /// `min(beta . n, 0)` as a field on the other factor
    pub inflow_weight: ScalarField,
    /// `max(beta . n, 0)` as a field on the other factor
    pub outflow_weight: ScalarField,
    /// separable inflow datum `g = g_trace * g_other` (None = homogeneous)
    pub g: Option<(ScalarField, ScalarField)>,
}

impl BoundarySegment {
    pub fn is_time_dependent(&self) -> bool {
        self.trace_weight.is_time_dependent()
            || self.inflow_weight.is_time_dependent()
            || self.outflow_weight.is_time_dependent()
    }
}

/// The full transport problem
/// `du/dt + beta . grad u + sigma u = f` with weak initial and inflow data.
#[derive(Clone)]
pub struct TransportProblem {
    pub space: ProductSpace,
    pub beta: Vec<AdvectionTerm>,
    /// reaction coefficient as separable rank terms `sum_i p_i(t,x) q_i(t,v)`
    pub sigma: Vec<(ScalarField, ScalarField)>,
    pub f: SeparableField,
    pub u0: SeparableField,
    pub boundary: Vec<BoundarySegment>,
    pub final_time: f64,
    pub strips: usize,
    /// streamline-diffusion parameter = multiplier * finest edge
    pub delta_multiplier: f64,
    /// Gauss nodes for the time quadrature; default `order + 2`
    pub time_quad_points: Option<usize>,
}

impl TransportProblem {
    /// Pure advection problem without boundary or sources.
    pub fn advection(
        space: ProductSpace,
        beta: Vec<AdvectionTerm>,
        u0: SeparableField,
        final_time: f64,
        strips: usize,
    ) -> Self {
        TransportProblem {
            space,
            beta,
            sigma: Vec::new(),
            f: SeparableField::zero(),
            u0,
            boundary: Vec::new(),
            final_time,
            strips,
            delta_multiplier: 1.0,
            time_quad_points: None,
        }
    }

    /// Whether all coefficients are independent of time, so the strip system
    /// can be assembled and factorized once and reused for every strip.
    pub fn time_invariant(&self) -> bool {
        self.beta.iter().all(|b| !b.is_time_dependent())
            && self.sigma.iter().all(|(p, q)| !p.is_time_dependent() && !q.is_time_dependent())
            && self.boundary.iter().all(|s| !s.is_time_dependent())
    }

    pub fn strip_bounds(&self, strip: usize) -> (f64, f64) {
        let dt = self.final_time / self.strips as f64;
        (strip as f64 * dt, (strip + 1) as f64 * dt)
    }

    /// Streamline-diffusion parameter for sparse-grid level `level`: the
    /// smallest finest-scale edge length over both factors, times the
    /// configured multiplier (`delta = 0` only for diagnostic runs).
    pub fn sd_parameter(&self, level: usize) -> f64 {
        let hx = self.space.x.mesh(level).edge();
        let hv = self.space.v.mesh(level).edge();
        self.delta_multiplier * hx.min(hv)
    }

    /// True when both factor coefficients of sigma are constants; returns the
    /// constant value.
    pub fn constant_sigma(&self) -> Option<f64> {
        let mut acc = 0.0;
        for (p, q) in &self.sigma {
            acc += p.as_constant()? * q.as_constant()?;
        }
        Some(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoxMesh, FactorSpace};
    use std::sync::Arc;

    fn space(cells: usize, levels: usize) -> ProductSpace {
        let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[cells], true).unwrap();
        ProductSpace::new(
            Arc::new(FactorSpace::build(m.clone(), 1, levels).unwrap()),
            Arc::new(FactorSpace::build(m, 1, levels).unwrap()),
        )
    }

    #[test]
    fn sd_parameter_follows_finest_edge() {
        let sp = space(4, 3);
        let p = TransportProblem::advection(
            sp,
            vec![AdvectionTerm::constant_ones(Factor::X, 1)],
            SeparableField::constant(1.0),
            1.0,
            4,
        );
        assert!((p.sd_parameter(1) - 0.25).abs() < 1e-15);
        assert!((p.sd_parameter(3) - 0.0625).abs() < 1e-15);
        let mut p0 = p.clone();
        p0.delta_multiplier = 0.0;
        assert_eq!(p0.sd_parameter(2), 0.0);
    }

    #[test]
    fn strip_bounds_partition() {
        let sp = space(2, 1);
        let p = TransportProblem::advection(
            sp,
            vec![AdvectionTerm::constant_ones(Factor::V, 1)],
            SeparableField::constant(1.0),
            2.0,
            8,
        );
        assert_eq!(p.strip_bounds(0), (0.0, 0.25));
        let (a, b) = p.strip_bounds(7);
        assert!((a - 1.75).abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
        assert!(p.time_invariant());
    }
}
