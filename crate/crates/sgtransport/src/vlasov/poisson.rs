//! Periodic FEM Poisson solver on the finest spatial grid, one order higher
//! than the transport ansatz, with the zero-mean constraint imposed by a
//! Lagrange multiplier. Provides the electrostatic field as a piecewise
//! polynomial gradient.

use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_mass, assemble_volume, lagrange, BoxMesh, FactorSpace, MatrixKind,
    ScalarField, MAX_DIM,
};
use crate::sparse::Csr;
use faer::linalg::solvers::Solve;
use faer::sparse::SparseColMat;
use std::sync::Arc;

/// Potential and field on the finest x grid.
pub struct FieldState {
    pub space: Arc<FactorSpace>,
    pub level: usize,
    pub phi: Vec<f64>,
    /// coefficient snapshot time (strip midpoint)
    pub tau: f64,
}

impl FieldState {
    pub fn zero(space: Arc<FactorSpace>, level: usize, tau: f64) -> Self {
        let n = space.num_dofs(level);
        FieldState { space, level, phi: vec![0.0; n], tau }
    }

    /// `E_axis(x) = -d(phi)/d(x_axis)` evaluated pointwise (piecewise
    /// polynomial; discontinuities only across cell interfaces).
    pub fn e_component(&self, axis: usize, point: &[f64]) -> f64 {
        let mesh = self.space.mesh(self.level);
        let Some((cell, reference)) = mesh.locate(point) else {
            return 0.0;
        };
        let r = self.space.order();
        let dim = self.space.dim();
        let vals: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                if a == axis {
                    lagrange::eval_deriv(r, reference[a])
                } else {
                    lagrange::eval(r, reference[a])
                }
            })
            .collect();
        let h = mesh.edge();
        let mut acc = 0.0;
        for (loc, &g) in self.space.dof_table(self.level).cell_dofs[cell].iter().enumerate() {
            let mut idx = loc;
            let mut w = 1.0;
            for va in vals.iter() {
                w *= va[idx % (r + 1)];
                idx /= r + 1;
            }
            acc += w * self.phi[g as usize];
        }
        -acc / h
    }

    /// `1/2 int |E|^2 dx` by per-cell quadrature.
    pub fn electric_energy(&self) -> f64 {
        use crate::fem::QuadRule;
        let mesh = self.space.mesh(self.level);
        let dim = self.space.dim();
        let nq = self.space.order() + 2;
        let rule = QuadRule::gauss(nq);
        let h = mesh.edge();
        let mut acc = 0.0;
        let mut qidx = vec![0usize; dim];
        for cell in 0..mesh.num_cells() {
            let origin = mesh.cell_origin_physical(cell);
            qidx.fill(0);
            loop {
                let mut qw = h.powi(dim as i32);
                let mut point = [0.0f64; MAX_DIM];
                for a in 0..dim {
                    qw *= rule.weights[qidx[a]];
                    point[a] = origin[a] + rule.nodes[qidx[a]] * h;
                }
                let mut e2 = 0.0;
                for a in 0..dim {
                    let e = self.e_component(a, &point[..dim]);
                    e2 += e * e;
                }
                acc += qw * e2;
                let mut a = 0;
                loop {
                    if a == dim {
                        break;
                    }
                    qidx[a] += 1;
                    if qidx[a] < nq {
                        break;
                    }
                    qidx[a] = 0;
                    a += 1;
                }
                if a == dim {
                    break;
                }
            }
        }
        0.5 * acc
    }

    /// `int sum_a (E1_a - E2_a)^2 dx` between two fields on the same grid.
    pub fn field_distance_sq(&self, other: &FieldState) -> f64 {
        use crate::fem::QuadRule;
        let mesh = self.space.mesh(self.level);
        let dim = self.space.dim();
        let nq = self.space.order() + 2;
        let rule = QuadRule::gauss(nq);
        let h = mesh.edge();
        let mut acc = 0.0;
        let mut qidx = vec![0usize; dim];
        for cell in 0..mesh.num_cells() {
            let origin = mesh.cell_origin_physical(cell);
            qidx.fill(0);
            loop {
                let mut qw = h.powi(dim as i32);
                let mut point = [0.0f64; MAX_DIM];
                for a in 0..dim {
                    qw *= rule.weights[qidx[a]];
                    point[a] = origin[a] + rule.nodes[qidx[a]] * h;
                }
                for a in 0..dim {
                    let d = self.e_component(a, &point[..dim])
                        - other.e_component(a, &point[..dim]);
                    acc += qw * d * d;
                }
                let mut a = 0;
                loop {
                    if a == dim {
                        break;
                    }
                    qidx[a] += 1;
                    if qidx[a] < nq {
                        break;
                    }
                    qidx[a] = 0;
                    a += 1;
                }
                if a == dim {
                    break;
                }
            }
        }
        acc
    }
}

/// Factorized periodic Poisson operator with the zero-mean constraint:
/// the bordered system `[[K, m], [m^T, 0]]` where `m_k = int phi_k`.
pub struct PoissonSolver {
    space: Arc<FactorSpace>,
    level: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
    /// quadrature points per direction for right-hand-side loads
    pub rhs_quad_points: usize,
}

impl PoissonSolver {
    /// Builds the solver at `order` (one above the transport order) on the
    /// refinement of `coarse` at `level`.
    pub fn new(coarse: BoxMesh, order: usize, level: usize) -> Result<Self> {
        if coarse.periodic().is_none() {
            return Err(Error::Unsupported("Poisson solver requires a periodic domain".into()));
        }
        let space = Arc::new(FactorSpace::build(coarse, order, level)?);
        let dim = space.dim();
        // K = sum_a (d_a phi', d_a phi)
        let mut k: Option<Csr> = None;
        for a in 0..dim {
            let m = assemble_volume(
                &space,
                level,
                MatrixKind::GradPair { dir_a: a, dir_b: a },
                &ScalarField::one(),
                0.0,
                None,
            )?;
            k = Some(match k {
                None => (*m.mat).clone(),
                Some(acc) => acc.add_scaled(1.0, &m.mat),
            });
        }
        let k = k.unwrap();
        let mass = assemble_mass(&space, level, &ScalarField::one(), 0.0)?;
        let ones = vec![1.0; mass.mat.ncols()];
        let mut m_vec = vec![0.0; mass.mat.nrows()];
        mass.mat.matvec(&ones, &mut m_vec);
        let n = k.nrows();
        let mut triplets: Vec<faer::sparse::Triplet<usize, usize, f64>> = Vec::new();
        for r in 0..n {
            let (cols, vals) = k.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push(faer::sparse::Triplet::new(r, c as usize, v));
            }
        }
        for (r, &mv) in m_vec.iter().enumerate() {
            triplets.push(faer::sparse::Triplet::new(r, n, mv));
            triplets.push(faer::sparse::Triplet::new(n, r, mv));
        }
        let bordered = SparseColMat::try_new_from_triplets(n + 1, n + 1, &triplets)
            .map_err(|_| Error::Assembly("bordered Poisson matrix".into()))?;
        let lu = bordered.sp_lu().map_err(|_| Error::SingularBlock(0, 0))?;
        Ok(PoissonSolver { space, level, lu, n, rhs_quad_points: 10 })
    }

    pub fn space(&self) -> Arc<FactorSpace> {
        self.space.clone()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Solves `-lap phi = rhs` with zero mean; `rhs` is sampled at quadrature
    /// points. Returns the potential and reports the compatibility defect
    /// `int rhs` (mean-corrected by the multiplier).
    pub fn solve(&self, rhs: &ScalarField, tau: f64) -> Result<FieldState> {
        let load = assemble_load(&self.space, self.level, rhs, tau, self.rhs_quad_points)?;
        let defect: f64 = load.iter().sum();
        let measure = self.space.mesh(self.level).measure();
        if defect.abs() > 1e-6 * measure.max(1.0) {
            eprintln!(
                "warning: Poisson right-hand side is not neutral (defect {defect:e}); \
                 applying mean correction"
            );
        }
        let mut b = faer::Mat::from_fn(self.n + 1, 1, |i, _| if i < self.n { load[i] } else { 0.0 });
        self.lu.solve_in_place(b.as_mut());
        let phi: Vec<f64> = (0..self.n).map(|i| b[(i, 0)]).collect();
        Ok(FieldState { space: self.space.clone(), level: self.level, phi, tau })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_line(cells: usize, len: f64) -> BoxMesh {
        BoxMesh::box_domain(1, &[(0.0, len)], &[cells], true).unwrap()
    }

    #[test]
    fn neutral_plasma_has_zero_field() {
        let solver = PoissonSolver::new(periodic_line(4, 4.0 * std::f64::consts::PI), 2, 3).unwrap();
        let field = solver.solve(&ScalarField::constant(0.0), 0.0).unwrap();
        for v in &field.phi {
            assert!(v.abs() < 1e-12);
        }
        assert!(field.electric_energy() < 1e-24);
    }

    #[test]
    fn cosine_mode_is_vertex_exact_1d() {
        // -phi'' = alpha cos(k x) -> phi = (alpha / k^2) cos(k x). The
        // Galerkin solution reproduces the exact potential at the cell
        // vertices to machine precision (the vertex Green's function is a
        // piecewise quadratic with its kink on a cell boundary, hence lies in
        // the FE space); midside values carry the usual superconvergent
        // but nonzero error.
        let (alpha, k) = (1e-2, 0.5);
        for level in 1..=4 {
            let solver = PoissonSolver::new(periodic_line(4, 4.0 * std::f64::consts::PI), 2, level).unwrap();
            let rhs = ScalarField::function(move |p: &[f64]| alpha * (k * p[0]).cos());
            let field = solver.solve(&rhs, 0.0).unwrap();
            let sp = solver.space();
            let nodes = sp.node_positions(level);
            let order = sp.order();
            let coords = &sp.dof_table(level).node_coords;
            let mut worst_vertex = 0.0f64;
            let mut worst_midside = 0.0f64;
            for (dof, p) in nodes.iter().enumerate() {
                let exact = alpha / (k * k) * (k * p[0]).cos();
                let err = (field.phi[dof] - exact).abs();
                if coords[dof][0] % order as i64 == 0 {
                    worst_vertex = worst_vertex.max(err);
                } else {
                    worst_midside = worst_midside.max(err);
                }
            }
            assert!(worst_vertex < 1e-12, "level {level}: vertex error {worst_vertex}");
            // midside values converge but are not exact
            assert!(worst_midside < 1e-4 / (1 << (2 * (level - 1))) as f64 * 10.0);
        }
    }

    #[test]
    fn cosine_mode_energy_and_field_1d() {
        // E = (alpha / k) sin(k x): energy = (alpha/k)^2 * pi; field accuracy
        // is limited by the L2 projection of E onto the gradient space
        let (alpha, k) = (1e-2, 0.5);
        let level = 5;
        let solver = PoissonSolver::new(periodic_line(4, 4.0 * std::f64::consts::PI), 2, level).unwrap();
        let rhs = ScalarField::function(move |p: &[f64]| alpha * (k * p[0]).cos());
        let field = solver.solve(&rhs, 0.0).unwrap();
        let exact_energy = 0.5 * (alpha / k).powi(2) * 2.0 * std::f64::consts::PI;
        let energy = field.electric_energy();
        assert!(
            ((energy - exact_energy) / exact_energy).abs() < 1e-6,
            "energy {energy} vs {exact_energy}"
        );
        // the field itself carries the projection error of E onto the
        // (discontinuous) gradient space
        let e_mid = field.e_component(0, &[std::f64::consts::PI]);
        let exact = alpha / k * (k * std::f64::consts::PI).sin();
        assert!(((e_mid - exact) / exact).abs() < 1e-2, "E {e_mid} vs {exact}");
    }

    #[test]
    fn separable_2d_cosine_modes() {
        // rhs = alpha (cos(k x1) + cos(k x2)): nodally exact by superposition
        // of 1d solutions on the tensor grid
        let (alpha, k) = (1e-2, 0.5);
        let mesh = BoxMesh::box_domain(
            2,
            &[(0.0, 4.0 * std::f64::consts::PI), (0.0, 4.0 * std::f64::consts::PI)],
            &[4, 4],
            true,
        )
        .unwrap();
        let solver = PoissonSolver::new(mesh, 2, 2).unwrap();
        let rhs =
            ScalarField::function(move |p: &[f64]| alpha * ((k * p[0]).cos() + (k * p[1]).cos()));
        let field = solver.solve(&rhs, 0.0).unwrap();
        let sp = solver.space();
        let nodes = sp.node_positions(2);
        let order = sp.order();
        let coords = &sp.dof_table(2).node_coords;
        let mut worst = 0.0f64;
        for (dof, p) in nodes.iter().enumerate() {
            if coords[dof][0] % order as i64 != 0 || coords[dof][1] % order as i64 != 0 {
                continue;
            }
            let exact = alpha / (k * k) * ((k * p[0]).cos() + (k * p[1]).cos());
            worst = worst.max((field.phi[dof] - exact).abs());
        }
        assert!(worst < 1e-12, "2d vertex error {worst}");
    }
}
