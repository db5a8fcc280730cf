//! Solution of the singular-but-consistent block systems: combination
//! preconditioner, tiered diagonal-block solvers, and the outer Richardson
//! iteration.

pub mod block_solve;
pub mod precond;
pub mod richardson;
pub mod spectral;

pub use block_solve::{expand_block, BlockSolver, SolverConfig};
pub use precond::CombinationPrecond;
pub use richardson::{richardson_solve, SolveReport};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoxMesh, FactorSpace, ScalarField, SeparableField};
    use crate::strip::{assemble_strip, AdvectionTerm, Factor, TransportProblem};
    use crate::tensor::{active_levels, BlockVector, L2Metric, LevelPair, ProductSpace};
    use ndarray::{Array2, Array3};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn product_space(cells: usize, order: usize, levels: usize, periodic: bool) -> ProductSpace {
        let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[cells], periodic).unwrap();
        ProductSpace::new(
            Arc::new(FactorSpace::build(m.clone(), order, levels).unwrap()),
            Arc::new(FactorSpace::build(m, order, levels).unwrap()),
        )
    }

    fn advect_problem(space: &ProductSpace, strips: usize) -> TransportProblem {
        TransportProblem::advection(
            space.clone(),
            vec![
                AdvectionTerm::constant_ones(Factor::X, 1),
                AdvectionTerm::constant_ones(Factor::V, 1),
            ],
            SeparableField::constant(1.0),
            0.5,
            strips,
        )
    }

    fn random_vec(space: &ProductSpace, level: usize, td: usize, rng: &mut ChaCha8Rng) -> BlockVector {
        let mut u = BlockVector::zeros(space, level, td);
        for p in u.pairs.clone() {
            let d = space.dims(p);
            *u.block_mut(p) = Array3::from_shape_fn((td, d.0, d.1), |_| rng.random::<f64>() - 0.5);
        }
        u
    }

    #[test]
    fn level_one_preconditioner_is_exact() {
        let space = product_space(2, 1, 2, true);
        let metric = L2Metric::new(&space, 2).unwrap();
        let problem = advect_problem(&space, 2);
        let system = assemble_strip(&problem, 0, 1, &metric).unwrap();
        let config = SolverConfig::default();
        let precond = CombinationPrecond::for_system(&system, &metric, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let b = random_vec(&space, 1, 2, &mut rng);
        let (u, report) = richardson_solve(
            &system.operator,
            &b,
            &precond,
            &metric,
            1e-10,
            50,
            1.0,
        )
        .unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 1, "L=1 should converge in one update");
        let mut r = system.operator.apply(&u);
        r.axpy(-1.0, &b);
        assert!(r.raw_norm() < 1e-9 * b.raw_norm());
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let space = product_space(2, 1, 2, true);
        let metric = L2Metric::new(&space, 2).unwrap();
        let problem = advect_problem(&space, 2);
        let system = assemble_strip(&problem, 0, 2, &metric).unwrap();
        let config = SolverConfig::default();
        let precond = CombinationPrecond::for_system(&system, &metric, &config).unwrap();
        let b = BlockVector::zeros(&space, 2, 2);
        let (u, report) = richardson_solve(&system.operator, &b, &precond, &metric, 1e-10, 50, 1.0).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
        assert_eq!(u.raw_norm(), 0.0);
    }

    #[test]
    fn preconditioner_is_linear() {
        let space = product_space(2, 1, 3, true);
        let metric = L2Metric::new(&space, 3).unwrap();
        let problem = advect_problem(&space, 4);
        let system = assemble_strip(&problem, 0, 3, &metric).unwrap();
        let config = SolverConfig::default();
        let precond = CombinationPrecond::for_system(&system, &metric, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let r1 = random_vec(&space, 3, 2, &mut rng);
        let r2 = random_vec(&space, 3, 2, &mut rng);
        let (a, b) = (0.7, -1.3);
        let mut combo = BlockVector::zeros_like(&r1);
        combo.axpy(a, &r1);
        combo.axpy(b, &r2);
        let lhs = precond.apply(&combo);
        let mut rhs = BlockVector::zeros_like(&lhs);
        rhs.axpy(a, &precond.apply(&r1));
        rhs.axpy(b, &precond.apply(&r2));
        let mut d = lhs.clone();
        d.axpy(-1.0, &rhs);
        assert!(d.raw_norm() < 1e-12 * lhs.raw_norm().max(1.0));
    }

    #[test]
    fn combination_reproduces_coarse_functions_exactly() {
        // interpolation exactness of the combination formula: a function
        // representable on every level pair is reproduced from its per-block
        // exact representations
        let space = product_space(2, 1, 3, true);
        let metric = L2Metric::new(&space, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let level = 3;
        let (n1, n2) = space.dims(LevelPair::new(1, 1));
        let coarse = Array2::from_shape_fn((n1, n2), |_| rng.random::<f64>() - 0.5);
        // exact representation of w on an arbitrary pair
        let represent = |pair: LevelPair| -> Array3<f64> {
            let ex = space.x.embedding(1, pair.l1);
            let ev = space.v.embedding(1, pair.l2);
            let mut xe = vec![0.0; ex.nrows() * n2];
            ex.mul_dense(coarse.as_slice().unwrap(), n2, &mut xe);
            let mut out = Array3::zeros((1, ex.nrows(), ev.nrows()));
            let mut row = vec![0.0; ev.nrows()];
            for i in 0..ex.nrows() {
                ev.matvec(&xe[i * n2..(i + 1) * n2], &mut row);
                for (j, &v) in row.iter().enumerate() {
                    out[(0, i, j)] = v;
                }
            }
            out
        };
        // combination: exact representations on |l| = L+1 minus the prolonged
        // representations on |l| = L
        let mut combined = BlockVector::zeros(&space, level, 1);
        for &p in &active_levels(level) {
            *combined.block_mut(p) = represent(p);
        }
        for &p in &crate::tensor::precond_levels(level) {
            let target = LevelPair::new(p.l1 + 1, p.l2);
            let ex = space.x.embedding(p.l1, p.l1 + 1);
            let rep = represent(p);
            let n2c = rep.dim().2;
            let mut tmp = vec![0.0; ex.nrows() * n2c];
            ex.mul_dense(rep.as_slice().unwrap(), n2c, &mut tmp);
            let block = combined.block_mut(target);
            for (d, s) in block.as_slice_mut().unwrap().iter_mut().zip(&tmp) {
                *d -= s;
            }
        }
        // reference: w placed in a single block
        let mut reference = BlockVector::zeros(&space, level, 1);
        *reference.block_mut(LevelPair::new(1, level)) = represent(LevelPair::new(1, level));
        let d = metric.distance_full_grid(&combined, &reference);
        let nrm = metric.norm_spatial(&reference);
        assert!(d < 1e-12 * nrm, "combination not exact: {d} vs norm {nrm}");
    }

    #[test]
    fn mass_system_preconditioner_solves_projection() {
        // G_t (x) M system: solving A u = A w recovers w functionally
        let space = product_space(2, 1, 3, true);
        let metric = L2Metric::new(&space, 3).unwrap();
        let gram = Array2::eye(1);
        let config = SolverConfig::default();
        let precond = CombinationPrecond::for_mass(&metric, 3, &gram, &config).unwrap();
        let op = metric.mass_operator(3, &gram);
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let w = random_vec(&space, 3, 1, &mut rng);
        let b = op.apply(&w);
        let (u, report) = richardson_solve(&op, &b, &precond, &metric, 1e-12, 100, 1.0).unwrap();
        assert!(report.converged, "mass Richardson stalled: {:?}", report.update_norms);
        let d = metric.distance_spatial(&u, &w);
        assert!(d < 1e-7, "functional distance {d}");
    }

    #[test]
    fn consistency_and_min_norm_oracle_on_tiny_system() {
        // dense least-squares oracle: b in range(A); Richardson solution and
        // the SVD min-norm solution define the same function
        let space = product_space(2, 1, 2, true);
        let metric = L2Metric::new(&space, 2).unwrap();
        let mut problem = advect_problem(&space, 2);
        problem.sigma = vec![(ScalarField::constant(0.4), ScalarField::one())];
        let level = 2;
        let system = assemble_strip(&problem, 0, level, &metric).unwrap();
        // previous trace: the constant-one function
        let mut trace = BlockVector::zeros(&space, level, 1);
        trace.block_mut(LevelPair::new(1, 2)).fill(1.0);
        let b = system.rhs(&trace);
        // dense expansion of the full operator
        let pairs = active_levels(level);
        let zero = BlockVector::zeros(&space, level, 2);
        let offsets: Vec<usize> = {
            let mut acc = 0;
            let mut o = Vec::new();
            for p in &pairs {
                o.push(acc);
                let d = space.dims(*p);
                acc += 2 * d.0 * d.1;
            }
            o.push(acc);
            o
        };
        let n = *offsets.last().unwrap();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (pj, p) in pairs.iter().enumerate() {
            let d = space.dims(*p);
            let len = 2 * d.0 * d.1;
            for k in 0..len {
                let mut e = BlockVector::zeros_like(&zero);
                e.block_mut(*p).as_slice_mut().unwrap()[k] = 1.0;
                let ae = system.operator.apply(&e);
                for (qi, q) in pairs.iter().enumerate() {
                    let col = ae.block(*q).as_slice().unwrap();
                    for (i, &v) in col.iter().enumerate() {
                        dense[(offsets[qi] + i, offsets[pj] + k)] = v;
                    }
                }
            }
        }
        let mut bd = nalgebra::DVector::<f64>::zeros(n);
        for (pi, p) in pairs.iter().enumerate() {
            for (i, &v) in b.block(*p).as_slice().unwrap().iter().enumerate() {
                bd[offsets[pi] + i] = v;
            }
        }
        // least-squares residual: consistency of the singular system
        let svd = nalgebra::SVD::new(dense.clone(), true, true);
        let x_ls = svd.solve(&bd, 1e-10).unwrap();
        let res = (&dense * &x_ls - &bd).norm();
        assert!(res < 1e-10 * bd.norm().max(1.0), "rhs not in range: {res}");
        // Richardson solution
        let config = SolverConfig::default();
        let precond = CombinationPrecond::for_system(&system, &metric, &config).unwrap();
        let (u, report) =
            richardson_solve(&system.operator, &b, &precond, &metric, 1e-11, 100, 1.0).unwrap();
        assert!(report.converged);
        // compare as functions per (orthonormal) time mode
        let mut ls = BlockVector::zeros_like(&zero);
        for (pi, p) in pairs.iter().enumerate() {
            let d = space.dims(*p);
            let len = 2 * d.0 * d.1;
            ls.block_mut(*p)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&x_ls.as_slice()[offsets[pi]..offsets[pi] + len]);
        }
        for s in 0..2 {
            let us = u.contract_time(&unit(s, 2));
            let lss = ls.contract_time(&unit(s, 2));
            let d = metric.distance_full_grid(&us, &lss);
            assert!(d < 1e-8, "time mode {s}: functional distance {d}");
        }
    }

    fn unit(i: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn galerkin_orthogonality_of_converged_strip() {
        // residual of the converged solve, measured functionally via the
        // Riesz representative of the residual functional, is below 10 eps
        let space = product_space(4, 1, 3, true);
        let metric = L2Metric::new(&space, 3).unwrap();
        let problem = advect_problem(&space, 4);
        let level = 3;
        let system = assemble_strip(&problem, 0, level, &metric).unwrap();
        let mut trace = BlockVector::zeros(&space, level, 1);
        trace.block_mut(LevelPair::new(1, level)).fill(1.0);
        let b = system.rhs(&trace);
        let eps = 1e-10;
        let config = SolverConfig::default();
        let precond = CombinationPrecond::for_system(&system, &metric, &config).unwrap();
        let (u, report) =
            richardson_solve(&system.operator, &b, &precond, &metric, eps, 100, 1.0).unwrap();
        assert!(report.converged);
        // Riesz representative z: M z = r, functional norm = sqrt(z . r)
        let mut r = system.operator.apply(&u);
        r.axpy(-1.0, &b);
        let gram = Array2::eye(2);
        let mass_precond = CombinationPrecond::for_mass(&metric, level, &gram, &config).unwrap();
        let mop = metric.mass_operator(level, &gram);
        let (z, zrep) = richardson_solve(&mop, &r, &mass_precond, &metric, 1e-13, 200, 1.0).unwrap();
        assert!(zrep.converged);
        let fnorm = z.raw_dot(&r).max(0.0).sqrt();
        assert!(fnorm < 10.0 * eps, "residual functional norm {fnorm}");
    }
}
