//! Tiered solvers for the diagonal blocks `A_{l,l}` of one strip system:
//! dense LU for tiny blocks, sparse LU up to the configured threshold,
//! GMRES + ILU(0) on the expanded sparse matrix while it fits in memory,
//! a direct spectral solve for periodic translation-invariant blocks, and a
//! matrix-free GMRES with a mass-Kronecker preconditioner as the fallback for
//! blocks too large to expand.

use super::spectral::{FactorLattice, SpectralSolver};
use crate::error::{Error, Result};
use crate::sparse::{gmres, Csr, Ilu0};
use crate::tensor::{KronTerm, LevelPair, ProductSpace};
use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::sparse::SparseColMat;
use faer::Mat;
use ndarray::Array2;

/// Solver configuration; thresholds in unknowns / nonzeros.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// functional L2 tolerance of the outer Richardson iteration
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Richardson damping factor (1 = undamped)
    pub damping: f64,
    /// dense LU below this block size
    pub dense_threshold: usize,
    /// sparse LU between dense_threshold and this size
    pub sparse_lu_threshold: usize,
    /// expanded-matrix cap for the GMRES + ILU(0) tier
    pub ilu_max_nnz: usize,
    /// relative tolerance and iteration cap of inner GMRES solves
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    /// relative tolerance / cap of the matrix-free fallback tier
    pub matrix_free_tol: f64,
    pub matrix_free_max_iters: usize,
    /// enable the spectral tier for periodic translation-invariant blocks
    pub spectral: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 1e-8,
            max_iterations: 200,
            damping: 1.0,
            dense_threshold: 1200,
            sparse_lu_threshold: 200_000,
            ilu_max_nnz: 30_000_000,
            inner_tol: 1e-10,
            inner_max_iters: 400,
            matrix_free_tol: 1e-4,
            matrix_free_max_iters: 120,
            spectral: true,
        }
    }
}

/// Expands a diagonal block's Kronecker terms into one CSR matrix of
/// dimension `time_dim * n1 * n2`.
pub fn expand_block(terms: &[KronTerm], time_dim: usize) -> Csr {
    assert!(!terms.is_empty());
    let (_, n1, n2) = terms[0].out_shape();
    let n = time_dim * n1 * n2;
    let mut acc: Option<Csr> = None;
    for term in terms {
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for s in 0..time_dim {
            for sp in 0..time_dim {
                let tv = term.scale * term.time[(s, sp)];
                if tv == 0.0 {
                    continue;
                }
                for i in 0..n1 {
                    let (xc, xv) = term.x.row(i);
                    for (&ip, &xval) in xc.iter().zip(xv) {
                        let factor = tv * xval;
                        for j in 0..n2 {
                            let (vc, vv) = term.v.row(j);
                            let row = (s * n1 + i) * n2 + j;
                            for (&jp, &vval) in vc.iter().zip(vv) {
                                triplets.push((
                                    row,
                                    (sp * n1 + ip as usize) * n2 + jp as usize,
                                    factor * vval,
                                ));
                            }
                        }
                    }
                }
            }
        }
        let m = Csr::from_triplets(n, n, &triplets);
        acc = Some(match acc {
            None => m,
            Some(a) => a.add_scaled(1.0, &m),
        });
    }
    acc.unwrap()
}

/// Estimated nonzeros of the expanded block. Volume terms share one stencil
/// pattern, so the union is close to the largest single term.
pub fn estimate_nnz(terms: &[KronTerm], time_dim: usize) -> usize {
    terms
        .iter()
        .map(|t| time_dim * time_dim * t.x.nnz() * t.v.nnz())
        .max()
        .unwrap_or(0)
}

fn csr_to_faer(a: &Csr) -> SparseColMat<usize, f64> {
    let triplets: Vec<faer::sparse::Triplet<usize, usize, f64>> = (0..a.nrows())
        .flat_map(|r| {
            let (cols, vals) = a.row(r);
            cols.iter()
                .zip(vals)
                .map(move |(&c, &v)| faer::sparse::Triplet::new(r, c as usize, v))
                .collect::<Vec<_>>()
        })
        .collect();
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &triplets).expect("faer csc")
}

/// Mass-Kronecker preconditioner `W_t (x) M_x (x) M_v` for the matrix-free
/// tier, applied with per-factor sparse Cholesky solves.
pub struct MassKronPrecond {
    w_lu: PartialPivLu<f64>,
    chol_x: faer::sparse::linalg::solvers::Llt<usize, f64>,
    chol_v: faer::sparse::linalg::solvers::Llt<usize, f64>,
    time_dim: usize,
    n1: usize,
    n2: usize,
}

impl MassKronPrecond {
    pub fn new(w_time: &Array2<f64>, mass_x: &Csr, mass_v: &Csr) -> Result<Self> {
        let time_dim = w_time.dim().0;
        let w = Mat::from_fn(time_dim, time_dim, |i, j| w_time[(i, j)]);
        let w_lu = w.partial_piv_lu();
        let fx = csr_to_faer(mass_x);
        let fv = csr_to_faer(mass_v);
        let chol_x = fx
            .as_ref()
            .sp_cholesky(faer::Side::Lower)
            .map_err(|_| Error::SingularBlock(0, 0))?;
        let chol_v = fv
            .as_ref()
            .sp_cholesky(faer::Side::Lower)
            .map_err(|_| Error::SingularBlock(0, 0))?;
        Ok(MassKronPrecond { w_lu, chol_x, chol_v, time_dim, n1: mass_x.nrows(), n2: mass_v.nrows() })
    }

    pub fn apply(&self, b: &mut [f64]) {
        let (td, n1, n2) = (self.time_dim, self.n1, self.n2);
        // v-solves: batched over (time, x) rows
        let mut rhs_v = Mat::from_fn(n2, td * n1, |j, col| b[col * n2 + j]);
        self.chol_v.solve_in_place(rhs_v.as_mut());
        // x-solves per time slab
        for s in 0..td {
            let mut rhs_x = Mat::from_fn(n1, n2, |i, j| rhs_v[(j, s * n1 + i)]);
            self.chol_x.solve_in_place(rhs_x.as_mut());
            for i in 0..n1 {
                for j in 0..n2 {
                    b[(s * n1 + i) * n2 + j] = rhs_x[(i, j)];
                }
            }
        }
        // time solve: W^{-1} along the outer axis
        let slab = n1 * n2;
        let mut rhs_t = Mat::from_fn(td, slab, |s, k| b[s * slab + k]);
        self.w_lu.solve_in_place(rhs_t.as_mut());
        for s in 0..td {
            for k in 0..slab {
                b[s * slab + k] = rhs_t[(s, k)];
            }
        }
    }
}

/// One diagonal block's solver.
pub enum BlockSolver {
    DenseLu {
        lu: PartialPivLu<f64>,
        n: usize,
    },
    SparseLu {
        lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
        n: usize,
    },
    IluGmres {
        a: Csr,
        ilu: Ilu0,
        tol: f64,
        max_iters: usize,
    },
    Spectral(Box<SpectralSolver>),
    MatrixFree {
        terms: Vec<KronTerm>,
        time_dim: usize,
        shape: (usize, usize, usize),
        precond: MassKronPrecond,
        tol: f64,
        max_iters: usize,
    },
}

impl BlockSolver {
    /// Chooses and builds the appropriate tier for one diagonal block.
    pub fn build(
        pair: LevelPair,
        terms: &[KronTerm],
        time_dim: usize,
        space: &ProductSpace,
        mass_x: &Csr,
        mass_v: &Csr,
        config: &SolverConfig,
    ) -> Result<BlockSolver> {
        assert!(!terms.is_empty(), "empty diagonal block at {pair}");
        let (_, n1, n2) = terms[0].out_shape();
        let n = time_dim * n1 * n2;
        if config.spectral && n > config.dense_threshold && SpectralSolver::applicable(terms) {
            if let (Some(lx), Some(lv)) = (
                FactorLattice::detect(&space.x, pair.l1),
                FactorLattice::detect(&space.v, pair.l2),
            ) {
                let s = SpectralSolver::build(terms, lx, lv, time_dim)
                    .map_err(|_| Error::SingularBlock(pair.l1, pair.l2))?;
                return Ok(BlockSolver::Spectral(Box::new(s)));
            }
        }
        if n <= config.dense_threshold {
            let a = expand_block(terms, time_dim);
            let dense = a.to_dense();
            let m = Mat::from_fn(n, n, |i, j| dense[i * n + j]);
            let lu = m.partial_piv_lu();
            // singularity check via a solve on a constant vector
            let mut probe = Mat::from_fn(n, 1, |_, _| 1.0);
            lu.solve_in_place(probe.as_mut());
            if (0..n).any(|i| !probe[(i, 0)].is_finite()) {
                return Err(Error::SingularBlock(pair.l1, pair.l2));
            }
            return Ok(BlockSolver::DenseLu { lu, n });
        }
        let est = estimate_nnz(terms, time_dim);
        if n <= config.sparse_lu_threshold && est <= config.ilu_max_nnz {
            let a = expand_block(terms, time_dim);
            let fa = csr_to_faer(&a);
            let lu = fa
                .as_ref()
                .sp_lu()
                .map_err(|_| Error::SingularBlock(pair.l1, pair.l2))?;
            return Ok(BlockSolver::SparseLu { lu, n });
        }
        if est <= config.ilu_max_nnz {
            let a = expand_block(terms, time_dim);
            let ilu = Ilu0::new(&a).map_err(|_| Error::SingularBlock(pair.l1, pair.l2))?;
            return Ok(BlockSolver::IluGmres {
                a,
                ilu,
                tol: config.inner_tol,
                max_iters: config.inner_max_iters,
            });
        }
        // matrix-free fallback: W is the coalesced time matrix of the plain
        // mass term (the strip assembly always emits one)
        let w_time = terms
            .iter()
            .find(|t| {
                std::ptr::eq(t.x.as_ref(), mass_x) && std::ptr::eq(t.v.as_ref(), mass_v)
            })
            .map(|t| t.time.mapv(|x| x * t.scale))
            .unwrap_or_else(|| Array2::eye(time_dim));
        let precond = MassKronPrecond::new(&w_time, mass_x, mass_v)?;
        Ok(BlockSolver::MatrixFree {
            terms: terms.to_vec(),
            time_dim,
            shape: (time_dim, n1, n2),
            precond,
            tol: config.matrix_free_tol,
            max_iters: config.matrix_free_max_iters,
        })
    }

    pub fn tier_name(&self) -> &'static str {
        match self {
            BlockSolver::DenseLu { .. } => "dense-lu",
            BlockSolver::SparseLu { .. } => "sparse-lu",
            BlockSolver::IluGmres { .. } => "ilu-gmres",
            BlockSolver::Spectral(_) => "spectral",
            BlockSolver::MatrixFree { .. } => "matrix-free",
        }
    }

    /// Solves `A x = b` in place to the tier's accuracy.
    pub fn solve(&self, b: &mut [f64]) {
        match self {
            BlockSolver::DenseLu { lu, n } => {
                let mut rhs = Mat::from_fn(*n, 1, |i, _| b[i]);
                lu.solve_in_place(rhs.as_mut());
                for i in 0..*n {
                    b[i] = rhs[(i, 0)];
                }
            }
            BlockSolver::SparseLu { lu, n } => {
                let mut rhs = Mat::from_fn(*n, 1, |i, _| b[i]);
                lu.solve_in_place(rhs.as_mut());
                for i in 0..*n {
                    b[i] = rhs[(i, 0)];
                }
            }
            BlockSolver::IluGmres { a, ilu, tol, max_iters } => {
                let rhs = b.to_vec();
                let mut x = vec![0.0; b.len()];
                gmres(
                    |x, y| a.matvec(x, y),
                    |z| ilu.solve(z),
                    &rhs,
                    &mut x,
                    *tol,
                    40,
                    *max_iters,
                );
                b.copy_from_slice(&x);
            }
            BlockSolver::Spectral(s) => s.solve(b),
            BlockSolver::MatrixFree { terms, time_dim, shape, precond, tol, max_iters } => {
                use crate::tensor::{apply_kron_term, ApplyScratch};
                use ndarray::Array3;
                let rhs = b.to_vec();
                let mut x = vec![0.0; b.len()];
                let pair = LevelPair::new(1, 1);
                let apply = |xin: &[f64], yout: &mut [f64]| {
                    let u = Array3::from_shape_vec(*shape, xin.to_vec()).unwrap();
                    let mut out = Array3::zeros(*shape);
                    let mut scratch = ApplyScratch::default();
                    for t in terms {
                        apply_kron_term(t, pair, pair, &u, &mut out, &mut scratch);
                    }
                    yout.copy_from_slice(out.as_slice().unwrap());
                };
                let _ = time_dim;
                gmres(apply, |z| precond.apply(z), &rhs, &mut x, *tol, 40, *max_iters);
                b.copy_from_slice(&x);
            }
        }
    }
}

/// Apply a solver to a block-shaped array.
pub fn solve_block(solver: &BlockSolver, block: &mut ndarray::Array3<f64>) {
    solver.solve(block.as_slice_mut().unwrap());
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_spd_csr(n: usize, rng: &mut ChaCha8Rng) -> Arc<Csr> {
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, 3.0 + rng.random::<f64>()));
            if i + 1 < n {
                let v = rng.random::<f64>() * 0.5;
                trips.push((i, i + 1, v));
                trips.push((i + 1, i, v));
            }
        }
        Arc::new(Csr::from_triplets(n, n, &trips))
    }

    #[test]
    fn expand_block_matches_dense_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let x = random_spd_csr(3, &mut rng);
        let v = random_spd_csr(4, &mut rng);
        let t = Array2::from_shape_fn((2, 2), |_| rng.random::<f64>());
        let term = KronTerm::new(1.3, t.clone(), x.clone(), v.clone());
        let a = expand_block(&[term], 2);
        let (dx, dv) = (x.to_dense(), v.to_dense());
        let d = a.to_dense();
        let n = 2 * 3 * 4;
        for s in 0..2 {
            for sp in 0..2 {
                for i in 0..3 {
                    for ip in 0..3 {
                        for j in 0..4 {
                            for jp in 0..4 {
                                let row = (s * 3 + i) * 4 + j;
                                let col = (sp * 3 + ip) * 4 + jp;
                                let expect = 1.3 * t[(s, sp)] * dx[i * 3 + ip] * dv[j * 4 + jp];
                                assert!((d[row * n + col] - expect).abs() < 1e-13);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dense_and_sparse_lu_solve_kron_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let x = random_spd_csr(4, &mut rng);
        let v = random_spd_csr(5, &mut rng);
        let t = Array2::eye(2) * 2.0;
        let terms = vec![KronTerm::new(1.0, t, x, v)];
        let a = expand_block(&terms, 2);
        let n = a.nrows();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let space_dummy = {
            use crate::fem::{BoxMesh, FactorSpace};
            let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[2], true).unwrap();
            ProductSpace::new(
                Arc::new(FactorSpace::build(m.clone(), 1, 1).unwrap()),
                Arc::new(FactorSpace::build(m, 1, 1).unwrap()),
            )
        };
        let mx = random_spd_csr(4, &mut rng);
        let mv = random_spd_csr(5, &mut rng);
        for cfg in [
            SolverConfig { dense_threshold: 100, ..Default::default() },
            SolverConfig { dense_threshold: 1, sparse_lu_threshold: 100, ..Default::default() },
            SolverConfig {
                dense_threshold: 1,
                sparse_lu_threshold: 2,
                ilu_max_nnz: 10_000,
                ..Default::default()
            },
        ] {
            let solver = BlockSolver::build(
                LevelPair::new(1, 1),
                &terms,
                2,
                &space_dummy,
                &mx,
                &mv,
                &cfg,
            )
            .unwrap();
            let mut xs = b.clone();
            solver.solve(&mut xs);
            let mut ax = vec![0.0; n];
            a.matvec(&xs, &mut ax);
            for i in 0..n {
                assert!(
                    (ax[i] - b[i]).abs() < 1e-8,
                    "{}: {} vs {}",
                    solver.tier_name(),
                    ax[i],
                    b[i]
                );
            }
        }
    }
}
