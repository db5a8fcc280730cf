//! The combination-technique preconditioner: block solves on the level sets
//! `|l|_1 = L+1` and `|l|_1 = L`, with residual restriction and correction
//! combination along the first factor.

use super::block_solve::{BlockSolver, SolverConfig};
use crate::error::Result;
use crate::sparse::Csr;
use crate::strip::StripSystem;
use crate::tensor::{
    active_levels, precond_levels, BlockVector, KronOperator, KronTerm, L2Metric, LevelPair,
};
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use std::sync::Arc;

/// Combination preconditioner state: factorizations for both level rows plus
/// the embeddings used for restriction and combination.
pub struct CombinationPrecond {
    pub level: usize,
    pub time_dim: usize,
    active: Vec<(LevelPair, BlockSolver)>,
    coarse: Vec<(LevelPair, BlockSolver)>,
    /// per coarse pair `(l1, l2)`: embedding `E(l1 -> l1 + 1)` on the x factor
    embed_x: Vec<Arc<Csr>>,
}

impl CombinationPrecond {
    /// Builds the preconditioner for an assembled strip system.
    pub fn for_system(
        system: &StripSystem,
        metric: &L2Metric,
        config: &SolverConfig,
    ) -> Result<Self> {
        let level = system.level;
        let time_dim = system.operator.time_out;
        let active_terms: Vec<(LevelPair, &[KronTerm])> = active_levels(level)
            .into_iter()
            .map(|p| {
                let terms = system
                    .operator
                    .blocks
                    .get(&(p, p))
                    .map(|v| v.as_slice())
                    .unwrap_or(&[]);
                (p, terms)
            })
            .collect();
        let coarse_terms: Vec<(LevelPair, &[KronTerm])> = system
            .coarse_diag
            .iter()
            .map(|(p, v)| (*p, v.as_slice()))
            .collect();
        Self::build(level, time_dim, &active_terms, &coarse_terms, metric, config)
    }

    /// Builds the preconditioner for the plain Gram (mass) system, used by
    /// L2 projections.
    pub fn for_mass(
        metric: &L2Metric,
        level: usize,
        time_gram: &Array2<f64>,
        config: &SolverConfig,
    ) -> Result<Self> {
        let time_dim = time_gram.dim().0;
        let make = |p: LevelPair| -> Vec<KronTerm> {
            vec![KronTerm::new(
                1.0,
                time_gram.clone(),
                metric.mass_x.get(p.l1, p.l1),
                metric.mass_v.get(p.l2, p.l2),
            )
            .with_invariance(
                metric.mass_x.translation_invariant(),
                metric.mass_v.translation_invariant(),
            )]
        };
        let active: Vec<(LevelPair, Vec<KronTerm>)> =
            active_levels(level).into_iter().map(|p| (p, make(p))).collect();
        let coarse: Vec<(LevelPair, Vec<KronTerm>)> =
            precond_levels(level).into_iter().map(|p| (p, make(p))).collect();
        let at: Vec<(LevelPair, &[KronTerm])> =
            active.iter().map(|(p, v)| (*p, v.as_slice())).collect();
        let ct: Vec<(LevelPair, &[KronTerm])> =
            coarse.iter().map(|(p, v)| (*p, v.as_slice())).collect();
        Self::build(level, time_dim, &at, &ct, metric, config)
    }

    fn build(
        level: usize,
        time_dim: usize,
        active_terms: &[(LevelPair, &[KronTerm])],
        coarse_terms: &[(LevelPair, &[KronTerm])],
        metric: &L2Metric,
        config: &SolverConfig,
    ) -> Result<Self> {
        let space = &metric.space;
        let build_one = |&(p, terms): &(LevelPair, &[KronTerm])| -> Result<(LevelPair, BlockSolver)> {
            let mx = metric.mass_x.get(p.l1, p.l1);
            let mv = metric.mass_v.get(p.l2, p.l2);
            let s = BlockSolver::build(p, terms, time_dim, space, &mx, &mv, config)?;
            Ok((p, s))
        };
        let active: Result<Vec<_>> = active_terms.par_iter().map(build_one).collect();
        let coarse: Result<Vec<_>> = coarse_terms.par_iter().map(build_one).collect();
        let coarse = coarse?;
        let embed_x = coarse
            .iter()
            .map(|(p, _)| space.x.embedding(p.l1, p.l1 + 1))
            .collect();
        Ok(CombinationPrecond { level, time_dim, active: active?, coarse, embed_x })
    }

    pub fn tier_summary(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        for (p, s) in self.active.iter().chain(self.coarse.iter()) {
            parts.push(format!("{p}:{}", s.tier_name()));
        }
        parts.join(" ")
    }

    /// Applies the combination update: solve on both level rows, restrict the
    /// residual along the first factor for the coarse row, then subtract the
    /// prolonged coarse corrections from the fine ones.
    pub fn apply(&self, residual: &BlockVector) -> BlockVector {
        assert_eq!(residual.level, self.level);
        assert_eq!(residual.time_dim, self.time_dim);
        // fine solves
        let mut fine: Vec<Array3<f64>> = self
            .active
            .par_iter()
            .map(|(p, solver)| {
                let mut b = residual.block(*p).clone();
                solver.solve(b.as_slice_mut().unwrap());
                b
            })
            .collect();
        // coarse: restrict r_{(l1+1, l2)} along x, solve
        let coarse: Vec<Array3<f64>> = self
            .coarse
            .par_iter()
            .zip(self.embed_x.par_iter())
            .map(|((p, solver), ex)| {
                let src = residual.block(LevelPair::new(p.l1 + 1, p.l2));
                let (td, _, n2) = src.dim();
                let n1c = ex.ncols();
                let mut b = Array3::zeros((td, n1c, n2));
                {
                    let sf = src.as_slice().unwrap();
                    let bf = b.as_slice_mut().unwrap();
                    // E^T applied along the x axis per time slab
                    for s in 0..td {
                        let src_slab = &sf[s * ex.nrows() * n2..(s + 1) * ex.nrows() * n2];
                        let dst_slab = &mut bf[s * n1c * n2..(s + 1) * n1c * n2];
                        // dst[ic, :] += E[i, ic] * src[i, :]
                        for i in 0..ex.nrows() {
                            let (cols, vals) = ex.row(i);
                            let srow = &src_slab[i * n2..(i + 1) * n2];
                            for (&ic, &e) in cols.iter().zip(vals) {
                                let drow = &mut dst_slab[ic as usize * n2..(ic as usize + 1) * n2];
                                for (d, s) in drow.iter_mut().zip(srow) {
                                    *d += e * s;
                                }
                            }
                        }
                    }
                }
                solver.solve(b.as_slice_mut().unwrap());
                b
            })
            .collect();
        // combination: subtract prolonged coarse corrections from blocks with l1 > 1
        for (((p, _), ex), cb) in self.coarse.iter().zip(&self.embed_x).zip(&coarse) {
            let target = LevelPair::new(p.l1 + 1, p.l2);
            let idx = active_levels(self.level)
                .iter()
                .position(|&q| q == target)
                .expect("combination target in active set");
            let dst = &mut fine[idx];
            let (td, n1f, n2) = dst.dim();
            let df = dst.as_slice_mut().unwrap();
            let cf = cb.as_slice().unwrap();
            for s in 0..td {
                let src_slab = &cf[s * ex.ncols() * n2..(s + 1) * ex.ncols() * n2];
                let dst_slab = &mut df[s * n1f * n2..(s + 1) * n1f * n2];
                for i in 0..n1f {
                    let (cols, vals) = ex.row(i);
                    let drow = &mut dst_slab[i * n2..(i + 1) * n2];
                    for (&ic, &e) in cols.iter().zip(vals) {
                        let srow = &src_slab[ic as usize * n2..(ic as usize + 1) * n2];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d -= e * s;
                        }
                    }
                }
            }
        }
        BlockVector {
            level: self.level,
            time_dim: self.time_dim,
            pairs: active_levels(self.level),
            blocks: fine,
            strip: residual.strip,
        }
    }
}

/// Builds the Gram operator of the active set for a mass solve.
pub fn mass_operator(metric: &L2Metric, level: usize, time_gram: &Array2<f64>) -> KronOperator {
    metric.mass_operator(level, time_gram)
}
