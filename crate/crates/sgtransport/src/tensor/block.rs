//! Block coefficient vectors in the spanning-set representation: one dense
//! array per active level pair. The representation is redundant, so equality
//! of two vectors is only meaningful functionally (via the L2 metric), never
//! entrywise.

use super::levels::{active_levels, LevelPair};
use crate::fem::FactorSpace;
use ndarray::Array3;
use std::sync::Arc;

/// The product of the two factor hierarchies.
#[derive(Clone)]
pub struct ProductSpace {
    pub x: Arc<FactorSpace>,
    pub v: Arc<FactorSpace>,
}

impl ProductSpace {
    pub fn new(x: Arc<FactorSpace>, v: Arc<FactorSpace>) -> Self {
        ProductSpace { x, v }
    }

    pub fn dims(&self, p: LevelPair) -> (usize, usize) {
        (self.x.num_dofs(p.l1), self.v.num_dofs(p.l2))
    }

    pub fn max_level(&self) -> usize {
        self.x.max_level().min(self.v.max_level())
    }
}

/// Coefficients of a function in `P^r(I_j, V_L)` over all level pairs with
/// `|l|_1 = L + 1`. Block layout is time-major, then x, then v (contiguous).
/// `time_dim = 1` represents purely spatial snapshots (e.g. traces).
#[derive(Debug, Clone)]
pub struct BlockVector {
    pub level: usize,
    pub time_dim: usize,
    pub pairs: Vec<LevelPair>,
    pub blocks: Vec<Array3<f64>>,
    /// strip index the time basis refers to; `None` for spatial-only data
    pub strip: Option<usize>,
}

impl BlockVector {
    pub fn zeros(space: &ProductSpace, level: usize, time_dim: usize) -> Self {
        let pairs = active_levels(level);
        let blocks = pairs
            .iter()
            .map(|&p| {
                let (n1, n2) = space.dims(p);
                Array3::zeros((time_dim, n1, n2))
            })
            .collect();
        BlockVector { level, time_dim, pairs, blocks, strip: None }
    }

    pub fn zeros_like(other: &BlockVector) -> Self {
        BlockVector {
            level: other.level,
            time_dim: other.time_dim,
            pairs: other.pairs.clone(),
            blocks: other.blocks.iter().map(|b| Array3::zeros(b.raw_dim())).collect(),
            strip: other.strip,
        }
    }

    pub fn with_strip(mut self, strip: usize) -> Self {
        self.strip = Some(strip);
        self
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_index(&self, pair: LevelPair) -> Option<usize> {
        self.pairs.iter().position(|&p| p == pair)
    }

    pub fn block(&self, pair: LevelPair) -> &Array3<f64> {
        &self.blocks[self.block_index(pair).expect("pair not in active set")]
    }

    pub fn block_mut(&mut self, pair: LevelPair) -> &mut Array3<f64> {
        let i = self.block_index(pair).expect("pair not in active set");
        &mut self.blocks[i]
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn fill(&mut self, v: f64) {
        for b in &mut self.blocks {
            b.fill(v);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.blocks {
            b.mapv_inplace(|x| x * s);
        }
    }

    /// `self += alpha * other` blockwise.
    pub fn axpy(&mut self, alpha: f64, other: &BlockVector) {
        assert_eq!(self.pairs, other.pairs);
        assert_eq!(self.time_dim, other.time_dim);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.zip_mut_with(b, |x, y| *x += alpha * y);
        }
    }

    /// Raw coefficient dot product. This is a representation-dependent
    /// quantity; use the L2 metric for functional comparisons.
    pub fn raw_dot(&self, other: &BlockVector) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| {
                a.as_slice().unwrap().iter().zip(b.as_slice().unwrap()).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum()
    }

    pub fn raw_norm(&self) -> f64 {
        self.raw_dot(self).sqrt()
    }

    /// Contracts the time axis with the given values (e.g. the time basis
    /// evaluated at a strip endpoint), producing a spatial snapshot.
    pub fn contract_time(&self, time_vals: &[f64]) -> BlockVector {
        assert_eq!(time_vals.len(), self.time_dim);
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let (_, n1, n2) = b.dim();
                let mut out = Array3::zeros((1, n1, n2));
                for (s, &c) in time_vals.iter().enumerate() {
                    if c != 0.0 {
                        out.index_axis_mut(ndarray::Axis(0), 0)
                            .zip_mut_with(&b.index_axis(ndarray::Axis(0), s), |x, y| *x += c * y);
                    }
                }
                out
            })
            .collect();
        BlockVector {
            level: self.level,
            time_dim: 1,
            pairs: self.pairs.clone(),
            blocks,
            strip: None,
        }
    }

    /// Pointwise evaluation of a spatial block vector (`time_dim == 1`).
    pub fn evaluate_spatial(
        &self,
        space: &ProductSpace,
        x: &[f64],
        v: &[f64],
    ) -> crate::error::Result<f64> {
        assert_eq!(self.time_dim, 1);
        let mut acc = 0.0;
        for (pair, block) in self.pairs.iter().zip(&self.blocks) {
            acc += evaluate_block(space, *pair, &block.index_axis(ndarray::Axis(0), 0), x, v)?;
        }
        Ok(acc)
    }

    /// Pointwise evaluation with explicit time-basis values.
    pub fn evaluate_with_time(
        &self,
        space: &ProductSpace,
        time_vals: &[f64],
        x: &[f64],
        v: &[f64],
    ) -> crate::error::Result<f64> {
        assert_eq!(time_vals.len(), self.time_dim);
        let mut acc = 0.0;
        for (pair, block) in self.pairs.iter().zip(&self.blocks) {
            for (s, &c) in time_vals.iter().enumerate() {
                if c != 0.0 {
                    acc += c * evaluate_block(
                        space,
                        *pair,
                        &block.index_axis(ndarray::Axis(0), s),
                        x,
                        v,
                    )?;
                }
            }
        }
        Ok(acc)
    }
}

fn evaluate_block(
    space: &ProductSpace,
    pair: LevelPair,
    coeffs: &ndarray::ArrayView2<f64>,
    x: &[f64],
    v: &[f64],
) -> crate::error::Result<f64> {
    // evaluate sum_{k1,k2} c[k1,k2] phi_x(k1) phi_v(k2) by contracting the
    // x-cell's local basis against per-v-dof columns
    let sx = &space.x;
    let sv = &space.v;
    // local x basis values at the point
    let (n1, _n2) = (coeffs.dim().0, coeffs.dim().1);
    let mut xvals = vec![0.0; n1];
    local_basis_values(sx, pair.l1, x, &mut xvals)?;
    let mut vvals = vec![0.0; coeffs.dim().1];
    local_basis_values(sv, pair.l2, v, &mut vvals)?;
    let mut acc = 0.0;
    for (k1, &a) in xvals.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = coeffs.row(k1);
        for (k2, &b) in vvals.iter().enumerate() {
            if b != 0.0 {
                acc += a * row[k2] * b;
            }
        }
    }
    Ok(acc)
}

/// Writes the (sparse) global basis values at `point` into a dense scratch
/// vector: only the dofs of the containing cell are non-zero.
fn local_basis_values(
    space: &FactorSpace,
    level: usize,
    point: &[f64],
    out: &mut [f64],
) -> crate::error::Result<()> {
    use crate::fem::lagrange;
    out.fill(0.0);
    let mesh = space.mesh(level);
    let (cell, reference) = mesh
        .locate(point)
        .ok_or_else(|| crate::error::Error::OutOfDomain(point.to_vec()))?;
    let r = space.order();
    let dim = space.dim();
    let per_axis: Vec<Vec<f64>> = (0..dim).map(|a| lagrange::eval(r, reference[a])).collect();
    for (local, &g) in space.dof_table(level).cell_dofs[cell].iter().enumerate() {
        let mut idx = local;
        let mut w = 1.0;
        for pa in per_axis.iter() {
            w *= pa[idx % (r + 1)];
            idx /= r + 1;
        }
        // += so shared dofs on cell boundaries are not double-set (same value)
        if out[g as usize] == 0.0 {
            out[g as usize] = w;
        }
    }
    Ok(())
}
