//! Spanning-set block vectors, Kronecker block operators, and the functional
//! L2 metric that makes the redundant representation comparable.

pub mod block;
pub mod kron;
pub mod levels;

pub use block::{BlockVector, ProductSpace};
pub use kron::{apply_kron_term, intermediate_bound, ApplyScratch, KronOperator, KronTerm};
pub use levels::{active_levels, precond_levels, LevelPair};

use crate::error::Result;
use crate::fem::{assemble_load, assemble_mass, MatrixFamily, ScalarField, SeparableField};
use ndarray::Array2;
use std::sync::Arc;

/// Cross-level mass families of both factors, generated from the finest-level
/// mass matrices. Provides the L2(Omega) inner product on block vectors.
pub struct L2Metric {
    pub space: ProductSpace,
    pub mass_x: Arc<MatrixFamily>,
    pub mass_v: Arc<MatrixFamily>,
    finest: usize,
}

impl L2Metric {
    /// Builds the metric with finest level `finest` (the largest per-factor
    /// level used by the sparse space of that level).
    pub fn new(space: &ProductSpace, finest: usize) -> Result<Self> {
        let mx = assemble_mass(&space.x, finest, &ScalarField::one(), 0.0)?;
        let mv = assemble_mass(&space.v, finest, &ScalarField::one(), 0.0)?;
        Ok(L2Metric {
            space: space.clone(),
            mass_x: Arc::new(MatrixFamily::new(space.x.clone(), mx)),
            mass_v: Arc::new(MatrixFamily::new(space.v.clone(), mv)),
            finest,
        })
    }

    pub fn finest_level(&self) -> usize {
        self.finest
    }

    /// Builds the Gram operator `G_t (x) M_x (x) M_v` on the active set of
    /// `level` for vectors with `time_dim` coefficients per block.
    pub fn mass_operator(&self, level: usize, time_gram: &Array2<f64>) -> KronOperator {
        let pairs = active_levels(level);
        let mut op =
            KronOperator::new(level, time_gram.dim().0, time_gram.dim().1, pairs.clone());
        for &t in &pairs {
            for &s in &pairs {
                op.push(
                    t,
                    s,
                    KronTerm::new(
                        1.0,
                        time_gram.clone(),
                        self.mass_x.get(t.l1, s.l1),
                        self.mass_v.get(t.l2, s.l2),
                    ),
                );
            }
        }
        op
    }

    /// `(u, w)_{L2}` with the given time Gram matrix (identity for the
    /// orthonormal strip basis; `[[1]]` for spatial snapshots).
    pub fn inner(&self, u: &BlockVector, w: &BlockVector, time_gram: &Array2<f64>) -> f64 {
        assert_eq!(u.level, w.level);
        let op = self.mass_operator(u.level, time_gram);
        op.apply(w).raw_dot(u)
    }

    /// Spatial L2 inner product for `time_dim == 1` vectors.
    pub fn inner_spatial(&self, u: &BlockVector, w: &BlockVector) -> f64 {
        self.inner(u, w, &Array2::eye(1))
    }

    pub fn norm(&self, u: &BlockVector, time_gram: &Array2<f64>) -> f64 {
        self.inner(u, u, time_gram).max(0.0).sqrt()
    }

    pub fn norm_spatial(&self, u: &BlockVector) -> f64 {
        self.inner_spatial(u, u).max(0.0).sqrt()
    }

    /// Functional L2 distance of two (possibly differently represented)
    /// spatial vectors via the blockwise quadratic form. Carries the usual
    /// sqrt(eps) * ||u|| cancellation floor; use [`L2Metric::distance_full_grid`]
    /// for near-machine-precision equality checks.
    pub fn distance_spatial(&self, u: &BlockVector, w: &BlockVector) -> f64 {
        let mut d = u.clone();
        d.axpy(-1.0, w);
        self.norm_spatial(&d)
    }

    /// Flattens a spatial block vector onto the full tensor grid
    /// `(finest, finest)` by exact embedding, summing block contributions.
    pub fn to_full_grid(&self, u: &BlockVector) -> Array2<f64> {
        assert_eq!(u.time_dim, 1);
        let l = self.finest;
        let (n1, n2) = (self.space.x.num_dofs(l), self.space.v.num_dofs(l));
        let mut out = Array2::zeros((n1, n2));
        for (pair, block) in u.pairs.iter().zip(&u.blocks) {
            let ex = self.space.x.embedding(pair.l1, l);
            let ev = self.space.v.embedding(pair.l2, l);
            // tmp = E_x * block, shape (n1, n2_src)
            let (_, b1, b2) = block.dim();
            let mut tmp = vec![0.0; n1 * b2];
            ex.mul_dense(block.as_slice().unwrap(), b2, &mut tmp);
            // out += tmp * E_v^T : out[i, j] += sum_k tmp[i, k] Ev[j, k]
            let mut row_out = vec![0.0; n2];
            for i in 0..n1 {
                let src = &tmp[i * b2..(i + 1) * b2];
                ev.matvec(src, &mut row_out);
                for (o, r) in out.row_mut(i).iter_mut().zip(&row_out) {
                    *o += r;
                }
            }
            let _ = b1;
        }
        out
    }

    /// Functional distance computed on the full tensor grid, where equivalent
    /// representations cancel at the coefficient level; resolves functional
    /// zero down to ~1e-15 * ||u|| at the cost of full-grid memory.
    pub fn distance_full_grid(&self, u: &BlockVector, w: &BlockVector) -> f64 {
        let mut du = self.to_full_grid(u);
        let dw = self.to_full_grid(w);
        du.zip_mut_with(&dw, |a, b| *a -= b);
        self.full_grid_norm(&du)
    }

    /// `||c||_{L2}` for coefficients on the full `(finest, finest)` grid.
    pub fn full_grid_norm(&self, c: &Array2<f64>) -> f64 {
        let l = self.finest;
        let mx = self.mass_x.get(l, l);
        let mv = self.mass_v.get(l, l);
        let (n1, n2) = c.dim();
        let cf = c.as_slice().unwrap();
        let mut tmp = vec![0.0; n1 * n2];
        mx.mul_dense(cf, n2, &mut tmp);
        // acc = sum_{i,j,k} tmp[i,j] Mv[j,k] c[i,k]
        let mut acc = 0.0;
        let mut mvc = vec![0.0; n2];
        for i in 0..n1 {
            let crow = &cf[i * n2..(i + 1) * n2];
            mv.matvec(crow, &mut mvc);
            let trow = &tmp[i * n2..(i + 1) * n2];
            acc += trow.iter().zip(&mvc).map(|(a, b)| a * b).sum::<f64>();
        }
        acc.max(0.0).sqrt()
    }
}

/// Quadrature points per direction used when integrating non-polynomial
/// exact solutions against the FE basis.
pub const ERROR_QUAD_POINTS: usize = 8;

/// Per-factor moment vectors `int g phi_k` of each rank-1 term of a separable
/// field, assembled on the finest grids and projected down, giving
/// `(u, exact)` for any block vector.
pub struct SeparableMoments {
    /// per rank-1 term: (x moments per level, v moments per level), level-indexed from 1
    terms: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl SeparableMoments {
    pub fn terms(&self) -> &[(Vec<Vec<f64>>, Vec<Vec<f64>>)] {
        &self.terms
    }

    pub fn new(
        space: &ProductSpace,
        field: &SeparableField,
        t: f64,
        finest: usize,
    ) -> Result<Self> {
        let mut terms = Vec::with_capacity(field.terms.len());
        for term in &field.terms {
            let tc = term.time_coeff(t);
            let mut mx = assemble_load(&space.x, finest, &term.x, t, ERROR_QUAD_POINTS)?;
            for v in &mut mx {
                *v *= tc;
            }
            let mv = assemble_load(&space.v, finest, &term.v, t, ERROR_QUAD_POINTS)?;
            let mut x_levels = vec![Vec::new(); finest + 1];
            let mut v_levels = vec![Vec::new(); finest + 1];
            for l in 1..finest {
                x_levels[l] = space.x.restrict(finest, l, &mx)?;
                v_levels[l] = space.v.restrict(finest, l, &mv)?;
            }
            x_levels[finest] = mx;
            v_levels[finest] = mv;
            terms.push((x_levels, v_levels));
        }
        Ok(SeparableMoments { terms })
    }

    /// `(u, field)_{L2(Omega)}` for a spatial block vector.
    pub fn inner_with(&self, u: &BlockVector) -> f64 {
        assert_eq!(u.time_dim, 1);
        let mut acc = 0.0;
        for (mx, mv) in &self.terms {
            for (pair, block) in u.pairs.iter().zip(&u.blocks) {
                let bx = &mx[pair.l1];
                let bv = &mv[pair.l2];
                let b2 = block.index_axis(ndarray::Axis(0), 0);
                for (k1, &a) in bx.iter().enumerate() {
                    if a != 0.0 {
                        let row = b2.row(k1);
                        acc += a * row.iter().zip(bv.iter()).map(|(u, m)| u * m).sum::<f64>();
                    }
                }
            }
        }
        acc
    }
}

/// Squared L2 norm of a separable field over the product domain, by per-factor
/// quadrature on the finest grids.
pub fn separable_norm_sq(
    space: &ProductSpace,
    field: &SeparableField,
    t: f64,
    finest: usize,
) -> f64 {
    let nq = ERROR_QUAD_POINTS;
    let mut acc = 0.0;
    for a in &field.terms {
        for b in &field.terms {
            let ca = a.time_coeff(t) * b.time_coeff(t);
            let ix = integrate_product(&space.x, finest, &a.x, &b.x, t, nq);
            let iv = integrate_product(&space.v, finest, &a.v, &b.v, t, nq);
            acc += ca * ix * iv;
        }
    }
    acc
}

/// Integral of `f * g` over the factor domain by per-cell quadrature.
pub fn integrate_product(
    space: &Arc<crate::fem::FactorSpace>,
    level: usize,
    f: &ScalarField,
    g: &ScalarField,
    t: f64,
    nq: usize,
) -> f64 {
    use crate::fem::QuadRule;
    let mesh = space.mesh(level);
    let dim = space.dim();
    let rule = QuadRule::gauss(nq);
    let h = mesh.edge();
    let mut acc = 0.0;
    let mut qidx = vec![0usize; dim];
    for cell in 0..mesh.num_cells() {
        let origin = mesh.cell_origin_physical(cell);
        qidx.fill(0);
        loop {
            let mut qw = h.powi(dim as i32);
            let mut point = [0.0f64; crate::fem::MAX_DIM];
            for a in 0..dim {
                qw *= rule.weights[qidx[a]];
                point[a] = origin[a] + rule.nodes[qidx[a]] * h;
            }
            let p = &point[..dim];
            acc += qw * f.eval(t, p) * g.eval(t, p);
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

/// Per-factor nodal samples of each rank-1 term at every level.
fn nodal_samples(
    space: &Arc<crate::fem::FactorSpace>,
    f: &ScalarField,
    t: f64,
    level: usize,
) -> Vec<f64> {
    space
        .node_positions(level)
        .iter()
        .map(|p| f.eval(t, &p[..space.dim()]))
        .collect()
}

/// Nodal sparse-grid interpolant of a separable field on the active set of
/// `level`, via the combination formula: the sum of nodal interpolants on
/// `|l|_1 = level + 1` minus the interpolants on `|l|_1 = level` embedded
/// along the first factor. Reproduces any function of the sparse space of
/// `level` exactly.
pub fn sparse_interpolant(
    space: &ProductSpace,
    field: &SeparableField,
    t: f64,
    level: usize,
) -> Result<BlockVector> {
    let mut out = BlockVector::zeros(space, level, 1);
    for term in &field.terms {
        let c = term.time_coeff(t);
        let gx: Vec<Vec<f64>> = (1..=level)
            .map(|l| nodal_samples(&space.x, &term.x, t, l))
            .collect();
        let gv: Vec<Vec<f64>> = (1..=level)
            .map(|l| nodal_samples(&space.v, &term.v, t, l))
            .collect();
        for &pair in &active_levels(level) {
            let block = out.block_mut(pair);
            let (bx, bv) = (&gx[pair.l1 - 1], &gv[pair.l2 - 1]);
            for (k1, &a) in bx.iter().enumerate() {
                for (k2, &b) in bv.iter().enumerate() {
                    block[(0, k1, k2)] += c * a * b;
                }
            }
        }
        // subtract the |l|_1 = level row, embedded into (l1 + 1, l2)
        for &pair in &precond_levels(level) {
            let target = LevelPair::new(pair.l1 + 1, pair.l2);
            let ex = space.x.embedding(pair.l1, pair.l1 + 1);
            let (bx, bv) = (&gx[pair.l1 - 1], &gv[pair.l2 - 1]);
            let mut ebx = vec![0.0; ex.nrows()];
            ex.matvec(bx, &mut ebx);
            let block = out.block_mut(target);
            for (k1, &a) in ebx.iter().enumerate() {
                if a != 0.0 {
                    for (k2, &b) in bv.iter().enumerate() {
                        block[(0, k1, k2)] -= c * a * b;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Re-represents a spatial block vector of level `L` on the active set of
/// `L + 1` by embedding each block along the first factor (exact).
pub fn refine_representation(space: &ProductSpace, u: &BlockVector) -> BlockVector {
    assert_eq!(u.time_dim, 1);
    let level = u.level + 1;
    let mut out = BlockVector::zeros(space, level, 1);
    for (pair, block) in u.pairs.iter().zip(&u.blocks) {
        let target = LevelPair::new(pair.l1 + 1, pair.l2);
        let ex = space.x.embedding(pair.l1, pair.l1 + 1);
        let (_, _, n2) = block.dim();
        let dst = out.block_mut(target);
        let mut tmp = vec![0.0; ex.nrows() * n2];
        ex.mul_dense(block.as_slice().unwrap(), n2, &mut tmp);
        for (d, s) in dst.as_slice_mut().unwrap().iter_mut().zip(&tmp) {
            *d += s;
        }
    }
    out
}

/// Relative and absolute L2 error of a spatial block vector of level `L`
/// against a separable exact solution: the vector is refined to the sparse
/// space of level `L + 1` and compared there with the nodal sparse-grid
/// interpolant of the exact solution. The difference forms at the coefficient
/// level, so no precision is lost to cancellation.
///
/// `metric` must be built with `finest >= L + 1`.
pub fn combine_error(
    metric: &L2Metric,
    u: &BlockVector,
    exact: &SeparableField,
    t: f64,
) -> Result<(f64, f64)> {
    let level = u.level + 1;
    assert!(
        metric.finest_level() >= level,
        "metric finest {} < refinement level {level}",
        metric.finest_level()
    );
    let interp = sparse_interpolant(&metric.space, exact, t, level)?;
    let mut e = refine_representation(&metric.space, u);
    e.axpy(-1.0, &interp);
    let abs = metric.norm_spatial(&e);
    let gg = metric.norm_spatial(&interp);
    let rel = if gg > 0.0 { abs / gg } else { abs };
    Ok((abs, rel))
}

/// Error against the exact solution by separable quadrature,
/// `||u - g||^2 = ||u||^2 - 2 (u, g) + ||g||^2`. Subject to a
/// sqrt(eps) * ||g|| cancellation floor; used as an independent cross-check
/// of [`combine_error`] at coarse levels.
pub fn combine_error_quadrature(
    metric: &L2Metric,
    u: &BlockVector,
    exact: &SeparableField,
    t: f64,
) -> Result<(f64, f64)> {
    let finest = metric.finest_level();
    let moments = SeparableMoments::new(&metric.space, exact, t, finest)?;
    let uu = metric.inner_spatial(u, u);
    let ug = moments.inner_with(u);
    let gg = separable_norm_sq(&metric.space, exact, t, finest);
    let abs = (uu - 2.0 * ug + gg).max(0.0).sqrt();
    let rel = if gg > 0.0 { abs / gg.sqrt() } else { abs };
    Ok((abs, rel))
}
