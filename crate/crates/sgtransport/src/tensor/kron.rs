//! Sum-of-Kronecker block operators and their ordered, log-linear
//! application. To avoid materializing full-grid intermediates, the factor
//! order depends on the level pair: for target `l`, source `l'`, the v factor
//! is applied first when `l1' + l2 <= l1 + l2'`, otherwise the x factor; the
//! time factor is applied in between and the remaining spatial factor streams
//! directly into the accumulator.

use super::block::BlockVector;
use super::levels::LevelPair;
use crate::sparse::Csr;
use ndarray::{Array2, Array3};
use std::collections::HashMap;
use std::sync::Arc;

/// One Kronecker term `scale * (time (x) x_part (x) v_part)`.
#[derive(Clone)]
pub struct KronTerm {
    pub scale: f64,
    /// dense `(time_out, time_in)` factor
    pub time: Array2<f64>,
    pub x: Arc<Csr>,
    pub v: Arc<Csr>,
    /// translation invariance of the spatial parts on periodic lattices
    /// (enables direct spectral block solves)
    pub x_invariant: bool,
    pub v_invariant: bool,
}

impl KronTerm {
    pub fn new(scale: f64, time: Array2<f64>, x: Arc<Csr>, v: Arc<Csr>) -> Self {
        KronTerm { scale, time, x, v, x_invariant: false, v_invariant: false }
    }

    pub fn with_invariance(mut self, x_invariant: bool, v_invariant: bool) -> Self {
        self.x_invariant = x_invariant;
        self.v_invariant = v_invariant;
        self
    }

    pub fn out_shape(&self) -> (usize, usize, usize) {
        (self.time.dim().0, self.x.nrows(), self.v.nrows())
    }

    pub fn in_shape(&self) -> (usize, usize, usize) {
        (self.time.dim().1, self.x.ncols(), self.v.ncols())
    }
}

/// Reusable scratch for term application; records the peak buffer demand so
/// tests can assert the intermediate-size bound.
#[derive(Default)]
pub struct ApplyScratch {
    buf1: Vec<f64>,
    buf2: Vec<f64>,
    pub peak_intermediate: usize,
}

impl ApplyScratch {
    /// Grows both buffers and returns `(buf1[..len1], buf2[..len2])`.
    fn split(&mut self, len1: usize, len2: usize) -> (&mut [f64], &mut [f64]) {
        self.peak_intermediate = self.peak_intermediate.max(len1).max(len2);
        if self.buf1.len() < len1 {
            self.buf1.resize(len1, 0.0);
        }
        if self.buf2.len() < len2 {
            self.buf2.resize(len2, 0.0);
        }
        (&mut self.buf1[..len1], &mut self.buf2[..len2])
    }
}

/// `out += scale * (T (x) X (x) V) u` for one term, choosing the factor order
/// from the level pair as described in the module docs.
pub fn apply_kron_term(
    term: &KronTerm,
    target: LevelPair,
    source: LevelPair,
    u: &Array3<f64>,
    out: &mut Array3<f64>,
    scratch: &mut ApplyScratch,
) {
    let (tin, n1s, n2s) = u.dim();
    let (tout, n1t, n2t) = out.dim();
    debug_assert_eq!(term.time.dim(), (tout, tin));
    debug_assert_eq!((term.x.nrows(), term.x.ncols()), (n1t, n1s));
    debug_assert_eq!((term.v.nrows(), term.v.ncols()), (n2t, n2s));
    let uflat = u.as_slice().unwrap();
    let oflat = out.as_slice_mut().unwrap();
    let v_first = source.l1 + target.l2 <= target.l1 + source.l2;
    if v_first {
        // 1) v along the last axis: (tin, n1s, n2s) -> (tin, n1s, n2t)
        // 2) time: (tin, n1s, n2t) -> (tout, n1s, n2t)
        let (b1, b2) = scratch.split(tin * n1s * n2t, tout * n1s * n2t);
        term.v.mul_dense_rhs(uflat, tin * n1s, b1);
        apply_time(&term.time, term.scale, b1, n1s * n2t, b2);
        // 3) x streamed into out: out[s, i, :] += X[i, k] * b2[s, k, :]
        for s in 0..tout {
            let src = &b2[s * n1s * n2t..(s + 1) * n1s * n2t];
            let dst = &mut oflat[s * n1t * n2t..(s + 1) * n1t * n2t];
            for i in 0..n1t {
                let (cols, vals) = term.x.row(i);
                let drow = &mut dst[i * n2t..(i + 1) * n2t];
                for (&k, &a) in cols.iter().zip(vals) {
                    let srow = &src[k as usize * n2t..(k as usize + 1) * n2t];
                    for (d, s) in drow.iter_mut().zip(srow) {
                        *d += a * s;
                    }
                }
            }
        }
    } else {
        // 1) x along the middle axis: (tin, n1s, n2s) -> (tin, n1t, n2s)
        // 2) time
        let (b1, b2) = scratch.split(tin * n1t * n2s, tout * n1t * n2s);
        for s in 0..tin {
            let src = &uflat[s * n1s * n2s..(s + 1) * n1s * n2s];
            let dst = &mut b1[s * n1t * n2s..(s + 1) * n1t * n2s];
            term.x.mul_dense(src, n2s, dst);
        }
        apply_time(&term.time, term.scale, b1, n1t * n2s, b2);
        // 3) v streamed into out: out[s, i, j] += V[j, k] * b2[s, i, k]
        for s in 0..tout {
            for i in 0..n1t {
                let src = &b2[(s * n1t + i) * n2s..(s * n1t + i + 1) * n2s];
                let dst = &mut oflat[(s * n1t + i) * n2t..(s * n1t + i + 1) * n2t];
                for (j, d) in dst.iter_mut().enumerate() {
                    let (cols, vals) = term.v.row(j);
                    let mut acc = 0.0;
                    for (&k, &a) in cols.iter().zip(vals) {
                        acc += a * src[k as usize];
                    }
                    *d += acc;
                }
            }
        }
    }
}

/// Merges Kronecker terms sharing the same spatial factor pair by summing
/// their (scaled) time matrices.
pub fn coalesce_terms(terms: &mut Vec<KronTerm>) {
    let mut merged: Vec<KronTerm> = Vec::with_capacity(terms.len());
    for term in terms.drain(..) {
        if let Some(m) = merged
            .iter_mut()
            .find(|m| Arc::ptr_eq(&m.x, &term.x) && Arc::ptr_eq(&m.v, &term.v))
        {
            // merged entries are normalized to scale 1
            let s = term.scale;
            m.time.zip_mut_with(&term.time, |a, b| *a += s * b);
        } else {
            let mut t = term.clone();
            if t.scale != 1.0 {
                t.time.mapv_inplace(|x| x * t.scale);
                t.scale = 1.0;
            }
            merged.push(t);
        }
    }
    *terms = merged;
}

fn apply_time(t: &Array2<f64>, scale: f64, src: &[f64], slab: usize, dst: &mut [f64]) {
    let (tout, tin) = t.dim();
    dst.fill(0.0);
    for so in 0..tout {
        let drow = &mut dst[so * slab..(so + 1) * slab];
        for si in 0..tin {
            let c = scale * t[(so, si)];
            if c != 0.0 {
                let srow = &src[si * slab..(si + 1) * slab];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += c * s;
                }
            }
        }
    }
}

/// Predicted scratch bound for a term application (the spec-level invariant):
/// `max(n1(l1) n2(l2'), n1(l1') n2(l2)) * max(time_out, time_in)`.
pub fn intermediate_bound(
    target: LevelPair,
    source: LevelPair,
    dims_t: (usize, usize),
    dims_s: (usize, usize),
    time_dim: usize,
) -> usize {
    let _ = (target, source);
    let (n1t, n2t) = dims_t;
    let (n1s, n2s) = dims_s;
    (n1t * n2s).max(n1s * n2t) * time_dim
}

/// Block operator on the active set: per (target, source) pair a list of
/// Kronecker terms.
pub struct KronOperator {
    pub level: usize,
    pub time_out: usize,
    pub time_in: usize,
    pub pairs: Vec<LevelPair>,
    pub blocks: HashMap<(LevelPair, LevelPair), Vec<KronTerm>>,
}

impl KronOperator {
    pub fn new(level: usize, time_out: usize, time_in: usize, pairs: Vec<LevelPair>) -> Self {
        KronOperator { level, time_out, time_in, pairs, blocks: HashMap::new() }
    }

    pub fn push(&mut self, target: LevelPair, source: LevelPair, term: KronTerm) {
        self.blocks.entry((target, source)).or_default().push(term);
    }

    /// Merges terms sharing the same spatial factor pair by summing their
    /// (scaled) time factors; cuts application cost roughly in half.
    pub fn coalesce(&mut self) {
        for terms in self.blocks.values_mut() {
            coalesce_terms(terms);
        }
    }

    /// `out = A u` blockwise: `[A u]_l = sum_{l'} A_{l,l'} u_{l'}`.
    pub fn apply(&self, u: &BlockVector) -> BlockVector {
        assert_eq!(u.level, self.level, "operator/vector level mismatch");
        assert_eq!(u.time_dim, self.time_in);
        let mut out = BlockVector {
            level: self.level,
            time_dim: self.time_out,
            pairs: self.pairs.clone(),
            blocks: self
                .pairs
                .iter()
                .map(|&p| {
                    let some = self
                        .blocks
                        .iter()
                        .find(|((t, _), v)| *t == p && !v.is_empty())
                        .map(|(_, v)| v[0].out_shape());
                    let (n1, n2) = some.map(|(_, a, b)| (a, b)).unwrap_or_else(|| {
                        let q = u.block(p).dim();
                        (q.1, q.2)
                    });
                    Array3::zeros((self.time_out, n1, n2))
                })
                .collect(),
            strip: u.strip,
        };
        self.apply_into(u, &mut out);
        out
    }

    pub fn apply_into(&self, u: &BlockVector, out: &mut BlockVector) {
        use rayon::prelude::*;
        let pairs = &self.pairs;
        out.blocks
            .par_iter_mut()
            .zip(pairs.par_iter())
            .for_each(|(ob, &target)| {
                ob.fill(0.0);
                let mut scratch = ApplyScratch::default();
                for &source in pairs.iter() {
                    if let Some(terms) = self.blocks.get(&(target, source)) {
                        for term in terms {
                            apply_kron_term(term, target, source, u.block(source), ob, &mut scratch);
                        }
                    }
                }
            });
    }
}
