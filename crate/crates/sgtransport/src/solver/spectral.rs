//! Direct block solves for translation-invariant operators on periodic
//! tensor lattices. A sum of Kronecker terms whose spatial factors are all
//! cell-translation invariant block-diagonalizes under per-axis DFTs over the
//! cell indices, leaving one small dense complex system per Fourier mode
//! pair. Factorizations are stored in single precision; the outer Richardson
//! iteration absorbs the reduced accuracy.

use crate::error::{Error, Result};
use crate::fem::FactorSpace;
use crate::sparse::Csr;
use crate::tensor::KronTerm;
use num_complex::Complex32;

/// Description of one factor's periodic node lattice: per axis the cell count
/// `m_a`; node index = mixed-radix over axes (axis 0 outermost), each axis
/// split as `node = r * cell + alpha`.
#[derive(Debug, Clone)]
pub struct FactorLattice {
    pub dim: usize,
    pub order: usize,
    pub cells: Vec<usize>,
    /// node extent per axis = order * cells
    pub ext: Vec<usize>,
    /// node-index stride per axis (axis 0 outermost)
    pub strides: Vec<usize>,
    pub n: usize,
}

impl FactorLattice {
    /// Detects the lattice of a periodic single-box factor level; returns
    /// `None` for non-periodic or non-lattice numbering.
    pub fn detect(space: &FactorSpace, level: usize) -> Option<FactorLattice> {
        let mesh = space.mesh(level);
        let p = mesh.periodic()?;
        let dim = space.dim();
        let r = space.order();
        let cells: Vec<usize> = (0..dim).map(|a| p.cells_per_axis[a] as usize).collect();
        let ext: Vec<usize> = cells.iter().map(|&m| m * r).collect();
        let mut strides = vec![0usize; dim];
        let mut acc = 1usize;
        for a in (0..dim).rev() {
            strides[a] = acc;
            acc *= ext[a];
        }
        let n = acc;
        if n != space.num_dofs(level) {
            return None;
        }
        // verify the lexicographic numbering assumption
        let table = space.dof_table(level);
        for (dof, c) in table.node_coords.iter().enumerate() {
            let mut idx = 0usize;
            for a in 0..dim {
                idx += (c[a] as usize) * strides[a];
            }
            if idx != dof {
                return None;
            }
        }
        Some(FactorLattice { dim, order: r, cells, ext, strides, n })
    }

    fn intra_count(&self) -> usize {
        self.order.pow(self.dim as u32)
    }

    fn mode_count(&self) -> usize {
        self.cells.iter().product()
    }

    /// Splits a node index into (cell multi-index flat, intra multi-index flat).
    fn split(&self, node: usize) -> (usize, usize) {
        let mut rest = node;
        let (mut cell, mut intra) = (0usize, 0usize);
        for a in 0..self.dim {
            let j = rest / self.strides[a];
            rest %= self.strides[a];
            cell = cell * self.cells[a] + j / self.order;
            intra = intra * self.order + j % self.order;
        }
        (cell, intra)
    }

    fn cell_coords(&self, mut cell: usize) -> Vec<usize> {
        let mut c = vec![0usize; self.dim];
        for a in (0..self.dim).rev() {
            c[a] = cell % self.cells[a];
            cell /= self.cells[a];
        }
        c
    }
}

/// Symbol of a translation-invariant factor matrix: per cell mode a dense
/// `intra x intra` complex matrix.
fn factor_symbol(mat: &Csr, lat: &FactorLattice) -> Vec<Complex32> {
    let q = lat.intra_count();
    let modes = lat.mode_count();
    let mut out = vec![Complex32::new(0.0, 0.0); modes * q * q];
    // rows of cell 0: node indices with all cell coords 0
    let mut row_of_intra = vec![0usize; q];
    for (node, slot) in row_of_intra.iter_mut().enumerate().take(0) {
        let _ = (node, slot);
    }
    // enumerate intra combos and their node index in cell 0
    for intra in 0..q {
        let mut rest = intra;
        let mut node = 0usize;
        for a in (0..lat.dim).rev() {
            let alpha = rest % lat.order;
            rest /= lat.order;
            node += alpha * lat.strides[a];
        }
        row_of_intra[intra] = node;
    }
    let tau = std::f32::consts::TAU;
    for (ai, &row) in row_of_intra.iter().enumerate() {
        let (cols, vals) = mat.row(row);
        for (&col, &val) in cols.iter().zip(vals) {
            let (cell, aj) = lat.split(col as usize);
            let cc = lat.cell_coords(cell);
            // with the forward transform x_hat(k) = sum_c e^{-2 pi i k c / m} x(c),
            // the symbol of the cell-shift kernel carries the opposite phase:
            // sigma(k) = sum_s B(s) e^{+2 pi i k s / m}
            for mode in 0..modes {
                let kc = lat.cell_coords(mode);
                let mut phase = 0.0f32;
                for a in 0..lat.dim {
                    phase += tau * (kc[a] as f32) * (cc[a] as f32) / lat.cells[a] as f32;
                }
                let w = Complex32::new(phase.cos(), phase.sin());
                out[(mode * q + ai) * q + aj] += w * val as f32;
            }
        }
    }
    out
}

/// Blocked DFT matrices per axis (complex, forward with `exp(-2 pi i k c / m)`).
fn dft_matrix(m: usize, inverse: bool) -> Vec<Complex32> {
    let tau = std::f64::consts::TAU;
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = if inverse { 1.0 / m as f64 } else { 1.0 };
    let mut out = vec![Complex32::new(0.0, 0.0); m * m];
    for k in 0..m {
        for c in 0..m {
            let phase = sign * tau * (k as f64) * (c as f64) / m as f64;
            out[k * m + c] =
                Complex32::new((phase.cos() * scale) as f32, (phase.sin() * scale) as f32);
        }
    }
    out
}

/// Direct solver for one diagonal block.
pub struct SpectralSolver {
    lat_x: FactorLattice,
    lat_v: FactorLattice,
    time_dim: usize,
    /// per (mode_x, mode_v): LU factors of the dense complex block
    lu: Vec<Complex32>,
    piv: Vec<u16>,
    block: usize,
    dft_x: Vec<(usize, Vec<Complex32>, Vec<Complex32>)>,
    dft_v: Vec<(usize, Vec<Complex32>, Vec<Complex32>)>,
}

impl SpectralSolver {
    pub fn applicable(terms: &[KronTerm]) -> bool {
        !terms.is_empty() && terms.iter().all(|t| t.x_invariant && t.v_invariant)
    }

    pub fn build(
        terms: &[KronTerm],
        lat_x: FactorLattice,
        lat_v: FactorLattice,
        time_dim: usize,
    ) -> Result<Self> {
        let qx = lat_x.intra_count();
        let qv = lat_v.intra_count();
        let block = time_dim * qx * qv;
        let modes_x = lat_x.mode_count();
        let modes_v = lat_v.mode_count();
        let total = modes_x * modes_v;
        // per-term symbols
        let sym: Vec<(Vec<Complex32>, Vec<Complex32>)> = terms
            .iter()
            .map(|t| (factor_symbol(&t.x, &lat_x), factor_symbol(&t.v, &lat_v)))
            .collect();
        let mut lu = vec![Complex32::new(0.0, 0.0); total * block * block];
        let mut piv = vec![0u16; total * block];
        let mut work = vec![Complex32::new(0.0, 0.0); block * block];
        for kx in 0..modes_x {
            for kv in 0..modes_v {
                work.fill(Complex32::new(0.0, 0.0));
                for (term, (sx, sv)) in terms.iter().zip(&sym) {
                    let xs = &sx[kx * qx * qx..(kx + 1) * qx * qx];
                    let vs = &sv[kv * qv * qv..(kv + 1) * qv * qv];
                    for s in 0..time_dim {
                        for sp in 0..time_dim {
                            let tv = (term.scale * term.time[(s, sp)]) as f32;
                            if tv == 0.0 {
                                continue;
                            }
                            for i in 0..qx {
                                for ip in 0..qx {
                                    let xv = xs[i * qx + ip] * tv;
                                    if xv.norm_sqr() == 0.0 {
                                        continue;
                                    }
                                    for j in 0..qv {
                                        for jp in 0..qv {
                                            let row = (s * qx + i) * qv + j;
                                            let col = (sp * qx + ip) * qv + jp;
                                            work[row * block + col] += xv * vs[j * qv + jp];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let mode = kx * modes_v + kv;
                let lu_slice = &mut lu[mode * block * block..(mode + 1) * block * block];
                lu_slice.copy_from_slice(&work);
                lu_factor(lu_slice, &mut piv[mode * block..(mode + 1) * block], block)
                    .map_err(|_| Error::SingularBlock(0, 0))?;
            }
        }
        let dft_axes = |lat: &FactorLattice| {
            lat.cells
                .iter()
                .map(|&m| (m, dft_matrix(m, false), dft_matrix(m, true)))
                .collect::<Vec<_>>()
        };
        Ok(SpectralSolver {
            dft_x: dft_axes(&lat_x),
            dft_v: dft_axes(&lat_v),
            lat_x,
            lat_v,
            time_dim,
            lu,
            piv,
            block,
        })
    }

    /// Solves `A x = b` in place on the flattened real block (time, x, v).
    pub fn solve(&self, b: &mut [f64]) {
        let nx = self.lat_x.n;
        let nv = self.lat_v.n;
        let n = self.time_dim * nx * nv;
        debug_assert_eq!(b.len(), n);
        let mut buf: Vec<Complex32> =
            b.iter().map(|&x| Complex32::new(x as f32, 0.0)).collect();
        // forward transforms: x axes act with stride (order * stride_a * nv),
        // v axes with stride (order * stride_a)
        self.transform(&mut buf, false);
        // per-mode solves
        let (qx, qv) = (self.lat_x.intra_count(), self.lat_v.intra_count());
        let modes_v = self.lat_v.mode_count();
        let mut rhs = vec![Complex32::new(0.0, 0.0); self.block];
        let mut gather = vec![0usize; self.block];
        for kx in 0..self.lat_x.mode_count() {
            for kv in 0..modes_v {
                let mode = kx * modes_v + kv;
                // gather positions for all (s, intra_x, intra_v)
                let mut slot = 0usize;
                for s in 0..self.time_dim {
                    for ix in 0..qx {
                        let xn = self.node_of(&self.lat_x, kx, ix);
                        for iv in 0..qv {
                            let vn = self.node_of(&self.lat_v, kv, iv);
                            gather[slot] = (s * nx + xn) * nv + vn;
                            slot += 1;
                        }
                    }
                }
                for (r, &g) in rhs.iter_mut().zip(gather.iter()) {
                    *r = buf[g];
                }
                lu_solve(
                    &self.lu[mode * self.block * self.block..(mode + 1) * self.block * self.block],
                    &self.piv[mode * self.block..(mode + 1) * self.block],
                    &mut rhs,
                    self.block,
                );
                for (&g, &r) in gather.iter().zip(rhs.iter()) {
                    buf[g] = r;
                }
            }
        }
        self.transform(&mut buf, true);
        for (o, c) in b.iter_mut().zip(&buf) {
            *o = c.re as f64;
        }
    }

    /// Node index within a factor holding (cell-mode k, intra i) after the
    /// in-place per-axis transforms: the transforms keep the (cell, intra)
    /// interleave, with mode index in place of the cell index.
    fn node_of(&self, lat: &FactorLattice, mode: usize, intra: usize) -> usize {
        let kc = lat.cell_coords(mode);
        let mut rest = intra;
        let mut node = 0usize;
        for a in (0..lat.dim).rev() {
            let alpha = rest % lat.order;
            rest /= lat.order;
            node += (kc[a] * lat.order + alpha) * lat.strides[a];
        }
        node
    }

    fn transform(&self, buf: &mut [Complex32], inverse: bool) {
        let nv = self.lat_v.n;
        // x axes: stride in the flattened (time, x, v) layout
        for (a, (m, fwd, inv)) in self.dft_x.iter().enumerate() {
            let mat = if inverse { inv } else { fwd };
            let stride = self.lat_x.order * self.lat_x.strides[a] * nv;
            axis_transform(buf, *m, stride, mat);
        }
        for (a, (m, fwd, inv)) in self.dft_v.iter().enumerate() {
            let mat = if inverse { inv } else { fwd };
            let stride = self.lat_v.order * self.lat_v.strides[a];
            axis_transform(buf, *m, stride, mat);
        }
    }
}

/// In-place dense DFT along one strided axis: for every arithmetic
/// progression `base, base + stride, ..., base + (m-1) stride` whose indices
/// decompose accordingly, applies the `m x m` matrix.
fn axis_transform(buf: &mut [Complex32], m: usize, stride: usize, mat: &[Complex32]) {
    let n = buf.len();
    let span = m * stride;
    let mut scratch = vec![Complex32::new(0.0, 0.0); m];
    let mut base = 0usize;
    while base < n {
        // the index set {base + t * stride} for t in 0..m tiles [base_block)
        for off in 0..stride {
            let start = base + off;
            for (t, s) in scratch.iter_mut().enumerate() {
                *s = buf[start + t * stride];
            }
            for k in 0..m {
                let mut acc = Complex32::new(0.0, 0.0);
                let row = &mat[k * m..(k + 1) * m];
                for (t, s) in scratch.iter().enumerate() {
                    acc += row[t] * s;
                }
                buf[start + k * stride] = acc;
            }
        }
        base += span;
    }
}

/// Partial-pivot LU of a dense complex matrix stored row-major.
fn lu_factor(a: &mut [Complex32], piv: &mut [u16], n: usize) -> std::result::Result<(), ()> {
    for k in 0..n {
        let mut p = k;
        let mut best = a[k * n + k].norm_sqr();
        for i in k + 1..n {
            let v = a[i * n + k].norm_sqr();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return Err(());
        }
        piv[k] = p as u16;
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
        }
        let inv = a[k * n + k].inv();
        for i in k + 1..n {
            let l = a[i * n + k] * inv;
            a[i * n + k] = l;
            if l.norm_sqr() != 0.0 {
                for j in k + 1..n {
                    let akj = a[k * n + j];
                    a[i * n + j] -= l * akj;
                }
            }
        }
    }
    Ok(())
}

fn lu_solve(a: &[Complex32], piv: &[u16], b: &mut [Complex32], n: usize) {
    // all row interchanges first (the stored L refers to the fully permuted
    // row order), then clean forward and backward substitution
    for k in 0..n {
        let p = piv[k] as usize;
        if p != k {
            b.swap(k, p);
        }
    }
    for k in 0..n {
        let bk = b[k];
        if bk.norm_sqr() != 0.0 {
            for i in k + 1..n {
                b[i] -= a[i * n + k] * bk;
            }
        }
    }
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in i + 1..n {
            acc -= a[i * n + j] * b[j];
        }
        b[i] = acc / a[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_mass, assemble_directional_advection, BoxMesh, FactorSpace, ScalarField};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn lattice_space(dim: usize, cells: usize, order: usize) -> Arc<FactorSpace> {
        let bounds: Vec<(f64, f64)> = (0..dim).map(|_| (0.0, 1.0)).collect();
        let cc: Vec<usize> = (0..dim).map(|_| cells).collect();
        let mesh = BoxMesh::box_domain(dim, &bounds, &cc, true).unwrap();
        Arc::new(FactorSpace::build(mesh, order, 2).unwrap())
    }

    #[test]
    fn lattice_detection() {
        for (dim, order) in [(1usize, 1usize), (1, 2), (2, 1), (2, 2)] {
            let s = lattice_space(dim, 4, order);
            let lat = FactorLattice::detect(&s, 2).expect("lattice");
            assert_eq!(lat.n, s.num_dofs(2));
            assert_eq!(lat.cells, vec![8; dim]);
        }
        // non-periodic: no lattice
        let mesh = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[4], false).unwrap();
        let s = Arc::new(FactorSpace::build(mesh, 1, 1).unwrap());
        assert!(FactorLattice::detect(&s, 1).is_none());
    }

    #[test]
    fn spectral_solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for (dim, order) in [(1usize, 1usize), (1, 2), (2, 1)] {
            let sx = lattice_space(dim, 2, order);
            let sv = lattice_space(dim, 2, order);
            let (lx, lv) = (2usize, 1usize);
            let mx = assemble_mass(&sx, lx, &ScalarField::one(), 0.0).unwrap();
            let mv = assemble_mass(&sv, lv, &ScalarField::one(), 0.0).unwrap();
            let dirs: Vec<(usize, f64)> = (0..dim).map(|a| (a, 1.0)).collect();
            let ax = assemble_directional_advection(&sx, lx, &dirs, &ScalarField::one(), 0.0).unwrap();
            let av = assemble_directional_advection(&sv, lv, &dirs, &ScalarField::one(), 0.0).unwrap();
            let td = 2usize;
            let t1 = Array2::from_shape_fn((td, td), |(i, j)| {
                if i == j { 2.0 + i as f64 } else { 0.3 }
            });
            let t2 = Array2::from_shape_fn((td, td), |_| rng.random::<f64>() * 0.2);
            let t3 = Array2::from_shape_fn((td, td), |_| rng.random::<f64>() * 0.1);
            let terms = vec![
                KronTerm::new(1.0, t1, mx.mat.clone(), mv.mat.clone()).with_invariance(true, true),
                KronTerm::new(0.5, t2, ax.mat.clone(), av.mat.clone()).with_invariance(true, true),
                KronTerm::new(1.0, t3, ax.mat.clone(), mv.mat.clone()).with_invariance(true, true),
            ];
            assert!(SpectralSolver::applicable(&terms));
            let lat_x = FactorLattice::detect(&sx, lx).unwrap();
            let lat_v = FactorLattice::detect(&sv, lv).unwrap();
            let solver = SpectralSolver::build(&terms, lat_x, lat_v, td).unwrap();
            // dense reference
            let (nx, nv) = (mx.mat.nrows(), mv.mat.nrows());
            let n = td * nx * nv;
            let (dx1, dv1) = (mx.mat.to_dense(), mv.mat.to_dense());
            let (dx2, dv2) = (ax.mat.to_dense(), av.mat.to_dense());
            let mut dense = vec![0.0f64; n * n];
            for (ti, xd, vd, sc) in [
                (&terms[0].time, &dx1, &dv1, 1.0f64),
                (&terms[1].time, &dx2, &dv2, 0.5),
                (&terms[2].time, &dx2, &dv1, 1.0),
            ] {
                for s in 0..td {
                    for sp in 0..td {
                        for i in 0..nx {
                            for ip in 0..nx {
                                for j in 0..nv {
                                    for jp in 0..nv {
                                        let row = (s * nx + i) * nv + j;
                                        let col = (sp * nx + ip) * nv + jp;
                                        dense[row * n + col] +=
                                            sc * ti[(s, sp)] * xd[i * nx + ip] * vd[j * nv + jp];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut x = b.clone();
            solver.solve(&mut x);
            // residual of the f32 solve against the f64 dense operator
            let mut res = 0.0f64;
            let mut bn = 0.0f64;
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += dense[i * n + j] * x[j];
                }
                res += (acc - b[i]).powi(2);
                bn += b[i].powi(2);
            }
            let rel = (res / bn).sqrt();
            assert!(rel < 5e-5, "dim {dim} order {order}: rel residual {rel}");
        }
    }
}

#[cfg(test)]
mod debug_tests {
    use super::*;
    use crate::fem::{assemble_mass, BoxMesh, FactorSpace, ScalarField};
    use num_complex::Complex64;
    use std::sync::Arc;

    #[test]
    fn complex_lu_roundtrip() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        for n in [1usize, 2, 3, 5, 8] {
            let a: Vec<Complex32> = (0..n * n)
                .map(|_| Complex32::new(rng.random::<f32>() - 0.5, rng.random::<f32>() - 0.5))
                .collect();
            let b: Vec<Complex32> = (0..n)
                .map(|_| Complex32::new(rng.random::<f32>() - 0.5, rng.random::<f32>() - 0.5))
                .collect();
            let mut lu = a.clone();
            let mut piv = vec![0u16; n];
            lu_factor(&mut lu, &mut piv, n).unwrap();
            let mut x = b.clone();
            lu_solve(&lu, &piv, &mut x, n);
            for i in 0..n {
                let mut acc = Complex32::new(0.0, 0.0);
                for j in 0..n {
                    acc += a[i * n + j] * x[j];
                }
                assert!((acc - b[i]).norm() < 1e-4, "n={n} row {i}: {acc} vs {}", b[i]);
            }
        }
    }

    #[test]
    fn solve_pure_mass_r2() {
        use ndarray::Array2;
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mx_mesh = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[2], true).unwrap();
        let sx = Arc::new(FactorSpace::build(mx_mesh, 2, 1).unwrap());
        let mv_mesh = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[2], true).unwrap();
        let sv = Arc::new(FactorSpace::build(mv_mesh, 1, 1).unwrap());
        let ax = assemble_mass(&sx, 1, &ScalarField::one(), 0.0).unwrap();
        let av = assemble_mass(&sv, 1, &ScalarField::one(), 0.0).unwrap();
        let latx = FactorLattice::detect(&sx, 1).unwrap();
        let latv = FactorLattice::detect(&sv, 1).unwrap();
        let terms = vec![crate::tensor::KronTerm::new(
            1.0,
            Array2::eye(1),
            ax.mat.clone(),
            av.mat.clone(),
        )
        .with_invariance(true, true)];
        let solver = SpectralSolver::build(&terms, latx, latv, 1).unwrap();
        let (nx, nv) = (ax.mat.nrows(), av.mat.nrows());
        let n = nx * nv;
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut x = b.clone();
        solver.solve(&mut x);
        // residual against the dense kron
        let (dx, dv) = (ax.mat.to_dense(), av.mat.to_dense());
        let mut worst = 0.0f64;
        for i in 0..nx {
            for j in 0..nv {
                let mut acc = 0.0;
                for ip in 0..nx {
                    for jp in 0..nv {
                        acc += dx[i * nx + ip] * dv[j * nv + jp] * x[ip * nv + jp];
                    }
                }
                worst = worst.max((acc - b[i * nv + j]).abs());
            }
        }
        assert!(worst < 1e-5, "worst residual {worst}");
    }

    #[test]
    fn solve_r2_bisect() {
        use ndarray::Array2;
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        use crate::fem::assemble_directional_advection;
        let mut rng = ChaCha8Rng::seed_from_u64(98);
        let sx = {
            let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[2], true).unwrap();
            Arc::new(FactorSpace::build(m, 2, 2).unwrap())
        };
        let sv = {
            let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[2], true).unwrap();
            Arc::new(FactorSpace::build(m, 2, 1).unwrap())
        };
        let (lx, lv) = (2usize, 1usize);
        let mx = assemble_mass(&sx, lx, &ScalarField::one(), 0.0).unwrap();
        let mv = assemble_mass(&sv, lv, &ScalarField::one(), 0.0).unwrap();
        let ax = assemble_directional_advection(&sx, lx, &[(0, 1.0)], &ScalarField::one(), 0.0).unwrap();
        let av = assemble_directional_advection(&sv, lv, &[(0, 1.0)], &ScalarField::one(), 0.0).unwrap();
        let latx = FactorLattice::detect(&sx, lx).unwrap();
        let latv = FactorLattice::detect(&sv, lv).unwrap();
        let (nx, nv) = (mx.mat.nrows(), mv.mat.nrows());
        for (name, td, parts) in [
            ("mass td1", 1usize, vec![(&mx, &mv, 1.0f64)]),
            ("mass+adv td1", 1, vec![(&mx, &mv, 1.0), (&ax, &mv, 0.3)]),
            ("mass+advv td1", 1, vec![(&mx, &mv, 1.0), (&mx, &av, 0.3)]),
            ("mass td2", 2, vec![(&mx, &mv, 1.0)]),
            ("all td2", 2, vec![(&mx, &mv, 1.0), (&ax, &mv, 0.3), (&mx, &av, 0.2)]),
        ] {
            let terms: Vec<crate::tensor::KronTerm> = parts
                .iter()
                .map(|(a, b, s)| {
                    crate::tensor::KronTerm::new(
                        *s,
                        Array2::from_shape_fn((td, td), |(i, j)| if i == j { 1.0 } else { 0.2 }),
                        a.mat.clone(),
                        b.mat.clone(),
                    )
                    .with_invariance(true, true)
                })
                .collect();
            let solver = SpectralSolver::build(&terms, latx.clone(), latv.clone(), td).unwrap();
            let n = td * nx * nv;
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut x = b.clone();
            solver.solve(&mut x);
            // dense residual
            let denses: Vec<(Vec<f64>, Vec<f64>, f64, Array2<f64>)> = parts
                .iter()
                .zip(&terms)
                .map(|((a, bb, s), t)| (a.mat.to_dense(), bb.mat.to_dense(), *s, t.time.clone()))
                .collect();
            let mut worst = 0.0f64;
            for s in 0..td {
                for i in 0..nx {
                    for j in 0..nv {
                        let mut acc = 0.0;
                        for (da, dbm, sc, tm) in &denses {
                            for sp in 0..td {
                                for ip in 0..nx {
                                    for jp in 0..nv {
                                        acc += sc * tm[(s, sp)] * da[i * nx + ip] * dbm[j * nv + jp]
                                            * x[(sp * nx + ip) * nv + jp];
                                    }
                                }
                            }
                        }
                        worst = worst.max((acc - b[(s * nx + i) * nv + j]).abs());
                    }
                }
            }
            assert!(worst < 1e-4, "{name}: worst residual {worst}");
        }
    }

    #[test]
    fn symbol_matches_dense_similarity_r2() {
        // single 1d factor, r = 2, m = 4 cells periodic, nonsymmetric matrix
        let mesh = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[4], true).unwrap();
        let s = Arc::new(FactorSpace::build(mesh, 2, 1).unwrap());
        let lat = FactorLattice::detect(&s, 1).unwrap();
        let a = crate::fem::assemble_directional_advection(&s, 1, &[(0, 1.0)], &ScalarField::one(), 0.0).unwrap();
        let n = a.mat.nrows();
        let (m, q) = (lat.mode_count(), lat.intra_count());
        assert_eq!(n, m * q);
        let sym = factor_symbol(&a.mat, &lat);
        // dense similarity: F_blk A F_blk^{-1}
        let d = a.mat.to_dense();
        let tau = std::f64::consts::TAU;
        let mut fa = vec![Complex64::new(0.0, 0.0); n * n];
        // F_blk[(k,alpha),(c,alpha')] = delta_{alpha alpha'} e^{-i tau k c / m}
        for k in 0..m {
            for alpha in 0..q {
                let row = k * q + alpha;
                for c in 0..m {
                    for cp in 0..n {
                        let w = Complex64::from_polar(1.0, -tau * (k * c) as f64 / m as f64);
                        fa[row * n + cp] += w * d[(c * q + alpha) * n + cp];
                    }
                }
            }
        }
        let mut faf = vec![Complex64::new(0.0, 0.0); n * n];
        for row in 0..n {
            for kp in 0..m {
                for alphap in 0..q {
                    let col = kp * q + alphap;
                    for c in 0..m {
                        let w = Complex64::from_polar(1.0, tau * (kp * c) as f64 / m as f64)
                            / m as f64;
                        faf[row * n + col] += fa[row * n + c * q + alphap] * w;
                    }
                }
            }
        }
        // block diagonality + per-mode block equals sym
        for k in 0..m {
            for kp in 0..m {
                for i in 0..q {
                    for j in 0..q {
                        let v = faf[(k * q + i) * n + kp * q + j];
                        if k != kp {
                            assert!(v.norm() < 1e-12, "off-diagonal block ({k},{kp}) entry {v}");
                        } else {
                            let sv = sym[(k * q + i) * q + j];
                            assert!(
                                (v.re - sv.re as f64).abs() < 1e-6
                                    && (v.im - sv.im as f64).abs() < 1e-6,
                                "mode {k} entry ({i},{j}): dense {v} vs symbol {sv}"
                            );
                        }
                    }
                }
            }
        }
    }
}
