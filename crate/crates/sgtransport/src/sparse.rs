//! Minimal CSR sparse matrix layer plus the iterative kernels (ILU(0), GMRES)
//! used for the anisotropic-grid block solves.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with `f64` entries and sorted column indices
/// per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    data: Vec<f64>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    /// Builds from (row, col, value) triplets; duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            debug_assert!(r < nrows);
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0u32; triplets.len()];
        let mut vals = vec![0f64; triplets.len()];
        let mut fill = counts.clone();
        for &(r, c, v) in triplets {
            debug_assert!(c < ncols);
            let p = fill[r];
            cols[p] = c as u32;
            vals[p] = v;
            fill[r] += 1;
        }
        // sort each row by column and merge duplicates
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(u32, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend(
                cols[counts[r]..counts[r + 1]].iter().copied().zip(vals[counts[r]..counts[r + 1]].iter().copied()),
            );
            scratch.sort_unstable_by_key(|&(c, _)| c);
            let mut last: Option<u32> = None;
            for &(c, v) in scratch.iter() {
                if last == Some(c) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr[r + 1] = indices.len();
        }
        Csr { nrows, ncols, indptr, indices, data }
    }

    pub fn identity(n: usize) -> Self {
        Csr {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for p in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[p] * x[self.indices[p] as usize];
            }
            y[r] = acc;
        }
    }

    /// `y += A x`
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for p in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[p] * x[self.indices[p] as usize];
            }
            y[r] += acc;
        }
    }

    /// `y = A^T x` accumulated into `y` (caller zeroes first if needed).
    pub fn matvec_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for p in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[p] as usize] += self.data[p] * xr;
            }
        }
    }

    /// Dense product `Y = A X` where `X` is row-major `ncols x k` and `Y` is
    /// row-major `nrows x k`. The row-major layout lets each CSR entry update
    /// a contiguous slice of `Y`.
    pub fn mul_dense(&self, x: &[f64], k: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols * k);
        debug_assert_eq!(y.len(), self.nrows * k);
        y.fill(0.0);
        for r in 0..self.nrows {
            let yrow = &mut y[r * k..(r + 1) * k];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let a = self.data[p];
                let xrow = &x[self.indices[p] as usize * k..(self.indices[p] as usize + 1) * k];
                for (yi, xi) in yrow.iter_mut().zip(xrow) {
                    *yi += a * xi;
                }
            }
        }
    }

    /// Dense product from the right: `Y = X A^T`, with `X` row-major `k x ncols`
    /// interpreted so that `Y[i, r] = sum_c X[i, c] A[r, c]`. Equivalent to
    /// applying `A` along the *last* axis of a row-major batch.
    pub fn mul_dense_rhs(&self, x: &[f64], k: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols * k);
        debug_assert_eq!(y.len(), self.nrows * k);
        for i in 0..k {
            let xrow = &x[i * self.ncols..(i + 1) * self.ncols];
            let yrow = &mut y[i * self.nrows..(i + 1) * self.nrows];
            for r in 0..self.nrows {
                let mut acc = 0.0;
                for p in self.indptr[r]..self.indptr[r + 1] {
                    acc += self.data[p] * xrow[self.indices[p] as usize];
                }
                yrow[r] = acc;
            }
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let mut indices = vec![0u32; self.nnz()];
        let mut data = vec![0f64; self.nnz()];
        let mut fill = counts.clone();
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[p] as usize;
                indices[fill[c]] = r as u32;
                data[fill[c]] = self.data[p];
                fill[c] += 1;
            }
        }
        Csr { nrows: self.ncols, ncols: self.nrows, indptr: counts, indices, data }
    }

    /// Sparse-sparse product `A B` (Gustavson's algorithm).
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows, "matmul shape mismatch");
        let n = other.ncols;
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices: Vec<u32> = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        let mut marker = vec![usize::MAX; n];
        let mut accum = vec![0f64; n];
        let mut row_cols: Vec<u32> = Vec::new();
        for r in 0..self.nrows {
            row_cols.clear();
            for p in self.indptr[r]..self.indptr[r + 1] {
                let a = self.data[p];
                let k = self.indices[p] as usize;
                for q in other.indptr[k]..other.indptr[k + 1] {
                    let c = other.indices[q] as usize;
                    if marker[c] != r {
                        marker[c] = r;
                        accum[c] = 0.0;
                        row_cols.push(c as u32);
                    }
                    accum[c] += a * other.data[q];
                }
            }
            row_cols.sort_unstable();
            for &c in row_cols.iter() {
                indices.push(c);
                data.push(accum[c as usize]);
            }
            indptr[r + 1] = indices.len();
        }
        Csr { nrows: self.nrows, ncols: n, indptr, indices, data }
    }

    /// Entrywise sum `self + alpha * other` (shapes must match).
    pub fn add_scaled(&self, alpha: f64, other: &Csr) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut data = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let (c, v) = if j >= cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    let e = (ca[i], va[i]);
                    i += 1;
                    e
                } else if i >= ca.len() || cb[j] < ca[i] {
                    let e = (cb[j], alpha * vb[j]);
                    j += 1;
                    e
                } else {
                    let e = (ca[i], va[i] + alpha * vb[j]);
                    i += 1;
                    j += 1;
                    e
                };
                indices.push(c);
                data.push(v);
            }
            indptr[r + 1] = indices.len();
        }
        Csr { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }

    /// Drops entries with `|a_ij| <= tol` (keeps the matrix shape).
    pub fn pruned(&self, tol: f64) -> Csr {
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                if self.data[p].abs() > tol {
                    indices.push(self.indices[p]);
                    data.push(self.data[p]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        Csr { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows * self.ncols];
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                out[r * self.ncols + self.indices[p] as usize] += self.data[p];
            }
        }
        out
    }

    /// Galerkin triple product `R A P` with `R = left`, `P = right`.
    pub fn triple_product(left: &Csr, a: &Csr, right: &Csr) -> Csr {
        left.matmul(a).matmul(right)
    }

    /// Column sums (used by partition-of-unity checks).
    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                s[self.indices[p] as usize] += self.data[p];
            }
        }
        s
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Zero-fill ILU factorization sharing the sparsity pattern of `A`.
///
/// `L` (unit diagonal, strictly lower part) and `U` (upper incl. diagonal) are
/// stored in one CSR with the original pattern.
pub struct Ilu0 {
    lu: Csr,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols);
        let n = a.nrows;
        let mut lu = a.clone();
        let mut diag_pos = vec![usize::MAX; n];
        for r in 0..n {
            for p in lu.indptr[r]..lu.indptr[r + 1] {
                if lu.indices[p] as usize == r {
                    diag_pos[r] = p;
                }
            }
            if diag_pos[r] == usize::MAX {
                return Err(Error::SingularBlock(0, 0));
            }
        }
        // position lookup of the current row for fast pattern intersection
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.indptr[i], lu.indptr[i + 1]);
            for p in start..end {
                pos[lu.indices[p] as usize] = p;
            }
            // eliminate using previous rows k < i present in the pattern
            for p in start..end {
                let k = lu.indices[p] as usize;
                if k >= i {
                    break;
                }
                let ukk = lu.data[diag_pos[k]];
                if ukk == 0.0 {
                    return Err(Error::SingularBlock(k, k));
                }
                let lik = lu.data[p] / ukk;
                lu.data[p] = lik;
                for q in diag_pos[k] + 1..lu.indptr[k + 1] {
                    let j = lu.indices[q] as usize;
                    let pj = pos[j];
                    if pj != usize::MAX {
                        lu.data[pj] -= lik * lu.data[q];
                    }
                }
            }
            for p in start..end {
                pos[lu.indices[p] as usize] = usize::MAX;
            }
            if lu.data[diag_pos[i]] == 0.0 {
                return Err(Error::SingularBlock(i, i));
            }
        }
        Ok(Ilu0 { lu, diag_pos })
    }

    /// Solves `L U x = b` in place.
    pub fn solve(&self, x: &mut [f64]) {
        let n = self.lu.nrows;
        // forward: L y = b (unit diagonal)
        for i in 0..n {
            let mut acc = x[i];
            for p in self.lu.indptr[i]..self.lu.indptr[i + 1] {
                let j = self.lu.indices[p] as usize;
                if j >= i {
                    break;
                }
                acc -= self.lu.data[p] * x[j];
            }
            x[i] = acc;
        }
        // backward: U x = y
        for i in (0..n).rev() {
            let mut acc = x[i];
            for p in self.diag_pos[i] + 1..self.lu.indptr[i + 1] {
                acc -= self.lu.data[p] * x[self.lu.indices[p] as usize];
            }
            x[i] = acc / self.lu.data[self.diag_pos[i]];
        }
    }
}

/// Outcome of a GMRES run.
#[derive(Debug, Clone)]
pub struct GmresResult {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Restarted GMRES with modified Gram-Schmidt and right preconditioning:
/// solves `A M^{-1} y = b`, `x = M^{-1} y`, so the reported residual is the
/// true residual of `A x = b`.
pub fn gmres<A, M>(
    apply_a: A,
    apply_m_inv: M,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    restart: usize,
    max_iters: usize,
) -> GmresResult
where
    A: Fn(&[f64], &mut [f64]),
    M: Fn(&mut [f64]),
{
    let n = b.len();
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        x.fill(0.0);
        return GmresResult { iterations: 0, residual: 0.0, converged: true };
    }
    let tol = rel_tol * norm_b;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut total_iters = 0;

    loop {
        // r = b - A x
        apply_a(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm2(&r);
        if beta <= tol || total_iters >= max_iters {
            return GmresResult { iterations: total_iters, residual: beta / norm_b, converged: beta <= tol };
        }
        let m = restart.min(max_iters - total_iters);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut v0 = r.clone();
        for v in &mut v0 {
            *v /= beta;
        }
        basis.push(v0);
        let mut k_used = 0;
        for k in 0..m {
            // w = A M^{-1} v_k
            let mut z = basis[k].clone();
            apply_m_inv(&mut z);
            apply_a(&z, &mut w);
            for (j, vj) in basis.iter().enumerate().take(k + 1) {
                let hij = dot(&w, vj);
                h[j][k] = hij;
                for i in 0..n {
                    w[i] -= hij * vj[i];
                }
            }
            let hk1 = norm2(&w);
            h[k + 1][k] = hk1;
            // Givens updates
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + hk1 * hk1).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = hk1 / denom;
            h[k][k] = denom;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total_iters += 1;
            k_used = k + 1;
            if g[k + 1].abs() <= tol || hk1 == 0.0 {
                break;
            }
            let mut vk = w.clone();
            for v in &mut vk {
                *v /= hk1;
            }
            basis.push(vk);
        }
        if k_used == 0 {
            return GmresResult { iterations: total_iters, residual: beta / norm_b, converged: beta <= tol };
        }
        // back substitution for y
        let mut y = vec![0.0f64; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        // x += M^{-1} (V y)
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                update[i] += yj * basis[j][i];
            }
        }
        apply_m_inv(&mut update);
        for i in 0..n {
            x[i] += update[i];
        }
        if total_iters >= max_iters {
            apply_a(x, &mut r);
            for i in 0..n {
                r[i] = b[i] - r[i];
            }
            let res = norm2(&r);
            return GmresResult { iterations: total_iters, residual: res / norm_b, converged: res <= tol };
        }
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd_ish(n: usize, rng: &mut ChaCha8Rng) -> Csr {
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, 4.0 + rng.random::<f64>()));
            if i + 1 < n {
                let v = rng.random::<f64>() - 0.5;
                trips.push((i, i + 1, v));
                trips.push((i + 1, i, v * 0.8));
            }
        }
        Csr::from_triplets(n, n, &trips)
    }

    #[test]
    fn triplets_merge_and_sort() {
        let a = Csr::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, 5.0)]);
        assert_eq!(a.row(0), (&[0u32, 2][..], &[2.0, 4.0][..]));
        assert_eq!(a.row(1), (&[1u32][..], &[5.0][..]));
    }

    #[test]
    fn matmul_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd_ish(7, &mut rng);
        let b = random_spd_ish(7, &mut rng);
        let c = a.matmul(&b);
        let (da, db, dc) = (a.to_dense(), b.to_dense(), c.to_dense());
        for i in 0..7 {
            for j in 0..7 {
                let mut acc = 0.0;
                for k in 0..7 {
                    acc += da[i * 7 + k] * db[k * 7 + j];
                }
                assert!((acc - dc[i * 7 + j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn transpose_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd_ish(9, &mut rng);
        let at = a.transpose();
        let x: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let mut ax = vec![0.0; 9];
        a.matvec(&x, &mut ax);
        let mut aty = vec![0.0; 9];
        at.matvec(&y, &mut aty);
        assert!((dot(&ax, &y) - dot(&x, &aty)).abs() < 1e-13);
    }

    #[test]
    fn ilu0_exact_for_tridiagonal() {
        // ILU(0) on a banded matrix with no fill-in is an exact LU
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd_ish(20, &mut rng);
        let ilu = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let mut x = b.clone();
        ilu.solve(&mut x);
        let mut ax = vec![0.0; 20];
        a.matvec(&x, &mut ax);
        for i in 0..20 {
            assert!((ax[i] - b[i]).abs() < 1e-10, "i={i}: {} vs {}", ax[i], b[i]);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40;
        let a = random_spd_ish(n, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut x = vec![0.0; n];
        let res = gmres(
            |x, y| a.matvec(x, y),
            |_z| {},
            &b,
            &mut x,
            1e-12,
            30,
            200,
        );
        assert!(res.converged, "residual {}", res.residual);
        let mut ax = vec![0.0; n];
        a.matvec(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn gmres_with_ilu_preconditioner() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let a = random_spd_ish(n, &mut rng);
        let ilu = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut x = vec![0.0; n];
        let res = gmres(
            |x, y| a.matvec(x, y),
            |z| ilu.solve(z),
            &b,
            &mut x,
            1e-12,
            20,
            100,
        );
        assert!(res.converged);
        assert!(res.iterations <= 5, "ILU should make this near-direct, got {}", res.iterations);
    }
}
