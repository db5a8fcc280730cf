//! Factor-level matrix and load-vector assembly: mass, weighted mass,
//! advection, gradient pairs, boundary traces. All integrals use per-cell
//! tensor Gauss-Legendre quadrature; weights are sampled at quadrature points.

use super::fields::ScalarField;
use super::lagrange;
use super::mesh::MAX_DIM;
use super::quadrature::QuadRule;
use super::space::FactorSpace;
use crate::error::Result;
use crate::sparse::Csr;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

/// What a factor matrix discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixKind {
    Mass,
    WeightedMass,
    /// `[(w * d(trial)/d(dir), test)]`
    Advection { dir: usize },
    /// `[(w * d(trial)/d(dir_a), d(test)/d(dir_b))]`
    GradPair { dir_a: usize, dir_b: usize },
    BoundaryTrace,
}

/// A factor matrix between two levels of one factor space.
#[derive(Debug, Clone)]
pub struct FactorMatrix {
    pub rows_level: usize,
    pub cols_level: usize,
    pub kind: MatrixKind,
    /// translation invariance on a periodic lattice (enables spectral solves)
    pub translation_invariant: bool,
    pub mat: Arc<Csr>,
}

/// Default quadrature point count per direction.
pub fn default_quad_points(order: usize, weighted: bool) -> usize {
    if weighted {
        order + 2
    } else {
        order + 1
    }
}

struct TensorBasis {
    /// per axis, per quad point: basis values (len order+1)
    vals: Vec<Vec<Vec<f64>>>,
    /// per axis, per quad point: basis derivatives on the reference cell
    derivs: Vec<Vec<Vec<f64>>>,
    rule: QuadRule,
}

impl TensorBasis {
    fn new(dim: usize, order: usize, nq: usize) -> Self {
        let rule = QuadRule::gauss(nq);
        let vals: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| lagrange::eval(order, x)).collect();
        let derivs: Vec<Vec<f64>> =
            rule.nodes.iter().map(|&x| lagrange::eval_deriv(order, x)).collect();
        TensorBasis {
            vals: vec![vals.clone(); dim],
            derivs: vec![derivs; dim],
            rule,
        }
    }
}

/// Assembles a volume matrix of the given kind on one level.
///
/// Entries are `int w(t, p) * D_a phi_trial * D_b phi_test` over the cell
/// union, where the derivative pattern depends on `kind`.
pub fn assemble_volume(
    space: &FactorSpace,
    level: usize,
    kind: MatrixKind,
    weight: &ScalarField,
    t: f64,
    nq: Option<usize>,
) -> Result<FactorMatrix> {
    space.check_level(level)?;
    let dim = space.dim();
    let r = space.order();
    let weighted = weight.as_constant() != Some(1.0);
    let nq = nq.unwrap_or_else(|| default_quad_points(r, weighted));
    let basis = TensorBasis::new(dim, r, nq);
    let mesh = space.mesh(level);
    let table = space.dof_table(level);
    let h = mesh.edge();
    let nloc = (r + 1).pow(dim as u32);
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.num_cells() * nloc * nloc);
    let mut local = vec![0.0f64; nloc * nloc];
    let mut qidx = vec![0usize; dim];
    let (trial_deriv, test_deriv): (Option<usize>, Option<usize>) = match kind {
        MatrixKind::Mass | MatrixKind::WeightedMass => (None, None),
        MatrixKind::Advection { dir } => (Some(dir), None),
        MatrixKind::GradPair { dir_a, dir_b } => (Some(dir_a), Some(dir_b)),
        MatrixKind::BoundaryTrace => panic!("use assemble_boundary_trace"),
    };
    for cell in 0..mesh.num_cells() {
        local.fill(0.0);
        let origin = mesh.cell_origin_physical(cell);
        qidx.fill(0);
        loop {
            // quadrature weight and physical point
            let mut qw = h.powi(dim as i32);
            let mut point = [0.0f64; MAX_DIM];
            for a in 0..dim {
                qw *= basis.rule.weights[qidx[a]];
                point[a] = origin[a] + basis.rule.nodes[qidx[a]] * h;
            }
            let wq = qw * weight.eval(t, &point[..dim]);
            if wq != 0.0 {
                // factorized test/trial values at this point
                let mut test_vals = vec![1.0f64; nloc];
                let mut trial_vals = vec![1.0f64; nloc];
                for (loc, (tv, rv)) in test_vals.iter_mut().zip(trial_vals.iter_mut()).enumerate() {
                    let mut idx = loc;
                    for a in 0..dim {
                        let node = idx % (r + 1);
                        idx /= r + 1;
                        let q = qidx[a];
                        let dv = if test_deriv == Some(a) {
                            basis.derivs[a][q][node] / h
                        } else {
                            basis.vals[a][q][node]
                        };
                        *tv *= dv;
                        let dv = if trial_deriv == Some(a) {
                            basis.derivs[a][q][node] / h
                        } else {
                            basis.vals[a][q][node]
                        };
                        *rv *= dv;
                    }
                }
                for (i, &tv) in test_vals.iter().enumerate() {
                    if tv == 0.0 {
                        continue;
                    }
                    let row = &mut local[i * nloc..(i + 1) * nloc];
                    for (j, &rv) in trial_vals.iter().enumerate() {
                        row[j] += wq * tv * rv;
                    }
                }
            }
            // advance tensor quadrature index
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
        let dofs = &table.cell_dofs[cell];
        for i in 0..nloc {
            for j in 0..nloc {
                let v = local[i * nloc + j];
                if v != 0.0 {
                    triplets.push((dofs[i] as usize, dofs[j] as usize, v));
                }
            }
        }
    }
    let mat = Csr::from_triplets(table.n, table.n, &triplets);
    let kind = match kind {
        MatrixKind::Mass if weighted => MatrixKind::WeightedMass,
        k => k,
    };
    Ok(FactorMatrix {
        rows_level: level,
        cols_level: level,
        kind,
        translation_invariant: !weighted && space.is_periodic(),
        mat: Arc::new(mat),
    })
}

pub fn assemble_mass(
    space: &FactorSpace,
    level: usize,
    weight: &ScalarField,
    t: f64,
) -> Result<FactorMatrix> {
    assemble_volume(space, level, MatrixKind::Mass, weight, t, None)
}

pub fn assemble_advection(
    space: &FactorSpace,
    level: usize,
    direction: usize,
    weight: &ScalarField,
    t: f64,
) -> Result<FactorMatrix> {
    assert!(direction < space.dim());
    assemble_volume(space, level, MatrixKind::Advection { dir: direction }, weight, t, None)
}

pub fn assemble_grad_pair(
    space: &FactorSpace,
    level: usize,
    dir_a: usize,
    dir_b: usize,
    weight: &ScalarField,
    t: f64,
) -> Result<FactorMatrix> {
    assert!(dir_a < space.dim() && dir_b < space.dim());
    assemble_volume(space, level, MatrixKind::GradPair { dir_a, dir_b }, weight, t, None)
}

/// Selects boundary facets by a predicate on the facet center and outward
/// normal (`axis`, `side`: 0 = normal `-e_axis`, 1 = normal `+e_axis`).
#[derive(Clone)]
pub struct FacetSelector {
    pred: Arc<dyn Fn(&[f64], usize, usize) -> bool + Send + Sync>,
}

impl FacetSelector {
    pub fn new<F>(pred: F) -> Self
    where
        F: Fn(&[f64], usize, usize) -> bool + Send + Sync + 'static,
    {
        FacetSelector { pred: Arc::new(pred) }
    }

    pub fn whole_boundary() -> Self {
        Self::new(|_, _, _| true)
    }

    /// Facets lying on the hyperplane `p[axis] = value` with outward normal
    /// along `axis`.
    pub fn plane(axis: usize, value: f64) -> Self {
        Self::new(move |center, fx, _| fx == axis && (center[axis] - value).abs() < 1e-10)
    }

    /// All facets with outward normal `sign * e_axis`.
    pub fn normal(axis: usize, sign: i32) -> Self {
        let side = if sign > 0 { 1 } else { 0 };
        Self::new(move |_, fx, fs| fx == axis && fs == side)
    }

    pub fn matches(&self, center: &[f64], axis: usize, side: usize) -> bool {
        (self.pred)(center, axis, side)
    }
}

/// Assembles the facet mass matrix `int_facets w(t, s) phi_trial phi_test ds`
/// over the selected boundary facets. Returns the matrix and whether any
/// facet matched (callers warn on an empty selection).
pub fn assemble_boundary_trace(
    space: &FactorSpace,
    level: usize,
    selector: &FacetSelector,
    weight: &ScalarField,
    t: f64,
    nq: Option<usize>,
) -> Result<(FactorMatrix, bool)> {
    space.check_level(level)?;
    let dim = space.dim();
    let r = space.order();
    let nq = nq.unwrap_or_else(|| default_quad_points(r, true));
    let rule = QuadRule::gauss(nq);
    let vals: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| lagrange::eval(r, x)).collect();
    let end_vals = [lagrange::eval(r, 0.0), lagrange::eval(r, 1.0)];
    let mesh = space.mesh(level);
    let table = space.dof_table(level);
    let h = mesh.edge();
    let nloc = (r + 1).pow(dim as u32);
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut matched = false;
    for (cell, axis, side) in mesh.boundary_facets() {
        let center = mesh.facet_center(cell, axis, side);
        if !selector.matches(&center[..dim], axis, side) {
            continue;
        }
        matched = true;
        let origin = mesh.cell_origin_physical(cell);
        let dofs = &table.cell_dofs[cell];
        // tensor quadrature over the d-1 tangential axes
        let tangential: Vec<usize> = (0..dim).filter(|&a| a != axis).collect();
        let nqt = nq.pow(tangential.len() as u32).max(1);
        for flat in 0..nqt {
            let mut idx = flat;
            let mut qw = h.powi(tangential.len() as i32);
            let mut point = [0.0f64; MAX_DIM];
            point[axis] = origin[axis] + side as f64 * h;
            let mut qnode = [0usize; MAX_DIM];
            for &a in &tangential {
                let q = idx % nq;
                idx /= nq;
                qnode[a] = q;
                qw *= rule.weights[q];
                point[a] = origin[a] + rule.nodes[q] * h;
            }
            let wq = qw * weight.eval(t, &point[..dim]);
            if wq == 0.0 {
                continue;
            }
            let mut phi = vec![1.0f64; nloc];
            for (loc, v) in phi.iter_mut().enumerate() {
                let mut idx = loc;
                for a in 0..dim {
                    let node = idx % (r + 1);
                    idx /= r + 1;
                    *v *= if a == axis {
                        end_vals[side][node]
                    } else {
                        vals[qnode[a]][node]
                    };
                }
            }
            for (i, &ti) in phi.iter().enumerate() {
                if ti == 0.0 {
                    continue;
                }
                for (j, &tj) in phi.iter().enumerate() {
                    if tj != 0.0 {
                        triplets.push((dofs[i] as usize, dofs[j] as usize, wq * ti * tj));
                    }
                }
            }
        }
    }
    let mat = Csr::from_triplets(table.n, table.n, &triplets);
    Ok((
        FactorMatrix {
            rows_level: level,
            cols_level: level,
            kind: MatrixKind::BoundaryTrace,
            translation_invariant: false,
            mat: Arc::new(mat),
        },
        matched,
    ))
}

/// Directional advection `[(w * sum_a c_a d(trial)/d(a), test)]` assembled as
/// the weighted sum of per-axis advection matrices.
pub fn assemble_directional_advection(
    space: &FactorSpace,
    level: usize,
    dirs: &[(usize, f64)],
    weight: &ScalarField,
    t: f64,
) -> Result<FactorMatrix> {
    assert!(!dirs.is_empty());
    let mut acc: Option<FactorMatrix> = None;
    for &(axis, c) in dirs {
        let mut m = assemble_volume(space, level, MatrixKind::Advection { dir: axis }, weight, t, None)?;
        let scaled = {
            let mut s = (*m.mat).clone();
            s.scale(c);
            s
        };
        acc = Some(match acc {
            None => {
                m.mat = Arc::new(scaled);
                m
            }
            Some(mut a) => {
                a.mat = Arc::new(a.mat.add_scaled(1.0, &scaled));
                a.translation_invariant = a.translation_invariant && m.translation_invariant;
                a
            }
        });
    }
    Ok(acc.unwrap())
}

/// Directional gradient pair
/// `[(w * sum_a ca d(trial)/da, sum_b cb d(test)/db)]`.
pub fn assemble_directional_grad_pair(
    space: &FactorSpace,
    level: usize,
    dirs_trial: &[(usize, f64)],
    dirs_test: &[(usize, f64)],
    weight: &ScalarField,
    t: f64,
) -> Result<FactorMatrix> {
    let mut acc: Option<FactorMatrix> = None;
    for &(da, ca) in dirs_trial {
        for &(db, cb) in dirs_test {
            let mut m = assemble_volume(
                space,
                level,
                MatrixKind::GradPair { dir_a: da, dir_b: db },
                weight,
                t,
                None,
            )?;
            let scaled = {
                let mut s = (*m.mat).clone();
                s.scale(ca * cb);
                s
            };
            acc = Some(match acc {
                None => {
                    m.mat = Arc::new(scaled);
                    m
                }
                Some(mut a) => {
                    a.mat = Arc::new(a.mat.add_scaled(1.0, &scaled));
                    a.translation_invariant = a.translation_invariant && m.translation_invariant;
                    a
                }
            });
        }
    }
    Ok(acc.unwrap())
}

/// Boundary-facet load vector `int_facets w phi_k ds` over selected facets.
pub fn assemble_trace_load(
    space: &FactorSpace,
    level: usize,
    selector: &FacetSelector,
    weight: &ScalarField,
    t: f64,
    nq: usize,
) -> Result<Vec<f64>> {
    space.check_level(level)?;
    let dim = space.dim();
    let r = space.order();
    let rule = QuadRule::gauss(nq);
    let vals: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| lagrange::eval(r, x)).collect();
    let end_vals = [lagrange::eval(r, 0.0), lagrange::eval(r, 1.0)];
    let mesh = space.mesh(level);
    let table = space.dof_table(level);
    let h = mesh.edge();
    let mut out = vec![0.0; table.n];
    for (cell, axis, side) in mesh.boundary_facets() {
        let center = mesh.facet_center(cell, axis, side);
        if !selector.matches(&center[..dim], axis, side) {
            continue;
        }
        let origin = mesh.cell_origin_physical(cell);
        let dofs = &table.cell_dofs[cell];
        let tangential: Vec<usize> = (0..dim).filter(|&a| a != axis).collect();
        let nqt = nq.pow(tangential.len() as u32).max(1);
        for flat in 0..nqt {
            let mut idx = flat;
            let mut qw = h.powi(tangential.len() as i32);
            let mut point = [0.0f64; MAX_DIM];
            point[axis] = origin[axis] + side as f64 * h;
            let mut qnode = [0usize; MAX_DIM];
            for &a in &tangential {
                let q = idx % nq;
                idx /= nq;
                qnode[a] = q;
                qw *= rule.weights[q];
                point[a] = origin[a] + rule.nodes[q] * h;
            }
            let wq = qw * weight.eval(t, &point[..dim]);
            if wq == 0.0 {
                continue;
            }
            for (loc, &g) in dofs.iter().enumerate() {
                let mut idx = loc;
                let mut v = 1.0;
                for a in 0..dim {
                    let node = idx % (r + 1);
                    idx /= r + 1;
                    v *= if a == axis { end_vals[side][node] } else { vals[qnode[a]][node] };
                }
                out[g as usize] += wq * v;
            }
        }
    }
    Ok(out)
}

/// Load vector against a directional derivative of the test functions:
/// `int f(p) * sum_a c_a d(phi_k)/d(a) dp`.
pub fn assemble_load_deriv(
    space: &FactorSpace,
    level: usize,
    f: &ScalarField,
    dirs: &[(usize, f64)],
    t: f64,
    nq: usize,
) -> Result<Vec<f64>> {
    space.check_level(level)?;
    let dim = space.dim();
    let r = space.order();
    let basis = TensorBasis::new(dim, r, nq);
    let mesh = space.mesh(level);
    let table = space.dof_table(level);
    let h = mesh.edge();
    let mut out = vec![0.0f64; table.n];
    let mut qidx = vec![0usize; dim];
    for cell in 0..mesh.num_cells() {
        let origin = mesh.cell_origin_physical(cell);
        let dofs = &table.cell_dofs[cell];
        qidx.fill(0);
        loop {
            let mut qw = h.powi(dim as i32);
            let mut point = [0.0f64; MAX_DIM];
            for a in 0..dim {
                qw *= basis.rule.weights[qidx[a]];
                point[a] = origin[a] + basis.rule.nodes[qidx[a]] * h;
            }
            let wq = qw * f.eval(t, &point[..dim]);
            if wq != 0.0 {
                for &(axis, c) in dirs {
                    for (loc, &g) in dofs.iter().enumerate() {
                        let mut idx = loc;
                        let mut v = 1.0;
                        for a in 0..dim {
                            let node = idx % (r + 1);
                            idx /= r + 1;
                            v *= if a == axis {
                                basis.derivs[a][qidx[a]][node] / h
                            } else {
                                basis.vals[a][qidx[a]][node]
                            };
                        }
                        out[g as usize] += wq * c * v;
                    }
                }
            }
            let mut a = 0;
            loop {
                if a == dim {
                    break;
                }
                qidx[a] += 1;
                if qidx[a] < basis.rule.len() {
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
    Ok(out)
}

/// Load vector `int f(p) phi_k dp` on one level.
pub fn assemble_load(
    space: &FactorSpace,
    level: usize,
    f: &ScalarField,
    t: f64,
    nq: usize,
) -> Result<Vec<f64>> {
    space.check_level(level)?;
    let dim = space.dim();
    let r = space.order();
    let basis = TensorBasis::new(dim, r, nq);
    let mesh = space.mesh(level);
    let table = space.dof_table(level);
    let h = mesh.edge();
    let mut out = vec![0.0f64; table.n];
    let mut qidx = vec![0usize; dim];
    for cell in 0..mesh.num_cells() {
        let origin = mesh.cell_origin_physical(cell);
        let dofs = &table.cell_dofs[cell];
        qidx.fill(0);
        loop {
            let mut qw = h.powi(dim as i32);
            let mut point = [0.0f64; MAX_DIM];
            for a in 0..dim {
                qw *= basis.rule.weights[qidx[a]];
                point[a] = origin[a] + basis.rule.nodes[qidx[a]] * h;
            }
            let wq = qw * f.eval(t, &point[..dim]);
            if wq != 0.0 {
                for (loc, &g) in dofs.iter().enumerate() {
                    let mut idx = loc;
                    let mut v = 1.0;
                    for a in 0..dim {
                        v *= basis.vals[a][qidx[a]][idx % (r + 1)];
                        idx /= r + 1;
                    }
                    out[g as usize] += wq * v;
                }
            }
            let mut a = 0;
            loop {
                if a == dim {
                    break;
                }
                qidx[a] += 1;
                if qidx[a] < basis.rule.len() {
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
    Ok(out)
}

/// Cross-level family of one assembled matrix: the finest-level matrix is the
/// single source of truth and every pair `(l, l')` is the Galerkin projection
/// `E(l->L)^T A_LL E(l'->L)`, generated lazily and cached. Transposed-role
/// variants `(trial, test)` swapped are cached alongside.
pub struct MatrixFamily {
    space: Arc<FactorSpace>,
    finest_level: usize,
    finest: FactorMatrix,
    cache: RwLock<HashMap<(usize, usize, bool), Arc<Csr>>>,
}

impl MatrixFamily {
    pub fn new(space: Arc<FactorSpace>, finest: FactorMatrix) -> Self {
        let finest_level = finest.rows_level;
        MatrixFamily { space, finest_level, finest, cache: RwLock::new(HashMap::new()) }
    }

    pub fn finest_level(&self) -> usize {
        self.finest_level
    }

    pub fn kind(&self) -> MatrixKind {
        self.finest.kind
    }

    pub fn translation_invariant(&self) -> bool {
        self.finest.translation_invariant
    }

    /// `A_{rows_level, cols_level}`.
    pub fn get(&self, rows_level: usize, cols_level: usize) -> Arc<Csr> {
        self.get_impl(rows_level, cols_level, false)
    }

    /// Transposed-role matrix `[(w D phi_test, phi_trial)]` style: the
    /// transpose of `A_{cols_level, rows_level}`.
    pub fn get_transposed(&self, rows_level: usize, cols_level: usize) -> Arc<Csr> {
        self.get_impl(rows_level, cols_level, true)
    }

    fn get_impl(&self, rows_level: usize, cols_level: usize, transposed: bool) -> Arc<Csr> {
        let key = (rows_level, cols_level, transposed);
        if let Some(m) = self.cache.read().unwrap().get(&key) {
            return m.clone();
        }
        let l = self.finest_level;
        assert!(rows_level <= l && cols_level <= l);
        let m = if transposed {
            Arc::new(self.get_impl(cols_level, rows_level, false).transpose())
        } else if rows_level == l && cols_level == l {
            self.finest.mat.clone()
        } else {
            let er = self.space.embedding(rows_level, l);
            let ec = self.space.embedding(cols_level, l);
            Arc::new(Csr::triple_product(&er.transpose(), &self.finest.mat, &ec).pruned(0.0))
        };
        self.cache.write().unwrap().insert(key, m.clone());
        m
    }
}
