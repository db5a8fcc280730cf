//! Nested multilevel continuous Lagrange spaces on a factor domain, with the
//! embedding (prolongation) matrices between levels.

use super::lagrange;
use super::mesh::{BoxMesh, MAX_DIM};
use crate::error::{Error, Result};
use crate::sparse::Csr;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

/// DOF numbering of one level: global ids are assigned in lexicographic order
/// of the node lattice coordinates (units `edge / order`), wrapped for
/// periodic meshes, so the numbering is deterministic.
#[derive(Debug, Clone)]
pub struct DofTable {
    pub n: usize,
    /// per cell: the `(order+1)^dim` global dofs in tensor order (axis 0 fastest)
    pub cell_dofs: Vec<Vec<u32>>,
    /// representative node lattice coordinates per dof
    pub node_coords: Vec<[i64; MAX_DIM]>,
}

#[derive(Debug)]
pub struct FactorSpace {
    dim: usize,
    order: usize,
    meshes: Vec<BoxMesh>,
    dofs: Vec<DofTable>,
    /// `embed[f][c]` = E(level c+1 -> level f+1) for c <= f (identity on the diagonal)
    embed: Vec<Vec<Arc<Csr>>>,
}

impl FactorSpace {
    /// Builds the hierarchy `level = 1..=max_level` over the given coarse mesh.
    pub fn build(coarse: BoxMesh, order: usize, max_level: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Unsupported("order must be >= 1".into()));
        }
        if max_level < 1 {
            return Err(Error::LevelOutOfRange { level: max_level, max: 1 });
        }
        let dim = coarse.dim();
        let mut meshes = vec![coarse];
        for _ in 1..max_level {
            let next = meshes.last().unwrap().refine();
            meshes.push(next);
        }
        let dofs: Vec<DofTable> = meshes.iter().map(|m| number_dofs(m, order)).collect();
        // direct prolongations level -> level+1, then chained products
        let mut single: Vec<Arc<Csr>> = Vec::new();
        for l in 0..max_level - 1 {
            single.push(Arc::new(prolongation_one_level(
                &meshes[l],
                &dofs[l],
                &dofs[l + 1],
                order,
            )));
        }
        let mut embed: Vec<Vec<Arc<Csr>>> = Vec::new();
        for f in 0..max_level {
            let mut row: Vec<Arc<Csr>> = Vec::new();
            for c in 0..=f {
                if c == f {
                    row.push(Arc::new(Csr::identity(dofs[f].n)));
                } else if c == f - 1 {
                    row.push(single[c].clone());
                } else {
                    // E(c->f) = E(f-1->f) * E(c->f-1)
                    let prev = embed[f - 1][c].clone();
                    row.push(Arc::new(single[f - 1].matmul(&prev).pruned(0.0)));
                }
            }
            embed.push(row);
        }
        Ok(FactorSpace { dim, order, meshes, dofs, embed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn max_level(&self) -> usize {
        self.meshes.len()
    }
    pub fn mesh(&self, level: usize) -> &BoxMesh {
        &self.meshes[level - 1]
    }
    pub fn dof_table(&self, level: usize) -> &DofTable {
        &self.dofs[level - 1]
    }
    pub fn num_dofs(&self, level: usize) -> usize {
        self.dofs[level - 1].n
    }
    pub fn is_periodic(&self) -> bool {
        self.meshes[0].periodic().is_some()
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level < 1 || level > self.max_level() {
            return Err(Error::LevelOutOfRange { level, max: self.max_level() });
        }
        Ok(())
    }

    /// Embedding matrix `E(from -> to)`, `from <= to`.
    pub fn embedding(&self, from: usize, to: usize) -> Arc<Csr> {
        assert!(from >= 1 && from <= to && to <= self.max_level());
        self.embed[to - 1][from - 1].clone()
    }

    /// Exact function embedding of coefficients from `from_level` to `to_level`.
    pub fn prolong(&self, from_level: usize, to_level: usize, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_level(from_level)?;
        self.check_level(to_level)?;
        assert!(from_level <= to_level);
        let e = self.embedding(from_level, to_level);
        let mut out = vec![0.0; e.nrows()];
        e.matvec(coeffs, &mut out);
        Ok(out)
    }

    /// Adjoint of `prolong`: `E^T` applied to fine coefficients.
    pub fn restrict(&self, from_level: usize, to_level: usize, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_level(from_level)?;
        self.check_level(to_level)?;
        assert!(to_level <= from_level);
        let e = self.embedding(to_level, from_level);
        let mut out = vec![0.0; e.ncols()];
        e.matvec_transpose_add(coeffs, &mut out);
        Ok(out)
    }

    /// Evaluates the FE function with the given level coefficients at a point.
    pub fn evaluate(&self, level: usize, coeffs: &[f64], point: &[f64]) -> Result<f64> {
        let mesh = self.mesh(level);
        let (cell, reference) = mesh
            .locate(point)
            .ok_or_else(|| Error::OutOfDomain(point.to_vec()))?;
        let r = self.order;
        let per_axis: Vec<Vec<f64>> = (0..self.dim).map(|a| lagrange::eval(r, reference[a])).collect();
        let dofs = &self.dofs[level - 1].cell_dofs[cell];
        let mut acc = 0.0;
        for (local, &gdof) in dofs.iter().enumerate() {
            let mut idx = local;
            let mut w = 1.0;
            for pa in per_axis.iter() {
                w *= pa[idx % (r + 1)];
                idx /= r + 1;
            }
            acc += w * coeffs[gdof as usize];
        }
        Ok(acc)
    }

    /// Physical coordinates of each dof's representative node at a level.
    pub fn node_positions(&self, level: usize) -> Vec<[f64; MAX_DIM]> {
        let mesh = self.mesh(level);
        let table = &self.dofs[level - 1];
        let step = mesh.edge() / self.order as f64;
        table
            .node_coords
            .iter()
            .map(|c| {
                let mut p = *mesh.anchor();
                for a in 0..self.dim {
                    p[a] += c[a] as f64 * step;
                }
                p
            })
            .collect()
    }
}

fn number_dofs(mesh: &BoxMesh, order: usize) -> DofTable {
    let dim = mesh.dim();
    let r = order;
    let nodes_per_cell = (r + 1).pow(dim as u32);
    // wrap extent for periodic meshes, in node-lattice units
    let wrap: Option<[i64; MAX_DIM]> = mesh.periodic().map(|p| {
        let mut w = [i64::MAX; MAX_DIM];
        for a in 0..dim {
            w[a] = p.cells_per_axis[a] * r as i64;
        }
        w
    });
    let mut ids: BTreeMap<[i64; MAX_DIM], u32> = BTreeMap::new();
    // first pass: collect all node coords
    for o in mesh.cells() {
        for local in 0..nodes_per_cell {
            let mut idx = local;
            let mut coord = [0i64; MAX_DIM];
            for (a, c) in coord.iter_mut().enumerate().take(dim) {
                *c = o[a] * r as i64 + (idx % (r + 1)) as i64;
                idx /= r + 1;
            }
            if let Some(w) = &wrap {
                for a in 0..dim {
                    coord[a] = coord[a].rem_euclid(w[a]);
                }
            }
            ids.entry(coord).or_insert(0);
        }
    }
    for (k, v) in ids.values_mut().enumerate() {
        *v = k as u32;
    }
    let node_coords: Vec<[i64; MAX_DIM]> = ids.keys().copied().collect();
    let mut cell_dofs = Vec::with_capacity(mesh.num_cells());
    for o in mesh.cells() {
        let mut dofs = Vec::with_capacity(nodes_per_cell);
        for local in 0..nodes_per_cell {
            let mut idx = local;
            let mut coord = [0i64; MAX_DIM];
            for (a, c) in coord.iter_mut().enumerate().take(dim) {
                *c = o[a] * r as i64 + (idx % (r + 1)) as i64;
                idx /= r + 1;
            }
            if let Some(w) = &wrap {
                for a in 0..dim {
                    coord[a] = coord[a].rem_euclid(w[a]);
                }
            }
            dofs.push(ids[&coord]);
        }
        cell_dofs.push(dofs);
    }
    DofTable { n: ids.len(), cell_dofs, node_coords }
}

fn prolongation_one_level(
    coarse_mesh: &BoxMesh,
    coarse: &DofTable,
    fine: &DofTable,
    order: usize,
) -> Csr {
    let dim = coarse_mesh.dim();
    let r = order;
    let mut entries: HashMap<(u32, u32), f64> = HashMap::new();
    for cc in 0..coarse_mesh.num_cells() {
        let cdofs = &coarse.cell_dofs[cc];
        for (k, fc) in coarse_mesh.child_range(cc).enumerate() {
            let fdofs = &fine.cell_dofs[fc];
            // coarse-cell reference coordinates of this child's nodes, per axis
            let mut axis_vals: Vec<Vec<Vec<f64>>> = Vec::with_capacity(dim);
            for a in 0..dim {
                let child_off = ((k >> a) & 1) as f64;
                let vals: Vec<Vec<f64>> = (0..=r)
                    .map(|node| {
                        let xref = (child_off + node as f64 / r as f64) * 0.5;
                        lagrange::eval(r, xref)
                    })
                    .collect();
                axis_vals.push(vals);
            }
            for (flocal, &fg) in fdofs.iter().enumerate() {
                // decompose fine local index
                let mut fidx = flocal;
                let mut fnode = [0usize; MAX_DIM];
                for f in fnode.iter_mut().take(dim) {
                    *f = fidx % (r + 1);
                    fidx /= r + 1;
                }
                for (clocal, &cg) in cdofs.iter().enumerate() {
                    let mut cidx = clocal;
                    let mut w = 1.0;
                    for (a, av) in axis_vals.iter().enumerate() {
                        w *= av[fnode[a]][cidx % (r + 1)];
                        cidx /= r + 1;
                    }
                    if w.abs() > 1e-14 {
                        entries.insert((fg, cg), w);
                    }
                }
            }
        }
    }
    let triplets: Vec<(usize, usize, f64)> =
        entries.into_iter().map(|((f, c), v)| (f as usize, c as usize, v)).collect();
    Csr::from_triplets(fine.n, coarse.n, &triplets)
}
