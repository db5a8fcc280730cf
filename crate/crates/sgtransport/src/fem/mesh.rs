//! Structured meshes built from equal axis-aligned d-cubes on an integer
//! lattice. Uniform refinement halves the edge and produces `2^dim` children
//! per cell, so all levels share one lattice description and nestedness is
//! exact by construction.

use crate::error::{Error, Result};
use std::collections::HashMap;

pub const MAX_DIM: usize = 3;

/// Periodic identification data: the cell set must be a full box.
#[derive(Debug, Clone)]
pub struct PeriodicBox {
    /// cells per axis at this level
    pub cells_per_axis: [i64; MAX_DIM],
}

#[derive(Debug, Clone)]
pub struct BoxMesh {
    dim: usize,
    level: usize,
    /// edge length of every cell at this level
    edge: f64,
    /// physical position of lattice origin
    anchor: [f64; MAX_DIM],
    /// integer cell origins in units of `edge`, all >= 0
    cells: Vec<[i64; MAX_DIM]>,
    cell_index: HashMap<[i64; MAX_DIM], usize>,
    periodic: Option<PeriodicBox>,
}

impl BoxMesh {
    /// Builds a level-1 mesh from integer cell origins (units of `edge`,
    /// relative to `anchor`). Origins must be unique and non-negative.
    pub fn from_cells(
        dim: usize,
        edge: f64,
        anchor: [f64; MAX_DIM],
        origins: Vec<[i64; MAX_DIM]>,
        periodic: bool,
    ) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Geometry(format!("dimension {dim} not in 1..=3")));
        }
        if !(edge > 0.0) || !edge.is_finite() {
            return Err(Error::Geometry(format!("invalid edge length {edge}")));
        }
        if origins.is_empty() {
            return Err(Error::Geometry("empty cell list".into()));
        }
        let mut cell_index = HashMap::with_capacity(origins.len());
        for (i, o) in origins.iter().enumerate() {
            for a in dim..MAX_DIM {
                if o[a] != 0 {
                    return Err(Error::Geometry(format!("cell origin uses unused axis {a}")));
                }
            }
            for a in 0..dim {
                if o[a] < 0 {
                    return Err(Error::Geometry("cell origins must be non-negative".into()));
                }
            }
            if cell_index.insert(*o, i).is_some() {
                return Err(Error::Geometry(format!("overlapping cells at {:?}", o)));
            }
        }
        let periodic = if periodic {
            let mut extent = [1i64; MAX_DIM];
            for a in 0..dim {
                let max = origins.iter().map(|o| o[a]).max().unwrap();
                let min = origins.iter().map(|o| o[a]).min().unwrap();
                if min != 0 {
                    return Err(Error::Unsupported(
                        "periodic mesh must be anchored at the lattice origin".into(),
                    ));
                }
                extent[a] = max + 1;
            }
            let expect: i64 = extent[..dim].iter().product();
            if expect as usize != origins.len() {
                return Err(Error::Unsupported(
                    "periodic identification requires a full box of cells".into(),
                ));
            }
            Some(PeriodicBox { cells_per_axis: extent })
        } else {
            None
        };
        Ok(BoxMesh { dim, level: 1, edge, anchor, cells: origins, cell_index, periodic })
    }

    /// Convenience constructor: a product of intervals `[lo_a, hi_a]` split
    /// into `cells_a` equal cells per axis. All axes must share the same edge.
    pub fn box_domain(
        dim: usize,
        bounds: &[(f64, f64)],
        cells_per_axis: &[usize],
        periodic: bool,
    ) -> Result<Self> {
        assert_eq!(bounds.len(), dim);
        assert_eq!(cells_per_axis.len(), dim);
        let edge = (bounds[0].1 - bounds[0].0) / cells_per_axis[0] as f64;
        for a in 1..dim {
            let e = (bounds[a].1 - bounds[a].0) / cells_per_axis[a] as f64;
            if ((e - edge) / edge).abs() > 1e-12 {
                return Err(Error::Geometry(format!(
                    "non-uniform cell edges across axes: {edge} vs {e}"
                )));
            }
        }
        let mut anchor = [0.0; MAX_DIM];
        for a in 0..dim {
            anchor[a] = bounds[a].0;
        }
        let mut origins = Vec::new();
        let mut idx = [0usize; MAX_DIM];
        loop {
            let mut o = [0i64; MAX_DIM];
            for a in 0..dim {
                o[a] = idx[a] as i64;
            }
            origins.push(o);
            // odometer
            let mut a = 0;
            loop {
                if a == dim {
                    return BoxMesh::from_cells(dim, edge, anchor, origins, periodic);
                }
                idx[a] += 1;
                if idx[a] < cells_per_axis[a] {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn level(&self) -> usize {
        self.level
    }
    pub fn edge(&self) -> f64 {
        self.edge
    }
    pub fn anchor(&self) -> &[f64; MAX_DIM] {
        &self.anchor
    }
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }
    pub fn cells(&self) -> &[[i64; MAX_DIM]] {
        &self.cells
    }
    pub fn periodic(&self) -> Option<&PeriodicBox> {
        self.periodic.as_ref()
    }

    pub fn cell_origin_physical(&self, cell: usize) -> [f64; MAX_DIM] {
        let o = self.cells[cell];
        let mut p = self.anchor;
        for a in 0..self.dim {
            p[a] += o[a] as f64 * self.edge;
        }
        p
    }

    /// Total measure of the cell union.
    pub fn measure(&self) -> f64 {
        self.cells.len() as f64 * self.edge.powi(self.dim as i32)
    }

    /// Uniform refinement: each cell splits into `2^dim` children.
    pub fn refine(&self) -> BoxMesh {
        let mut origins = Vec::with_capacity(self.cells.len() << self.dim);
        for o in &self.cells {
            for child in 0..(1usize << self.dim) {
                let mut c = [0i64; MAX_DIM];
                for a in 0..self.dim {
                    c[a] = 2 * o[a] + ((child >> a) & 1) as i64;
                }
                origins.push(c);
            }
        }
        let cell_index = origins.iter().enumerate().map(|(i, o)| (*o, i)).collect();
        let periodic = self.periodic.as_ref().map(|p| {
            let mut extent = p.cells_per_axis;
            for e in extent.iter_mut().take(self.dim) {
                *e *= 2;
            }
            PeriodicBox { cells_per_axis: extent }
        });
        BoxMesh {
            dim: self.dim,
            level: self.level + 1,
            edge: self.edge * 0.5,
            anchor: self.anchor,
            cells: origins,
            cell_index,
            periodic,
        }
    }

    /// Children indices in the refined mesh of `self`: the refinement above
    /// emits children contiguously per parent cell.
    pub fn child_range(&self, cell: usize) -> std::ops::Range<usize> {
        let k = 1usize << self.dim;
        cell * k..(cell + 1) * k
    }

    /// Locates the cell containing a physical point; returns the cell index
    /// and reference coordinates in `[0,1]^dim`. Periodic meshes wrap.
    pub fn locate(&self, point: &[f64]) -> Option<(usize, [f64; MAX_DIM])> {
        let mut cell = [0i64; MAX_DIM];
        let mut reference = [0.0; MAX_DIM];
        for a in 0..self.dim {
            let mut s = (point[a] - self.anchor[a]) / self.edge;
            if let Some(p) = &self.periodic {
                let m = p.cells_per_axis[a] as f64;
                s = s.rem_euclid(m);
            }
            let mut c = s.floor() as i64;
            // clamp points sitting exactly on the upper boundary into the last cell
            let max_c = self.cells.iter().map(|o| o[a]).max().unwrap();
            if c > max_c && s - c as f64 <= 1e-12 {
                c -= 1;
            }
            cell[a] = c;
            reference[a] = (s - c as f64).clamp(0.0, 1.0);
        }
        self.cell_index.get(&cell).map(|&i| (i, reference))
    }

    /// Boundary facets: `(cell, axis, side)` where `side = 0` is the face at
    /// the lower coordinate and `side = 1` at the upper; returns only faces
    /// without a neighboring cell. Periodic meshes have no boundary.
    pub fn boundary_facets(&self) -> Vec<(usize, usize, usize)> {
        if self.periodic.is_some() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (i, o) in self.cells.iter().enumerate() {
            for a in 0..self.dim {
                for side in 0..2usize {
                    let mut nb = *o;
                    nb[a] += if side == 0 { -1 } else { 1 };
                    if !self.cell_index.contains_key(&nb) {
                        out.push((i, a, side));
                    }
                }
            }
        }
        out
    }

    /// Physical center of a facet.
    pub fn facet_center(&self, cell: usize, axis: usize, side: usize) -> [f64; MAX_DIM] {
        let mut c = self.cell_origin_physical(cell);
        for a in 0..self.dim {
            if a == axis {
                c[a] += side as f64 * self.edge;
            } else {
                c[a] += 0.5 * self.edge;
            }
        }
        c
    }
}

/// The standard L-shaped domain `(-1,1)^2 \ [0,1]^2` meshed with squares of
/// the given edge (must divide 1 evenly).
pub fn lshape_mesh(edge: f64) -> Result<BoxMesh> {
    let m = (1.0 / edge).round() as i64;
    if ((m as f64) * edge - 1.0).abs() > 1e-12 {
        return Err(Error::Geometry(format!("edge {edge} does not divide the unit length")));
    }
    let mut origins = Vec::new();
    for i in 0..2 * m {
        for j in 0..2 * m {
            // skip cells inside [0,1]^2, i.e. i >= m && j >= m
            if i >= m && j >= m {
                continue;
            }
            origins.push([i, j, 0]);
        }
    }
    BoxMesh::from_cells(2, edge, [-1.0, -1.0, 0.0], origins, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refinement_preserves_measure_and_counts() {
        let m = BoxMesh::box_domain(2, &[(0.0, 1.0), (0.0, 1.0)], &[4, 4], false).unwrap();
        let f = m.refine();
        assert_eq!(f.num_cells(), 4 * m.num_cells());
        assert!((f.measure() - m.measure()).abs() < 1e-14);
        assert!((f.edge() - 0.5 * m.edge()).abs() < 1e-15);
        // parent->child map is total and children tile the parent
        for c in 0..m.num_cells() {
            let r = m.child_range(c);
            assert_eq!(r.len(), 4);
            let po = m.cell_origin_physical(c);
            for ch in r {
                let co = f.cell_origin_physical(ch);
                for a in 0..2 {
                    assert!(co[a] >= po[a] - 1e-14 && co[a] < po[a] + m.edge());
                }
            }
        }
    }

    #[test]
    fn lshape_counts() {
        let m = lshape_mesh(0.25).unwrap();
        assert_eq!(m.num_cells(), 48);
        assert!((m.measure() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_rejects_non_box() {
        let m = lshape_mesh(0.25).unwrap();
        let e = BoxMesh::from_cells(2, 0.25, *m.anchor(), m.cells().to_vec(), true);
        assert!(matches!(e, Err(Error::Unsupported(_))));
    }

    #[test]
    fn overlap_is_geometry_error() {
        let e = BoxMesh::from_cells(1, 0.5, [0.0; 3], vec![[0, 0, 0], [0, 0, 0]], false);
        assert!(matches!(e, Err(Error::Geometry(_))));
    }

    #[test]
    fn locate_wraps_periodically() {
        let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[4], true).unwrap();
        let (c, r) = m.locate(&[1.1]).unwrap();
        assert_eq!(c, 0);
        assert!((r[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn boundary_facets_of_lshape() {
        let m = lshape_mesh(0.5).unwrap();
        // 12 cells; outer boundary 2*4 + 2*2 + reentrant 2*2... count edges:
        // perimeter of L with edge 0.5: total boundary length 8 -> 16 facets
        assert_eq!(m.boundary_facets().len(), 16);
        let f = m.refine();
        assert_eq!(f.boundary_facets().len(), 32);
    }
}
