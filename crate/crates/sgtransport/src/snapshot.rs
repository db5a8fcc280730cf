//! Binary snapshot format for block vectors, used by CLI checkpointing.
//!
//! Layout (all integers little-endian):
//! - magic `SGTBV001` (8 bytes)
//! - u32 level, u32 time_dim, u64 strip_plus_one (0 = spatial-only)
//! - u32 number of x levels, then u64 dof count per level 1..
//! - u32 number of v levels, then u64 dof count per level 1..
//! - per active level pair in lexicographic order: the raw f64 block in
//!   time-major, then x, then v layout.

use crate::error::{Error, Result};
use crate::tensor::{active_levels, BlockVector, ProductSpace};
use ndarray::Array3;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SGTBV001";

pub fn write_snapshot(path: &Path, u: &BlockVector, space: &ProductSpace) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(u.level as u32).to_le_bytes())?;
    f.write_all(&(u.time_dim as u32).to_le_bytes())?;
    f.write_all(&(u.strip.map_or(0, |s| s as u64 + 1)).to_le_bytes())?;
    let lx = u.pairs.iter().map(|p| p.l1).max().unwrap_or(1);
    let lv = u.pairs.iter().map(|p| p.l2).max().unwrap_or(1);
    f.write_all(&(lx as u32).to_le_bytes())?;
    for l in 1..=lx {
        f.write_all(&(space.x.num_dofs(l) as u64).to_le_bytes())?;
    }
    f.write_all(&(lv as u32).to_le_bytes())?;
    for l in 1..=lv {
        f.write_all(&(space.v.num_dofs(l) as u64).to_le_bytes())?;
    }
    for block in &u.blocks {
        for &v in block.as_slice().unwrap() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SnapshotHeader {
    pub level: usize,
    pub time_dim: usize,
    pub strip: Option<usize>,
    pub x_dofs: Vec<u64>,
    pub v_dofs: Vec<u64>,
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_header(f: &mut impl Read) -> Result<SnapshotHeader> {
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let level = read_u32(f)? as usize;
    let time_dim = read_u32(f)? as usize;
    let strip = match read_u64(f)? {
        0 => None,
        s => Some((s - 1) as usize),
    };
    if level < 1 || time_dim < 1 || time_dim > 16 {
        return Err(Error::Snapshot(format!("implausible header: L={level} td={time_dim}")));
    }
    let nx = read_u32(f)? as usize;
    let mut x_dofs = Vec::with_capacity(nx);
    for _ in 0..nx {
        x_dofs.push(read_u64(f)?);
    }
    let nv = read_u32(f)? as usize;
    let mut v_dofs = Vec::with_capacity(nv);
    for _ in 0..nv {
        v_dofs.push(read_u64(f)?);
    }
    Ok(SnapshotHeader { level, time_dim, strip, x_dofs, v_dofs })
}

pub fn read_snapshot(path: &Path, space: &ProductSpace) -> Result<BlockVector> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let header = read_header(&mut f)?;
    // validate dof tables against the space
    for (l, &n) in header.x_dofs.iter().enumerate() {
        if space.x.max_level() < l + 1 || space.x.num_dofs(l + 1) as u64 != n {
            return Err(Error::Snapshot(format!(
                "x factor mismatch at level {}: snapshot has {n} dofs",
                l + 1
            )));
        }
    }
    for (l, &n) in header.v_dofs.iter().enumerate() {
        if space.v.max_level() < l + 1 || space.v.num_dofs(l + 1) as u64 != n {
            return Err(Error::Snapshot(format!(
                "v factor mismatch at level {}: snapshot has {n} dofs",
                l + 1
            )));
        }
    }
    let pairs = active_levels(header.level);
    let mut blocks = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let (n1, n2) = space.dims(*p);
        let len = header.time_dim * n1 * n2;
        let mut data = vec![0.0f64; len];
        for v in data.iter_mut() {
            let mut b = [0u8; 8];
            f.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        blocks.push(
            Array3::from_shape_vec((header.time_dim, n1, n2), data)
                .map_err(|e| Error::Snapshot(e.to_string()))?,
        );
    }
    Ok(BlockVector {
        level: header.level,
        time_dim: header.time_dim,
        pairs,
        blocks,
        strip: header.strip,
    })
}

/// Reads only the header for inspection.
pub fn inspect(path: &Path) -> Result<SnapshotHeader> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_header(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoxMesh, FactorSpace};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn space() -> ProductSpace {
        let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[4], true).unwrap();
        ProductSpace::new(
            Arc::new(FactorSpace::build(m.clone(), 1, 3).unwrap()),
            Arc::new(FactorSpace::build(m, 1, 3).unwrap()),
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let sp = space();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut u = BlockVector::zeros(&sp, 3, 2).with_strip(5);
        for p in u.pairs.clone() {
            let d = sp.dims(p);
            *u.block_mut(p) =
                Array3::from_shape_fn((2, d.0, d.1), |_| rng.random::<f64>() - 0.5);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.snap");
        write_snapshot(&path, &u, &sp).unwrap();
        let back = read_snapshot(&path, &sp).unwrap();
        assert_eq!(back.level, 3);
        assert_eq!(back.time_dim, 2);
        assert_eq!(back.strip, Some(5));
        for (a, b) in u.blocks.iter().zip(&back.blocks) {
            assert_eq!(a.as_slice().unwrap(), b.as_slice().unwrap());
        }
    }

    #[test]
    fn rejects_bad_magic_and_mismatched_space() {
        let sp = space();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.snap");
        std::fs::write(&path, b"NOTASNAP0000").unwrap();
        assert!(matches!(read_snapshot(&path, &sp), Err(Error::Snapshot(_)) | Err(Error::Io(_))));

        let u = BlockVector::zeros(&sp, 2, 1);
        let path2 = dir.path().join("ok.snap");
        write_snapshot(&path2, &u, &sp).unwrap();
        // a space with different dof counts
        let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[5], true).unwrap();
        let other = ProductSpace::new(
            Arc::new(FactorSpace::build(m.clone(), 1, 3).unwrap()),
            Arc::new(FactorSpace::build(m, 1, 3).unwrap()),
        );
        assert!(read_snapshot(&path2, &other).is_err());
    }
}
