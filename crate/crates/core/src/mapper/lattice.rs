use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::FEATURE_SCALE;

pub const LATTICE_DIM: usize = 3;

/// Smallest `s` with `s^3 >= k`, in exact integer arithmetic.
pub fn lattice_side(k: usize) -> usize {
    let mut s = (k as f64).cbrt().round().max(1.0) as usize;
    while s.pow(3) < k {
        s += 1;
    }
    while s > 1 && (s - 1).pow(3) >= k {
        s -= 1;
    }
    s
}

/// One stored view of an object: which mask it came from and its
/// high-dimensional embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub view: usize,
    pub local: usize,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub object_id: usize,
    /// Low-dimensional feature in `(0, 1)^3`.
    pub center: [f64; 3],
    pub entries: Vec<CellEntry>,
}

impl GridCell {
    /// Center in the `(0, 255)^3` scale used for distance thresholds.
    pub fn scaled_center(&self) -> [f64; 3] {
        self.center.map(|c| c * FEATURE_SCALE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLattice {
    pub k: usize,
    pub dim: usize,
    pub side: usize,
    pub edge: f64,
    /// `cells[o]` belongs to object `o`.
    pub cells: Vec<GridCell>,
}

/// Lattice geometry for `k` objects: object `o` takes the center of the
/// `o`-th cell in row-major order. Cells are returned without entries.
pub fn build_lattice(k: usize) -> Result<GridLattice> {
    if k == 0 {
        return Err(Error::EmptyLattice);
    }
    let side = lattice_side(k);
    let sf = side as f64;
    let cells = (0..k)
        .map(|o| {
            let (u, v, w) = (o / (side * side), (o / side) % side, o % side);
            GridCell {
                object_id: o,
                center: [
                    (u as f64 + 0.5) / sf,
                    (v as f64 + 0.5) / sf,
                    (w as f64 + 0.5) / sf,
                ],
                entries: Vec::new(),
            }
        })
        .collect();
    Ok(GridLattice {
        k,
        dim: LATTICE_DIM,
        side,
        edge: 1.0 / sf,
        cells,
    })
}

impl GridLattice {
    /// Nearest assigned cell to a unit-scale feature, lowest id on ties.
    pub fn nearest(&self, f: [f64; 3]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for c in &self.cells {
            let d = dist(c.center, f);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((c.object_id, d));
            }
        }
        best
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.cells.iter().map(|c| c.center).collect()
    }

    pub fn check(&self) -> Result<()> {
        if self.cells.len() != self.k || self.k == 0 {
            return Err(Error::EmptyLattice);
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.object_id != i {
                return Err(Error::contract(format!("cell {i} carries object id {}", c.object_id)));
            }
            if c.entries.is_empty() {
                return Err(Error::contract(format!("cell {i} has no stored embeddings")));
            }
        }
        Ok(())
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let l = build_lattice(8).unwrap();
        assert_eq!((l.side, l.edge), (2, 0.5));
        for c in &l.cells {
            assert!(c.center.iter().all(|&v| v == 0.25 || v == 0.75));
        }
        let l = build_lattice(1).unwrap();
        assert_eq!(l.cells[0].center, [0.5; 3]);
        let l = build_lattice(9).unwrap();
        assert_eq!((l.side, l.cells.len()), (3, 9));
        assert_eq!(l.edge, 1.0 / 3.0);
        assert!(matches!(build_lattice(0), Err(Error::EmptyLattice)));
    }

    #[test]
    fn side_is_exact_at_cubes() {
        for s in 1..40usize {
            assert_eq!(lattice_side(s.pow(3)), s);
            assert_eq!(lattice_side(s.pow(3) + 1), s + 1);
        }
    }

    #[test]
    fn round_trip_margin() {
        for k in 1..=64 {
            let l = build_lattice(k).unwrap();
            for c in &l.cells {
                assert_eq!(l.nearest(c.center).unwrap().0, c.object_id);
                assert!(c.center.iter().all(|&v| v > 0.0 && v < 1.0));
                for o in &l.cells {
                    if o.object_id != c.object_id {
                        assert!(dist(o.center, c.center) >= l.edge - 1e-9);
                    }
                }
            }
        }
    }
}
