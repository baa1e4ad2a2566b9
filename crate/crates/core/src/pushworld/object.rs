use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Side length of one footprint cell in world units.
pub const CELL: f32 = 0.1;

/// 3x3 occupancy masks, row 0 on top.
pub const SHAPES: [[[bool; 3]; 3]; 12] = {
    const X: bool = true;
    const O: bool = false;
    [
        [[X, X, X], [X, X, X], [X, X, X]], // square
        [[O, X, O], [X, X, X], [O, X, O]], // plus
        [[X, O, O], [X, O, O], [X, X, X]], // L
        [[X, X, X], [O, X, O], [O, X, O]], // T
        [[O, X, O], [O, X, O], [O, X, O]], // bar
        [[X, X, O], [X, O, O], [O, O, O]], // corner
        [[X, O, X], [X, O, X], [X, X, X]], // U
        [[X, O, O], [X, X, X], [O, O, X]], // Z
        [[X, X, O], [X, X, O], [O, O, O]], // block
        [[X, O, O], [X, X, O], [O, X, X]], // stairs
        [[X, O, X], [X, X, X], [X, O, X]], // H
        [[X, X, X], [X, X, X], [O, O, O]], // slab
    ]
};

pub const MASSES: [f32; 4] = [0.5, 1.0, 1.5, 2.0];
pub const FRICTIONS: [f32; 3] = [0.2, 0.6, 1.0];
const COM_OFFSETS: [(f32, f32); 5] = [(0.0, 0.0), (0.5, 0.0), (-0.5, 0.0), (0.0, 0.5), (0.0, -0.5)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub shape_id: u16,
    pub mass: f32,
    pub friction: f32,
    /// Center of mass relative to the footprint centroid, in cell units.
    pub com_offset: [f32; 2],
}

/// Rigid footprint in object-local world units, centered on its centroid.
#[derive(Debug, Clone)]
pub struct Footprint {
    /// Local centers of occupied cells, relative to the centroid.
    pub cells: Vec<[f32; 2]>,
    /// Centroid position in the 3x3 grid frame (grid center at the origin).
    pub centroid: [f32; 2],
}

impl Footprint {
    pub fn of(shape_id: u16) -> Self {
        let mask = &SHAPES[shape_id as usize];
        let mut raw = Vec::new();
        for (i, row) in mask.iter().enumerate() {
            for (j, &on) in row.iter().enumerate() {
                if on {
                    raw.push([(j as f32 - 1.0) * CELL, (1.0 - i as f32) * CELL]);
                }
            }
        }
        let n = raw.len() as f32;
        let cx = raw.iter().map(|c| c[0]).sum::<f32>() / n;
        let cy = raw.iter().map(|c| c[1]).sum::<f32>() / n;
        Self {
            cells: raw.iter().map(|c| [c[0] - cx, c[1] - cy]).collect(),
            centroid: [cx, cy],
        }
    }

    /// Occupancy of grid cell `(row, col)`.
    pub fn occupied(shape_id: u16, row: usize, col: usize) -> bool {
        SHAPES[shape_id as usize][row][col]
    }
}

pub fn mask_cells(shape_id: u16) -> usize {
    SHAPES[shape_id as usize].iter().flatten().filter(|&&b| b).count()
}

pub fn is_four_connected(mask: &[[bool; 3]; 3]) -> bool {
    let cells: Vec<(usize, usize)> = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .filter(|&(i, j)| mask[i][j])
        .collect();
    let Some(&start) = cells.first() else {
        return false;
    };
    let mut seen = vec![start];
    let mut stack = vec![start];
    while let Some((i, j)) = stack.pop() {
        for (di, dj) in [(0i32, 1i32), (1, 0), (0, -1), (-1, 0)] {
            let (ni, nj) = (i as i32 + di, j as i32 + dj);
            if (0..3).contains(&ni) && (0..3).contains(&nj) {
                let n = (ni as usize, nj as usize);
                if mask[n.0][n.1] && !seen.contains(&n) {
                    seen.push(n);
                    stack.push(n);
                }
            }
        }
    }
    seen.len() == cells.len()
}

impl ObjectSpec {
    pub fn footprint(&self) -> Footprint {
        Footprint::of(self.shape_id)
    }

    /// Center of mass in object-local coordinates.
    pub fn com_local(&self) -> [f32; 2] {
        [self.com_offset[0] * CELL, self.com_offset[1] * CELL]
    }

    /// Whether the center of mass lies inside the footprint's bounding box.
    pub fn com_in_bounds(&self) -> bool {
        let fp = self.footprint();
        let half = CELL / 2.0;
        let com = self.com_local();
        let (lo_x, hi_x) = fp
            .cells
            .iter()
            .fold((f32::MAX, f32::MIN), |(lo, hi), c| (lo.min(c[0] - half), hi.max(c[0] + half)));
        let (lo_y, hi_y) = fp
            .cells
            .iter()
            .fold((f32::MAX, f32::MIN), |(lo, hi), c| (lo.min(c[1] - half), hi.max(c[1] + half)));
        com[0] > lo_x && com[0] < hi_x && com[1] > lo_y && com[1] < hi_y
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape_id as usize >= SHAPES.len() {
            return Err(invalid(format!("shape_id {} out of range", self.shape_id)));
        }
        if !(0.5..=2.0).contains(&self.mass) || !(0.2..=1.0).contains(&self.friction) {
            return Err(invalid("mass or friction out of range"));
        }
        if !self.com_in_bounds() {
            return Err(invalid("center of mass outside footprint bounds"));
        }
        Ok(())
    }
}

/// Every valid (shape, mass, friction, com offset) combination, in a fixed order.
pub fn all_specs() -> Vec<ObjectSpec> {
    let mut out = Vec::new();
    for shape_id in 0..SHAPES.len() as u16 {
        for &mass in &MASSES {
            for &friction in &FRICTIONS {
                for &(cx, cy) in &COM_OFFSETS {
                    let s = ObjectSpec {
                        shape_id,
                        mass,
                        friction,
                        com_offset: [cx, cy],
                    };
                    if s.com_in_bounds() {
                        out.push(s);
                    }
                }
            }
        }
    }
    out
}

pub fn catalog_capacity() -> usize {
    all_specs().len()
}

/// `count` distinct specs, shuffled under `seed`. Taking a prefix for
/// training and the following entries for testing keeps the splits disjoint.
pub fn sample_object_catalog(seed: u64, count: usize) -> Result<Vec<ObjectSpec>> {
    let mut all = all_specs();
    if count > all.len() {
        return Err(invalid(format!(
            "requested {count} objects, catalog holds {}",
            all.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(count);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_are_valid() {
        for (i, m) in SHAPES.iter().enumerate() {
            assert!(mask_cells(i as u16) >= 3, "shape {i}");
            assert!(is_four_connected(m), "shape {i}");
        }
    }

    #[test]
    fn catalog_is_deterministic_and_distinct() {
        let a = sample_object_catalog(11, 25).unwrap();
        let b = sample_object_catalog(11, 25).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
        assert!(a.iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn over_capacity_is_error() {
        let cap = catalog_capacity();
        assert!(sample_object_catalog(1, cap).is_ok());
        assert!(sample_object_catalog(1, cap + 1).is_err());
    }

    #[test]
    fn footprint_centered() {
        for s in 0..SHAPES.len() as u16 {
            let fp = Footprint::of(s);
            let sx: f32 = fp.cells.iter().map(|c| c[0]).sum();
            let sy: f32 = fp.cells.iter().map(|c| c[1]).sum();
            assert!(sx.abs() < 1e-5 && sy.abs() < 1e-5);
        }
    }
}
