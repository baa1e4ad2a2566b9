use super::object::{Footprint, ObjectSpec, CELL};
use super::sim::WorldState;

pub const FRAME_SIZE: usize = 16;
pub const OBJECT_INTENSITY: f32 = 0.8;
pub const PUSHER_INTENSITY: f32 = 0.4;

/// Pixel offsets of the pusher stamp around its snapped center.
const PUSHER_STAMP: [(i32, i32); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

/// Grayscale frame, row 0 at the top (high world y).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub pusher_mask: Vec<bool>,
}

impl Frame {
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
            pusher_mask: vec![false; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }
}

pub fn pixel_center(row: usize, col: usize, size: usize) -> [f32; 2] {
    let s = size as f32;
    [(col as f32 + 0.5) / s, 1.0 - (row as f32 + 0.5) / s]
}

/// Object occupancy per pixel via nearest-cell lookup at pixel centers.
pub fn object_mask(state: &WorldState, spec: &ObjectSpec, size: usize) -> Vec<bool> {
    let fp = Footprint::of(spec.shape_id);
    let mut out = vec![false; size * size];
    for row in 0..size {
        for col in 0..size {
            let local = state.to_local(pixel_center(row, col, size));
            // Back to the 3x3 grid frame, whose cells span [-1.5, 1.5] * CELL.
            let gx = local[0] + fp.centroid[0];
            let gy = local[1] + fp.centroid[1];
            let j = ((gx + 1.5 * CELL) / CELL).floor();
            let i = ((1.5 * CELL - gy) / CELL).floor();
            if (0.0..3.0).contains(&i) && (0.0..3.0).contains(&j) {
                out[row * size + col] = Footprint::occupied(spec.shape_id, i as usize, j as usize);
            }
        }
    }
    out
}

/// Pixels covered by the pusher stamp centered at world `(px, py)`.
pub fn pusher_mask(px: f32, py: f32, size: usize) -> Vec<bool> {
    let s = size as f32;
    let col = ((px * s).floor() as i32).clamp(1, size as i32 - 2);
    let row = (((1.0 - py) * s).floor() as i32).clamp(1, size as i32 - 2);
    let mut out = vec![false; size * size];
    for (dr, dc) in PUSHER_STAMP {
        out[(row + dr) as usize * size + (col + dc) as usize] = true;
    }
    out
}

pub fn render(state: &WorldState, spec: &ObjectSpec) -> Frame {
    render_sized(state, spec, FRAME_SIZE)
}

pub fn render_sized(state: &WorldState, spec: &ObjectSpec, size: usize) -> Frame {
    let obj = object_mask(state, spec, size);
    let pm = pusher_mask(state.px, state.py, size);
    let pixels = obj
        .iter()
        .zip(&pm)
        .map(|(&o, &p)| {
            if p {
                PUSHER_INTENSITY
            } else if o {
                OBJECT_INTENSITY
            } else {
                0.0
            }
        })
        .collect();
    Frame {
        height: size,
        width: size,
        pixels,
        pusher_mask: pm,
    }
}
