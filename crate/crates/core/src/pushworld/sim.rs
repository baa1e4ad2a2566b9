//! Quasi-static single-contact pushing.

use std::f32::consts::PI;

use super::object::{ObjectSpec, CELL};

/// Largest per-step pusher displacement along each axis.
pub const A_MAX: f32 = 0.08;
/// Physical pusher radius.
pub const PUSHER_RADIUS: f32 = 0.05;
/// Pusher center bounds; keeps the rendered stamp fully inside the frame.
pub const PUSHER_MIN: f32 = 1.5 / 16.0;
pub const PUSHER_MAX: f32 = 14.5 / 16.0;
/// Object centroid bounds.
pub const OBJECT_MIN: f32 = 0.12;
pub const OBJECT_MAX: f32 = 0.88;
/// Torque gain.
pub const KAPPA: f32 = 1.0;
/// Per-step rotation limit.
pub const MAX_TURN: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub dx: f32,
    pub dy: f32,
}

impl Action {
    pub const ZERO: Action = Action { dx: 0.0, dy: 0.0 };

    pub fn new(dx: f32, dy: f32) -> Self {
        Self { dx, dy }.clamped()
    }

    pub fn clamped(self) -> Self {
        Self {
            dx: self.dx.clamp(-A_MAX, A_MAX),
            dy: self.dy.clamp(-A_MAX, A_MAX),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub x: f32,
    pub y: f32,
    pub theta: f32,
    pub px: f32,
    pub py: f32,
}

pub fn wrap_angle(a: f32) -> f32 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[inline]
pub(crate) fn rotate(v: [f32; 2], a: f32) -> [f32; 2] {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

impl WorldState {
    pub fn new(x: f32, y: f32, theta: f32, px: f32, py: f32) -> Self {
        Self { x, y, theta, px, py }.normalized()
    }

    pub fn normalized(self) -> Self {
        Self {
            x: self.x.clamp(OBJECT_MIN, OBJECT_MAX),
            y: self.y.clamp(OBJECT_MIN, OBJECT_MAX),
            theta: wrap_angle(self.theta),
            px: self.px.clamp(PUSHER_MIN, PUSHER_MAX),
            py: self.py.clamp(PUSHER_MIN, PUSHER_MAX),
        }
    }

    /// World-frame to object-local coordinates.
    pub fn to_local(&self, p: [f32; 2]) -> [f32; 2] {
        rotate([p[0] - self.x, p[1] - self.y], -self.theta)
    }

    pub fn to_world(&self, p: [f32; 2]) -> [f32; 2] {
        let r = rotate(p, self.theta);
        [r[0] + self.x, r[1] + self.y]
    }

    pub fn distance_to(&self, other: &WorldState) -> f32 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Deepest disc/footprint overlap in object-local coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Contact {
    /// Penetration depth (> 0).
    pub depth: f32,
    /// Unit normal pointing from the object toward the pusher.
    pub normal: [f32; 2],
    /// Contact point on the object surface.
    pub point: [f32; 2],
}

pub fn find_contact(spec: &ObjectSpec, center: [f32; 2]) -> Option<Contact> {
    let half = CELL / 2.0;
    let cells = spec.footprint().cells;
    let occupied = |p: [f32; 2]| cells.iter().any(|c| (c[0] - p[0]).abs() < 1e-4 && (c[1] - p[1]).abs() < 1e-4);
    let mut best: Option<Contact> = None;
    for &c in &cells {
        let rel = [center[0] - c[0], center[1] - c[1]];
        let closest = [rel[0].clamp(-half, half), rel[1].clamp(-half, half)];
        let d = [rel[0] - closest[0], rel[1] - closest[1]];
        let dist = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let contact = if dist > 1e-6 {
            if dist >= PUSHER_RADIUS {
                continue;
            }
            Contact {
                depth: PUSHER_RADIUS - dist,
                normal: [d[0] / dist, d[1] / dist],
                point: [c[0] + closest[0], c[1] + closest[1]],
            }
        } else {
            // Disc center inside the cell: leave through the nearest face not
            // shared with another occupied cell.
            let exits = [
                (half - rel[0], [1.0, 0.0]),
                (half + rel[0], [-1.0, 0.0]),
                (half - rel[1], [0.0, 1.0]),
                (half + rel[1], [0.0, -1.0]),
            ];
            let exposed = |n: [f32; 2]| !occupied([c[0] + n[0] * CELL, c[1] + n[1] * CELL]);
            let nearest = |open_only: bool| {
                exits
                    .iter()
                    .copied()
                    .filter(|&(_, n)| !open_only || exposed(n))
                    .fold(None, |acc: Option<(f32, [f32; 2])>, x| match acc {
                        Some(a) if a.0 <= x.0 => Some(a),
                        _ => Some(x),
                    })
            };
            let (e, n) = nearest(true).or_else(|| nearest(false)).expect("a cell has four faces");
            Contact {
                depth: PUSHER_RADIUS + e,
                normal: n,
                point: [c[0] + rel[0] + n[0] * e, c[1] + rel[1] + n[1] * e],
            }
        };
        if best.is_none_or(|b| contact.depth > b.depth) {
            best = Some(contact);
        }
    }
    best
}

/// Squared radius of gyration about the center of mass, cells treated as
/// uniform squares.
pub fn gyration_sq(spec: &ObjectSpec) -> f32 {
    let com = spec.com_local();
    let cells = spec.footprint().cells;
    let n = cells.len() as f32;
    cells
        .iter()
        .map(|c| (c[0] - com[0]).powi(2) + (c[1] - com[1]).powi(2))
        .sum::<f32>()
        / n
        + CELL * CELL / 6.0
}

/// Smallest friction-mass product in the catalog; it gets mobility 1.
pub const MOBILITY_REF: f32 = 0.1;

/// Share of the overlap-resolving displacement the object takes,
/// `(friction * mass)^-1/2`, normalized so it never exceeds 1.
pub fn mobility(spec: &ObjectSpec) -> f32 {
    (MOBILITY_REF / (spec.friction * spec.mass)).sqrt().min(1.0)
}

/// Moves the pusher, then resolves at most one contact: the object takes the
/// mobility-scaled share of the overlap, split between translation and a turn
/// about its center of mass of `kappa * (r x f) / (mass * r_g^2)`; the pusher
/// backs off by the remainder.
pub fn step(state: &WorldState, spec: &ObjectSpec, action: Action) -> WorldState {
    let a = action.clamped();
    let mut next = WorldState {
        px: (state.px + a.dx).clamp(PUSHER_MIN, PUSHER_MAX),
        py: (state.py + a.dy).clamp(PUSHER_MIN, PUSHER_MAX),
        ..*state
    };
    if a.dx == 0.0 && a.dy == 0.0 {
        return next;
    }
    let local = next.to_local([next.px, next.py]);
    let Some(contact) = find_contact(spec, local) else {
        return next;
    };
    let com = spec.com_local();
    let r = [contact.point[0] - com[0], contact.point[1] - com[1]];
    let push = [-contact.normal[0], -contact.normal[1]];
    let lever = r[0] * push[1] - r[1] * push[0];
    let rg2 = gyration_sq(spec);
    // Impulse that moves the contact point out by the scaled depth once
    // translation and rotation are both accounted for.
    let impulse = spec.mass * mobility(spec) * contact.depth / (1.0 + lever * lever / rg2);
    let f_local = [push[0] * impulse, push[1] * impulse];
    let torque = r[0] * f_local[1] - r[1] * f_local[0];
    let omega = (KAPPA * torque / (spec.mass * rg2)).clamp(-MAX_TURN, MAX_TURN);
    let f_local = [f_local[0] / spec.mass, f_local[1] / spec.mass];

    let f_world = rotate(f_local, state.theta);
    let com_world = next.to_world(com);
    let new_com = [com_world[0] + f_world[0], com_world[1] + f_world[1]];
    let theta = state.theta + omega;
    let back = rotate([-com[0], -com[1]], theta);
    next.x = new_com[0] + back[0];
    next.y = new_com[1] + back[1];
    next.theta = theta;
    // The pusher yields the overlap the object did not take.
    let yield_by = (1.0 - mobility(spec)) * contact.depth;
    let n_world = rotate(contact.normal, state.theta);
    next.px += n_world[0] * yield_by;
    next.py += n_world[1] * yield_by;
    next.normalized()
}
