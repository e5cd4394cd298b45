//! Deterministic multi-agent search environment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledVolume;
use crate::pose_graph::NUM_LANDMARKS;

pub type Position = [i64; 3];

pub const NUM_ACTIONS: usize = 6;
pub const DEFAULT_START_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    PlusX = 0,
    MinusX,
    PlusY,
    MinusY,
    PlusZ,
    MinusZ,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::PlusX,
        Action::MinusX,
        Action::PlusY,
        Action::MinusY,
        Action::PlusZ,
        Action::MinusZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn delta(self) -> Position {
        let i = self.index();
        let mut d = [0; 3];
        d[i / 2] = if i % 2 == 0 { 1 } else { -1 };
        d
    }
}

/// Moves every agent by its action times `step_voxels`, clamping to the grid.
pub fn env_step(
    positions: &[Position; NUM_LANDMARKS],
    actions: &[Action; NUM_LANDMARKS],
    dims: [usize; 3],
    step_voxels: i64,
) -> [Position; NUM_LANDMARKS] {
    let mut out = *positions;
    for (p, a) in out.iter_mut().zip(actions) {
        let d = a.delta();
        for axis in 0..3 {
            p[axis] = (p[axis] + d[axis] * step_voxels).clamp(0, dims[axis] as i64 - 1);
        }
    }
    out
}

/// Writes the `size³` crop centered at `center` into `out` (x fastest).
/// The crop spans `center - size/2 .. center - size/2 + size` on each axis;
/// voxels outside the grid read as zero.
pub fn extract_patch_into(v: &LabeledVolume, center: Position, size: usize, out: &mut [f64]) {
    assert_eq!(out.len(), size * size * size);
    let half = (size / 2) as i64;
    let origin = [center[0] - half, center[1] - half, center[2] - half];
    let [dx, dy, dz] = v.dims.map(|d| d as i64);
    // x range that lies inside the volume
    let x_lo = (-origin[0]).clamp(0, size as i64) as usize;
    let x_hi = (dx - origin[0]).clamp(0, size as i64) as usize;
    for k in 0..size {
        let z = origin[2] + k as i64;
        for j in 0..size {
            let y = origin[1] + j as i64;
            let row = &mut out[(k * size + j) * size..(k * size + j + 1) * size];
            if z < 0 || z >= dz || y < 0 || y >= dy || x_lo >= x_hi {
                row.fill(0.0);
                continue;
            }
            row[..x_lo].fill(0.0);
            row[x_hi..].fill(0.0);
            let base = v.index(0, y as usize, z as usize) as i64 + origin[0];
            for i in x_lo..x_hi {
                row[i] = v.voxels[(base + i as i64) as usize] as f64;
            }
        }
    }
}

pub fn extract_patch(v: &LabeledVolume, center: Position, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size * size];
    extract_patch_into(v, center, size, &mut out);
    out
}

/// Uniform draws over the central box whose side is `ceil(fraction * D)` per axis.
pub fn initial_positions_with_fraction(v: &LabeledVolume, seed: u64, fraction: f64) -> [Position; NUM_LANDMARKS] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranges = [(0i64, 0i64); 3];
    for a in 0..3 {
        let d = v.dims[a] as i64;
        let side = ((fraction * d as f64).ceil() as i64).clamp(1, d);
        let lo = (d - side + 1) / 2;
        ranges[a] = (lo, lo + side - 1);
    }
    let mut out = [[0; 3]; NUM_LANDMARKS];
    for p in &mut out {
        for a in 0..3 {
            p[a] = rng.gen_range(ranges[a].0..=ranges[a].1);
        }
    }
    out
}

pub fn initial_positions(v: &LabeledVolume, seed: u64) -> [Position; NUM_LANDMARKS] {
    initial_positions_with_fraction(v, seed, DEFAULT_START_FRACTION)
}
