//! Training augmentation: random axis flips, a quarter-turn rotation about a
//! random axis, and isotropic trilinear rescaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledVolume;
use crate::geom::Vec3;
use crate::pose_graph::{Landmark, NUM_LANDMARKS};

pub const SCALE_RANGE: (f64, f64) = (0.8, 1.5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flips: [bool; 3],
    pub rotation_axis: usize,
    pub quarter_turns: u8,
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flips: [false; 3],
        rotation_axis: 2,
        quarter_turns: 0,
        scale: 1.0,
    };

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        AugmentParams {
            flips: [rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_bool(0.5)],
            rotation_axis: rng.gen_range(0..3),
            quarter_turns: rng.gen_range(0..4),
            scale: rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1),
        }
    }

    /// True when the grid part of the transform is orientation-reversing.
    pub fn is_reflection(&self) -> bool {
        self.flips.iter().filter(|&&f| f).count() % 2 == 1
    }
}

/// Integer grid map: out[a] = sign[a] * in[src[a]] + offset[a].
#[derive(Debug, Clone, Copy)]
struct GridMap {
    src: [usize; 3],
    sign: [i64; 3],
    offset: [i64; 3],
    out_dims: [usize; 3],
}

impl GridMap {
    fn identity(dims: [usize; 3]) -> Self {
        GridMap {
            src: [0, 1, 2],
            sign: [1; 3],
            offset: [0; 3],
            out_dims: dims,
        }
    }

    fn then_flip(self, axis: usize) -> Self {
        let mut m = self;
        m.sign[axis] = -m.sign[axis];
        m.offset[axis] = m.out_dims[axis] as i64 - 1 - m.offset[axis];
        m
    }

    /// Quarter turn in the plane of the two axes other than `axis`:
    /// (u, v) -> (Dv - 1 - v, u).
    fn then_quarter_turn(self, axis: usize) -> Self {
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (2, 0),
            _ => (0, 1),
        };
        let mut m = self;
        let dv = self.out_dims[v] as i64;
        m.src[u] = self.src[v];
        m.sign[u] = -self.sign[v];
        m.offset[u] = dv - 1 - self.offset[v];
        m.src[v] = self.src[u];
        m.sign[v] = self.sign[u];
        m.offset[v] = self.offset[u];
        m.out_dims[u] = self.out_dims[v];
        m.out_dims[v] = self.out_dims[u];
        m
    }

    fn apply(&self, p: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = self.sign[a] as f64 * p[self.src[a]] + self.offset[a] as f64;
        }
        out
    }

    /// Inverse for integer output coordinates.
    fn source_of(&self, q: [usize; 3]) -> [usize; 3] {
        let mut p = [0usize; 3];
        for a in 0..3 {
            p[self.src[a]] = ((q[a] as i64 - self.offset[a]) * self.sign[a]) as usize;
        }
        p
    }
}

pub fn augment(v: &LabeledVolume, seed: u64) -> LabeledVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_with(v, &AugmentParams::sample(&mut rng))
}

/// Applies a specific augmentation draw. Landmarks follow the same spatial
/// map; left/right labels swap when the map is a reflection.
pub fn augment_with(v: &LabeledVolume, params: &AugmentParams) -> LabeledVolume {
    let mut map = GridMap::identity(v.dims);
    for axis in 0..3 {
        if params.flips[axis] {
            map = map.then_flip(axis);
        }
    }
    for _ in 0..params.quarter_turns % 4 {
        map = map.then_quarter_turn(params.rotation_axis);
    }

    let od = map.out_dims;
    let mut grid = vec![0f32; od.iter().product()];
    for z in 0..od[2] {
        for y in 0..od[1] {
            for x in 0..od[0] {
                let p = map.source_of([x, y, z]);
                grid[x + od[0] * (y + od[1] * z)] = v.get(p[0], p[1], p[2]);
            }
        }
    }
    let mut spacing = [0.0; 3];
    for a in 0..3 {
        spacing[a] = v.spacing_mm[map.src[a]];
    }
    let mut landmarks = [[0.0; 3]; NUM_LANDMARKS];
    for (dst, p) in landmarks.iter_mut().zip(&v.landmarks) {
        *dst = map.apply(*p);
    }
    if params.is_reflection() {
        let orig = landmarks;
        for l in Landmark::ALL {
            landmarks[l.mirrored().index()] = orig[l.index()];
        }
    }
    let mut rotated = LabeledVolume {
        dims: od,
        spacing_mm: spacing,
        voxels: grid,
        landmarks,
        meta: v.meta.clone(),
    };

    if params.scale != 1.0 {
        rotated = rescale(&rotated, params.scale);
    }
    rotated.meta.insert(
        "augment".into(),
        format!(
            "flips={:?} axis={} turns={} scale={}",
            params.flips, params.rotation_axis, params.quarter_turns, params.scale
        ),
    );
    rotated
}

/// Isotropic rescale about the origin voxel: p' = s·p. Output dims are the
/// smallest grid that contains the scaled extent.
fn rescale(v: &LabeledVolume, s: f64) -> LabeledVolume {
    let mut od = [0usize; 3];
    for a in 0..3 {
        od[a] = ((v.dims[a] as f64 - 1.0) * s).floor() as usize + 1;
    }
    let mut voxels = Vec::with_capacity(od.iter().product());
    for z in 0..od[2] {
        for y in 0..od[1] {
            for x in 0..od[0] {
                let src = [x as f64 / s, y as f64 / s, z as f64 / s];
                voxels.push(v.sample_trilinear(src) as f32);
            }
        }
    }
    let mut landmarks = v.landmarks;
    for p in &mut landmarks {
        for a in 0..3 {
            p[a] = (p[a] * s).min(od[a] as f64 - 1.0);
        }
    }
    LabeledVolume {
        dims: od,
        spacing_mm: v.spacing_mm,
        voxels,
        landmarks,
        meta: v.meta.clone(),
    }
}
