//! Labeled volumes, their on-disk format, synthetic phantoms, augmentation
//! and the multi-agent search environment.

mod augment;
mod env;
mod io;
mod phantom;

use std::collections::BTreeMap;

pub use augment::{augment, augment_with, AugmentParams};
pub use env::{DEFAULT_START_FRACTION, NUM_ACTIONS, env_step, extract_patch, extract_patch_into, initial_positions, initial_positions_with_fraction, Action, Position};
pub use io::{load_volume, read_volume, save_volume, write_volume};
pub use phantom::{generate_phantom, phantom_geometry, PhantomGeometry, PhantomSpec};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::pose_graph::NUM_LANDMARKS;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// x-fastest: index = x + Dx * (y + Dy * z)
    pub voxels: Vec<f32>,
    pub landmarks: [Vec3; NUM_LANDMARKS],
    pub meta: BTreeMap<String, String>,
}

impl LabeledVolume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], voxels: Vec<f32>, landmarks: [Vec3; NUM_LANDMARKS]) -> Result<Self> {
        let v = LabeledVolume {
            dims,
            spacing_mm,
            voxels,
            landmarks,
            meta: BTreeMap::new(),
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.dims.iter().product::<usize>();
        if self.voxels.len() != expected {
            return Err(Error::Format(format!(
                "dims {:?} imply {} voxels, payload has {}",
                self.dims,
                expected,
                self.voxels.len()
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Format(format!("spacing must be positive, got {:?}", self.spacing_mm)));
        }
        for (i, p) in self.landmarks.iter().enumerate() {
            for axis in 0..3 {
                let hi = self.dims[axis] as f64 - 1.0;
                if !(p[axis] >= 0.0 && p[axis] <= hi) {
                    return Err(Error::Format(format!("landmark {i} at {p:?} lies outside dims {:?}", self.dims)));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    /// Voxel value with zero outside the grid.
    #[inline]
    pub fn get_padded(&self, p: [i64; 3]) -> f32 {
        if (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a]) {
            self.get(p[0] as usize, p[1] as usize, p[2] as usize)
        } else {
            0.0
        }
    }

    /// Trilinear sample at a continuous coordinate; outside the grid reads as zero.
    pub fn sample_trilinear(&self, p: Vec3) -> f64 {
        let base = [p[0].floor(), p[1].floor(), p[2].floor()];
        let frac = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
        let b = [base[0] as i64, base[1] as i64, base[2] as i64];
        let mut acc = 0.0;
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            acc += w * self.get_padded([b[0] + off[0] as i64, b[1] + off[1] as i64, b[2] + off[2] as i64]) as f64;
        }
        acc
    }
}
