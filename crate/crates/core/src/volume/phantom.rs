//! Procedural phantom: a posed 15-joint stick figure rendered into a volume.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledVolume;
use crate::error::{Error, Result};
use crate::geom::{add, dist, mat_vec, norm, rotation_xyz, scale, sub, Vec3};
use crate::pose_graph::{Landmark, NUM_LANDMARKS};

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Multiplies the template bone lengths and joint offsets.
    pub body_scale: f64,
    pub torso_radii: [f64; 3],
    pub head_radii: [f64; 3],
    pub limb_radius: f64,
    pub marker_radius: f64,
    pub background_level: f64,
    pub torso_level: f64,
    pub head_level: f64,
    pub limb_level: f64,
    pub marker_level: f64,
    pub noise_sd: f64,
    /// Max deviation (radians) of each limb segment from its rest direction, per Euler axis.
    pub joint_angle_range: f64,
    /// Max global rotation (radians) per Euler axis.
    pub rotation_range: f64,
    /// Max global translation (voxels) per axis.
    pub translation_range: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [48, 48, 48],
            spacing_mm: [3.0, 3.0, 3.0],
            body_scale: 1.0,
            torso_radii: [5.0, 3.5, 8.0],
            head_radii: [3.8, 3.8, 4.2],
            limb_radius: 1.5,
            marker_radius: 1.3,
            background_level: 0.0,
            torso_level: 0.35,
            head_level: 0.45,
            limb_level: 0.8,
            marker_level: 1.0,
            noise_sd: 0.05,
            joint_angle_range: 0.45,
            rotation_range: 0.35,
            translation_range: 3.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::SpecInfeasible(msg));
        if self.dims.iter().any(|&d| d < 8) {
            return bad(format!("dims {:?} must be >= 8 per axis", self.dims));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return bad("spacing must be positive".into());
        }
        // A rounded landmark voxel is at most sqrt(3)/2 away from the joint.
        let min_r = 3f64.sqrt() / 2.0;
        if !(self.limb_radius >= min_r) || !(self.marker_radius >= min_r) {
            return bad(format!("limb and marker radii must be >= {min_r:.3}"));
        }
        if !(self.body_scale > 0.0) || !(self.noise_sd >= 0.0) {
            return bad("body_scale must be > 0 and noise_sd >= 0".into());
        }
        if self.torso_radii.iter().chain(&self.head_radii).any(|&r| !(r > 0.0)) {
            return bad("ellipsoid radii must be positive".into());
        }
        if !(self.marker_level >= self.limb_level) {
            return bad("marker level must be at least the limb level".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub radii: [f64; 3],
    /// Columns are the ellipsoid axes in volume coordinates.
    pub rotation: [[f64; 3]; 3],
}

impl Ellipsoid {
    fn contains(&self, p: Vec3) -> bool {
        let d = sub(p, self.center);
        let mut acc = 0.0;
        for axis in 0..3 {
            let local = (0..3).map(|r| self.rotation[r][axis] * d[r]).sum::<f64>();
            acc += (local / self.radii[axis]).powi(2);
        }
        acc <= 1.0
    }
}

/// Analytic description of a posed phantom; `intensity` is the noiseless
/// signal at any continuous point.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGeometry {
    pub landmarks: [Vec3; NUM_LANDMARKS],
    pub torso: Ellipsoid,
    pub head: Ellipsoid,
    pub capsules: Vec<(Landmark, Landmark)>,
    pub markers: Vec<Landmark>,
    pub limb_radius: f64,
    pub marker_radius: f64,
    pub levels: Levels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Levels {
    pub background: f64,
    pub torso: f64,
    pub head: f64,
    pub limb: f64,
    pub marker: f64,
}

fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let len2 = crate::geom::dot(ab, ab);
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (crate::geom::dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    dist(p, add(a, scale(ab, t)))
}

impl PhantomGeometry {
    pub fn intensity(&self, p: Vec3) -> f64 {
        let mut v = self.levels.background;
        if self.torso.contains(p) {
            v = v.max(self.levels.torso);
        }
        if self.head.contains(p) {
            v = v.max(self.levels.head);
        }
        for &(a, b) in &self.capsules {
            if segment_distance(p, self.landmarks[a.index()], self.landmarks[b.index()]) <= self.limb_radius {
                v = v.max(self.levels.limb);
                break;
            }
        }
        for &m in &self.markers {
            if dist(p, self.landmarks[m.index()]) <= self.marker_radius {
                v = v.max(self.levels.marker);
            }
        }
        v
    }
}

fn unit(v: Vec3) -> Vec3 {
    scale(v, 1.0 / norm(v))
}

fn mirror(v: Vec3) -> Vec3 {
    [-v[0], v[1], v[2]]
}

/// Body frame: +x towards the left side, +y anterior, +z superior.
struct Template;

impl Template {
    const BLADDER: Vec3 = [0.0, 0.0, 0.0];
    const HIP_L: Vec3 = [3.5, 0.0, -1.0];
    const SHOULDER_L: Vec3 = [4.5, 0.0, 11.0];
    const EYE_L: Vec3 = [1.6, 3.2, 17.5];
    const TORSO_CENTER: Vec3 = [0.0, 0.0, 5.0];
    const HEAD_CENTER: Vec3 = [0.0, 0.5, 17.0];
    const UPPER_ARM: f64 = 6.5;
    const FOREARM: f64 = 5.5;
    const THIGH: f64 = 7.0;
    const SHIN: f64 = 6.5;
    // rest directions for the left side; the right side mirrors x
    const UPPER_ARM_DIR: Vec3 = [0.35, 0.3, -1.0];
    const FOREARM_DIR: Vec3 = [-0.2, 1.0, 0.3];
    const THIGH_DIR: Vec3 = [0.2, 1.0, -0.35];
    const SHIN_DIR: Vec3 = [0.0, -0.25, -1.0];
}

fn perturbed(dir: Vec3, range: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    let mut draw = || if range > 0.0 { rng.gen_range(-range..=range) } else { 0.0 };
    let (a, b, c) = (draw(), draw(), draw());
    unit(mat_vec(rotation_xyz(a, b, c), unit(dir)))
}

fn pose_skeleton(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> ([Vec3; NUM_LANDMARKS], Vec3, Vec3) {
    use Landmark::*;
    let s = spec.body_scale;
    let mut body = [[0.0; 3]; NUM_LANDMARKS];
    body[Bladder.index()] = Template::BLADDER;
    for (left, right, base) in [
        (EyeL, EyeR, Template::EYE_L),
        (ShoulderL, ShoulderR, Template::SHOULDER_L),
        (HipL, HipR, Template::HIP_L),
    ] {
        body[left.index()] = scale(base, s);
        body[right.index()] = scale(mirror(base), s);
    }
    let chains = [
        (ShoulderL, ElbowL, WristL, false, Template::UPPER_ARM, Template::FOREARM, Template::UPPER_ARM_DIR, Template::FOREARM_DIR),
        (ShoulderR, ElbowR, WristR, true, Template::UPPER_ARM, Template::FOREARM, Template::UPPER_ARM_DIR, Template::FOREARM_DIR),
        (HipL, KneeL, AnkleL, false, Template::THIGH, Template::SHIN, Template::THIGH_DIR, Template::SHIN_DIR),
        (HipR, KneeR, AnkleR, true, Template::THIGH, Template::SHIN, Template::THIGH_DIR, Template::SHIN_DIR),
    ];
    for (root, mid, tip, right, l1, l2, d1, d2) in chains {
        let (d1, d2) = if right { (mirror(d1), mirror(d2)) } else { (d1, d2) };
        let d1 = perturbed(d1, spec.joint_angle_range, rng);
        let d2 = perturbed(d2, spec.joint_angle_range, rng);
        body[mid.index()] = add(body[root.index()], scale(d1, l1 * s));
        body[tip.index()] = add(body[mid.index()], scale(d2, l2 * s));
    }
    (body, scale(Template::TORSO_CENTER, s), scale(Template::HEAD_CENTER, s))
}

/// Samples a pose that fits inside the volume and returns its analytic geometry.
pub fn phantom_geometry(spec: &PhantomSpec, seed: u64) -> Result<PhantomGeometry> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = spec.limb_radius.max(spec.marker_radius) + 1.0;
    for _ in 0..MAX_ATTEMPTS {
        let (body, torso_c, head_c) = pose_skeleton(spec, &mut rng);
        let r = spec.rotation_range;
        let mut angle = || if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let rot = rotation_xyz(angle(), angle(), angle());
        let rotated: Vec<Vec3> = body.iter().map(|&p| mat_vec(rot, p)).collect();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &rotated {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let t = spec.translation_range;
        let mut shift = [0.0; 3];
        for a in 0..3 {
            let jitter = if t > 0.0 { rng.gen_range(-t..=t) } else { 0.0 };
            shift[a] = (spec.dims[a] as f64 - 1.0) / 2.0 - (lo[a] + hi[a]) / 2.0 + jitter;
        }
        let mut landmarks = [[0.0; 3]; NUM_LANDMARKS];
        for (dst, p) in landmarks.iter_mut().zip(&rotated) {
            *dst = add(*p, shift);
        }
        let fits = landmarks
            .iter()
            .all(|p| (0..3).all(|a| p[a] >= margin && p[a] <= spec.dims[a] as f64 - 1.0 - margin));
        if !fits {
            continue;
        }
        let place = |c: Vec3| add(mat_vec(rot, c), shift);
        use Landmark::*;
        return Ok(PhantomGeometry {
            landmarks,
            torso: Ellipsoid {
                center: place(torso_c),
                radii: spec.torso_radii,
                rotation: rot,
            },
            head: Ellipsoid {
                center: place(head_c),
                radii: spec.head_radii,
                rotation: rot,
            },
            capsules: vec![
                (ShoulderL, ElbowL),
                (ElbowL, WristL),
                (ShoulderR, ElbowR),
                (ElbowR, WristR),
                (HipL, KneeL),
                (KneeL, AnkleL),
                (HipR, KneeR),
                (KneeR, AnkleR),
            ],
            markers: vec![EyeL, EyeR, Bladder],
            limb_radius: spec.limb_radius,
            marker_radius: spec.marker_radius,
            levels: Levels {
                background: spec.background_level,
                torso: spec.torso_level,
                head: spec.head_level,
                limb: spec.limb_level,
                marker: spec.marker_level,
            },
        });
    }
    Err(Error::SpecInfeasible(format!(
        "posed skeleton did not fit inside {:?} after {MAX_ATTEMPTS} attempts",
        spec.dims
    )))
}

/// Renders a labeled phantom; deterministic for a fixed `(spec, seed)`.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<LabeledVolume> {
    let geom = phantom_geometry(spec, seed)?;
    let [dx, dy, dz] = spec.dims;
    let mut voxels = Vec::with_capacity(dx * dy * dz);
    // independent stream for noise so the pose draw is unaffected by noise_sd
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, spec.noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let mut v = geom.intensity([x as f64, y as f64, z as f64]);
                if spec.noise_sd > 0.0 {
                    v += noise.sample(&mut noise_rng);
                }
                voxels.push(v as f32);
            }
        }
    }
    let mut vol = LabeledVolume::new(spec.dims, spec.spacing_mm, voxels, geom.landmarks)?;
    vol.meta.insert("source".into(), "phantom".into());
    vol.meta.insert("seed".into(), seed.to_string());
    Ok(vol)
}
