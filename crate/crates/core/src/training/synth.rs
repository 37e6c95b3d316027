//! Procedural rooms: a floor, four walls, and boxes and spheres standing on
//! the floor. Points are sampled uniformly over the union of surfaces, so each
//! primitive receives points in proportion to its area.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, PointCloud, Result};

pub const CLASS_FLOOR: u16 = 0;
pub const CLASS_WALL: u16 = 1;
pub const CLASS_BOX: u16 = 2;
pub const CLASS_SPHERE: u16 = 3;
pub const CLASS_NAMES: [&str; 4] = ["floor", "wall", "box", "sphere"];
pub const NUM_CLASSES: usize = 4;

/// Base RGB in `[0, 1]` per class.
pub const CLASS_TINTS: [[f64; 3]; 4] = [[0.55, 0.48, 0.40], [0.62, 0.58, 0.52], [0.45, 0.50, 0.58], [0.50, 0.52, 0.56]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSceneConfig {
    /// Room size along x and y in meters.
    pub room_extent: [f64; 2],
    /// Each room axis is enlarged by a uniform draw from `[0, room_jitter]`.
    pub room_jitter: f64,
    pub wall_height: f64,
    /// Floor and wall points are pushed outward by up to this much.
    pub thickness: f64,
    /// Inclusive ranges.
    pub boxes: [usize; 2],
    pub box_size: [f64; 2],
    pub spheres: [usize; 2],
    pub sphere_radius: [f64; 2],
    pub points_per_m2: f64,
    /// Per-point Gaussian color noise.
    pub color_noise: f64,
    /// Per-object Gaussian shift of the class tint.
    pub object_color_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSceneConfig {
    fn default() -> Self {
        Self {
            room_extent: [2.0, 2.0],
            room_jitter: 0.4,
            wall_height: 1.0,
            thickness: 0.02,
            boxes: [1, 3],
            box_size: [0.2, 0.6],
            spheres: [1, 2],
            sphere_radius: [0.12, 0.3],
            points_per_m2: 400.0,
            color_noise: 0.06,
            object_color_jitter: 0.05,
            seed: 0,
        }
    }
}

impl SynthSceneConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !self.room_extent.iter().all(|&v| pos(v)) || !pos(self.wall_height) {
            return bad(format!("room extent {:?} x {} must be positive", self.room_extent, self.wall_height));
        }
        if ![self.room_jitter, self.thickness, self.color_noise, self.object_color_jitter].iter().all(|&v| nonneg(v)) {
            return bad("jitter, thickness and noise must be non-negative".into());
        }
        if self.boxes[0] > self.boxes[1] || self.spheres[0] > self.spheres[1] {
            return bad(format!("object count ranges {:?} / {:?} are reversed", self.boxes, self.spheres));
        }
        let min_side = self.room_extent[0].min(self.room_extent[1]);
        if !(pos(self.box_size[0]) && self.box_size[0] <= self.box_size[1] && self.box_size[1] < min_side) {
            return bad(format!("box sizes {:?} must be positive, ordered and fit the room", self.box_size));
        }
        if !(pos(self.sphere_radius[0])
            && self.sphere_radius[0] <= self.sphere_radius[1]
            && 2.0 * self.sphere_radius[1] < min_side)
        {
            return bad(format!("sphere radii {:?} must be positive, ordered and fit the room", self.sphere_radius));
        }
        if !pos(self.points_per_m2) {
            return bad(format!("point density {} must be positive", self.points_per_m2));
        }
        Ok(())
    }
}

/// One generating surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// `[0, x] x [0, y]` at height 0.
    Floor { size: [f64; 2] },
    /// Vertical rectangle at `x = offset` (`axis = 0`) or `y = offset`
    /// (`axis = 1`), spanning `length` along the other horizontal axis.
    Wall { axis: u8, offset: f64, length: f64, height: f64, outward: f64 },
    /// Axis-aligned box resting on the floor; the bottom face is not sampled.
    Box { min: [f64; 3], size: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Primitive {
    pub fn class(&self) -> u16 {
        match self {
            Primitive::Floor { .. } => CLASS_FLOOR,
            Primitive::Wall { .. } => CLASS_WALL,
            Primitive::Box { .. } => CLASS_BOX,
            Primitive::Sphere { .. } => CLASS_SPHERE,
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Floor { size } => size[0] * size[1],
            Primitive::Wall { length, height, .. } => length * height,
            Primitive::Box { size: [a, b, h], .. } => a * b + 2.0 * (a + b) * h,
            Primitive::Sphere { radius, .. } => 4.0 * core::f64::consts::PI * radius * radius,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, thickness: f64) -> [f64; 3] {
        match *self {
            Primitive::Floor { size } => {
                [rng.random::<f64>() * size[0], rng.random::<f64>() * size[1], -rng.random::<f64>() * thickness]
            }
            Primitive::Wall { axis, offset, length, height, outward } => {
                let across = offset + outward * rng.random::<f64>() * thickness;
                let along = rng.random::<f64>() * length;
                let z = rng.random::<f64>() * height;
                if axis == 0 {
                    [across, along, z]
                } else {
                    [along, across, z]
                }
            }
            Primitive::Box { min, size: [a, b, h] } => {
                // Faces weighted by area: top, then the x and y side pairs.
                let u = rng.random::<f64>() * (a * b + 2.0 * (a + b) * h);
                let (s, t) = (rng.random::<f64>(), rng.random::<f64>());
                let side = rng.random::<bool>() as u8 as f64;
                let p = if u < a * b {
                    [s * a, t * b, h]
                } else if u < a * b + 2.0 * b * h {
                    [side * a, s * b, t * h]
                } else {
                    [s * a, side * b, t * h]
                };
                [min[0] + p[0], min[1] + p[1], min[2] + p[2]]
            }
            Primitive::Sphere { center, radius } => loop {
                let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let n = Float::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                if n > 1e-12 {
                    break [center[0] + radius * v[0] / n, center[1] + radius * v[1] / n, center[2] + radius * v[2] / n];
                }
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    /// RGB features in `[0, 1]`, labels from the generating primitive.
    pub cloud: PointCloud,
    pub primitives: Vec<Primitive>,
}

pub fn synth_scene(cfg: &SynthSceneConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = cfg.room_extent[0] + rng.random::<f64>() * cfg.room_jitter;
    let d = cfg.room_extent[1] + rng.random::<f64>() * cfg.room_jitter;
    let h = cfg.wall_height;
    let mut prims = alloc::vec![
        Primitive::Floor { size: [w, d] },
        Primitive::Wall { axis: 0, offset: 0.0, length: d, height: h, outward: -1.0 },
        Primitive::Wall { axis: 0, offset: w, length: d, height: h, outward: 1.0 },
        Primitive::Wall { axis: 1, offset: 0.0, length: w, height: h, outward: -1.0 },
        Primitive::Wall { axis: 1, offset: d, length: w, height: h, outward: 1.0 },
    ];
    let n_boxes = rng.random_range(cfg.boxes[0]..=cfg.boxes[1]);
    for _ in 0..n_boxes {
        let mut size = [0.0; 3];
        for s in &mut size {
            *s = rng.random_range(cfg.box_size[0]..=cfg.box_size[1]);
        }
        size[2] = size[2].min(h);
        let min = [rng.random::<f64>() * (w - size[0]), rng.random::<f64>() * (d - size[1]), 0.0];
        prims.push(Primitive::Box { min, size });
    }
    let n_spheres = rng.random_range(cfg.spheres[0]..=cfg.spheres[1]);
    for _ in 0..n_spheres {
        let r = rng.random_range(cfg.sphere_radius[0]..=cfg.sphere_radius[1]);
        let center = [r + rng.random::<f64>() * (w - 2.0 * r), r + rng.random::<f64>() * (d - 2.0 * r), r];
        prims.push(Primitive::Sphere { center, radius: r });
    }

    let colors: Vec<[f64; 3]> = prims
        .iter()
        .map(|p| {
            let tint = CLASS_TINTS[p.class() as usize];
            let mut c = [0.0; 3];
            for (ch, t) in c.iter_mut().zip(tint) {
                *ch = t + cfg.object_color_jitter * rng.sample::<f64, _>(StandardNormal);
            }
            c
        })
        .collect();
    let mut cumulative = Vec::with_capacity(prims.len());
    let mut total = 0.0;
    for p in &prims {
        total += p.area();
        cumulative.push(total);
    }
    let n = (cfg.points_per_m2 * total).round() as usize;
    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(3 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let k = cumulative.partition_point(|&c| c <= u).min(prims.len() - 1);
        positions.push(prims[k].sample(&mut rng, cfg.thickness));
        for ch in colors[k] {
            let v = ch + cfg.color_noise * rng.sample::<f64, _>(StandardNormal);
            features.push(v.clamp(0.0, 1.0) as f32);
        }
        labels.push(prims[k].class());
    }
    Ok(SynthScene { cloud: PointCloud::new(positions, features, 3, Some(labels))?, primitives: prims })
}
