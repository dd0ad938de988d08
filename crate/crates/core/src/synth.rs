//! Deterministic synthetic scenes with exact ray-cast ground truth.
//!
//! Scenes are built from textured rectangles and spheres, rendered with
//! per-pixel nearest-hit ray casting so the ground-truth depth and its
//! occlusion structure are exact. All randomness (texture, rig jitter, hint
//! sampling) comes from counter-based streams keyed by purpose, so renders
//! are reproducible and independent of thread count.

use nalgebra::{Matrix3, Vector3};
#[cfg(test)]
use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{Camera, Extrinsics, Intrinsics, View, ViewSet};
use crate::grid::ImageBuf;
use crate::guidance::SparseDepthMap;
use crate::inference::DepthMap;
use crate::rng::{mix, scramble, unit_f64, Rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("camera {0} sees no primitive")]
    DegenerateScene(usize),
    #[error("hint density {0} outside (0, 1]")]
    InvalidDensity(f64),
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
}

/// Scene primitives. Rectangles are given by a center and two orthogonal
/// in-plane half-axis vectors.
#[derive(Debug, Clone)]
pub enum Primitive {
    Rect {
        center: Vector3<f64>,
        half_u: Vector3<f64>,
        half_v: Vector3<f64>,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

impl Primitive {
    /// Axis-aligned rectangle facing -z (toward cameras at negative z).
    pub fn wall(center: Vector3<f64>, half_width: f64, half_height: f64) -> Self {
        Primitive::Rect {
            center,
            half_u: Vector3::new(half_width, 0.0, 0.0),
            half_v: Vector3::new(0.0, half_height, 0.0),
        }
    }

    /// Nearest positive ray parameter, if the ray hits.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Rect {
                center,
                half_u,
                half_v,
            } => {
                let normal = half_u.cross(half_v);
                let denom = dir.dot(&normal);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (center - origin).dot(&normal) / denom;
                if t <= 1e-9 {
                    return None;
                }
                let hit = origin + dir * t - center;
                let u = hit.dot(half_u) / half_u.norm_squared();
                let v = hit.dot(half_v) / half_v.norm_squared();
                (u.abs() <= 1.0 && v.abs() <= 1.0).then_some(t)
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = 2.0 * oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / (2.0 * a);
                let t1 = (-b + sq) / (2.0 * a);
                if t0 > 1e-9 {
                    Some(t0)
                } else if t1 > 1e-9 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }
}

/// Camera rig placement patterns. Cameras always look at the rig target.
#[derive(Debug, Clone)]
pub enum RigPattern {
    /// Cameras spread along x, centered on the origin-facing axis.
    Lateral { baseline: f64 },
    /// Cameras on a circular arc of the given radius around the target.
    Arc { radius: f64, span_radians: f64 },
    /// Cameras drawn from a spherical shell segment in front of the scene.
    Shell { r_min: f64, r_max: f64 },
}

/// Full description of a generated scene.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub views: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub rig: RigPattern,
    /// Point all cameras look at; rig positions are relative to it.
    pub target: Vector3<f64>,
    /// Distance from the rig line/arc to the target along -z.
    pub standoff: f64,
    pub primitives: Vec<Primitive>,
    pub texture_seed: u64,
    /// Base spatial frequency of the value-noise albedo.
    pub texture_frequency: f64,
    /// Std-dev of additive Gaussian noise applied to sampled hints.
    pub hint_noise: f64,
}

/// Per-view render output: shaded image plus exact depth.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: ImageBuf,
    pub depth: DepthMap,
}

/// Ground truth for a generated scene.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub views: Vec<RenderedView>,
}

impl GroundTruth {
    /// Smallest and largest valid depth over all views, widened by
    /// `margin` (a fraction of the span) on both sides.
    pub fn depth_range(&self, margin: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.views {
            for (d, valid) in v.depth.depth_slice().iter().zip(v.depth.validity_slice()) {
                if *valid {
                    lo = lo.min(*d as f64);
                    hi = hi.max(*d as f64);
                }
            }
        }
        let span = (hi - lo).max(1e-6);
        ((lo - margin * span).max(1e-3), hi + margin * span)
    }
}

// ---- procedural texture ------------------------------------------------

fn lattice_value(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = scramble(
        (ix as u64).wrapping_mul(0x8DA6_B343)
            ^ (iy as u64).wrapping_mul(0xD8163841)
            ^ (iz as u64).wrapping_mul(0xCB1A_B31F)
            ^ seed,
    );
    unit_f64(h)
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let x0 = p.x.floor();
    let y0 = p.y.floor();
    let z0 = p.z.floor();
    let (fx, fy, fz) = (smooth(p.x - x0), smooth(p.y - y0), smooth(p.z - z0));
    let (ix, iy, iz) = (x0 as i64, y0 as i64, z0 as i64);
    let mut acc = 0.0;
    for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                acc += wx * wy * wz * lattice_value(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

/// Three-octave value noise in [0, 1].
fn fbm(p: &Vector3<f64>, seed: u64) -> f64 {
    let n = value_noise(p, seed)
        + 0.5 * value_noise(&(p * 2.0), mix(seed, 1))
        + 0.25 * value_noise(&(p * 4.0), mix(seed, 2));
    n / 1.75
}

// ---- rigs ----------------------------------------------------------------

/// World->camera extrinsics for a camera at `eye` looking at `target`.
/// Camera axes follow the x-right / y-down / z-forward convention.
fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Extrinsics {
    let forward = (target - eye).normalize();
    let world_down = Vector3::new(0.0, 1.0, 0.0);
    let right = world_down.cross(&forward).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * eye);
    Extrinsics::new(rotation, translation).expect("look_at produces orthonormal rotations")
}

fn rig_cameras(cfg: &SceneConfig, seed: u64) -> Result<Vec<Camera>, SynthError> {
    if cfg.views < 2 {
        return Err(SynthError::InvalidConfig(format!(
            "need at least 2 views, got {}",
            cfg.views
        )));
    }
    let intrinsics = Intrinsics::new(
        cfg.focal,
        cfg.focal,
        (cfg.width - 1) as f64 / 2.0,
        (cfg.height - 1) as f64 / 2.0,
        cfg.width,
        cfg.height,
    )
    .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let base = cfg.target - Vector3::new(0.0, 0.0, cfg.standoff);
    let mut rng = Rng::fork(seed, 0x5247); // rig stream
    // lateral rigs face straight down +z (rectified-style): fronto-parallel
    // geometry stays fronto-parallel in every view
    if let RigPattern::Lateral { baseline } = cfg.rig {
        return Ok((0..cfg.views)
            .map(|i| {
                let offset = (i as f64 - (cfg.views - 1) as f64 / 2.0) * baseline;
                let eye = base + Vector3::new(offset, 0.0, 0.0);
                let e = Extrinsics::new(Matrix3::identity(), -eye)
                    .expect("identity rotation is orthonormal");
                Camera::new(intrinsics, e)
            })
            .collect());
    }
    let eyes: Vec<Vector3<f64>> = match cfg.rig {
        RigPattern::Lateral { .. } => unreachable!(),
        RigPattern::Arc {
            radius,
            span_radians,
        } => (0..cfg.views)
            .map(|i| {
                let a = (i as f64 / (cfg.views - 1) as f64 - 0.5) * span_radians;
                cfg.target
                    + Vector3::new(
                        radius * a.sin(),
                        0.0,
                        -(cfg.standoff - radius * (1.0 - a.cos())),
                    )
            })
            .collect(),
        RigPattern::Shell { r_min, r_max } => (0..cfg.views)
            .map(|_| {
                // positions drawn from a shell segment behind the target,
                // inside a mild forward cone
                let r = rng.uniform(r_min, r_max);
                let az = rng.uniform(-0.35, 0.35);
                let el = rng.uniform(-0.18, 0.18);
                let toward = Vector3::new(
                    az.sin() * el.cos(),
                    el.sin(),
                    az.cos() * el.cos(),
                );
                cfg.target - toward * r
            })
            .collect(),
    };
    Ok(eyes
        .iter()
        .map(|eye| Camera::new(intrinsics, look_at(eye, &cfg.target)))
        .collect())
}

// ---- rendering -----------------------------------------------------------

fn render_view(cfg: &SceneConfig, camera: &Camera, texture_key: u64) -> RenderedView {
    let (w, h) = (cfg.width, cfg.height);
    let origin = camera.extrinsics.center();
    let rot_t = camera.extrinsics.rotation().transpose();
    let k = &camera.intrinsics;

    let mut image = ImageBuf::new(w, h, 1);
    let mut depth = vec![0.0f32; w * h];
    let mut valid = vec![false; w * h];

    type RenderedPixel = (f32, f32, bool);
    let rows: Vec<(usize, Vec<RenderedPixel>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let dir_cam = Vector3::new(
                    (x as f64 - k.cx) / k.fx,
                    (y as f64 - k.cy) / k.fy,
                    1.0,
                );
                let dir_world = rot_t * dir_cam;
                let mut best: Option<f64> = None;
                for prim in &cfg.primitives {
                    if let Some(t) = prim.intersect(&origin, &dir_world) {
                        if best.is_none_or(|b| t < b) {
                            best = Some(t);
                        }
                    }
                }
                match best {
                    // depth along the camera z axis equals the ray parameter
                    // because dir_cam.z == 1
                    Some(t) => {
                        let hit = origin + dir_world * t;
                        let albedo =
                            0.15 + 0.8 * fbm(&(hit * cfg.texture_frequency), texture_key);
                        row.push((albedo as f32, t as f32, true));
                    }
                    None => row.push((0.0, 0.0, false)),
                }
            }
            (y, row)
        })
        .collect();

    for (y, row) in rows {
        for (x, (albedo, d, ok)) in row.into_iter().enumerate() {
            image.set_value(x, y, 0, albedo);
            depth[y * w + x] = d;
            valid[y * w + x] = ok;
        }
    }
    let confidence = valid.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
    RenderedView {
        image,
        depth: DepthMap::from_parts(w, h, depth, confidence, valid),
    }
}

/// Render all views of a scene. The returned `ViewSet` uses view 0 as the
/// reference; ground truth covers every view in rig order.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<(ViewSet, GroundTruth), SynthError> {
    if cfg.primitives.is_empty() {
        return Err(SynthError::InvalidConfig("no primitives".into()));
    }
    let cameras = rig_cameras(cfg, seed)?;
    let texture_key = mix(cfg.texture_seed, seed);
    let rendered: Vec<RenderedView> = cameras
        .iter()
        .map(|cam| render_view(cfg, cam, texture_key))
        .collect();
    for (i, r) in rendered.iter().enumerate() {
        if !r.depth.validity_slice().iter().any(|v| *v) {
            return Err(SynthError::DegenerateScene(i));
        }
    }
    let mut views: Vec<View> = cameras
        .iter()
        .zip(&rendered)
        .map(|(cam, r)| View::new(cam.clone(), r.image.clone()).expect("render matches camera"))
        .collect();
    let reference = views.remove(0);
    let view_set = ViewSet::new(reference, views).expect("config enforces >= 2 views");
    Ok((view_set, GroundTruth { views: rendered }))
}

/// Sample a sparse hint map from one view's ground truth: a uniform random
/// subset of the valid pixels, of size `round(density * |valid|)`, with
/// optional additive Gaussian noise (clamped to stay positive).
pub fn sample_hints(
    gt: &GroundTruth,
    view: usize,
    density: f64,
    seed: u64,
    noise_std: f64,
) -> Result<SparseDepthMap, SynthError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(SynthError::InvalidDensity(density));
    }
    let depth = &gt.views[view].depth;
    let (w, h) = (depth.width(), depth.height());
    let mut candidates: Vec<u32> = (0..(w * h) as u32)
        .filter(|i| depth.validity_slice()[*i as usize])
        .collect();
    let want = (density * candidates.len() as f64).round() as usize;
    let mut rng = Rng::fork(mix(seed, view as u64), 0x4849_4E54); // hint stream
    // partial Fisher-Yates: the first `want` entries become the sample
    for i in 0..want.min(candidates.len().saturating_sub(1)) {
        let j = i + rng.index(candidates.len() - i);
        candidates.swap(i, j);
    }
    let mut hints = SparseDepthMap::new(w, h);
    for &i in candidates.iter().take(want) {
        let (x, y) = (i as usize % w, i as usize / w);
        let mut d = depth.depth_slice()[i as usize] as f64;
        if noise_std > 0.0 {
            d += noise_std * rng.normal();
            d = d.max(1e-3);
        }
        hints.set_hint(x, y, d as f32);
    }
    Ok(hints)
}

// ---- scene presets ---------------------------------------------------

/// Two fronto-parallel planes with a foreground occluder offset per seed,
/// plus a sphere; the workhorse occlusion scene for filtering and ablation
/// runs.
pub fn occlusion_scene(width: usize, height: usize, views: usize, seed: u64) -> SceneConfig {
    let mut rng = Rng::fork(seed, 0x53_43_4E);
    let fg_x = rng.uniform(-1.2, 1.2);
    let fg_y = rng.uniform(-0.6, 0.6);
    let fg_depth = rng.uniform(4.5, 5.5);
    let bg_depth = rng.uniform(18.0, 22.0);
    let sphere_x = rng.uniform(-2.5, 2.5);
    let sphere_depth = rng.uniform(8.0, 11.0);
    SceneConfig {
        width,
        height,
        views,
        focal: width as f64 * 0.9,
        rig: RigPattern::Lateral { baseline: 0.45 },
        target: Vector3::new(0.0, 0.0, bg_depth * 0.6),
        standoff: bg_depth * 0.6,
        primitives: vec![
            // background wall, wide enough to fill every view
            Primitive::wall(Vector3::new(0.0, 0.0, bg_depth), 30.0, 20.0),
            // foreground occluder
            Primitive::wall(Vector3::new(fg_x, fg_y, fg_depth), 1.6, 1.1),
            Primitive::Sphere {
                center: Vector3::new(sphere_x, 1.0, sphere_depth),
                radius: 1.4,
            },
        ],
        texture_seed: mix(seed, 0x54_58),
        // the finest octave must stay above a pixel footprint at the far
        // wall, or matching decorrelates there
        texture_frequency: 0.8,
        hint_noise: 0.0,
    }
}

/// A single slanted textured plane: no occlusion anywhere, used by
/// correspondence and matching oracles.
pub fn slanted_plane_scene(width: usize, height: usize, views: usize) -> SceneConfig {
    SceneConfig {
        width,
        height,
        views,
        focal: width as f64 * 0.9,
        rig: RigPattern::Lateral { baseline: 0.35 },
        target: Vector3::new(0.0, 0.0, 10.0),
        standoff: 10.0,
        primitives: vec![Primitive::Rect {
            center: Vector3::new(0.0, 0.0, 10.0),
            half_u: Vector3::new(12.0, 0.0, 3.0),
            half_v: Vector3::new(0.0, 9.0, 0.0),
        }],
        texture_seed: 0x50_4C,
        texture_frequency: 1.6,
        hint_noise: 0.0,
    }
}

/// A fronto-parallel textured wall at the given depth.
pub fn flat_wall_scene(width: usize, height: usize, views: usize, depth: f64) -> SceneConfig {
    SceneConfig {
        width,
        height,
        views,
        focal: width as f64 * 0.9,
        rig: RigPattern::Lateral { baseline: 0.3 },
        target: Vector3::new(0.0, 0.0, depth),
        standoff: depth,
        primitives: vec![Primitive::wall(Vector3::new(0.0, 0.0, depth), 40.0, 28.0)],
        texture_seed: 0x57_41,
        texture_frequency: 2.1,
        hint_noise: 0.0,
    }
}
