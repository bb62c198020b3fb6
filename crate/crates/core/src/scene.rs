//! Procedural dynamic scenes and an analytic ray-casting renderer that
//! provides exact color and depth from any camera pose.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{orbit_pose, Intrinsics, OrbitMotion, Pose};
use crate::clip::{DepthClip, DepthMap, Frame, VideoClip, DEPTH_SENTINEL};
use crate::error::{invalid, Result};

const RAY_EPS: f64 = 1e-6;
const AMBIENT: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Cluttered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// Sphere radius or box half-edge.
    pub half_size: f64,
    pub center: [f64; 3],
    pub color: [f64; 3],
    /// World units per frame.
    pub velocity: [f64; 3],
    /// Yaw rate about the vertical axis, radians per frame (boxes only).
    pub angular_rate: f64,
}

impl Primitive {
    pub fn center_at(&self, t: usize) -> Vector3<f64> {
        Vector3::from(self.center) + Vector3::from(self.velocity) * t as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    /// Plane is y = height (world up is -y).
    pub height: f64,
    pub checker_period: f64,
    pub colors: [[f64; 3]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub extent: f64,
    pub primitives: Vec<Primitive>,
    pub ground: GroundPlane,
    pub sky: [f64; 3],
    /// Direction light travels in, world space.
    pub light_dir: [f64; 3],
}

impl SceneSpec {
    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            extent: 2.5,
            primitives: Vec::new(),
            ground: GroundPlane {
                height: 0.8,
                checker_period: 0.6,
                colors: [[0.82, 0.8, 0.74], [0.28, 0.3, 0.34]],
            },
            sky: [0.55, 0.7, 0.9],
            light_dir: [-0.3, 1.0, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0) {
            return Err(invalid("scene extent must be positive"));
        }
        let color_ok = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        for p in &self.primitives {
            if !(p.half_size > 0.0 && p.half_size < self.extent) {
                return Err(invalid("primitive half-size outside (0, extent)"));
            }
            if !color_ok(&p.color) {
                return Err(invalid("primitive color outside [0, 1]"));
            }
        }
        if !color_ok(&self.sky) || !self.ground.colors.iter().all(color_ok) {
            return Err(invalid("background color outside [0, 1]"));
        }
        if !(self.ground.checker_period > 0.0) {
            return Err(invalid("checker period must be positive"));
        }
        Ok(())
    }
}

/// Deterministic scene for `seed`: 2-4 primitives when simple, 5-8 when cluttered.
pub fn build_scene(seed: u64, difficulty: Difficulty) -> SceneSpec {
    let salt = match difficulty {
        Difficulty::Simple => 0x51_u64,
        Difficulty::Cluttered => 0xC1_u64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt);
    let mut scene = SceneSpec::empty(seed);
    let (count, size_range) = match difficulty {
        Difficulty::Simple => (rng.random_range(2..=4), (0.35, 0.75)),
        Difficulty::Cluttered => (rng.random_range(5..=8), (0.25, 0.55)),
    };
    let reach = 1.6;
    for _ in 0..count {
        let shape = if rng.random_bool(0.5) {
            Shape::Sphere
        } else {
            Shape::Box
        };
        let half_size = rng.random_range(size_range.0..size_range.1);
        let x = rng.random_range(-reach..reach);
        let z = rng.random_range(-reach..reach);
        let color = [
            rng.random_range(0.1..0.95),
            rng.random_range(0.1..0.95),
            rng.random_range(0.1..0.95),
        ];
        let velocity = [
            rng.random_range(-0.04..0.04),
            0.0,
            rng.random_range(-0.04..0.04),
        ];
        let angular_rate = match shape {
            Shape::Box => rng.random_range(-0.05..0.05),
            Shape::Sphere => 0.0,
        };
        scene.primitives.push(Primitive {
            shape,
            half_size,
            center: [x, scene.ground.height - half_size, z],
            color,
            velocity,
            angular_rate,
        });
    }
    scene
}

/// Source camera: `distance` from the origin, raised by `elevation_deg`, looking at the origin.
pub fn default_source_pose(distance: f64, elevation_deg: f64) -> Pose {
    let front = Pose::from_center(Matrix3::identity(), Vector3::new(0.0, 0.0, -distance));
    orbit_pose(&front, &OrbitMotion::degrees(0.0, elevation_deg, 1.0))
        .expect("camera is away from the pivot")
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Nearest positive ray parameter and world normal.
fn intersect(p: &Primitive, t_frame: usize, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let c = p.center_at(t_frame);
    match p.shape {
        Shape::Sphere => {
            let oc = o - c;
            let a = d.dot(d);
            let b = 2.0 * d.dot(&oc);
            let cc = oc.dot(&oc) - p.half_size * p.half_size;
            let disc = b * b - 4.0 * a * cc;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let mut t = (-b - sq) / (2.0 * a);
            if t <= RAY_EPS {
                t = (-b + sq) / (2.0 * a);
            }
            if t <= RAY_EPS {
                return None;
            }
            let n = (o + d * t - c) / p.half_size;
            Some((t, n))
        }
        Shape::Box => {
            let yaw = p.angular_rate * t_frame as f64;
            let to_local = rot_y(-yaw);
            let ol = to_local * (o - c);
            let dl = to_local * d;
            let h = p.half_size;
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut axis = 0;
            let mut sign = 1.0;
            for k in 0..3 {
                if dl[k].abs() < 1e-15 {
                    if ol[k].abs() > h {
                        return None;
                    }
                    continue;
                }
                let t1 = (-h - ol[k]) / dl[k];
                let t2 = (h - ol[k]) / dl[k];
                let (lo, hi, s) = if t1 < t2 { (t1, t2, -1.0) } else { (t2, t1, 1.0) };
                if lo > t_near {
                    t_near = lo;
                    axis = k;
                    sign = s;
                }
                t_far = t_far.min(hi);
            }
            if t_near > t_far || t_near <= RAY_EPS {
                return None;
            }
            let mut nl = Vector3::zeros();
            nl[axis] = sign;
            Some((t_near, rot_y(yaw) * nl))
        }
    }
}

fn shade(base: [f64; 3], normal: &Vector3<f64>, light: &Vector3<f64>) -> [f32; 3] {
    let lambert = normal.dot(&(-light)).max(0.0);
    let k = AMBIENT + (1.0 - AMBIENT) * lambert;
    base.map(|c| (c * k).clamp(0.0, 1.0) as f32)
}

/// Renders color and forward-axis depth at scene time `t`.
pub fn render(scene: &SceneSpec, intr: &Intrinsics, pose: &Pose, t: usize) -> Result<(Frame, DepthMap)> {
    intr.validate()?;
    if !pose.is_valid() {
        return Err(invalid("pose is not a rigid transform"));
    }
    let (w, h) = (intr.width, intr.height);
    let origin = pose.center();
    let cam_to_world = pose.rotation.transpose();
    let light = Vector3::from(scene.light_dir).normalize();
    let ground_normal = Vector3::new(0.0, -1.0, 0.0);
    let mut rgb = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            // camera-space z of the ray is 1, so the ray parameter is the depth
            let dir = cam_to_world * intr.pixel_ray(x, y);
            let mut best: Option<(f64, Vector3<f64>, [f64; 3])> = None;
            for p in &scene.primitives {
                if let Some((tt, n)) = intersect(p, t, &origin, &dir) {
                    if best.as_ref().is_none_or(|b| tt < b.0) {
                        best = Some((tt, n, p.color));
                    }
                }
            }
            let ground_t = if dir.y > 0.0 && origin.y < scene.ground.height {
                Some((scene.ground.height - origin.y) / dir.y)
            } else {
                None
            };
            match best {
                Some((tt, n, c)) if ground_t.is_none_or(|g| tt <= g) => {
                    rgb.push(shade(c, &n, &light));
                    depth.push(tt as f32);
                }
                _ => {
                    let color = match ground_t {
                        Some(g) => {
                            let hit = origin + dir * g;
                            let per = scene.ground.checker_period;
                            let parity = ((hit.x / per).floor() + (hit.z / per).floor()).rem_euclid(2.0);
                            shade(scene.ground.colors[parity as usize], &ground_normal, &light)
                        }
                        None => scene.sky.map(|v| v as f32),
                    };
                    rgb.push(color);
                    depth.push(DEPTH_SENTINEL);
                }
            }
        }
    }
    Ok((Frame::new(w, h, rgb)?, DepthMap::new(w, h, depth)?))
}

/// Renders one frame per `(pose, scene time)` pair.
pub fn render_views(scene: &SceneSpec, intr: &Intrinsics, views: &[(Pose, usize)]) -> Result<(VideoClip, DepthClip)> {
    if views.is_empty() {
        return Err(invalid("need at least one view"));
    }
    let rendered = views
        .par_iter()
        .map(|(pose, t)| render(scene, intr, pose, *t))
        .collect::<Result<Vec<_>>>()?;
    let (frames, maps): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    Ok((VideoClip::new(frames)?, DepthClip::new(maps)?))
}

/// Frame `t` rendered from `poses[t]` at scene time `t`.
pub fn render_clip(scene: &SceneSpec, intr: &Intrinsics, poses: &[Pose], n_frames: usize) -> Result<(VideoClip, DepthClip)> {
    if n_frames < 1 {
        return Err(invalid("n_frames must be at least 1"));
    }
    if poses.len() < n_frames {
        return Err(invalid(format!("{} poses for {n_frames} frames", poses.len())));
    }
    let views: Vec<(Pose, usize)> = poses[..n_frames].iter().copied().zip(0..).collect();
    render_views(scene, intr, &views)
}

/// A scene together with the source camera, able to render ground truth at
/// any orbit motion relative to that camera.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub scene: SceneSpec,
    pub intrinsics: Intrinsics,
    pub source_pose: Pose,
}

impl SceneView {
    /// Renders frame k from the source camera moved by `motions[k]`, at scene time `times[k]`.
    pub fn render_motions(&self, motions: &[OrbitMotion], times: &[usize]) -> Result<(VideoClip, DepthClip)> {
        if motions.len() != times.len() {
            return Err(invalid("motions and times differ in length"));
        }
        let views = motions
            .iter()
            .zip(times)
            .map(|(m, &t)| Ok((orbit_pose(&self.source_pose, m)?, t)))
            .collect::<Result<Vec<_>>>()?;
        render_views(&self.scene, &self.intrinsics, &views)
    }
}
