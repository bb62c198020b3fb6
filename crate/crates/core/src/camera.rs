//! Camera intrinsics, rigid poses, orbit motions and trajectory expansion.
//!
//! Conventions: camera space is x right, y down, z forward; world "up" is
//! -y. A [`Pose`] maps world points into camera space.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Pinhole camera with the principal point at the image center and the
    /// given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image size must be non-zero"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(invalid("principal point outside the image"));
        }
        Ok(())
    }

    /// Camera-space direction through the center of pixel (x, y), with z = 1.
    #[inline]
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vector3<f64> {
        Vector3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Sub-pixel image coordinates of a camera-space point (pixel centers at +0.5).
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }
}

/// World-to-camera rigid transform: `x_cam = R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let p = Self {
            rotation,
            translation,
        };
        if !p.is_valid() {
            return Err(invalid("rotation is not a proper orthonormal matrix"));
        }
        Ok(p)
    }

    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        err <= ORTHO_TOL && (r.determinant() - 1.0).abs() <= ORTHO_TOL && self.translation.iter().all(|v| v.is_finite())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Builds the pose of a camera at `center` whose camera-to-world rotation is `cam_to_world`.
    pub fn from_center(cam_to_world: Matrix3<f64>, center: Vector3<f64>) -> Self {
        let rotation = orthonormalize(&cam_to_world.transpose());
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// 3x4 `[R | t]`, row-major.
    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let mut out = [[0.0; 4]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = self.rotation[(r, c)];
            }
            row[3] = self.translation[r];
        }
        out
    }

    pub fn from_rows(rows: &[[f64; 4]; 3]) -> Result<Self> {
        let rotation = Matrix3::from_fn(|r, c| rows[r][c]);
        let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(rotation, translation)
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .abs()
            .max()
            .max((self.translation - other.translation).abs().max())
    }
}

/// Gram-Schmidt on the rows of `m`, with the third row rebuilt as a cross
/// product so the result is a proper rotation.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let r0 = m.row(0).transpose().normalize();
    let r1 = m.row(1).transpose();
    let r1 = (r1 - r0 * r0.dot(&r1)).normalize();
    let r2 = r0.cross(&r1);
    Matrix3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()])
}

/// Rigid transform applying `a` first, then `b`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: orthonormalize(&(b.rotation * a.rotation)),
        translation: b.rotation * a.translation + b.translation,
    }
}

pub fn invert(p: &Pose) -> Pose {
    let rt = p.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * p.translation),
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation taking the reference direction (0, 0, -1) onto the direction
/// with the given azimuth and elevation.
fn spherical_frame(azimuth: f64, elevation: f64) -> Matrix3<f64> {
    rot_y(azimuth) * rot_x(-elevation)
}

/// Orbit of a camera around a pivot, in orbit-parameter space. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitMotion {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius_scale: f64,
    pub pivot: [f64; 3],
}

impl OrbitMotion {
    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }

    pub fn new(azimuth: f64, elevation: f64, radius_scale: f64) -> Self {
        Self {
            azimuth,
            elevation,
            radius_scale,
            pivot: [0.0; 3],
        }
    }

    pub fn degrees(azimuth_deg: f64, elevation_deg: f64, radius_scale: f64) -> Self {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians(), radius_scale)
    }

    pub fn with_pivot(mut self, pivot: [f64; 3]) -> Self {
        self.pivot = pivot;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_scale > 0.0) || !self.radius_scale.is_finite() {
            return Err(invalid("radius scale must be positive"));
        }
        if !self.azimuth.is_finite() || !self.elevation.is_finite() {
            return Err(invalid("orbit angles must be finite"));
        }
        Ok(())
    }

    /// Sequential application: angles add, radius scales multiply.
    pub fn then(&self, next: &OrbitMotion) -> OrbitMotion {
        OrbitMotion {
            azimuth: self.azimuth + next.azimuth,
            elevation: self.elevation + next.elevation,
            radius_scale: self.radius_scale * next.radius_scale,
            pivot: self.pivot,
        }
    }

    /// `self` scaled by `f` in (azimuth, elevation, log radius) space.
    pub fn scaled(&self, f: f64) -> OrbitMotion {
        OrbitMotion {
            azimuth: self.azimuth * f,
            elevation: self.elevation * f,
            radius_scale: self.radius_scale.powf(f),
            pivot: self.pivot,
        }
    }

    /// Magnitude used for "|ΔT|" style thresholds, in degrees.
    pub fn angle_deg(&self) -> f64 {
        self.azimuth.hypot(self.elevation).to_degrees()
    }

    pub fn max_abs_diff(&self, other: &OrbitMotion) -> f64 {
        (self.azimuth - other.azimuth)
            .abs()
            .max((self.elevation - other.elevation).abs())
            .max((self.radius_scale.ln() - other.radius_scale.ln()).abs())
    }
}

/// Rotates the camera of `base` around `motion.pivot`, scaling its distance
/// by `motion.radius_scale`. Orientation follows the same rotation, so a
/// camera aimed at the pivot stays aimed at it.
pub fn orbit_pose(base: &Pose, motion: &OrbitMotion) -> Result<Pose> {
    motion.validate()?;
    let pivot = Vector3::from(motion.pivot);
    let center = base.center();
    let offset = center - pivot;
    let r = offset.norm();
    if r < 1e-12 {
        return Err(invalid("camera coincides with the orbit pivot"));
    }
    let elevation0 = (-offset.y / r).clamp(-1.0, 1.0).asin();
    let azimuth0 = (-offset.x).atan2(-offset.z);
    let f0 = spherical_frame(azimuth0, elevation0);
    let f1 = spherical_frame(azimuth0 + motion.azimuth, elevation0 + motion.elevation);
    let g = f1 * f0.transpose();
    let new_center = pivot + g * offset * motion.radius_scale;
    let cam_to_world = g * base.rotation.transpose();
    Ok(Pose::from_center(cam_to_world, new_center))
}

/// Transform from the `base` camera frame into the camera frame reached by `motion`.
pub fn relative_pose(base: &Pose, motion: &OrbitMotion) -> Result<Pose> {
    Ok(compose(&invert(base), &orbit_pose(base, motion)?))
}

/// Splits `total` into increments proportional to `fractions`.
pub fn decompose(total: &OrbitMotion, fractions: &[f64]) -> Result<Vec<OrbitMotion>> {
    total.validate()?;
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(invalid("fractions must be positive"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() >= 1e-9 {
        return Err(invalid(format!("fractions sum to {sum}, not 1")));
    }
    Ok(fractions.iter().map(|&f| total.scaled(f)).collect())
}

/// Applies each increment in turn and returns the accumulated motion.
pub fn accumulate_motions(increments: &[OrbitMotion]) -> OrbitMotion {
    let pivot = increments.first().map(|m| m.pivot).unwrap_or([0.0; 3]);
    increments
        .iter()
        .fold(OrbitMotion::zero().with_pivot(pivot), |acc, m| acc.then(m))
}

/// A randomly drawn decomposition of a total motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub n_steps: usize,
    pub fractions: Vec<f64>,
    pub increments: Vec<OrbitMotion>,
}

const MIN_FRACTION: f64 = 0.05;

/// Draws the number of steps uniformly from `1..=n_max` and the step sizes
/// from a flat Dirichlet, floored at 5% and renormalized.
pub fn sample_decomposition<R: Rng + ?Sized>(
    total: &OrbitMotion,
    n_max: usize,
    rng: &mut R,
) -> Result<Decomposition> {
    if n_max < 1 {
        return Err(invalid("n_max must be at least 1"));
    }
    let n = rng.random_range(1..=n_max);
    let mut fractions: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = fractions.iter().sum();
    fractions.iter_mut().for_each(|f| *f = (*f / s).max(MIN_FRACTION));
    let s: f64 = fractions.iter().sum();
    fractions.iter_mut().for_each(|f| *f /= s);
    // exact unit sum so that `decompose` accepts it
    let head: f64 = fractions[..n - 1].iter().sum();
    fractions[n - 1] = 1.0 - head;
    let increments = decompose(total, &fractions)?;
    Ok(Decomposition {
        n_steps: n,
        fractions,
        increments,
    })
}

/// Expands a clip for bullet-time accumulation: frame 0 repeated `m` times
/// while the camera sweeps from `step_start` to `step_end`, then the
/// remaining source frames with `tail` motions.
pub fn bullet_time_expand(
    source_len: usize,
    m: usize,
    step_start: &OrbitMotion,
    step_end: &OrbitMotion,
    tail: &[OrbitMotion],
) -> Result<(Vec<usize>, Vec<OrbitMotion>)> {
    if m < 1 {
        return Err(invalid("bullet-time length m must be at least 1"));
    }
    if source_len < 2 {
        return Err(invalid("source clip needs at least two frames"));
    }
    if tail.len() != source_len - 1 {
        return Err(invalid(format!(
            "tail has {} motions, expected {}",
            tail.len(),
            source_len - 1
        )));
    }
    let mut index_map = vec![0; m];
    index_map.extend(1..source_len);

    let d_az = step_end.azimuth - step_start.azimuth;
    let d_el = step_end.elevation - step_start.elevation;
    let d_lr = step_end.radius_scale.ln() - step_start.radius_scale.ln();
    let mut motions: Vec<OrbitMotion> = (1..=m)
        .map(|j| {
            if j == m {
                return *step_end;
            }
            let f = j as f64 / m as f64;
            OrbitMotion {
                azimuth: step_start.azimuth + d_az * f,
                elevation: step_start.elevation + d_el * f,
                radius_scale: step_start.radius_scale * (d_lr * f).exp(),
                pivot: step_end.pivot,
            }
        })
        .collect();
    motions.extend_from_slice(tail);
    Ok((index_map, motions))
}

/// Per-frame relative poses from the source camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn constant(pose: Pose, len: usize) -> Self {
        Self {
            poses: vec![pose; len],
        }
    }

    pub fn from_motions(base: &Pose, motions: &[OrbitMotion]) -> Result<Self> {
        let poses = motions
            .iter()
            .map(|m| relative_pose(base, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// JSON form of an orbit motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionRecord {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius_scale: f64,
}

impl From<&OrbitMotion> for MotionRecord {
    fn from(m: &OrbitMotion) -> Self {
        Self {
            azimuth_deg: m.azimuth.to_degrees(),
            elevation_deg: m.elevation.to_degrees(),
            radius_scale: m.radius_scale,
        }
    }
}

impl MotionRecord {
    pub fn to_motion(&self, pivot: [f64; 3]) -> OrbitMotion {
        OrbitMotion::degrees(self.azimuth_deg, self.elevation_deg, self.radius_scale)
            .with_pivot(pivot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cam_at(z: f64) -> Pose {
        Pose::from_center(Matrix3::identity(), Vector3::new(0.0, 0.0, z))
    }

    #[test]
    fn null_orbit_is_identity() {
        let base = cam_at(-5.0);
        let p = orbit_pose(&base, &OrbitMotion::zero()).unwrap();
        assert!(p.max_abs_diff(&base) < 1e-12);
        let full = orbit_pose(&base, &OrbitMotion::new(2.0 * PI, 0.0, 1.0)).unwrap();
        assert!(full.max_abs_diff(&base) < 1e-9);
    }

    #[test]
    fn quarter_orbit_by_hand() {
        let base = cam_at(-5.0);
        let p = orbit_pose(&base, &OrbitMotion::new(PI / 2.0, 0.0, 1.0)).unwrap();
        let c = p.center();
        assert!((c - Vector3::new(-5.0, 0.0, 0.0)).abs().max() < 1e-9);
        // optical axis points at the origin
        let fwd = p.rotation.transpose() * Vector3::z();
        assert!((fwd - Vector3::new(1.0, 0.0, 0.0)).abs().max() < 1e-9);
    }

    #[test]
    fn orbit_rejects_pivot_camera() {
        let base = Pose::identity();
        assert!(orbit_pose(&base, &OrbitMotion::new(0.3, 0.0, 1.0)).is_err());
    }

    #[test]
    fn two_forty_degree_orbits_make_eighty() {
        let base = cam_at(-6.0);
        let m40 = OrbitMotion::degrees(40.0, 0.0, 1.0);
        let twice = orbit_pose(&orbit_pose(&base, &m40).unwrap(), &m40).unwrap();
        let once = orbit_pose(&base, &OrbitMotion::degrees(80.0, 0.0, 1.0)).unwrap();
        assert!(twice.max_abs_diff(&once) < 1e-9);
        // the same via composition of relative transforms
        let rel1 = relative_pose(&base, &m40).unwrap();
        let mid = orbit_pose(&base, &m40).unwrap();
        let rel2 = relative_pose(&mid, &m40).unwrap();
        let via = compose(&base, &compose(&rel1, &rel2));
        assert!(via.max_abs_diff(&once) < 1e-9);
    }

    #[test]
    fn decompose_thirds() {
        let total = OrbitMotion::degrees(120.0, 0.0, 1.0);
        let inc = decompose(&total, &[1.0 / 3.0; 3]).unwrap();
        for m in &inc {
            assert!((m.azimuth.to_degrees() - 40.0).abs() < 1e-9);
        }
        let single = decompose(&total, &[1.0]).unwrap();
        assert_eq!(single, vec![total]);
    }

    #[test]
    fn decompose_with_radius() {
        let base = cam_at(-4.0);
        let total = OrbitMotion::degrees(90.0, 0.0, 2.0);
        let inc = decompose(&total, &[0.5, 0.5]).unwrap();
        assert!((inc[0].azimuth.to_degrees() - 45.0).abs() < 1e-12);
        assert!((inc[0].radius_scale - 2f64.sqrt()).abs() < 1e-12);
        let stepped = inc
            .iter()
            .try_fold(base, |p, m| orbit_pose(&p, m))
            .unwrap();
        let direct = orbit_pose(&base, &total).unwrap();
        assert!(stepped.max_abs_diff(&direct) < 1e-9);
    }

    #[test]
    fn decompose_rejects_bad_fractions() {
        let total = OrbitMotion::degrees(90.0, 0.0, 1.0);
        assert!(decompose(&total, &[0.5, 0.6]).is_err());
        assert!(decompose(&total, &[1.5, -0.5]).is_err());
        assert!(decompose(&total, &[]).is_err());
    }

    #[test]
    fn sampled_decomposition_is_reproducible() {
        let total = OrbitMotion::degrees(150.0, 10.0, 1.2);
        let a = sample_decomposition(&total, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_decomposition(&total, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let one = sample_decomposition(&total, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(one.n_steps, 1);
        assert_eq!(one.increments, vec![total]);
        assert!(sample_decomposition(&total, 0, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn step_counts_are_uniform() {
        let total = OrbitMotion::degrees(120.0, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let d = sample_decomposition(&total, 4, &mut rng).unwrap();
            counts[d.n_steps - 1] += 1;
            assert!((d.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // multinomial: sd of a cell frequency is sqrt(p(1-p)/n)
        let sd = (0.25f64 * 0.75 / draws as f64).sqrt();
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() <= 3.0 * sd, "freq {freq}");
        }
    }

    #[test]
    fn bullet_time_layout() {
        let tail = vec![OrbitMotion::degrees(30.0, 0.0, 1.0); 7];
        let (map, motions) = bullet_time_expand(
            8,
            3,
            &OrbitMotion::zero(),
            &OrbitMotion::degrees(30.0, 0.0, 1.0),
            &tail,
        )
        .unwrap();
        assert_eq!(map.len(), 10);
        assert_eq!(&map[..4], &[0, 0, 0, 1]);
        assert_eq!(*map.last().unwrap(), 7);
        assert_eq!(motions.len(), 10);
    }

    #[test]
    fn bullet_time_sweep_values() {
        let start = OrbitMotion::degrees(20.0, 0.0, 1.0);
        let end = OrbitMotion::degrees(30.0, 0.0, 1.0);
        let tail = vec![end; 3];
        let (_, motions) = bullet_time_expand(4, 5, &start, &end, &tail).unwrap();
        let expect = [22.0, 24.0, 26.0, 28.0, 30.0];
        for (m, e) in motions.iter().zip(expect) {
            assert!((m.azimuth.to_degrees() - e).abs() < 1e-9);
        }
        let (_, same) = bullet_time_expand(4, 3, &start, &start, &tail).unwrap();
        assert!(same[..3].iter().all(|m| m.max_abs_diff(&start) < 1e-15));
        assert!(bullet_time_expand(4, 0, &start, &end, &tail).is_err());
    }
}
