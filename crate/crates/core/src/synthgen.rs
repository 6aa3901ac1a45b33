//! Deterministic synthetic two-session datasets with ground truth.
//!
//! The world is a long open-topped hall with box-shaped pillars. Every
//! surface carries the same seeded 3D value-noise texture, so two cameras
//! looking at one surface point see the same intensity. A 16-ring lidar and
//! a pinhole camera are ray cast from the true poses; the target session
//! stores its trajectory in its own world frame, offset by `G` and bent by a
//! smooth drift curve.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose, Timestamp, Trajectory, Vector3};
use crate::session::{GrayImage, Intrinsics, PointCloud, SessionMap};
// shadowed by inherent methods whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Fraction of each path shared with the other session, in `[0, 1]`.
    pub overlap_fraction: f64,
    /// Largest offset of the target drift curve, meters.
    pub drift_magnitude: f64,
    /// Standard deviation of lidar range noise, meters.
    pub cloud_noise: f64,
    pub image_width: usize,
    pub image_height: usize,
    /// Length of each session's path, meters.
    pub path_length: f64,
    /// Platform speed, m/s.
    pub speed: f64,
    pub lidar_rate: f64,
    pub camera_rate: f64,
    /// Sideways offset of the target path from the reference path, meters.
    pub lateral_offset: f64,
    /// Range of the translation between the two world frames, meters.
    pub offset_min: f64,
    pub offset_max: f64,
    pub pillars: usize,
    /// Camera heading left of the direction of travel, degrees.
    pub camera_yaw_deg: f64,
    /// Downward camera tilt, degrees.
    pub camera_pitch_deg: f64,
    /// Timestamp of the first reference scan, seconds.
    pub start_time: Timestamp,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            overlap_fraction: 0.5,
            drift_magnitude: 0.5,
            cloud_noise: 0.01,
            image_width: 320,
            image_height: 240,
            path_length: 30.0,
            speed: 1.0,
            lidar_rate: 5.0,
            camera_rate: 5.0,
            lateral_offset: 0.3,
            offset_min: 10.0,
            offset_max: 20.0,
            pillars: 40,
            camera_yaw_deg: 60.0,
            camera_pitch_deg: 10.0,
            start_time: 1_700_000_000.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return err("overlap_fraction must lie in [0, 1]");
        }
        if !(self.drift_magnitude >= 0.0) {
            return err("drift_magnitude must be non-negative");
        }
        if !(self.cloud_noise >= 0.0) {
            return err("cloud_noise must be non-negative");
        }
        if self.image_width < 64 || self.image_height < 64 {
            return err("images must be at least 64x64");
        }
        if !(self.path_length > 0.0 && self.speed > 0.0 && self.lidar_rate > 0.0 && self.camera_rate > 0.0) {
            return err("path length, speed and sensor rates must be positive");
        }
        if !(self.offset_min >= 0.0 && self.offset_max >= self.offset_min) {
            return err("world offset range must satisfy 0 <= min <= max");
        }
        if !self.start_time.is_finite() {
            return err("start_time must be finite");
        }
        Ok(())
    }
}

const HALL_HALF_WIDTH: f64 = 8.0;
const HALL_HEIGHT: f64 = 5.0;
const SENSOR_HEIGHT: f64 = 1.0;
const PATH_AMPLITUDE: f64 = 0.6;
const PATH_WAVELENGTH: f64 = 17.0;
/// Gap between the two paths when they do not overlap at all, meters.
const DISJOINT_GAP: f64 = 6.0;
const LIDAR_RINGS: usize = 16;
const LIDAR_AZIMUTHS: usize = 360;
const LIDAR_FOV_DEG: f64 = 15.0;
pub const LIDAR_MAX_RANGE: f64 = 80.0;
const SKY: u8 = 210;
const DRIFT_KNOT_SPACING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    /// Entry and exit distances of a ray, if it meets the box.
    fn slab(&self, o: &Point3, inv: &Vector3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let (n, f) = ((self.min[a] - o[a]) * inv[a], (self.max[a] - o[a]) * inv[a]);
            let (n, f) = if n <= f { (n, f) } else { (f, n) };
            t0 = t0.max(n);
            t1 = t1.min(f);
        }
        (t0 <= t1 && t1 > 0.0).then_some((t0, t1))
    }

    fn contains(&self, p: &Point3, tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }

    fn on_boundary(&self, p: &Point3, tol: f64) -> bool {
        self.contains(p, tol) && (0..3).any(|a| (p[a] - self.min[a]).abs() <= tol || (p[a] - self.max[a]).abs() <= tol)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(x as u64 ^ splitmix(y as u64 ^ splitmix(z as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinearly blended lattice noise in `[-1, 1]`.
fn value_noise(seed: u64, p: &Vector3) -> f64 {
    let base = p.map(|v| v.floor());
    let f = p - base;
    let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
    let (u, v, w) = (smooth(f.x), smooth(f.y), smooth(f.z));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - u } else { u };
                let wy = if dy == 0 { 1.0 - v } else { v };
                let wz = if dz == 0 { 1.0 - w } else { w };
                acc += wx * wy * wz * lattice(seed, ix + dx, iy + dy, iz + dz);
            }
        }
    }
    acc
}

/// Hall, pillars and surface texture generated from one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub seed: u64,
    /// Inside of the hall; its top face is open.
    pub hall: Aabb,
    pub boxes: Vec<Aabb>,
}

impl SyntheticWorld {
    pub fn generate(seed: u64, x_min: f64, x_max: f64, pillars: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x3011d));
        let hall = Aabb {
            min: Point3::new(x_min, -HALL_HALF_WIDTH, 0.0),
            max: Point3::new(x_max, HALL_HALF_WIDTH, HALL_HEIGHT),
        };
        let mut boxes = Vec::with_capacity(pillars);
        for i in 0..pillars {
            let half = Vector3::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), 0.0);
            let height = rng.random_range(0.8..4.5);
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let y = side * rng.random_range(2.0 + half.y..HALL_HALF_WIDTH - 0.5 - half.y);
            let x = rng.random_range(x_min + 2.0..x_max - 2.0);
            boxes.push(Aabb {
                min: Point3::new(x - half.x, y - half.y, 0.0),
                max: Point3::new(x + half.x, y + half.y, height),
            });
        }
        Self { seed, hall, boxes }
    }

    /// First surface hit along a unit-direction ray: `(distance, point)`.
    pub fn cast(&self, origin: &Point3, dir: &Vector3) -> Option<(f64, Point3)> {
        let inv = dir.map(|d| 1.0 / d);
        // leaving the hall: the exit face is the hit unless it is the open top
        let mut best = None;
        if let Some((_, t_exit)) = self.hall.slab(origin, &inv) {
            let p = origin + dir * t_exit;
            if (p.z - self.hall.max.z).abs() > 1e-9 {
                best = Some(t_exit);
            }
        }
        for b in &self.boxes {
            if let Some((t0, _)) = b.slab(origin, &inv) {
                if t0 > 0.0 && best.is_none_or(|t| t0 < t) {
                    best = Some(t0);
                }
            }
        }
        best.map(|t| (t, origin + dir * t))
    }

    /// Intensity of the surface texture at a world point.
    pub fn intensity(&self, p: &Point3) -> u8 {
        let v = 0.5 * value_noise(self.seed ^ 1, &(p.coords / 0.8))
            + 0.3 * value_noise(self.seed ^ 2, &(p.coords / 0.35))
            + 0.2 * value_noise(self.seed ^ 3, &(p.coords / 0.15));
        let v: f64 = 128.0 + 120.0 * (3.0 * v).tanh();
        v.round().clamp(0.0, 255.0) as u8
    }

    /// Whether `p` lies on a hall face or a pillar face.
    pub fn on_surface(&self, p: &Point3, tol: f64) -> bool {
        let h = &self.hall;
        let on_hall = h.contains(p, tol)
            && ((p.x - h.min.x).abs() <= tol
                || (p.x - h.max.x).abs() <= tol
                || (p.y - h.min.y).abs() <= tol
                || (p.y - h.max.y).abs() <= tol
                || p.z.abs() <= tol);
        on_hall || self.boxes.iter().any(|b| b.on_boundary(p, tol))
    }
}

/// Smooth translation-only drift through random offsets, zero at the first
/// knot and constant past the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCurve {
    knots: Vec<(Timestamp, Vector3)>,
}

impl DriftCurve {
    pub fn zero(t0: Timestamp) -> Self {
        Self {
            knots: alloc::vec![(t0, Vector3::zeros())],
        }
    }

    pub fn random(rng: &mut impl Rng, t0: Timestamp, t1: Timestamp, magnitude: f64) -> Self {
        let n = (((t1 - t0) / DRIFT_KNOT_SPACING).ceil() as usize).max(1);
        let mut knots = alloc::vec![(t0, Vector3::zeros())];
        for i in 1..=n {
            let t = t0 + (t1 - t0) * i as f64 / n as f64;
            let a = rng.random_range(0.0..TAU);
            let r = magnitude * rng.random_range(0.6..1.0);
            let z = magnitude * rng.random_range(-0.2..0.2);
            knots.push((t, Vector3::new(r * a.cos(), r * a.sin(), z)));
        }
        Self { knots }
    }

    pub fn knots(&self) -> &[(Timestamp, Vector3)] {
        &self.knots
    }

    /// Cubic Hermite through the knots with finite-difference tangents.
    pub fn offset(&self, t: Timestamp) -> Vector3 {
        let k = &self.knots;
        let n = k.len();
        if n == 1 || t <= k[0].0 {
            return k[0].1;
        }
        if t >= k[n - 1].0 {
            return k[n - 1].1;
        }
        let i = k.partition_point(|e| e.0 <= t) - 1;
        let tangent = |j: usize| -> Vector3 {
            let (a, b) = (j.saturating_sub(1), (j + 1).min(n - 1));
            (k[b].1 - k[a].1) / (k[b].0 - k[a].0)
        };
        let h = k[i + 1].0 - k[i].0;
        let s = (t - k[i].0) / h;
        let (s2, s3) = (s * s, s * s * s);
        k[i].1 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + tangent(i) * (h * (s3 - 2.0 * s2 + s))
            + k[i + 1].1 * (-2.0 * s3 + 3.0 * s2)
            + tangent(i + 1) * (h * (s3 - s2))
    }

    pub fn pose(&self, t: Timestamp) -> Pose {
        let o = self.offset(t);
        Pose::from_translation(o.x, o.y, o.z)
    }
}

/// What the generator knows and the pipeline must recover.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// True lidar trajectories, both in the reference world frame.
    pub reference: Trajectory,
    pub target: Trajectory,
    /// Maps target-world coordinates into the reference world without drift.
    pub offset: Pose,
    /// Target time span during which the target walks the shared part of the
    /// reference path; `None` when the paths do not overlap.
    pub overlap: Option<(Timestamp, Timestamp)>,
    /// Drift applied to the stored target trajectory, in the target world.
    pub drift: DriftCurve,
}

impl GroundTruth {
    /// True target-world to reference-world transform at target time `t`.
    pub fn relative(&self, t: Timestamp) -> Pose {
        self.offset * self.drift.pose(t).inverse()
    }

    /// True reference-frame position of the target at `t`.
    pub fn target_position(&self, t: Timestamp) -> Result<Vector3> {
        Ok(*self.target.pose_at(t)?.translation())
    }

    /// Target trajectory timestamps inside the shared stretch of path.
    pub fn overlap_timestamps(&self) -> Vec<Timestamp> {
        let Some((a, b)) = self.overlap else { return Vec::new() };
        self.target.timestamps().filter(|t| (a..=b).contains(t)).collect()
    }

    /// Distance from a point to the nearest true reference position.
    pub fn distance_to_reference(&self, p: &Vector3) -> f64 {
        self.reference
            .samples()
            .iter()
            .map(|(_, q)| (q.translation() - p).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance between the true positions of a reference and a target time.
    pub fn pair_distance(&self, t_ref: Timestamp, t_tgt: Timestamp) -> Result<f64> {
        let a = self.reference.pose_at(t_ref)?;
        let b = self.target.pose_at(t_tgt)?;
        Ok((a.translation() - b.translation()).norm())
    }
}

/// Rotation from the camera optical frame (z forward, y down) into the lidar
/// frame, plus the mounting offset.
pub fn camera_extrinsic(cfg: &SynthConfig) -> Pose {
    let optical = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let mount = Rotation3::from_euler_angles(0.0, cfg.camera_pitch_deg.to_radians(), cfg.camera_yaw_deg.to_radians());
    let r = mount.into_inner() * optical;
    Pose::new(
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
        Vector3::new(0.1, 0.0, 0.1),
    )
}

pub fn camera_intrinsics(width: usize, height: usize) -> Intrinsics {
    let f = width as f64 / 2.0;
    Intrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
    }
}

/// Path point at arc length `s` for a session with the given lateral offset.
fn path_pose(x0: f64, s: f64, lateral: f64) -> Pose {
    let k = TAU / PATH_WAVELENGTH;
    let y = PATH_AMPLITUDE * (k * s).sin() + lateral;
    let slope = PATH_AMPLITUDE * k * (k * s).cos();
    Pose::from_yaw(slope.atan(), Vector3::new(x0 + s, y, SENSOR_HEIGHT))
}

fn true_trajectory(cfg: &SynthConfig, s_start: f64, t_start: Timestamp, lateral: f64) -> Result<Trajectory> {
    let n = (cfg.path_length / cfg.speed * cfg.lidar_rate).floor() as usize + 1;
    let samples = (0..n)
        .map(|i| {
            let dt = i as f64 / cfg.lidar_rate;
            (t_start + dt, path_pose(0.0, s_start + cfg.speed * dt, lateral))
        })
        .collect();
    Trajectory::new(samples)
}

pub fn render_scan(world: &SyntheticWorld, pose: &Pose, noise: f64, rng: &mut impl Rng) -> PointCloud {
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let origin = Point3::from(*pose.translation());
    let mut points = Vec::with_capacity(LIDAR_RINGS * LIDAR_AZIMUTHS);
    for ring in 0..LIDAR_RINGS {
        let e = (-LIDAR_FOV_DEG + 2.0 * LIDAR_FOV_DEG * ring as f64 / (LIDAR_RINGS - 1) as f64).to_radians();
        for az in 0..LIDAR_AZIMUTHS {
            let a = TAU * az as f64 / LIDAR_AZIMUTHS as f64;
            let local = Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
            let dir = pose.transform_vector(&local);
            if let Some((range, _)) = world.cast(&origin, &dir) {
                let r = if noise > 0.0 { range + normal.sample(rng) } else { range };
                if r < LIDAR_MAX_RANGE {
                    points.push(Point3::from(local * r));
                }
            }
        }
    }
    PointCloud {
        points,
        frame_id: "lidar".into(),
    }
}

pub fn render_image(world: &SyntheticWorld, camera_pose: &Pose, intrinsics: &Intrinsics, width: usize, height: usize) -> GrayImage {
    let cam = camera_pose;
    let origin = Point3::from(*cam.translation());
    GrayImage::from_fn(width, height, |u, v| {
        let n = intrinsics.normalize([u as f64, v as f64]);
        let dir = cam.transform_vector(&Vector3::new(n[0], n[1], 1.0).normalize());
        match world.cast(&origin, &dir) {
            Some((_, p)) => world.intensity(&p),
            None => SKY,
        }
    })
}

/// Renders one session from its true trajectory and stores it under
/// `stored` poses.
fn render_session(
    id: &str,
    world: &SyntheticWorld,
    truth: &Trajectory,
    stored: &Trajectory,
    cfg: &SynthConfig,
    stream: u64,
) -> Result<SessionMap> {
    let intrinsics = camera_intrinsics(cfg.image_width, cfg.image_height);
    let clouds = truth
        .samples()
        .iter()
        .enumerate()
        .map(|(i, (t, pose))| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(stream ^ splitmix(i as u64)));
            (*t, render_scan(world, pose, cfg.cloud_noise, &mut rng))
        })
        .collect();
    // camera frames offset from the lidar clock so poses are interpolated
    let first = truth.start() + 0.037;
    let count = ((truth.end() - first) * cfg.camera_rate).floor() as usize + 1;
    let mut images = Vec::with_capacity(count);
    for j in 0..count {
        let t = first + j as f64 / cfg.camera_rate;
        let pose = truth.pose_at(t)?;
        let cam = pose * camera_extrinsic(cfg);
        images.push((t, render_image(world, &cam, &intrinsics, cfg.image_width, cfg.image_height)));
    }
    SessionMap::new(id, intrinsics, images, clouds, stored.clone())
}

/// Generates the reference and target sessions of one synthetic world.
pub fn generate_pair(seed: u64, cfg: &SynthConfig) -> Result<(SessionMap, SessionMap, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    let p = cfg.path_length;
    let s_tgt = if cfg.overlap_fraction > 0.0 {
        (1.0 - cfg.overlap_fraction) * p
    } else {
        p + DISJOINT_GAP
    };
    let world = SyntheticWorld::generate(seed, -8.0, s_tgt + p + 8.0, cfg.pillars);
    let duration = p / cfg.speed;
    let t_ref = cfg.start_time;
    // the second visit happens later, as if recorded on another day
    let t_tgt = cfg.start_time + duration + 3600.0 + rng.random_range(0.0..100.0);
    let ref_truth = true_trajectory(cfg, 0.0, t_ref, 0.0)?;
    let tgt_truth = true_trajectory(cfg, s_tgt, t_tgt, cfg.lateral_offset)?;

    let yaw = rng.random_range(-PI..PI);
    let a = rng.random_range(0.0..TAU);
    let d = rng.random_range(cfg.offset_min..=cfg.offset_max);
    let offset = Pose::from_yaw(yaw, Vector3::new(d * a.cos(), d * a.sin(), rng.random_range(-0.5..0.5)));
    let drift = if cfg.drift_magnitude > 0.0 {
        DriftCurve::random(&mut rng, tgt_truth.start(), tgt_truth.end(), cfg.drift_magnitude)
    } else {
        DriftCurve::zero(tgt_truth.start())
    };
    let g_inv = offset.inverse();
    let tgt_stored = tgt_truth.map_poses(|t, pose| drift.pose(t) * g_inv * *pose);

    let ref_session = render_session(
        &format!("synth-{seed}-ref"),
        &world,
        &ref_truth,
        &ref_truth,
        cfg,
        splitmix(seed ^ 0xaaaa),
    )?;
    let tgt_session = render_session(
        &format!("synth-{seed}-tgt"),
        &world,
        &tgt_truth,
        &tgt_stored,
        cfg,
        splitmix(seed ^ 0xbbbb),
    )?;
    let overlap = (cfg.overlap_fraction > 0.0).then(|| (t_tgt, t_tgt + (p - s_tgt) / cfg.speed));
    let truth = GroundTruth {
        reference: ref_truth,
        target: tgt_truth,
        offset,
        overlap,
        drift,
    };
    Ok((ref_session, tgt_session, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            path_length: 6.0,
            image_width: 96,
            image_height: 72,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SynthConfig {
            overlap_fraction: 1.5,
            ..small()
        };
        assert!(matches!(generate_pair(1, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn noise_free_points_lie_on_geometry() {
        let world = SyntheticWorld::generate(3, -8.0, 40.0, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pose = path_pose(0.0, 12.0, 0.0);
        let scan = render_scan(&world, &pose, 0.0, &mut rng);
        assert!(scan.len() > 3000);
        for p in &scan.points {
            assert!(world.on_surface(&pose.transform_point(p), 1e-9));
        }
    }

    #[test]
    fn texture_is_photo_consistent() {
        let world = SyntheticWorld::generate(5, -8.0, 40.0, 30);
        let a = path_pose(0.0, 10.0, 0.0);
        let b = path_pose(0.0, 11.5, 0.3);
        let cam_a = a * camera_extrinsic(&small());
        let cam_b = b * camera_extrinsic(&small());
        let oa = Point3::from(*cam_a.translation());
        let ob = Point3::from(*cam_b.translation());
        let mut checked = 0;
        for k in 0..50 {
            let dir = cam_a.transform_vector(&Vector3::new(-0.4 + 0.016 * k as f64, 0.1, 1.0).normalize());
            let Some((_, x)) = world.cast(&oa, &dir) else { continue };
            let to_x = x - ob;
            let Some((t, y)) = world.cast(&ob, &to_x.normalize()) else { continue };
            if (t - to_x.norm()).abs() < 1e-6 {
                assert!((world.intensity(&x) as i32 - world.intensity(&y) as i32).abs() <= 1);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn drift_curve_starts_at_zero_and_is_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DriftCurve::random(&mut rng, 100.0, 130.0, 0.5);
        assert_eq!(d.offset(100.0), Vector3::zeros());
        let mut t = 99.0;
        while t < 131.0 {
            assert!((d.offset(t) - d.offset(t + 1e-4)).norm() < 1e-3);
            t += 0.05;
        }
    }

    #[test]
    fn pair_is_deterministic_and_consistent() {
        let (r1, t1, g1) = generate_pair(7, &small()).unwrap();
        let (r2, t2, g2) = generate_pair(7, &small()).unwrap();
        assert_eq!((r1 == r2, t1 == t2, g1 == g2), (true, true, true));
        assert_eq!(r1.trajectory(), &g1.reference);
        // stored target poses map back to truth through the relative transform
        for (t, p) in t1.trajectory().samples() {
            let (dt, dr) = (g1.relative(*t) * *p).distance_to(&g1.target.pose_at(*t).unwrap());
            assert!(dt < 1e-9 && dr < 1e-9);
        }
        assert!(!t1.images().is_empty() && !t1.clouds().is_empty());
        // half of a 6 m path at 1 m/s and 5 Hz
        assert_eq!(g1.overlap_timestamps().len(), 16);
        for t in g1.overlap_timestamps() {
            assert!(g1.distance_to_reference(&g1.target_position(t).unwrap()) < 1.0);
        }
    }

    #[test]
    fn zero_overlap_keeps_paths_apart() {
        let cfg = SynthConfig {
            overlap_fraction: 0.0,
            ..small()
        };
        let (_, _, g) = generate_pair(2, &cfg).unwrap();
        assert!(g.overlap_timestamps().is_empty());
        for (_, p) in g.target.samples() {
            assert!(g.distance_to_reference(p.translation()) > 5.0);
        }
    }
}
