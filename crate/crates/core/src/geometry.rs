//! Rigid poses and timestamped trajectories.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Mul;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
// shadowed by inherent methods whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;

pub type Vector3 = nalgebra::Vector3<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// Seconds since the Unix epoch.
pub type Timestamp = f64;

/// Lookups may fall this far outside a trajectory and still clamp to its ends.
pub const CLAMP_TOLERANCE: f64 = 0.1;

/// Queries closer than this to a sample return the sample verbatim.
pub const SAMPLE_HIT_TOLERANCE: f64 = 1e-9;

/// Rigid transform `x -> R x + t`. The quaternion is kept unit-norm with `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    // renormalize so repeated compositions cannot drift off the unit sphere;
    // quaternions already unit to a few ulps are kept bit-for-bit
    let q = if (q.quaternion().norm_squared() - 1.0).abs() > 4.0 * f64::EPSILON {
        UnitQuaternion::new_normalize(*q.quaternion())
    } else {
        q
    };
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-*q.quaternion())
    } else {
        q
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    /// Builds a pose from raw quaternion components, normalizing them.
    pub fn from_parts(w: f64, x: f64, y: f64, z: f64, translation: Vector3) -> Self {
        Self::new(UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)), translation)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        )
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3 {
        &self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        quat_angle(&self.rotation)
    }

    /// Translation norm and rotation angle of `self^-1 * other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.translation.norm(), d.rotation_angle())
    }

    pub fn to_matrix(&self) -> nalgebra::Matrix4<f64> {
        let mut m = self.rotation.to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Linear blend of translations and spherical blend of rotations.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        Pose::new(
            slerp(&self.rotation, &other.rotation, s),
            self.translation + (other.translation - self.translation) * s,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

pub(crate) fn quat_angle(q: &UnitQuaternion<f64>) -> f64 {
    let w = q.w.abs().min(1.0);
    let v = q.imag().norm();
    2.0 * v.atan2(w)
}

/// Shortest-arc spherical interpolation.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let qa = a.quaternion();
    let mut qb = *b.quaternion();
    let mut dot = qa.coords.dot(&qb.coords);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        return UnitQuaternion::new_normalize(qa * (1.0 - s) + qb * s);
    }
    let theta = dot.min(1.0).acos();
    let sin_theta = theta.sin();
    let wa = ((1.0 - s) * theta).sin() / sin_theta;
    let wb = (s * theta).sin() / sin_theta;
    UnitQuaternion::new_normalize(qa * wa + qb * wb)
}

/// Poses sampled at strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<(Timestamp, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(Timestamp, Pose)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidTrajectory("no samples".into()));
        }
        for (i, (t, p)) in samples.iter().enumerate() {
            if !t.is_finite() || !p.is_finite() {
                return Err(Error::InvalidTrajectory(format!("non-finite sample {i}")));
            }
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidTrajectory(format!(
                "timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(Timestamp, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start(&self) -> Timestamp {
        self.samples[0].0
    }

    pub fn end(&self) -> Timestamp {
        self.samples[self.samples.len() - 1].0
    }

    pub fn timestamps(&self) -> impl Iterator<Item = Timestamp> + '_ {
        self.samples.iter().map(|s| s.0)
    }

    pub fn contains(&self, t: Timestamp, tolerance: f64) -> bool {
        t >= self.start() - tolerance && t <= self.end() + tolerance
    }

    /// Pose at `t`: exact on sample hits, interpolated between samples, and
    /// clamped to the nearest end within [`CLAMP_TOLERANCE`] outside the span.
    pub fn pose_at(&self, t: Timestamp) -> Result<Pose> {
        let (start, end) = (self.start(), self.end());
        if !(t >= start - CLAMP_TOLERANCE && t <= end + CLAMP_TOLERANCE) {
            return Err(Error::TimestampOutOfRange { t, start, end });
        }
        let upper = self.samples.partition_point(|s| s.0 < t);
        // sample hits on either side of t
        for idx in [upper.wrapping_sub(1), upper] {
            if let Some((ts, p)) = self.samples.get(idx) {
                if (ts - t).abs() <= SAMPLE_HIT_TOLERANCE {
                    return Ok(*p);
                }
            }
        }
        if upper == 0 {
            return Ok(self.samples[0].1);
        }
        if upper == self.samples.len() {
            return Ok(self.samples[upper - 1].1);
        }
        let (t0, p0) = &self.samples[upper - 1];
        let (t1, p1) = &self.samples[upper];
        Ok(p0.interpolate(p1, (t - t0) / (t1 - t0)))
    }

    /// Applies `f` to every pose, keeping timestamps.
    pub fn map_poses(&self, mut f: impl FnMut(Timestamp, &Pose) -> Pose) -> Trajectory {
        Trajectory {
            samples: self.samples.iter().map(|(t, p)| (*t, f(*t, p))).collect(),
        }
    }
}
