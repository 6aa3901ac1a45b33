//! Sensor data of one mapping session.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose, Timestamp, Trajectory};

/// Slack allowed between cloud timestamps and the trajectory span.
pub const CLOUD_SPAN_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame_id: impl Into<String>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::NonFinitePoint(i));
        }
        Ok(Self {
            points,
            frame_id: frame_id.into(),
        })
    }

    pub fn empty(frame_id: impl Into<String>) -> Self {
        Self {
            points: Vec::new(),
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose, frame_id: impl Into<String>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            frame_id: frame_id.into(),
        }
    }

    pub fn extend_transformed(&mut self, other: &PointCloud, pose: &Pose) {
        self.points
            .extend(other.points.iter().map(|p| pose.transform_point(p)));
    }
}

/// 8-bit grayscale raster, row major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidSession(format!(
                "image buffer has {} bytes, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: alloc::vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidSession(format!(
                "intrinsics must have positive focal lengths, got fx={fx} fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, px: [f64; 2]) -> [f64; 2] {
        [(px[0] - self.cx) / self.fx, (px[1] - self.cy) / self.fy]
    }

    pub fn project(&self, n: [f64; 2]) -> [f64; 2] {
        [n[0] * self.fx + self.cx, n[1] * self.fy + self.cy]
    }

    pub fn matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// One mapping session: images, lidar clouds in the lidar frame, and the
/// lidar trajectory in the session's world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionMap {
    pub session_id: String,
    pub intrinsics: Intrinsics,
    images: Vec<(Timestamp, GrayImage)>,
    clouds: Vec<(Timestamp, PointCloud)>,
    trajectory: Trajectory,
}

impl SessionMap {
    /// Images and clouds may be given in any order; they are sorted by time.
    pub fn new(
        session_id: impl Into<String>,
        intrinsics: Intrinsics,
        mut images: Vec<(Timestamp, GrayImage)>,
        mut clouds: Vec<(Timestamp, PointCloud)>,
        trajectory: Trajectory,
    ) -> Result<Self> {
        let intrinsics = Intrinsics::new(intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy)?;
        images.sort_by(|a, b| a.0.total_cmp(&b.0));
        clouds.sort_by(|a, b| a.0.total_cmp(&b.0));
        if images.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidSession("duplicate image timestamp".into()));
        }
        if clouds.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidSession("duplicate cloud timestamp".into()));
        }
        for (t, _) in &clouds {
            if !trajectory.contains(*t, CLOUD_SPAN_TOLERANCE) {
                return Err(Error::InvalidSession(format!(
                    "cloud at {t:.9} lies outside the trajectory span"
                )));
            }
        }
        Ok(Self {
            session_id: session_id.into(),
            intrinsics,
            images,
            clouds,
            trajectory,
        })
    }

    pub fn images(&self) -> &[(Timestamp, GrayImage)] {
        &self.images
    }

    pub fn clouds(&self) -> &[(Timestamp, PointCloud)] {
        &self.clouds
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn image_timestamps(&self) -> Vec<Timestamp> {
        self.images.iter().map(|i| i.0).collect()
    }

    pub fn image_at(&self, t: Timestamp) -> Option<&GrayImage> {
        self.images
            .binary_search_by(|i| i.0.total_cmp(&t))
            .ok()
            .map(|i| &self.images[i].1)
    }

    /// Index of the cloud closest in time to `t`, ties going to the earlier one.
    pub fn nearest_cloud_index(&self, t: Timestamp) -> Option<usize> {
        if self.clouds.is_empty() {
            return None;
        }
        let upper = self.clouds.partition_point(|c| c.0 < t);
        if upper == 0 {
            return Some(0);
        }
        if upper == self.clouds.len() {
            return Some(upper - 1);
        }
        let before = t - self.clouds[upper - 1].0;
        let after = self.clouds[upper].0 - t;
        Some(if after < before { upper } else { upper - 1 })
    }

    pub fn nearest_cloud_timestamp(&self, t: Timestamp) -> Option<Timestamp> {
        self.nearest_cloud_index(t).map(|i| self.clouds[i].0)
    }

    /// Trajectory pose of the cloud at `index`.
    pub fn cloud_pose(&self, index: usize) -> Result<Pose> {
        self.trajectory.pose_at(self.clouds[index].0)
    }

    /// Every cloud transformed into the session world frame.
    pub fn world_cloud(&self) -> Result<PointCloud> {
        let mut out = PointCloud::empty("world");
        out.points
            .reserve(self.clouds.iter().map(|c| c.1.len()).sum());
        for (i, (_, cloud)) in self.clouds.iter().enumerate() {
            out.extend_transformed(cloud, &self.cloud_pose(i)?);
        }
        Ok(out)
    }
}
