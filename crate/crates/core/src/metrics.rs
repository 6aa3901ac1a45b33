//! Alignment quality scores: one-way point-to-point error and average
//! surface / volume density.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{Pose, Timestamp};
use crate::pipeline::{Mode, PipelineConfig};
use crate::session::PointCloud;
use crate::spatial::{KdTree, VoxelHash};

pub const DEFAULT_DENSITY_RADIUS: f64 = 0.2;

const CHUNK: usize = 4096;

/// Mean distance from each aligned target point to its nearest reference point.
pub fn point_to_point_error(
    aligned_tgt: &PointCloud,
    reference: &PointCloud,
    exec: &impl Executor,
) -> Result<f64> {
    if aligned_tgt.is_empty() || reference.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(&reference.points);
    let chunks: Vec<&[crate::Point3]> = aligned_tgt.points.chunks(CHUNK).collect();
    let sums = exec.map(&chunks, |chunk| {
        chunk
            .iter()
            .map(|p| tree.nearest(p).map_or(0.0, |(_, d2)| num_traits::Float::sqrt(d2)))
            .sum::<f64>()
    });
    Ok(sums.iter().sum::<f64>() / aligned_tgt.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    /// Average surface density, points per square meter.
    pub asd: f64,
    /// Average volume density, points per cubic meter.
    pub avd: f64,
    /// Neighbor count of every point.
    pub counts: Vec<u32>,
    pub radius: f64,
}

impl Density {
    pub fn surface(&self, i: usize) -> f64 {
        self.counts[i] as f64 / disk_area(self.radius)
    }

    pub fn volume(&self, i: usize) -> f64 {
        self.counts[i] as f64 / sphere_volume(self.radius)
    }
}

pub fn disk_area(r: f64) -> f64 {
    PI * r * r
}

/// Standard sphere volume `4/3 pi r^3`.
pub fn sphere_volume(r: f64) -> f64 {
    4.0 / 3.0 * PI * r * r * r
}

/// Per-point neighbor counts within `radius`; the point itself counts when
/// `include_self` is set.
pub fn density(
    cloud: &PointCloud,
    radius: f64,
    include_self: bool,
    exec: &impl Executor,
) -> Result<Density> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(radius > 0.0) {
        return Err(Error::Config(alloc::format!(
            "density radius must be positive, got {radius}"
        )));
    }
    let grid = VoxelHash::new(&cloud.points, radius);
    let offset = if include_self { 0 } else { 1 };
    let chunks: Vec<&[crate::Point3]> = cloud.points.chunks(CHUNK).collect();
    let counts: Vec<u32> = exec
        .map(&chunks, |chunk| {
            chunk
                .iter()
                .map(|p| (grid.count_within(p, radius) - offset) as u32)
                .collect::<Vec<u32>>()
        })
        .into_iter()
        .flatten()
        .collect();
    let mean_n = counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64;
    Ok(Density {
        asd: mean_n / disk_area(radius),
        avd: mean_n / sphere_volume(radius),
        counts,
        radius,
    })
}

/// Matches surviving each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageCounts {
    pub target_queries: usize,
    pub reference_keyframes: usize,
    pub vpr_proposed: usize,
    pub geo_verified: usize,
    pub lpr_survivors: usize,
    pub registration_survivors: usize,
}

impl StageCounts {
    pub fn is_monotone(&self) -> bool {
        self.vpr_proposed >= self.geo_verified
            && self.geo_verified >= self.lpr_survivors
            && self.lpr_survivors >= self.registration_survivors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LprRecord {
    pub t_ref: Timestamp,
    pub t_tgt: Timestamp,
    pub distance: f64,
    pub shift: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformRecord {
    pub t_tgt: Timestamp,
    pub transform: Pose,
    pub fitness: f64,
}

/// Everything a run reports: scores, stage counts, and the configuration used.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub mode: Mode,
    pub reference_id: String,
    pub target_id: String,
    pub p2p: f64,
    pub asd: f64,
    pub avd: f64,
    pub merged_points: usize,
    pub counts: StageCounts,
    pub lpr: Vec<LprRecord>,
    pub transforms: Vec<TransformRecord>,
    /// Largest time gap between consecutive relative-trajectory entries.
    pub max_match_gap: f64,
    pub config: PipelineConfig,
}

impl AlignmentReport {
    pub fn empty(mode: Mode, config: PipelineConfig) -> Self {
        Self {
            mode,
            reference_id: String::new(),
            target_id: String::new(),
            p2p: 0.0,
            asd: 0.0,
            avd: 0.0,
            merged_points: 0,
            counts: StageCounts::default(),
            lpr: Vec::new(),
            transforms: Vec::new(),
            max_match_gap: 0.0,
            config,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::geometry::{Point3, Vector3};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points, "world").unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cloud(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(0.0..1.5),
                        rng.random_range(0.0..1.5),
                        rng.random_range(0.0..0.5),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn p2p_identical_is_zero() {
        let c = random_cloud(100, 1);
        assert_eq!(point_to_point_error(&c, &c, &Sequential).unwrap(), 0.0);
    }

    #[test]
    fn p2p_lifted_plane() {
        let grid: Vec<Point3> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Point3::new(i as f64, j as f64, 0.0)))
            .collect();
        let lifted: Vec<Point3> = grid.iter().map(|p| p + Vector3::new(0.0, 0.0, 0.1)).collect();
        let e = point_to_point_error(&cloud(lifted), &cloud(grid), &Sequential).unwrap();
        assert!((e - 0.1).abs() < 1e-6);
    }

    #[test]
    fn p2p_matches_brute_force() {
        let a = random_cloud(200, 2);
        let b = random_cloud(200, 3);
        let brute = a
            .points
            .iter()
            .map(|p| {
                b.points
                    .iter()
                    .map(|q| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / 200.0;
        let e = point_to_point_error(&a, &b, &Sequential).unwrap();
        assert!((e - brute).abs() < 1e-9);
    }

    #[test]
    fn single_point_closed_form() {
        let d = density(&cloud(vec![Point3::origin()]), 0.2, true, &Sequential).unwrap();
        assert_eq!(d.counts, vec![1]);
        assert!((d.asd - 1.0 / (PI * 0.04)).abs() < 1e-12);
        assert!((d.asd - 7.9577).abs() < 1e-4);
        assert!((d.avd - 1.0 / (4.0 / 3.0 * PI * 0.008)).abs() < 1e-12);
        assert!((d.avd - 29.8416).abs() < 1e-4);
    }

    #[test]
    fn coincident_points_double() {
        let one = density(&cloud(vec![Point3::origin()]), 0.2, true, &Sequential).unwrap();
        let two = density(&cloud(vec![Point3::origin(); 2]), 0.2, true, &Sequential).unwrap();
        assert_eq!(two.counts, vec![2, 2]);
        assert!((two.asd - 2.0 * one.asd).abs() < 1e-12);
        assert!((two.avd - 2.0 * one.avd).abs() < 1e-12);
    }

    #[test]
    fn excluding_self() {
        let d = density(&cloud(vec![Point3::origin()]), 0.2, false, &Sequential).unwrap();
        assert_eq!(d.counts, vec![0]);
    }

    #[test]
    fn density_ratio_identity() {
        for seed in 0..5 {
            let c = random_cloud(300, seed);
            let r = 0.15 + seed as f64 * 0.05;
            let d = density(&c, r, true, &Sequential).unwrap();
            assert!((d.avd / d.asd - 3.0 / (4.0 * r)).abs() < 1e-9);
        }
    }

    #[test]
    fn density_rigid_invariance_and_monotone_insertion() {
        let c = random_cloud(400, 7);
        let pose = Pose::from_yaw(0.7, Vector3::new(12.0, -3.0, 4.0));
        let moved = c.transformed(&pose, "world");
        let a = density(&c, 0.2, true, &Sequential).unwrap();
        let b = density(&moved, 0.2, true, &Sequential).unwrap();
        assert!(((a.asd - b.asd) / a.asd).abs() < 1e-9);

        let mut more = c.clone();
        more.points.push(Point3::new(0.7, 0.7, 0.2));
        let m = density(&more, 0.2, true, &Sequential).unwrap();
        assert!(a.counts.iter().zip(&m.counts).all(|(x, y)| y >= x));
    }

    #[test]
    fn empty_inputs() {
        let e = PointCloud::empty("w");
        assert_eq!(density(&e, 0.2, true, &Sequential), Err(Error::EmptyCloud));
        assert_eq!(point_to_point_error(&e, &e, &Sequential), Err(Error::EmptyCloud));
    }
}
