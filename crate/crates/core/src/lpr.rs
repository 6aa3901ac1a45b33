//! Lidar place recognition: clouds aggregated around a keyframe scan, polar
//! height descriptors, and a yaw-invariant descriptor distance used to prune
//! visual candidates.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{Pose, Timestamp};
use crate::metrics::LprRecord;
use crate::session::{PointCloud, SessionMap};
use crate::vpr::CandidateMatchList;
// shadowed by inherent methods whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanContextParams {
    pub rings: usize,
    pub sectors: usize,
    /// Points at or beyond this horizontal range are ignored, meters.
    pub max_range: f64,
}

impl Default for ScanContextParams {
    fn default() -> Self {
        Self {
            rings: 20,
            sectors: 60,
            max_range: 80.0,
        }
    }
}

/// Ring-by-sector matrix of maximum point heights; `None` marks empty bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanContext {
    params: ScanContextParams,
    bins: Vec<Option<f64>>,
}

impl ScanContext {
    pub fn params(&self) -> &ScanContextParams {
        &self.params
    }

    pub fn get(&self, ring: usize, sector: usize) -> Option<f64> {
        self.bins[ring * self.params.sectors + sector]
    }

    pub fn occupied(&self) -> usize {
        self.bins.iter().filter(|b| b.is_some()).count()
    }

    /// One line per ring, empty bins left blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.params.rings {
            for s in 0..self.params.sectors {
                if s > 0 {
                    out.push(',');
                }
                if let Some(v) = self.get(r, s) {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    fn column(&self, sector: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.params.rings).map(move |r| self.get(r, sector))
    }
}

/// Polar bin of a point: ring from horizontal range, sector from azimuth
/// measured counter-clockwise from +x.
fn bin_of(x: f64, y: f64, params: &ScanContextParams) -> Option<(usize, usize)> {
    let rho = x.hypot(y);
    if !(rho < params.max_range) {
        return None;
    }
    let mut a = y.atan2(x);
    if a < 0.0 {
        a += TAU;
    }
    let ring = ((params.rings as f64 * rho / params.max_range) as usize).min(params.rings - 1);
    let sector = ((params.sectors as f64 * a / TAU) as usize).min(params.sectors - 1);
    Some((ring, sector))
}

pub fn scan_context(cloud: &PointCloud, params: &ScanContextParams) -> ScanContext {
    let mut bins: Vec<Option<f64>> = vec![None; params.rings * params.sectors];
    for p in &cloud.points {
        if let Some((r, s)) = bin_of(p.x, p.y, params) {
            let b = &mut bins[r * params.sectors + s];
            *b = Some(b.map_or(p.z, |v| v.max(p.z)));
        }
    }
    ScanContext {
        params: *params,
        bins,
    }
}

/// Column values with empty bins read as zero, plus the column norm.
struct Columns {
    values: Vec<f64>,
    norms: Vec<f64>,
    occupied: Vec<bool>,
    rings: usize,
}

impl Columns {
    fn new(d: &ScanContext) -> Self {
        let (rings, sectors) = (d.params.rings, d.params.sectors);
        let mut values = vec![0.0; rings * sectors];
        let mut norms = vec![0.0; sectors];
        let mut occupied = vec![false; sectors];
        for s in 0..sectors {
            for (r, v) in d.column(s).enumerate() {
                if let Some(v) = v {
                    values[s * rings + r] = v;
                    occupied[s] = true;
                }
            }
            norms[s] = values[s * rings..(s + 1) * rings].iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        Self {
            values,
            norms,
            occupied,
            rings,
        }
    }

    fn column(&self, s: usize) -> &[f64] {
        &self.values[s * self.rings..(s + 1) * self.rings]
    }
}

/// Cosine similarity of two columns, clamped to `[0, 1]`. Two all-zero
/// columns are identical; a zero column against a non-zero one shares nothing.
fn column_similarity(a: &Columns, i: usize, b: &Columns, j: usize) -> f64 {
    let (na, nb) = (a.norms[i], b.norms[j]);
    if na == 0.0 || nb == 0.0 {
        return if na == 0.0 && nb == 0.0 && a.occupied[i] == b.occupied[j] {
            1.0
        } else {
            0.0
        };
    }
    if a.column(i) == b.column(j) {
        return 1.0;
    }
    let dot: f64 = a.column(i).iter().zip(b.column(j)).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Column-mean distance for `d2` shifted by `shift` sectors: column `j` of
/// `d1` is compared with column `j + shift` of `d2`.
fn shifted_distance(a: &Columns, b: &Columns, sectors: usize, shift: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..sectors {
        let k = (j + shift) % sectors;
        if !a.occupied[j] && !b.occupied[k] {
            continue;
        }
        sum += 1.0 - column_similarity(a, j, b, k);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Minimum over all circular column shifts of the mean cosine column
/// distance. Returns `(best_shift, distance)`, the smallest shift on ties.
pub fn sc_distance(d1: &ScanContext, d2: &ScanContext) -> Result<(usize, f64)> {
    if d1.params != d2.params {
        return Err(Error::ParamMismatch);
    }
    let sectors = d1.params.sectors;
    let (a, b) = (Columns::new(d1), Columns::new(d2));
    let mut best = (0, f64::INFINITY);
    for shift in 0..sectors {
        let d = shifted_distance(&a, &b, sectors, shift);
        if d < best.1 {
            best = (shift, d);
        }
    }
    Ok(best)
}

/// Yaw (radians) that rotates the scene of `d1` onto that of `d2` for a
/// given best shift.
pub fn shift_to_yaw(shift: usize, params: &ScanContextParams) -> f64 {
    shift as f64 * TAU / params.sectors as f64
}

/// Scans around a keyframe, expressed in the keyframe lidar frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedCloud {
    pub cloud: PointCloud,
    pub center_timestamp: Timestamp,
    pub center_index: usize,
    /// Pose of the keyframe scan in the session world frame.
    pub keyframe_pose: Pose,
    pub member_count: usize,
}

impl AggregatedCloud {
    pub fn to_world(&self) -> PointCloud {
        self.cloud.transformed(&self.keyframe_pose, "world")
    }
}

/// Concatenates the `2 r_agg + 1` scans around the scan closest to `t`,
/// each moved into the keyframe frame with `T_k^-1 T_i`. Neighbors past
/// either end of the session are skipped.
pub fn aggregate_cloud(session: &SessionMap, t: Timestamp, r_agg: usize) -> Result<AggregatedCloud> {
    let center = session
        .nearest_cloud_index(t)
        .ok_or_else(|| Error::InvalidSession("session has no clouds".into()))?;
    aggregate_at_index(session, center, r_agg)
}

pub fn aggregate_at_index(session: &SessionMap, center: usize, r_agg: usize) -> Result<AggregatedCloud> {
    let clouds = session.clouds();
    let keyframe_pose = session.cloud_pose(center)?;
    let inv = keyframe_pose.inverse();
    let lo = center.saturating_sub(r_agg);
    let hi = (center + r_agg).min(clouds.len() - 1);
    let mut cloud = PointCloud::empty("keyframe");
    cloud.points.reserve(clouds[lo..=hi].iter().map(|c| c.1.len()).sum());
    for i in lo..=hi {
        if i == center {
            cloud.points.extend_from_slice(&clouds[i].1.points);
        } else {
            let rel = inv * session.cloud_pose(i)?;
            cloud.extend_transformed(&clouds[i].1, &rel);
        }
    }
    Ok(AggregatedCloud {
        cloud,
        center_timestamp: clouds[center].0,
        center_index: center,
        keyframe_pose,
        member_count: hi - lo + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LprParams {
    /// Pairs with a descriptor distance above this are dropped.
    pub psi: f64,
    pub r_agg: usize,
    pub scan_context: ScanContextParams,
}

impl Default for LprParams {
    fn default() -> Self {
        Self {
            psi: 0.25,
            r_agg: 5,
            scan_context: ScanContextParams::default(),
        }
    }
}

/// Descriptors of the aggregated clouds around the given scan indices,
/// computed once per distinct index.
fn descriptors_for(
    session: &SessionMap,
    indices: &[usize],
    params: &LprParams,
    exec: &impl Executor,
) -> Result<Vec<(usize, ScanContext)>> {
    let mut unique = indices.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let out = exec.map(&unique, |&i| {
        aggregate_at_index(session, i, params.r_agg).map(|a| (i, scan_context(&a.cloud, &params.scan_context)))
    });
    out.into_iter().collect()
}

fn lookup(table: &[(usize, ScanContext)], i: usize) -> &ScanContext {
    let pos = table.binary_search_by_key(&i, |e| e.0).expect("descriptor computed");
    &table[pos].1
}

/// Keeps the candidates whose aggregated-cloud descriptors are within `psi`.
/// Returns the surviving list and one record per input candidate.
pub fn lpr_filter(
    candidates: &CandidateMatchList,
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    params: &LprParams,
    exec: &impl Executor,
) -> Result<(CandidateMatchList, Vec<LprRecord>)> {
    let nearest = |s: &SessionMap, t| {
        s.nearest_cloud_index(t)
            .ok_or_else(|| Error::InvalidSession("session has no clouds".into()))
    };
    let mut pairs = Vec::with_capacity(candidates.len());
    for c in candidates {
        pairs.push((nearest(ref_session, c.t_ref)?, nearest(tgt_session, c.t_tgt)?));
    }
    let ref_desc = descriptors_for(ref_session, &pairs.iter().map(|p| p.0).collect::<Vec<_>>(), params, exec)?;
    let tgt_desc = descriptors_for(tgt_session, &pairs.iter().map(|p| p.1).collect::<Vec<_>>(), params, exec)?;
    let mut records = Vec::with_capacity(pairs.len());
    let mut keep = Vec::with_capacity(pairs.len());
    for (c, (ri, ti)) in candidates.iter().zip(&pairs) {
        let (shift, distance) = sc_distance(lookup(&ref_desc, *ri), lookup(&tgt_desc, *ti))?;
        let kept = distance <= params.psi;
        keep.push(kept);
        records.push(LprRecord {
            t_ref: c.t_ref,
            t_tgt: c.t_tgt,
            distance,
            shift,
            kept,
        });
    }
    Ok((candidates.select(&keep), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, Trajectory, Vector3};
    use crate::session::Intrinsics;
    use crate::vpr::CandidateMatch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ScanContextParams {
        ScanContextParams::default()
    }

    fn random_scene(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for _ in 0..12 {
            let (cx, cy) = (rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
            let h = rng.random_range(0.5..6.0);
            for _ in 0..150 {
                pts.push(Point3::new(
                    cx + rng.random_range(-2.0..2.0),
                    cy + rng.random_range(-2.0..2.0),
                    rng.random_range(0.0..h),
                ));
            }
        }
        PointCloud::new(pts, "lidar").unwrap()
    }

    #[test]
    fn empty_cloud_empty_descriptor() {
        let d = scan_context(&PointCloud::empty("lidar"), &params());
        assert_eq!(d.occupied(), 0);
        assert_eq!(sc_distance(&d, &d).unwrap(), (0, 0.0));
    }

    #[test]
    fn single_point_bin() {
        let p = params();
        let cloud = PointCloud::new(vec![Point3::new(40.0 + 1e-9, 0.0, 1.5)], "lidar").unwrap();
        let d = scan_context(&cloud, &p);
        assert_eq!(d.occupied(), 1);
        assert_eq!(d.get(p.rings / 2, 0), Some(1.5));
    }

    #[test]
    fn far_points_ignored() {
        let cloud = PointCloud::new(vec![Point3::new(80.0, 0.0, 1.0), Point3::new(0.0, -95.0, 1.0)], "lidar").unwrap();
        assert_eq!(scan_context(&cloud, &params()).occupied(), 0);
    }

    #[test]
    fn one_sector_rotation_shifts_columns() {
        let p = params();
        let cloud = random_scene(3);
        let rot = Pose::from_yaw(TAU / 60.0, Vector3::zeros());
        let a = scan_context(&cloud, &p);
        let b = scan_context(&cloud.transformed(&rot, "lidar"), &p);
        for r in 0..p.rings {
            for s in 0..p.sectors {
                assert_eq!(b.get(r, (s + 1) % p.sectors), a.get(r, s));
            }
        }
    }

    #[test]
    fn exact_shift_recovery_and_symmetry() {
        let p = params();
        let a = scan_context(&random_scene(11), &p);
        let mut bins = vec![None; p.rings * p.sectors];
        for r in 0..p.rings {
            for s in 0..p.sectors {
                bins[r * p.sectors + (s + 7) % p.sectors] = a.get(r, s);
            }
        }
        let b = ScanContext { params: p, bins };
        assert_eq!(sc_distance(&a, &a).unwrap(), (0, 0.0));
        assert_eq!(sc_distance(&a, &b).unwrap(), (7, 0.0));
        assert_eq!(sc_distance(&b, &a).unwrap(), (53, 0.0));
        let c = scan_context(&random_scene(12), &p);
        let (s1, d1) = sc_distance(&a, &c).unwrap();
        let (s2, d2) = sc_distance(&c, &a).unwrap();
        assert!((d1 - d2).abs() < 1e-9);
        assert!(d1 > 0.0 && d1 <= 1.0);
        assert_eq!((s1 + s2) % p.sectors, 0);
    }

    #[test]
    fn param_mismatch() {
        let a = scan_context(&random_scene(1), &params());
        let b = scan_context(&random_scene(1), &ScanContextParams { sectors: 30, ..params() });
        assert_eq!(sc_distance(&a, &b), Err(Error::ParamMismatch));
    }

    fn session(poses: Vec<Pose>, clouds: Vec<PointCloud>) -> SessionMap {
        let traj = Trajectory::new(poses.into_iter().enumerate().map(|(i, p)| (i as f64 * 0.1, p)).collect()).unwrap();
        let clouds = clouds.into_iter().enumerate().map(|(i, c)| (i as f64 * 0.1, c)).collect();
        SessionMap::new("s", Intrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap(), Vec::new(), clouds, traj).unwrap()
    }

    #[test]
    fn aggregation_identity_cases() {
        let clouds: Vec<PointCloud> = (0..6).map(random_scene).collect();
        let s = session(vec![Pose::from_translation(1.0, 2.0, 0.0); 6], clouds.clone());
        let single = aggregate_cloud(&s, 0.21, 0).unwrap();
        assert_eq!(single.cloud.points, clouds[2].points);
        assert_eq!(single.member_count, 1);
        let agg = aggregate_cloud(&s, 0.2, 2).unwrap();
        assert_eq!(agg.member_count, 5);
        let expected: Vec<Point3> = clouds[0..5].iter().flat_map(|c| c.points.clone()).collect();
        assert_eq!(agg.cloud.len(), expected.len());
        for (p, q) in agg.cloud.points.iter().zip(&expected) {
            assert!((p - q).norm() < 1e-12);
        }
        assert_eq!(aggregate_cloud(&s, 0.0, 2).unwrap().member_count, 3);
    }

    #[test]
    fn aggregation_of_a_plane_stays_planar() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut poses = Vec::new();
        let mut clouds = Vec::new();
        for i in 0..9 {
            let pose = Pose::from_yaw(0.1 * i as f64, Vector3::new(0.7 * i as f64, 0.2 * i as f64, 1.0));
            let inv = pose.inverse();
            let pts: Vec<Point3> = (0..200)
                .map(|_| inv.transform_point(&Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0)))
                .collect();
            poses.push(pose);
            clouds.push(PointCloud::new(pts, "lidar").unwrap());
        }
        let s = session(poses, clouds);
        let agg = aggregate_cloud(&s, 0.4, 3).unwrap();
        assert_eq!(agg.member_count, 7);
        for p in agg.to_world().points {
            assert!(p.z.abs() < 1e-6);
        }
    }

    #[test]
    fn filter_bounds() {
        let clouds: Vec<PointCloud> = (0..5).map(random_scene).collect();
        let s = session(vec![Pose::identity(); 5], clouds);
        let m = |a: f64, b: f64| CandidateMatch { t_ref: a, t_tgt: b, score: 1.0 };
        let cands = CandidateMatchList::new(vec![m(0.0, 0.0), m(0.4, 0.4), m(0.0, 0.4)]);
        let lpr = LprParams { r_agg: 0, ..LprParams::default() };
        let (kept, rec) = lpr_filter(&cands, &s, &s, &lpr, &crate::exec::Sequential).unwrap();
        assert_eq!(rec.len(), 3);
        assert!(rec[0].distance == 0.0 && rec[2].distance == 0.0);
        assert!(rec[1].distance > lpr.psi);
        assert_eq!(kept.len(), 2);
        let open = LprParams { psi: 1.0, ..lpr };
        assert_eq!(lpr_filter(&cands, &s, &s, &open, &crate::exec::Sequential).unwrap().0, cands);
    }
}
