//! Map-to-map relative poses: a coarse estimate from the two scan poses,
//! refined by plane-to-plane GICP on aggregated clouds and gated by fitness.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use nalgebra::{Cholesky, Matrix3, Matrix6, SymmetricEigen, UnitQuaternion, Vector6};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{Point3, Pose, Timestamp, Vector3};
use crate::lpr::aggregate_at_index;
use crate::session::{PointCloud, SessionMap};
use crate::spatial::{voxel_downsample, KdTree};
use crate::vpr::{CandidateMatch, CandidateMatchList};

const CHUNK: usize = 2048;

/// `T_Li^WR (T_Lj^WT)^-1`: the target-world to reference-world transform
/// that would hold if both scans had been taken at the same place.
pub fn coarse_relative(t_li_wr: &Pose, t_lj_wt: &Pose) -> Pose {
    t_li_wr * &t_lj_wt.inverse()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GicpConfig {
    /// Neighbors used for each local covariance.
    pub k: usize,
    /// Smallest covariance eigenvalue after plane regularization.
    pub epsilon: f64,
    /// Correspondences farther apart than this are ignored, meters.
    pub max_corr_dist: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step moves less than this (radians + meters).
    pub convergence: f64,
    /// Voxel size for downsampling both clouds; `None` keeps every point.
    pub voxel: Option<f64>,
    pub min_points: usize,
}

impl Default for GicpConfig {
    fn default() -> Self {
        Self {
            k: 20,
            epsilon: 1e-3,
            max_corr_dist: 1.0,
            max_iterations: 64,
            convergence: 1e-6,
            voxel: Some(0.1),
            min_points: 50,
        }
    }
}

impl GicpConfig {
    /// Wide-basin settings used to bring a rough initial guess within reach
    /// of the default settings.
    pub fn coarse() -> Self {
        Self {
            max_corr_dist: 3.0,
            max_iterations: 40,
            convergence: 1e-4,
            voxel: Some(0.4),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Pose mapping source points onto the target.
    pub transform: Pose,
    /// Mean squared distance of the final gated correspondences, m².
    pub fitness: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective value after each accepted step, starting with the initial pose.
    pub objective: Vec<f64>,
}

/// A downsampled cloud with plane-regularized local covariances.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    points: Vec<Point3>,
    covariances: Vec<Matrix3<f64>>,
    tree: KdTree,
}

impl PreparedCloud {
    pub fn new(points: &[Point3], cfg: &GicpConfig, exec: &impl Executor) -> Result<Self> {
        let points = match cfg.voxel {
            Some(v) => voxel_downsample(points, v),
            None => points.to_vec(),
        };
        let needed = cfg.min_points.max(cfg.k).max(4);
        if points.len() < needed {
            return Err(Error::TooFewPoints {
                needed,
                got: points.len(),
            });
        }
        let tree = KdTree::new(&points);
        let chunks: Vec<&[Point3]> = points.chunks(CHUNK).collect();
        let covariances = exec
            .map(&chunks, |chunk| {
                chunk
                    .iter()
                    .map(|p| plane_covariance(&tree, &points, p, cfg))
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();
        Ok(Self {
            points,
            covariances,
            tree,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }
}

fn plane_covariance(tree: &KdTree, points: &[Point3], p: &Point3, cfg: &GicpConfig) -> Matrix3<f64> {
    let nn = tree.knn(p, cfg.k);
    let n = nn.len() as f64;
    let mean = nn.iter().fold(Vector3::zeros(), |acc, (i, _)| acc + points[*i].coords) / n;
    let mut c = Matrix3::zeros();
    for (i, _) in &nn {
        let d = points[*i].coords - mean;
        c += d * d.transpose();
    }
    c /= n;
    let eig = SymmetricEigen::new(c);
    let smallest = (0..3)
        .min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap_or(0);
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    d[smallest] = cfg.epsilon;
    eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Per-chunk sums for one evaluation of the objective.
#[derive(Clone, Copy)]
struct Accum {
    objective: f64,
    h: Matrix6<f64>,
    g: Vector6<f64>,
    sq_dist: f64,
    gated: usize,
}

impl Accum {
    fn zero() -> Self {
        Self {
            objective: 0.0,
            h: Matrix6::zeros(),
            g: Vector6::zeros(),
            sq_dist: 0.0,
            gated: 0,
        }
    }

    fn add(mut self, o: &Accum) -> Self {
        self.objective += o.objective;
        self.h += o.h;
        self.g += o.g;
        self.sq_dist += o.sq_dist;
        self.gated += o.gated;
        self
    }
}

fn skew(v: &Vector3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Truncated Mahalanobis objective at `pose`, with the Gauss-Newton system
/// for a left-multiplied increment when `with_system` is set.
///
/// Each source point contributes `d^T M d`, where `d` is the offset to its
/// nearest target point, capped at `kappa = max_corr^2 / (2 epsilon)`.
/// Pairs beyond the correspondence gate contribute `kappa`, which no gated
/// pair can exceed since the combined covariance has no eigenvalue below
/// `2 epsilon`.
fn evaluate(
    src: &PreparedCloud,
    tgt: &PreparedCloud,
    pose: &Pose,
    cfg: &GicpConfig,
    with_system: bool,
    exec: &impl Executor,
) -> Accum {
    let kappa = cfg.max_corr_dist * cfg.max_corr_dist / (2.0 * cfg.epsilon);
    let max2 = cfg.max_corr_dist * cfg.max_corr_dist;
    let r = pose.rotation().to_rotation_matrix().into_inner();
    let idx: Vec<usize> = (0..src.points.len()).step_by(CHUNK).collect();
    let parts = exec.map(&idx, |&start| {
        let end = (start + CHUNK).min(src.points.len());
        let mut acc = Accum::zero();
        for i in start..end {
            let p = pose.transform_point(&src.points[i]);
            let Some((j, d2)) = tgt.tree.nearest(&p) else {
                acc.objective += kappa;
                continue;
            };
            if d2 > max2 {
                acc.objective += kappa;
                continue;
            }
            acc.sq_dist += d2;
            acc.gated += 1;
            let c = tgt.covariances[j] + r * src.covariances[i] * r.transpose();
            let Some(m) = c.try_inverse() else {
                acc.objective += kappa;
                continue;
            };
            let d = tgt.points[j] - p;
            let e = d.dot(&(m * d));
            if e >= kappa {
                acc.objective += kappa;
                continue;
            }
            acc.objective += e;
            if with_system {
                // d(delta) = d + [p]x w - v for the increment (w, v)
                let mut jac = nalgebra::Matrix3x6::zeros();
                jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&p.coords));
                jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
                let jt_m = jac.transpose() * m;
                acc.h += jt_m * jac;
                acc.g += jt_m * d;
            }
        }
        acc
    });
    parts.iter().fold(Accum::zero(), |a, b| a.add(b))
}

fn increment(delta: &Vector6<f64>) -> Pose {
    Pose::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(delta[0], delta[1], delta[2])),
        Vector3::new(delta[3], delta[4], delta[5]),
    )
}

fn solve(h: &Matrix6<f64>, g: &Vector6<f64>) -> Option<Vector6<f64>> {
    if let Some(ch) = Cholesky::new(*h) {
        return Some(ch.solve(&(-g)));
    }
    let scale = (0..6).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    Cholesky::new(h + Matrix6::identity() * (1e-6 * scale)).map(|ch| ch.solve(&(-g)))
}

/// Registers prepared clouds starting from `init`.
pub fn gicp_prepared(
    src: &PreparedCloud,
    tgt: &PreparedCloud,
    init: &Pose,
    cfg: &GicpConfig,
    exec: &impl Executor,
) -> RegistrationResult {
    let mut pose = *init;
    let mut current = evaluate(src, tgt, &pose, cfg, true, exec);
    let mut objective = alloc::vec![current.objective];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        if current.gated == 0 {
            break;
        }
        let Some(mut delta) = solve(&current.h, &current.g) else {
            break;
        };
        let mut accepted = None;
        loop {
            let size = delta.fixed_rows::<3>(0).norm() + delta.fixed_rows::<3>(3).norm();
            if !size.is_finite() || size < cfg.convergence {
                break;
            }
            let candidate = increment(&delta) * pose;
            let next = evaluate(src, tgt, &candidate, cfg, true, exec);
            if next.objective <= current.objective {
                accepted = Some((candidate, next, size));
                break;
            }
            delta *= 0.5;
        }
        match accepted {
            Some((candidate, next, size)) => {
                pose = candidate;
                current = next;
                objective.push(current.objective);
                if size < cfg.convergence {
                    converged = true;
                    break;
                }
            }
            None => {
                // no descent step above the convergence threshold remains
                converged = true;
                break;
            }
        }
    }
    let fitness = if current.gated == 0 {
        f64::INFINITY
    } else {
        current.sq_dist / current.gated as f64
    };
    RegistrationResult {
        transform: pose,
        fitness,
        converged,
        iterations,
        objective,
    }
}

/// Plane-to-plane GICP of `source` onto `target` from `init`.
pub fn gicp(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    cfg: &GicpConfig,
    exec: &impl Executor,
) -> Result<RegistrationResult> {
    let src = PreparedCloud::new(&source.points, cfg, exec)?;
    let tgt = PreparedCloud::new(&target.points, cfg, exec)?;
    Ok(gicp_prepared(&src, &tgt, init, cfg, exec))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    /// Matches with a fitness above this are discarded, m².
    pub xi: f64,
    pub r_agg: usize,
    pub gicp: GicpConfig,
    /// Optional wide-basin pass run before the main one.
    pub coarse: Option<GicpConfig>,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            xi: 0.25,
            r_agg: 5,
            gicp: GicpConfig::default(),
            coarse: Some(GicpConfig::coarse()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeEntry {
    pub t_tgt: Timestamp,
    pub t_ref: Timestamp,
    /// Target-world to reference-world transform.
    pub transform: Pose,
    pub fitness: f64,
}

/// Relative transforms indexed by strictly increasing target time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelativeTrajectory(Vec<RelativeEntry>);

impl RelativeTrajectory {
    pub fn new(entries: Vec<RelativeEntry>) -> Result<Self> {
        if entries.windows(2).any(|w| !(w[0].t_tgt < w[1].t_tgt)) {
            return Err(Error::InvalidTrajectory(
                "relative trajectory timestamps must increase".into(),
            ));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[RelativeEntry] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entry with the lowest fitness, earliest on ties.
    pub fn best(&self) -> Option<&RelativeEntry> {
        self.0
            .iter()
            .fold(None, |best: Option<&RelativeEntry>, e| match best {
                Some(b) if b.fitness <= e.fitness => Some(b),
                _ => Some(e),
            })
    }

    /// Largest gap between consecutive entries, seconds.
    pub fn max_gap(&self) -> f64 {
        self.0
            .windows(2)
            .map(|w| w[1].t_tgt - w[0].t_tgt)
            .fold(0.0, f64::max)
    }
}

/// Outcome of registering one candidate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRegistration {
    pub t_ref: Timestamp,
    pub t_tgt: Timestamp,
    pub coarse: Pose,
    pub transform: Pose,
    pub fitness: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kept: bool,
}

/// Registers a target aggregate against a prepared reference aggregate.
/// `coarse` maps target world into reference world.
pub fn register_pair(
    reference: &(PreparedCloud, Option<PreparedCloud>),
    tgt_world: &PointCloud,
    coarse: &Pose,
    params: &RegistrationParams,
    exec: &impl Executor,
) -> Result<(Pose, RegistrationResult)> {
    let moved: Vec<Point3> = tgt_world.points.iter().map(|p| coarse.transform_point(p)).collect();
    let mut init = Pose::identity();
    if let (Some(cfg), Some(coarse_ref)) = (&params.coarse, &reference.1) {
        let src = PreparedCloud::new(&moved, cfg, exec)?;
        init = gicp_prepared(&src, coarse_ref, &init, cfg, exec).transform;
    }
    let src = PreparedCloud::new(&moved, &params.gicp, exec)?;
    let fine = gicp_prepared(&src, &reference.0, &init, &params.gicp, exec);
    Ok((fine.transform * *coarse, fine))
}

/// Reference aggregate prepared at both registration levels.
pub fn prepare_reference(
    session: &SessionMap,
    index: usize,
    params: &RegistrationParams,
    exec: &impl Executor,
) -> Result<(PreparedCloud, Option<PreparedCloud>)> {
    let world = aggregate_at_index(session, index, params.r_agg)?.to_world();
    let fine = PreparedCloud::new(&world.points, &params.gicp, exec)?;
    let coarse = match &params.coarse {
        Some(cfg) => Some(PreparedCloud::new(&world.points, cfg, exec)?),
        None => None,
    };
    Ok((fine, coarse))
}

fn cloud_index(session: &SessionMap, t: Timestamp) -> Result<usize> {
    session
        .nearest_cloud_index(t)
        .ok_or_else(|| Error::InvalidSession("session has no clouds".into()))
}

/// Registers every candidate; `yaw_hint` optionally supplies a yaw applied in
/// the reference scan frame on top of the coarse estimate.
pub fn register_candidates(
    candidates: &[CandidateMatch],
    yaw_hint: Option<&[f64]>,
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    params: &RegistrationParams,
    exec: &impl Executor,
) -> Result<Vec<MatchRegistration>> {
    let mut ref_indices: Vec<usize> = candidates
        .iter()
        .map(|c| cloud_index(ref_session, c.t_ref))
        .collect::<Result<_>>()?;
    ref_indices.sort_unstable();
    ref_indices.dedup();
    let sequential = crate::exec::Sequential;
    let prepared = exec
        .map(&ref_indices, |&i| prepare_reference(ref_session, i, params, &sequential))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<usize> = (0..candidates.len()).collect();
    let results = exec.map(&jobs, |&n| -> Result<MatchRegistration> {
        let c = &candidates[n];
        let ri = cloud_index(ref_session, c.t_ref)?;
        let ti = cloud_index(tgt_session, c.t_tgt)?;
        let reference = &prepared[ref_indices.binary_search(&ri).expect("prepared")];
        let ref_pose = ref_session.cloud_pose(ri)?;
        let tgt_pose = tgt_session.cloud_pose(ti)?;
        let mut coarse = coarse_relative(&ref_pose, &tgt_pose);
        if let Some(yaw) = yaw_hint.map(|y| y[n]) {
            let turn = Pose::from_yaw(yaw, Vector3::zeros());
            coarse = ref_pose * turn * tgt_pose.inverse();
        }
        let tgt_world = aggregate_at_index(tgt_session, ti, params.r_agg)?.to_world();
        let (transform, fine) = register_pair(reference, &tgt_world, &coarse, params, &sequential)?;
        Ok(MatchRegistration {
            t_ref: c.t_ref,
            t_tgt: c.t_tgt,
            coarse,
            transform,
            fitness: fine.fitness,
            converged: fine.converged,
            iterations: fine.iterations,
            kept: fine.fitness <= params.xi,
        })
    });
    results.into_iter().collect()
}

/// Builds the relative trajectory from per-candidate registrations: matches
/// above the fitness gate are dropped and, per target timestamp, the lowest
/// fitness wins.
pub fn relative_from_registrations(registrations: &[MatchRegistration]) -> Result<RelativeTrajectory> {
    let mut kept: Vec<&MatchRegistration> = registrations.iter().filter(|r| r.kept).collect();
    kept.sort_by(|a, b| {
        a.t_tgt
            .total_cmp(&b.t_tgt)
            .then(a.fitness.total_cmp(&b.fitness))
            .then(a.t_ref.total_cmp(&b.t_ref))
    });
    kept.dedup_by(|b, a| a.t_tgt == b.t_tgt);
    if kept.is_empty() {
        return Err(Error::NoSurvivingMatches);
    }
    RelativeTrajectory::new(
        kept.into_iter()
            .map(|r| RelativeEntry {
                t_tgt: r.t_tgt,
                t_ref: r.t_ref,
                transform: r.transform,
                fitness: r.fitness,
            })
            .collect(),
    )
}

pub fn estimate_relative_trajectory(
    candidates: &CandidateMatchList,
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    params: &RegistrationParams,
    exec: &impl Executor,
) -> Result<(RelativeTrajectory, Vec<MatchRegistration>)> {
    let regs = register_candidates(candidates.as_slice(), None, ref_session, tgt_session, params, exec)?;
    let rel = relative_from_registrations(&regs)?;
    Ok((rel, regs))
}

fn pose_fields(out: &mut String, p: &Pose) {
    let t = p.translation();
    let q = p.rotation();
    let _ = write!(out, ",{},{},{},{},{},{},{}", t.x, t.y, t.z, q.i, q.j, q.k, q.w);
}

/// One CSV row per registration with the coarse and final transforms.
pub fn registrations_csv(regs: &[MatchRegistration]) -> String {
    let mut out = String::from(
        "t_ref,t_tgt,coarse_tx,coarse_ty,coarse_tz,coarse_qx,coarse_qy,coarse_qz,coarse_qw,\
         tx,ty,tz,qx,qy,qz,qw,fitness,converged,iterations,kept\n",
    );
    for r in regs {
        let _ = write!(out, "{:.9},{:.9}", r.t_ref, r.t_tgt);
        pose_fields(&mut out, &r.coarse);
        pose_fields(&mut out, &r.transform);
        let _ = writeln!(out, ",{},{},{},{}", r.fitness, r.converged, r.iterations, r.kept);
    }
    out
}
