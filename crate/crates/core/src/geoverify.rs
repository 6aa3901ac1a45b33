//! Two-view geometric verification of an image pair.
//!
//! Matches binary descriptors, estimates an essential matrix with a
//! seven-point RANSAC, decomposes it into a rotation and a unit translation,
//! and counts matches whose triangulated point reprojects close to both
//! detections.
//!
//! Convention: a point `X1` in camera 1 maps to `X2 = R X1 + t` in camera 2,
//! and normalized coordinates satisfy `x2^T E x1 = 0` with `E = [t]x R`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3, Matrix4, Rotation3, SMatrix, UnitQuaternion, Vector3, Vector4};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::session::Intrinsics;
// shadowed by inherent methods whenever std is linked
#[allow(unused_imports)]
use num_traits::Float;

pub const MIN_MATCHES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub hamming: u32,
    pub i1: usize,
    pub i2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Matches must be strictly closer than this.
    pub max_hamming: u32,
    /// Best-to-second-best distance ratio; `None` disables the test.
    pub ratio: Option<f64>,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_hamming: 64,
            ratio: Some(0.8),
        }
    }
}

/// Brute-force mutual nearest neighbors in Hamming space.
pub fn match_descriptors(f1: &FeatureSet, f2: &FeatureSet, params: &MatchParams) -> Vec<Correspondence> {
    if f1.is_empty() || f2.is_empty() {
        return Vec::new();
    }
    // (best index, best distance, second best distance)
    let best_of = |a: &FeatureSet, b: &FeatureSet| -> Vec<(usize, u32, u32)> {
        a.descriptors
            .iter()
            .map(|d| {
                let mut best = (usize::MAX, u32::MAX, u32::MAX);
                for (j, e) in b.descriptors.iter().enumerate() {
                    let h = d.hamming(e);
                    if h < best.1 {
                        best = (j, h, best.1);
                    } else if h < best.2 {
                        best.2 = h;
                    }
                }
                best
            })
            .collect()
    };
    let forward = best_of(f1, f2);
    let backward = best_of(f2, f1);
    let mut out = Vec::new();
    for (i, &(j, h, second)) in forward.iter().enumerate() {
        if h >= params.max_hamming || backward[j].0 != i {
            continue;
        }
        if let Some(r) = params.ratio {
            if second != u32::MAX && !((h as f64) < r * second as f64) {
                continue;
            }
        }
        let (k1, k2) = (&f1.keypoints[i], &f2.keypoints[j]);
        out.push(Correspondence {
            p1: [k1.x, k1.y],
            p2: [k2.x, k2.y],
            hamming: h,
            i1: i,
            i2: j,
        });
    }
    out
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `[t]x R`.
pub fn essential_from_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    skew(t) * r
}

/// Closest essential matrix: singular values replaced by `(1, 1, 0)`.
pub fn project_to_essential(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t
}

fn epipolar_row(x1: &[f64; 2], x2: &[f64; 2]) -> [f64; 9] {
    [
        x2[0] * x1[0],
        x2[0] * x1[1],
        x2[0],
        x2[1] * x1[0],
        x2[1] * x1[1],
        x2[1],
        x1[0],
        x1[1],
        1.0,
    ]
}

fn matrix_from_vec(v: &[f64]) -> Matrix3<f64> {
    Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8])
}

/// Real roots of `c3 x^3 + c2 x^2 + c1 x + c0`.
fn real_cubic_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    let (c3, c2, c1, c0) = (c3 / scale, c2 / scale, c1 / scale, c0 / scale);
    let mut roots = Vec::new();
    if c3.abs() < 1e-12 {
        if c2.abs() < 1e-12 {
            if c1.abs() > 1e-12 {
                roots.push(-c0 / c1);
            }
        } else {
            let disc = c1 * c1 - 4.0 * c2 * c0;
            if disc >= 0.0 {
                let s = disc.sqrt();
                roots.push((-c1 + s) / (2.0 * c2));
                roots.push((-c1 - s) / (2.0 * c2));
            }
        }
    } else {
        let (a, b, c) = (c2 / c3, c1 / c3, c0 / c3);
        let q = (a * a - 3.0 * b) / 9.0;
        let r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
        if r * r < q * q * q {
            let theta = (r / (q * q * q).sqrt()).clamp(-1.0, 1.0).acos();
            let m = -2.0 * q.sqrt();
            for k in 0..3 {
                roots.push(m * ((theta + 2.0 * core::f64::consts::PI * k as f64) / 3.0).cos() - a / 3.0);
            }
        } else {
            let big_a = -r.signum() * (r.abs() + (r * r - q * q * q).sqrt()).cbrt();
            let big_b = if big_a == 0.0 { 0.0 } else { q / big_a };
            roots.push(big_a + big_b - a / 3.0);
        }
    }
    // polish
    for x in roots.iter_mut() {
        for _ in 0..3 {
            let f = ((c3 * *x + c2) * *x + c1) * *x + c0;
            let df = (3.0 * c3 * *x + 2.0 * c2) * *x + c1;
            if df.abs() > 1e-300 {
                *x -= f / df;
            }
        }
    }
    roots
}

/// Seven-point solver on normalized coordinates. Returns the 1 to 3 rank-2
/// matrices satisfying all seven constraints, or `None` when the constraint
/// system is rank deficient.
pub fn seven_point(x1: &[[f64; 2]], x2: &[[f64; 2]]) -> Option<Vec<Matrix3<f64>>> {
    debug_assert!(x1.len() == 7 && x2.len() == 7);
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..7 {
        let row = epipolar_row(&x1[i], &x2[i]);
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let s = svd.singular_values;
    if !(s[6] > 1e-9 * s[0]) {
        return None;
    }
    let v_t = svd.v_t?;
    let f1 = matrix_from_vec(v_t.row(7).transpose().as_slice());
    let f2 = matrix_from_vec(v_t.row(8).transpose().as_slice());
    let det_at = |x: f64| (f2 + (f1 - f2) * x).determinant();
    let (d0, d1, dm, d2) = (det_at(0.0), det_at(1.0), det_at(-1.0), det_at(2.0));
    let c0 = d0;
    let c2 = 0.5 * (d1 + dm) - d0;
    let odd = 0.5 * (d1 - dm);
    let c3 = (d2 - 4.0 * c2 - c0 - 2.0 * odd) / 6.0;
    let c1 = odd - c3;
    let mut out: Vec<Matrix3<f64>> = real_cubic_roots(c3, c2, c1, c0)
        .into_iter()
        .filter(|x| x.is_finite())
        .map(|x| f2 + (f1 - f2) * x)
        .collect();
    if c3.abs() < 1e-12 * (c2.abs() + c1.abs() + c0.abs()) {
        out.push(f1 - f2);
    }
    Some(out)
}

/// Linear least-squares essential matrix from at least eight correspondences.
fn linear_essential(x1: &[[f64; 2]], x2: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    let n = x1.len().max(9);
    let mut a = DMatrix::<f64>::zeros(n, 9);
    for i in 0..x1.len() {
        let row = epipolar_row(&x1[i], &x2[i]);
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let last = v_t.nrows() - 1;
    let e = matrix_from_vec(v_t.row(last).transpose().as_slice());
    Some(project_to_essential(&e))
}

/// Squared symmetric epipolar distance in pixels under fundamental matrix `f`.
fn symmetric_epipolar_sq(f: &Matrix3<f64>, p1: &[f64; 2], p2: &[f64; 2]) -> f64 {
    let u1 = Vector3::new(p1[0], p1[1], 1.0);
    let u2 = Vector3::new(p2[0], p2[1], 1.0);
    let l2 = f * u1;
    let l1 = f.transpose() * u2;
    let r = u2.dot(&l2);
    let n2 = l2.x * l2.x + l2.y * l2.y;
    let n1 = l1.x * l1.x + l1.y * l1.y;
    if n1 <= 0.0 || n2 <= 0.0 {
        return f64::INFINITY;
    }
    r * r * (1.0 / n1 + 1.0 / n2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Inlier threshold on the symmetric epipolar distance, pixels.
    pub threshold_px: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 2.0,
            max_iters: 500,
            seed: 0,
        }
    }
}

const LO_ITERS: usize = 30;

/// Essential matrix by seven-point RANSAC followed by a linear refit on the
/// inliers. Returns the matrix and the inlier mask.
pub fn estimate_essential_ransac(
    corrs: &[Correspondence],
    k1: &Intrinsics,
    k2: &Intrinsics,
    params: &RansacParams,
) -> Result<(Matrix3<f64>, Vec<bool>)> {
    if corrs.len() < 7 {
        return Err(Error::InsufficientCorrespondences {
            needed: 7,
            got: corrs.len(),
        });
    }
    let n1: Vec<[f64; 2]> = corrs.iter().map(|c| k1.normalize(c.p1)).collect();
    let n2: Vec<[f64; 2]> = corrs.iter().map(|c| k2.normalize(c.p2)).collect();
    let k1_inv = k1.matrix().try_inverse().expect("positive focal lengths");
    let k2_inv_t = k2.matrix().try_inverse().expect("positive focal lengths").transpose();
    let tau2 = params.threshold_px * params.threshold_px;
    // truncated squared residuals (MSAC): among models explaining similar
    // numbers of matches, the one that fits its inliers tightest wins
    let score = |e: &Matrix3<f64>| -> (f64, usize, Vec<bool>) {
        let f = k2_inv_t * e * k1_inv;
        let mut cost = 0.0;
        let mask: Vec<bool> = corrs
            .iter()
            .map(|c| {
                let d = symmetric_epipolar_sq(&f, &c.p1, &c.p2);
                cost += d.min(tau2);
                d < tau2
            })
            .collect();
        (cost, mask.iter().filter(|m| **m).count(), mask)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(f64, usize, Matrix3<f64>, Vec<bool>)> = None;
    let mut any_valid = false;
    for _ in 0..params.max_iters {
        let idx = sample(&mut rng, corrs.len(), 7);
        let s1: Vec<[f64; 2]> = idx.iter().map(|i| n1[i]).collect();
        let s2: Vec<[f64; 2]> = idx.iter().map(|i| n2[i]).collect();
        let Some(models) = seven_point(&s1, &s2) else {
            continue;
        };
        any_valid = true;
        for m in models {
            let e = project_to_essential(&m);
            let (cost, count, mask) = score(&e);
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, count, e, mask));
            }
        }
        // nothing can beat a model that explains every correspondence
        if best.as_ref().is_some_and(|b| b.1 == corrs.len()) {
            break;
        }
    }
    if !any_valid {
        return Err(Error::DegenerateConfiguration);
    }
    let (mut cost, mut count, mut e, mut mask) = best.ok_or(Error::DegenerateConfiguration)?;
    // local optimization: minimal models drawn from the inliers alone, judged
    // at a tighter threshold, separate the exact model from near-epipole
    // outliers that a slightly wrong model also explains
    if count > 7 {
        let inliers: Vec<usize> = (0..corrs.len()).filter(|&i| mask[i]).collect();
        let tight = tau2 / 16.0;
        let tight_cost = |e: &Matrix3<f64>| -> f64 {
            let f = k2_inv_t * e * k1_inv;
            corrs
                .iter()
                .map(|c| symmetric_epipolar_sq(&f, &c.p1, &c.p2).min(tight))
                .sum()
        };
        let mut lo_best = (tight_cost(&e), e);
        for _ in 0..LO_ITERS {
            let idx = sample(&mut rng, inliers.len(), 7);
            let s1: Vec<[f64; 2]> = idx.iter().map(|i| n1[inliers[i]]).collect();
            let s2: Vec<[f64; 2]> = idx.iter().map(|i| n2[inliers[i]]).collect();
            for m in seven_point(&s1, &s2).unwrap_or_default() {
                let cand = project_to_essential(&m);
                let c = tight_cost(&cand);
                if c < lo_best.0 {
                    lo_best = (c, cand);
                }
            }
        }
        e = lo_best.1;
        (cost, count, mask) = score(&e);
    }
    if count >= 8 {
        let i1: Vec<[f64; 2]> = (0..corrs.len()).filter(|&i| mask[i]).map(|i| n1[i]).collect();
        let i2: Vec<[f64; 2]> = (0..corrs.len()).filter(|&i| mask[i]).map(|i| n2[i]).collect();
        if let Some(refit) = linear_essential(&i1, &i2) {
            let (c, _, m) = score(&refit);
            if c <= cost {
                return Ok((refit, m));
            }
        }
    }
    Ok((e, mask))
}

/// The four `(R, t)` factorizations of an essential matrix, `|t| = 1`.
pub fn decompose_essential(e: &Matrix3<f64>) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = e.svd(true, true);
    let mut u = svd.u.expect("u");
    let mut v_t = svd.v_t.expect("v_t");
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Linear (DLT) triangulation in camera-1 coordinates from normalized
/// observations. `None` for points at infinity.
pub fn triangulate(r: &Matrix3<f64>, t: &Vector3<f64>, x1: &[f64; 2], x2: &[f64; 2]) -> Option<Vector3<f64>> {
    let mut p2 = nalgebra::Matrix3x4::<f64>::zeros();
    p2.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    p2.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    let p1 = nalgebra::Matrix3x4::<f64>::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let mut a = Matrix4::<f64>::zeros();
    a.set_row(0, &(p1.row(2) * x1[0] - p1.row(0)));
    a.set_row(1, &(p1.row(2) * x1[1] - p1.row(1)));
    a.set_row(2, &(p2.row(2) * x2[0] - p2.row(0)));
    a.set_row(3, &(p2.row(2) * x2[1] - p2.row(1)));
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let x: Vector4<f64> = v_t.row(3).transpose();
    if x.w.abs() < 1e-12 * x.xyz().norm() || x.w == 0.0 {
        return None;
    }
    Some(x.xyz() / x.w)
}

fn positive_depth_count(r: &Matrix3<f64>, t: &Vector3<f64>, n1: &[[f64; 2]], n2: &[[f64; 2]]) -> usize {
    n1.iter()
        .zip(n2)
        .filter(|(a, b)| {
            triangulate(r, t, a, b).is_some_and(|x| x.z > 0.0 && (r * x + t).z > 0.0)
        })
        .count()
}

/// The factorization with the most points in front of both cameras.
pub fn select_pose(
    e: &Matrix3<f64>,
    n1: &[[f64; 2]],
    n2: &[[f64; 2]],
) -> (Matrix3<f64>, Vector3<f64>, usize) {
    decompose_essential(e)
        .into_iter()
        .map(|(r, t)| {
            let c = positive_depth_count(&r, &t, n1, n2);
            (r, t, c)
        })
        .fold(None::<(Matrix3<f64>, Vector3<f64>, usize)>, |best, cand| match best {
            Some(b) if b.2 >= cand.2 => Some(b),
            _ => Some(cand),
        })
        .expect("four candidates")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams {
    /// Minimum inlier ratio.
    pub phi: f64,
    pub ransac: RansacParams,
    /// Reprojection threshold for triangulated inliers, pixels.
    pub reprojection_px: f64,
    pub min_matches: usize,
    pub matching: MatchParams,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            phi: 0.3,
            ransac: RansacParams::default(),
            reprojection_px: 4.0,
            min_matches: MIN_MATCHES,
            matching: MatchParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    TooFewMatches,
    Degenerate,
    LowInlierRatio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationResult {
    pub passed: bool,
    pub inlier_ratio: f64,
    /// Rotation taking camera-1 coordinates to camera 2.
    pub relative_rotation: UnitQuaternion<f64>,
    /// Unit direction of the camera-2 translation; zero when the matches are
    /// explained by a pure rotation and the baseline is unobservable.
    pub translation_direction: Vector3<f64>,
    pub inlier_count: usize,
    pub match_count: usize,
    pub reason: Option<RejectReason>,
}

impl VerificationResult {
    fn rejected(match_count: usize, reason: RejectReason) -> Self {
        Self {
            passed: false,
            inlier_ratio: 0.0,
            relative_rotation: UnitQuaternion::identity(),
            translation_direction: Vector3::zeros(),
            inlier_count: 0,
            match_count,
            reason: Some(reason),
        }
    }
}

fn reprojects(
    x: &Vector3<f64>,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    c: &Correspondence,
    k1: &Intrinsics,
    k2: &Intrinsics,
    tol: f64,
) -> bool {
    let x2 = r * x + t;
    if x.z <= 0.0 || x2.z <= 0.0 {
        return false;
    }
    let q1 = k1.project([x.x / x.z, x.y / x.z]);
    let q2 = k2.project([x2.x / x2.z, x2.y / x2.z]);
    let e1 = (q1[0] - c.p1[0]).hypot(q1[1] - c.p1[1]);
    let e2 = (q2[0] - c.p2[0]).hypot(q2[1] - c.p2[1]);
    e1 <= tol && e2 <= tol
}

fn bearing(n: &[f64; 2]) -> Vector3<f64> {
    Vector3::new(n[0], n[1], 1.0).normalize()
}

/// Rotation best aligning `a` onto `b` (Kabsch on unit bearings).
fn kabsch(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Matrix3<f64> {
    let mut h = Matrix3::zeros();
    for (x, y) in a.iter().zip(b) {
        h += y * x.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Pure-rotation model for pairs without parallax: bearings related by `R`.
fn rotation_only(
    corrs: &[Correspondence],
    n1: &[[f64; 2]],
    n2: &[[f64; 2]],
    k1: &Intrinsics,
    k2: &Intrinsics,
    params: &VerifyParams,
) -> (Matrix3<f64>, usize) {
    let b1: Vec<Vector3<f64>> = n1.iter().map(bearing).collect();
    let b2: Vec<Vector3<f64>> = n2.iter().map(bearing).collect();
    let inliers = |r: &Matrix3<f64>| -> Vec<bool> {
        corrs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let f = r * b1[i];
                let g = r.transpose() * b2[i];
                if f.z <= 0.0 || g.z <= 0.0 {
                    return false;
                }
                let q2 = k2.project([f.x / f.z, f.y / f.z]);
                let q1 = k1.project([g.x / g.z, g.y / g.z]);
                (q2[0] - c.p2[0]).hypot(q2[1] - c.p2[1]) <= params.reprojection_px
                    && (q1[0] - c.p1[0]).hypot(q1[1] - c.p1[1]) <= params.reprojection_px
            })
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.ransac.seed ^ 0x9e37_79b9);
    let mut best = (Matrix3::identity(), 0usize);
    for _ in 0..params.ransac.max_iters.min(200) {
        let i = rng.random_range(0..corrs.len());
        let j = rng.random_range(0..corrs.len());
        if i == j {
            continue;
        }
        let r = kabsch(&[b1[i], b1[j]], &[b2[i], b2[j]]);
        let count = inliers(&r).iter().filter(|m| **m).count();
        if count > best.1 {
            best = (r, count);
            if count == corrs.len() {
                break;
            }
        }
    }
    if best.1 >= 2 {
        let mask = inliers(&best.0);
        let a: Vec<Vector3<f64>> = (0..corrs.len()).filter(|&i| mask[i]).map(|i| b1[i]).collect();
        let b: Vec<Vector3<f64>> = (0..corrs.len()).filter(|&i| mask[i]).map(|i| b2[i]).collect();
        let refit = kabsch(&a, &b);
        let count = inliers(&refit).iter().filter(|m| **m).count();
        if count >= best.1 {
            best = (refit, count);
        }
    }
    best
}

/// Decides whether two images view the same place.
pub fn verify_pair(
    f1: &FeatureSet,
    f2: &FeatureSet,
    k1: &Intrinsics,
    k2: &Intrinsics,
    params: &VerifyParams,
) -> VerificationResult {
    let corrs = match_descriptors(f1, f2, &params.matching);
    verify_correspondences(&corrs, k1, k2, params)
}

pub fn verify_correspondences(
    corrs: &[Correspondence],
    k1: &Intrinsics,
    k2: &Intrinsics,
    params: &VerifyParams,
) -> VerificationResult {
    let m = corrs.len();
    if m < params.min_matches.max(7) {
        return VerificationResult::rejected(m, RejectReason::TooFewMatches);
    }
    let n1: Vec<[f64; 2]> = corrs.iter().map(|c| k1.normalize(c.p1)).collect();
    let n2: Vec<[f64; 2]> = corrs.iter().map(|c| k2.normalize(c.p2)).collect();

    let mut general: Option<(Matrix3<f64>, Vector3<f64>, usize)> = None;
    if let Ok((e, _)) = estimate_essential_ransac(corrs, k1, k2, &params.ransac) {
        let (r, t, _) = select_pose(&e, &n1, &n2);
        let inliers = corrs
            .iter()
            .enumerate()
            .filter(|(i, c)| {
                triangulate(&r, &t, &n1[*i], &n2[*i])
                    .is_some_and(|x| reprojects(&x, &r, &t, c, k1, k2, params.reprojection_px))
            })
            .count();
        general = Some((r, t, inliers));
    }
    let finish = |r: Matrix3<f64>, t: Vector3<f64>, inliers: usize| {
        let ratio = inliers as f64 / m as f64;
        let passed = ratio >= params.phi;
        VerificationResult {
            passed,
            inlier_ratio: ratio,
            relative_rotation: UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
            translation_direction: t,
            inlier_count: inliers,
            match_count: m,
            reason: (!passed).then_some(RejectReason::LowInlierRatio),
        }
    };
    if let Some((r, t, inliers)) = general {
        if inliers as f64 / m as f64 >= params.phi {
            return finish(r, t, inliers);
        }
    }
    // no usable epipolar geometry: try explaining the matches by a rotation
    let (r, inliers) = rotation_only(corrs, &n1, &n2, k1, k2, params);
    if inliers as f64 / m as f64 >= params.phi {
        return finish(r, Vector3::zeros(), inliers);
    }
    match general {
        Some((r, t, inliers)) => finish(r, t, inliers),
        None => VerificationResult::rejected(m, RejectReason::Degenerate),
    }
}
