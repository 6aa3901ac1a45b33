//! Alignment of the target session into the reference world frame, either
//! with one rigid transform or with a relative transform interpolated along
//! the target trajectory, and merging of the two maps.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::geometry::{slerp, Pose, Timestamp, Trajectory, Vector3};
use crate::registration::RelativeTrajectory;
use crate::session::{PointCloud, SessionMap};

/// Cubic spline through `(t_i, g_i)` with second derivatives `m_i`, zero at
/// both ends.
#[derive(Debug, Clone, PartialEq)]
struct NaturalCubic {
    t: Vec<f64>,
    g: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalCubic {
    /// Reinsch smoothing spline: minimizes `sum (y_i - f(t_i))^2 + lambda
    /// int f''^2`. With `lambda = 0` it interpolates.
    fn fit(t: &[f64], y: &[f64], lambda: f64) -> Self {
        let n = t.len();
        debug_assert!(n >= 3);
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let k = n - 2;
        // Q is n x k, R is k x k tridiagonal
        let mut q = DMatrix::<f64>::zeros(n, k);
        let mut r = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < k {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let yv = DVector::from_column_slice(y);
        let a = &r + lambda * q.transpose() * &q;
        let rhs = q.transpose() * &yv;
        let gamma = a
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| a.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)));
        let g = &yv - lambda * &q * &gamma;
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(gamma.as_slice());
        Self {
            t: t.to_vec(),
            g: g.as_slice().to_vec(),
            m,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        let i = self.t.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        a * self.g[i]
            + b * self.g[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

fn quat_log(q: &UnitQuaternion<f64>) -> Vector3 {
    q.scaled_axis() / 2.0
}

fn quat_exp(v: &Vector3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(v * 2.0)
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Constant(Pose),
    Linear,
    Cubic {
        axes: [NaturalCubic; 3],
        /// Inner control quaternions of the spherical cubic, one per knot.
        controls: Vec<UnitQuaternion<f64>>,
    },
}

/// Smooth interpolation of the relative transforms over target time,
/// clamped to the boundary poses outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeTrajectorySpline {
    /// Knot times relative to `origin`, kept small for numerical accuracy.
    knots: Vec<f64>,
    origin: Timestamp,
    translations: Vec<Vector3>,
    rotations: Vec<UnitQuaternion<f64>>,
    shape: Shape,
}

impl RelativeTrajectorySpline {
    pub fn domain(&self) -> (Timestamp, Timestamp) {
        (
            self.origin + self.knots[0],
            self.origin + self.knots[self.knots.len() - 1],
        )
    }

    pub fn knot_count(&self) -> usize {
        self.knots.len()
    }

    /// Relative pose at target time `t`.
    pub fn evaluate(&self, t: Timestamp) -> Pose {
        let n = self.knots.len();
        let x = (t - self.origin).clamp(self.knots[0], self.knots[n - 1]);
        match &self.shape {
            Shape::Constant(p) => *p,
            Shape::Linear => {
                let (i, s) = self.segment(x);
                let tr = self.translations[i] * (1.0 - s) + self.translations[i + 1] * s;
                Pose::new(slerp(&self.rotations[i], &self.rotations[i + 1], s), tr)
            }
            Shape::Cubic { axes, controls } => {
                let (i, s) = self.segment(x);
                let tr = Vector3::new(axes[0].eval(x), axes[1].eval(x), axes[2].eval(x));
                let (q0, q1) = (&self.rotations[i], &self.rotations[i + 1]);
                let outer = slerp(q0, q1, s);
                let inner = slerp(&controls[i], &controls[i + 1], s);
                Pose::new(slerp(&outer, &inner, 2.0 * s * (1.0 - s)), tr)
            }
        }
    }

    /// Segment index and local parameter in `[0, 1]`.
    fn segment(&self, x: f64) -> (usize, f64) {
        let n = self.knots.len();
        let i = self.knots.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
        let s = (x - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        (i, s.clamp(0.0, 1.0))
    }
}

/// Fits the relative-trajectory spline. Four or more entries give a cubic
/// translation spline and a spherical cubic rotation curve; two or three
/// give linear/slerp interpolation; a single entry gives a constant.
/// `smoothing` > 0 turns the translation spline into a smoothing spline.
pub fn fit_relative_spline(rel: &RelativeTrajectory, smoothing: f64) -> Result<RelativeTrajectorySpline> {
    let entries = rel.entries();
    if entries.is_empty() {
        return Err(Error::EmptyRelativeTrajectory);
    }
    if !(smoothing >= 0.0) {
        return Err(Error::Config("spline smoothing must be non-negative".into()));
    }
    let origin = entries[0].t_tgt;
    let knots: Vec<f64> = entries.iter().map(|e| e.t_tgt - origin).collect();
    let translations: Vec<Vector3> = entries.iter().map(|e| *e.transform.translation()).collect();
    let mut rotations: Vec<UnitQuaternion<f64>> = Vec::with_capacity(entries.len());
    for e in entries {
        let mut q = *e.transform.rotation();
        if let Some(prev) = rotations.last() {
            if prev.coords.dot(&q.coords) < 0.0 {
                q = UnitQuaternion::new_unchecked(-q.into_inner());
            }
        }
        rotations.push(q);
    }
    let shape = match entries.len() {
        1 => Shape::Constant(entries[0].transform),
        2 | 3 => Shape::Linear,
        n => {
            let axis = |k: usize| {
                let y: Vec<f64> = translations.iter().map(|v| v[k]).collect();
                NaturalCubic::fit(&knots, &y, smoothing)
            };
            let controls = (0..n)
                .map(|i| {
                    if i == 0 || i == n - 1 {
                        return rotations[i];
                    }
                    let inv = rotations[i].inverse();
                    let a = quat_log(&(inv * rotations[i + 1]));
                    let b = quat_log(&(inv * rotations[i - 1]));
                    let c = rotations[i] * quat_exp(&(-(a + b) / 4.0));
                    // keep the control in the same hemisphere as its knot
                    if c.coords.dot(&rotations[i].coords) < 0.0 {
                        UnitQuaternion::new_unchecked(Quaternion::from(-c.into_inner().coords))
                    } else {
                        c
                    }
                })
                .collect();
            Shape::Cubic {
                axes: [axis(0), axis(1), axis(2)],
                controls,
            }
        }
    };
    Ok(RelativeTrajectorySpline {
        knots,
        origin,
        translations,
        rotations,
        shape,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum AlignmentMode<'a> {
    Rigid(Pose),
    NonRigid(&'a RelativeTrajectorySpline),
}

/// Moves every target pose into the reference world frame by
/// left-composing the relative transform at its timestamp.
pub fn apply_alignment(tgt_traj: &Trajectory, mode: AlignmentMode<'_>) -> Trajectory {
    match mode {
        AlignmentMode::Rigid(t) => tgt_traj.map_poses(|_, p| t * *p),
        AlignmentMode::NonRigid(s) => tgt_traj.map_poses(|t, p| s.evaluate(t) * *p),
    }
}

/// Target clouds placed with the aligned trajectory.
pub fn aligned_target_cloud(tgt: &SessionMap, aligned: &Trajectory) -> Result<PointCloud> {
    let mut out = PointCloud::empty("world");
    out.points.reserve(tgt.clouds().iter().map(|c| c.1.len()).sum());
    for (t, cloud) in tgt.clouds() {
        out.extend_transformed(cloud, &aligned.pose_at(*t)?);
    }
    Ok(out)
}

/// Reference clouds in their own world frame followed by the target clouds
/// placed with the aligned target trajectory.
pub fn merge_maps(reference: &SessionMap, tgt: &SessionMap, aligned: &Trajectory) -> Result<PointCloud> {
    let mut merged = reference.world_cloud()?;
    merged.points.extend(aligned_target_cloud(tgt, aligned)?.points);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::RelativeEntry;

    fn rel(entries: &[(f64, Pose)]) -> RelativeTrajectory {
        RelativeTrajectory::new(
            entries
                .iter()
                .map(|(t, p)| RelativeEntry {
                    t_tgt: *t,
                    t_ref: *t,
                    transform: *p,
                    fitness: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn g() -> Pose {
        Pose::from_yaw(0.7, Vector3::new(12.0, -3.0, 0.4))
    }

    fn close(a: &Pose, b: &Pose, dt: f64, dr: f64) -> bool {
        let (t, r) = a.distance_to(b);
        t < dt && r < dr
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(
            fit_relative_spline(&RelativeTrajectory::default(), 0.0),
            Err(Error::EmptyRelativeTrajectory)
        );
    }

    #[test]
    fn single_entry_is_constant() {
        let s = fit_relative_spline(&rel(&[(100.0, g())]), 0.0).unwrap();
        for t in [-1e3, 100.0, 250.5] {
            assert_eq!(s.evaluate(t), g());
        }
    }

    #[test]
    fn equal_entries_give_a_constant_curve() {
        let s = fit_relative_spline(&rel(&(0..5).map(|i| (1.7e9 + i as f64, g())).collect::<Vec<_>>()), 0.0).unwrap();
        for k in 0..100 {
            let t = 1.7e9 - 1.0 + k as f64 * 0.07;
            assert!(close(&s.evaluate(t), &g(), 1e-6, 1e-6));
        }
    }

    fn truth(t: f64) -> Pose {
        Pose::new(
            UnitQuaternion::from_euler_angles(0.01 * (0.3 * t).cos(), 0.0, 0.2 + 0.03 * (0.4 * t).sin()),
            Vector3::new(10.0 + 0.5 * (0.3 * t).sin(), 0.3 * (0.2 * t).cos(), 0.01 * t),
        )
    }

    #[test]
    fn smooth_curve_reproduced_between_knots() {
        let t0 = 1.7e9;
        let knots: Vec<(f64, Pose)> = (0..6).map(|i| (t0 + 2.0 * i as f64, truth(2.0 * i as f64))).collect();
        let s = fit_relative_spline(&rel(&knots), 0.0).unwrap();
        for (t, p) in &knots {
            assert!(close(&s.evaluate(*t), p, 1e-3, 0.1f64.to_radians()));
        }
        for i in 0..5 {
            let x = 2.0 * i as f64 + 1.0;
            assert!(close(&s.evaluate(t0 + x), &truth(x), 0.05, 0.5f64.to_radians()));
        }
        // clamped outside the domain
        assert_eq!(s.evaluate(t0 - 5.0), s.evaluate(t0));
        assert_eq!(s.evaluate(t0 + 50.0), s.evaluate(t0 + 10.0));
    }

    #[test]
    fn spline_is_continuous() {
        let knots: Vec<(f64, Pose)> = [0.0, 0.5, 2.0, 2.6, 4.0, 7.0]
            .iter()
            .map(|&t| (t, truth(3.0 * t)))
            .collect();
        for take in [2, 3, 6] {
            let s = fit_relative_spline(&rel(&knots[..take]), 0.0).unwrap();
            let mut t = -0.5;
            while t < 7.5 {
                assert!(close(&s.evaluate(t), &s.evaluate(t + 1e-4), 1e-2, 0.1f64.to_radians()));
                t += 0.01;
            }
            for (kt, p) in &knots[..take] {
                assert!(close(&s.evaluate(*kt), p, 1e-3, 0.1f64.to_radians()));
            }
        }
    }

    #[test]
    fn smoothing_reduces_wiggle() {
        let knots: Vec<(f64, Pose)> = (0..8)
            .map(|i| (i as f64, Pose::from_translation(if i % 2 == 0 { 0.1 } else { -0.1 }, 0.0, 0.0)))
            .collect();
        let interp = fit_relative_spline(&rel(&knots), 0.0).unwrap();
        let smooth = fit_relative_spline(&rel(&knots), 10.0).unwrap();
        assert!(smooth.evaluate(3.0).translation().x.abs() < interp.evaluate(3.0).translation().x.abs());
    }

    #[test]
    fn rigid_and_constant_nonrigid_agree() {
        let traj = Trajectory::new((0..20).map(|i| (i as f64 * 0.1, truth(i as f64))).collect()).unwrap();
        assert_eq!(apply_alignment(&traj, AlignmentMode::Rigid(Pose::identity())), traj);
        let s = fit_relative_spline(&rel(&[(0.3, g()), (0.9, g()), (1.1, g()), (1.5, g())]), 0.0).unwrap();
        let a = apply_alignment(&traj, AlignmentMode::Rigid(g()));
        let b = apply_alignment(&traj, AlignmentMode::NonRigid(&s));
        for ((ta, pa), (tb, pb)) in a.samples().iter().zip(b.samples()) {
            assert_eq!(ta, tb);
            assert!(close(pa, pb, 1e-9, 1e-9));
        }
    }
}
