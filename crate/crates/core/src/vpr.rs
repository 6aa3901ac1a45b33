//! Visual place recognition: a bag-of-words database over reference
//! keyframes, queried with every target image, followed by geometric
//! verification of each proposed pair.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::features::{extract_features, FeatureSet, OrbParams};
use crate::geometry::{Timestamp, Trajectory};
use crate::geoverify::{verify_pair, VerificationResult, VerifyParams};
use crate::session::SessionMap;
use crate::vocabulary::{ImageDatabase, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateMatch {
    pub t_ref: Timestamp,
    pub t_tgt: Timestamp,
    pub score: f64,
}

/// Cross-session timestamp pairs ordered by target time, then reference time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateMatchList(Vec<CandidateMatch>);

impl CandidateMatchList {
    /// Sorts the pairs and drops repeated `(t_ref, t_tgt)` pairs, keeping the
    /// highest score.
    pub fn new(mut matches: Vec<CandidateMatch>) -> Self {
        matches.sort_by(|a, b| {
            a.t_tgt
                .total_cmp(&b.t_tgt)
                .then(a.t_ref.total_cmp(&b.t_ref))
                .then(b.score.total_cmp(&a.score))
        });
        matches.dedup_by(|b, a| a.t_tgt == b.t_tgt && a.t_ref == b.t_ref);
        Self(matches)
    }

    pub fn as_slice(&self) -> &[CandidateMatch] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, CandidateMatch> {
        self.0.iter()
    }

    /// Keeps the entries whose flag is set; order is preserved.
    pub fn select(&self, keep: &[bool]) -> Self {
        debug_assert_eq!(keep.len(), self.0.len());
        Self(
            self.0
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(m, _)| *m)
                .collect(),
        )
    }
}

impl<'a> IntoIterator for &'a CandidateMatchList {
    type Item = &'a CandidateMatch;
    type IntoIter = core::slice::Iter<'a, CandidateMatch>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Image timestamps at which the platform has moved more than `d_min`
/// meters or turned more than `theta_min_deg` degrees since the last
/// selected one. The first image is always selected.
pub fn select_keyframes(
    traj: &Trajectory,
    image_timestamps: &[Timestamp],
    d_min: f64,
    theta_min_deg: f64,
) -> Result<Vec<Timestamp>> {
    if !(d_min > 0.0 && theta_min_deg > 0.0) {
        return Err(Error::Config("keyframe thresholds must be positive".into()));
    }
    let theta_min = theta_min_deg.to_radians();
    let mut out = Vec::new();
    let mut last = None;
    for &t in image_timestamps {
        let pose = traj.pose_at(t)?;
        let take = match &last {
            None => true,
            Some(prev) => {
                let (dt, dr) = crate::geometry::Pose::distance_to(prev, &pose);
                dt > d_min || dr > theta_min
            }
        };
        if take {
            out.push(t);
            last = Some(pose);
        }
    }
    Ok(out)
}

/// Features of every image of a session, in image order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionFeatures {
    pub timestamps: Vec<Timestamp>,
    pub sets: Vec<FeatureSet>,
}

impl SessionFeatures {
    pub fn extract(session: &SessionMap, params: &OrbParams, exec: &impl Executor) -> Result<Self> {
        let sets = exec
            .map(session.images(), |(_, img)| extract_features(img, params))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            timestamps: session.image_timestamps(),
            sets,
        })
    }

    pub fn get(&self, t: Timestamp) -> Option<&FeatureSet> {
        self.timestamps
            .binary_search_by(|x| x.total_cmp(&t))
            .ok()
            .map(|i| &self.sets[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VprParams {
    /// Similarity a database hit must exceed to be proposed.
    pub alpha: f64,
    /// Database entries returned per query.
    pub top_n: usize,
    pub vocab_k: usize,
    pub vocab_depth: usize,
    pub d_min: f64,
    pub theta_min_deg: f64,
    pub orb: OrbParams,
    pub verify: VerifyParams,
    pub geo_verify: bool,
    pub seed: u64,
}

impl Default for VprParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            top_n: 1,
            vocab_k: 10,
            vocab_depth: 4,
            d_min: 2.0,
            theta_min_deg: 45.0,
            orb: OrbParams::default(),
            verify: VerifyParams::default(),
            geo_verify: true,
            seed: 0,
        }
    }
}

/// The stages of one VPR run, kept for reporting.
#[derive(Debug, Clone)]
pub struct VprOutput {
    pub keyframes: Vec<Timestamp>,
    pub vocabulary: Vocabulary,
    /// Pairs whose similarity exceeds alpha.
    pub proposed: CandidateMatchList,
    /// One result per proposed pair; empty when verification is disabled.
    pub verification: Vec<VerificationResult>,
    /// Pairs passed on to lidar place recognition.
    pub accepted: CandidateMatchList,
}

/// Trains a vocabulary on the keyframe features of a session.
pub fn train_keyframe_vocabulary(
    features: &SessionFeatures,
    keyframes: &[Timestamp],
    params: &VprParams,
) -> Result<Vocabulary> {
    let sets: Vec<FeatureSet> = keyframes
        .iter()
        .filter_map(|t| features.get(*t).cloned())
        .collect();
    Vocabulary::train(&sets, params.vocab_k, params.vocab_depth, params.seed)
}

/// Queries the keyframe database with every target image.
pub fn propose_candidates(
    vocabulary: &Vocabulary,
    ref_features: &SessionFeatures,
    keyframes: &[Timestamp],
    tgt_features: &SessionFeatures,
    params: &VprParams,
    exec: &impl Executor,
) -> Result<CandidateMatchList> {
    let mut db = ImageDatabase::new();
    for &t in keyframes {
        if let Some(f) = ref_features.get(t) {
            db.insert(t, vocabulary.transform(f));
        }
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let queries: Vec<(Timestamp, &FeatureSet)> = tgt_features
        .timestamps
        .iter()
        .copied()
        .zip(&tgt_features.sets)
        .collect();
    let hits = exec.map(&queries, |(t, f)| {
        db.query(&vocabulary.transform(f), params.top_n).map(|hits| {
            hits.into_iter()
                .filter(|(_, s)| *s > params.alpha)
                .map(|(t_ref, score)| CandidateMatch { t_ref, t_tgt: *t, score })
                .collect::<Vec<_>>()
        })
    });
    let mut all = Vec::new();
    for h in hits {
        all.extend(h?);
    }
    Ok(CandidateMatchList::new(all))
}

/// Seed for the verification of one pair, independent of processing order.
pub fn pair_seed(seed: u64, t_ref: Timestamp, t_tgt: Timestamp) -> u64 {
    seed ^ t_ref.to_bits().rotate_left(17) ^ t_tgt.to_bits().rotate_left(41)
}

/// Geometric verification of each candidate, in candidate order.
pub fn verify_candidates(
    candidates: &CandidateMatchList,
    ref_session: &SessionMap,
    ref_features: &SessionFeatures,
    tgt_session: &SessionMap,
    tgt_features: &SessionFeatures,
    params: &VprParams,
    exec: &impl Executor,
) -> Result<Vec<VerificationResult>> {
    let results = exec.map(candidates.as_slice(), |c| {
        let f1 = ref_features
            .get(c.t_ref)
            .ok_or_else(|| Error::InvalidSession("candidate without reference image".into()))?;
        let f2 = tgt_features
            .get(c.t_tgt)
            .ok_or_else(|| Error::InvalidSession("candidate without target image".into()))?;
        let mut verify = params.verify;
        verify.ransac.seed = pair_seed(params.seed, c.t_ref, c.t_tgt);
        Ok(verify_pair(f1, f2, &ref_session.intrinsics, &tgt_session.intrinsics, &verify))
    });
    results.into_iter().collect()
}

/// Full visual stage: keyframes, vocabulary (trained unless supplied),
/// database queries and geometric verification.
#[allow(clippy::too_many_arguments)]
pub fn vpr_candidates(
    ref_session: &SessionMap,
    ref_features: &SessionFeatures,
    tgt_session: &SessionMap,
    tgt_features: &SessionFeatures,
    vocabulary: Option<&Vocabulary>,
    params: &VprParams,
    exec: &impl Executor,
) -> Result<VprOutput> {
    let keyframes = select_keyframes(
        ref_session.trajectory(),
        &ref_features.timestamps,
        params.d_min,
        params.theta_min_deg,
    )?;
    let vocabulary = match vocabulary {
        Some(v) => v.clone(),
        None => train_keyframe_vocabulary(ref_features, &keyframes, params)?,
    };
    let proposed = propose_candidates(&vocabulary, ref_features, &keyframes, tgt_features, params, exec)?;
    let (verification, accepted) = if params.geo_verify {
        let results = verify_candidates(
            &proposed,
            ref_session,
            ref_features,
            tgt_session,
            tgt_features,
            params,
            exec,
        )?;
        let keep: Vec<bool> = results.iter().map(|r| r.passed).collect();
        let accepted = proposed.select(&keep);
        (results, accepted)
    } else {
        (Vec::new(), proposed.clone())
    };
    Ok(VprOutput {
        keyframes,
        vocabulary,
        proposed,
        verification,
        accepted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vector3};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_traj(xs: &[f64]) -> Trajectory {
        Trajectory::new(
            xs.iter()
                .enumerate()
                .map(|(i, &x)| (i as f64, Pose::from_translation(x, 0.0, 0.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn keyframes_on_a_line() {
        let traj = line_traj(&[0.0, 1.0, 2.5, 3.0]);
        let k = select_keyframes(&traj, &[0.0, 1.0, 2.0, 3.0], 2.0, 45.0).unwrap();
        assert_eq!(k, vec![0.0, 2.0]);
    }

    #[test]
    fn keyframes_while_turning() {
        let traj = Trajectory::new(
            [0.0f64, 30.0, 50.0]
                .iter()
                .enumerate()
                .map(|(i, d)| (i as f64, Pose::from_yaw(d.to_radians(), Vector3::zeros())))
                .collect(),
        )
        .unwrap();
        let k = select_keyframes(&traj, &[0.0, 1.0, 2.0], 2.0, 45.0).unwrap();
        assert_eq!(k, vec![0.0, 2.0]);
    }

    #[test]
    fn keyframes_random_walk_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pose = Pose::identity();
        let mut samples = Vec::new();
        for i in 0..300 {
            samples.push((i as f64 * 0.1, pose));
            let step = Pose::from_yaw(
                rng.random_range(-0.3..0.3),
                Vector3::new(rng.random_range(0.0..0.6), rng.random_range(-0.2..0.2), 0.0),
            );
            pose = pose * step;
        }
        let traj = Trajectory::new(samples).unwrap();
        let times: Vec<f64> = traj.timestamps().collect();
        let mut previous_len = usize::MAX;
        for d_min in [0.5, 1.0, 2.0, 4.0] {
            let k = select_keyframes(&traj, &times, d_min, 45.0).unwrap();
            assert!(k.len() <= times.len() && k.len() <= previous_len);
            previous_len = k.len();
            // re-walk: every skipped image is close to the last keyframe
            let mut ki = 0;
            for &t in &times {
                if ki + 1 < k.len() && t == k[ki + 1] {
                    ki += 1;
                    let (dt, dr) = traj.pose_at(k[ki - 1]).unwrap().distance_to(&traj.pose_at(t).unwrap());
                    assert!(dt > d_min || dr > 45f64.to_radians());
                } else if t != k[ki] {
                    let (dt, dr) = traj.pose_at(k[ki]).unwrap().distance_to(&traj.pose_at(t).unwrap());
                    assert!(dt <= d_min && dr <= 45f64.to_radians());
                }
            }
        }
    }

    #[test]
    fn candidate_list_dedups_and_orders() {
        let m = |t_ref, t_tgt, score| CandidateMatch { t_ref, t_tgt, score };
        let list = CandidateMatchList::new(vec![m(1.0, 5.0, 0.4), m(2.0, 3.0, 0.5), m(1.0, 5.0, 0.9)]);
        assert_eq!(list.as_slice(), &[m(2.0, 3.0, 0.5), m(1.0, 5.0, 0.9)]);
        assert_eq!(list.select(&[false, true]).as_slice(), &[m(1.0, 5.0, 0.9)]);
    }
}
