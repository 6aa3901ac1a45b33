//! End-to-end orchestration: configuration, mode dispatch and the shared
//! matching stages.
//!
//! [`match_sessions`] runs the visual, lidar and registration stages once;
//! [`finish`] turns their result into an aligned trajectory, a merged cloud
//! and a report for either the rigid or the non-rigid variant. The baselines
//! (`gicp`, `vma`, `lma`) each register a single pair.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::alignment::{apply_alignment, aligned_target_cloud, fit_relative_spline, AlignmentMode};
use crate::error::{Error, Result, StageExt};
use crate::exec::Executor;
use crate::geometry::{Pose, Timestamp, Trajectory};
use crate::lpr::{aggregate_at_index, lpr_filter, sc_distance, scan_context, shift_to_yaw, LprParams};
use crate::metrics::{density, point_to_point_error, AlignmentReport, StageCounts, TransformRecord};
use crate::registration::{
    register_candidates, register_pair, relative_from_registrations, MatchRegistration, PreparedCloud,
    RegistrationParams, RelativeTrajectory,
};
use crate::session::{PointCloud, SessionMap};
use crate::vocabulary::Vocabulary;
use crate::vpr::{
    select_keyframes, verify_candidates, vpr_candidates, CandidateMatch, CandidateMatchList, SessionFeatures,
    VprOutput, VprParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// One registration between the complete maps, starting from identity.
    Gicp,
    /// The single best visual match.
    Vma,
    /// The single best lidar descriptor match.
    Lma,
    VlmaRigid,
    VlmaNonrigid,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Gicp, Mode::Vma, Mode::Lma, Mode::VlmaRigid, Mode::VlmaNonrigid];

    /// Label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Gicp => "GICP",
            Mode::Vma => "VMA",
            Mode::Lma => "LMA",
            Mode::VlmaRigid => "VLMA-rigid",
            Mode::VlmaNonrigid => "VLMA-nonrigid",
        }
    }

    /// Name accepted on the command line and in config files.
    pub fn name(self) -> &'static str {
        match self {
            Mode::Gicp => "gicp",
            Mode::Vma => "vma",
            Mode::Lma => "lma",
            Mode::VlmaRigid => "vlma-rigid",
            Mode::VlmaNonrigid => "vlma-nonrigid",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s) || m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(alloc::format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Bag-of-words similarity a proposal must exceed.
    pub alpha: f64,
    /// Minimum inlier ratio for geometric verification.
    pub phi: f64,
    /// Largest accepted ScanContext distance.
    pub psi: f64,
    /// Largest accepted registration fitness, m^2.
    pub xi: f64,
    /// Scans on each side of a keyframe in an aggregated cloud.
    pub r_agg: usize,
    pub d_min: f64,
    pub theta_min_deg: f64,
    pub density_radius: f64,
    pub mode: Mode,
    pub enable_sc_filter: bool,
    pub enable_geo_verify: bool,
    pub seed: u64,
    /// Spline smoothing weight; 0 interpolates the relative transforms.
    pub smoothing: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let vpr = VprParams::default();
        let lpr = LprParams::default();
        let reg = RegistrationParams::default();
        Self {
            alpha: vpr.alpha,
            phi: vpr.verify.phi,
            psi: lpr.psi,
            xi: reg.xi,
            r_agg: lpr.r_agg,
            d_min: vpr.d_min,
            theta_min_deg: vpr.theta_min_deg,
            density_radius: crate::metrics::DEFAULT_DENSITY_RADIUS,
            mode: Mode::VlmaNonrigid,
            enable_sc_filter: true,
            enable_geo_verify: true,
            seed: 0,
            smoothing: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(alloc::format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(alloc::format!("{name} must be positive, got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("phi", self.phi)?;
        unit("psi", self.psi)?;
        positive("xi", self.xi)?;
        positive("r_agg", self.r_agg as f64)?;
        positive("d_min", self.d_min)?;
        positive("theta_min", self.theta_min_deg)?;
        positive("density_radius", self.density_radius)?;
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "smoothing must be non-negative, got {}",
                self.smoothing
            )));
        }
        Ok(())
    }

    pub fn vpr_params(&self) -> VprParams {
        let mut p = VprParams {
            alpha: self.alpha,
            d_min: self.d_min,
            theta_min_deg: self.theta_min_deg,
            geo_verify: self.enable_geo_verify,
            seed: self.seed,
            ..VprParams::default()
        };
        p.verify.phi = self.phi;
        p
    }

    pub fn lpr_params(&self) -> LprParams {
        LprParams {
            psi: self.psi,
            r_agg: self.r_agg,
            ..LprParams::default()
        }
    }

    pub fn registration_params(&self) -> RegistrationParams {
        RegistrationParams {
            xi: self.xi,
            r_agg: self.r_agg,
            ..RegistrationParams::default()
        }
    }
}

/// Image features of both sessions, extracted once and shared by every mode.
#[derive(Debug, Clone)]
pub struct Features {
    pub reference: SessionFeatures,
    pub target: SessionFeatures,
    /// Pre-trained vocabulary; when absent one is trained on the reference
    /// keyframes.
    pub vocabulary: Option<Vocabulary>,
}

impl Features {
    pub fn extract(ref_session: &SessionMap, tgt_session: &SessionMap, exec: &impl Executor) -> Result<Self> {
        let orb = VprParams::default().orb;
        Ok(Self {
            reference: SessionFeatures::extract(ref_session, &orb, exec).stage("features")?,
            target: SessionFeatures::extract(tgt_session, &orb, exec).stage("features")?,
            vocabulary: None,
        })
    }
}

/// Output of the visual, lidar and registration stages.
#[derive(Debug, Clone)]
pub struct Matching {
    pub vpr: VprOutput,
    pub lpr: Vec<crate::metrics::LprRecord>,
    /// Candidates handed to registration.
    pub survivors: CandidateMatchList,
    pub registrations: Vec<MatchRegistration>,
    pub counts: StageCounts,
}

impl Matching {
    pub fn relative(&self) -> Result<RelativeTrajectory> {
        relative_from_registrations(&self.registrations).stage("registration")
    }
}

/// Visual place recognition, optional geometric verification, optional
/// ScanContext filtering and per-candidate registration.
pub fn match_sessions(
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    features: &Features,
    cfg: &PipelineConfig,
    exec: &impl Executor,
) -> Result<Matching> {
    cfg.validate()?;
    let vpr = vpr_candidates(
        ref_session,
        &features.reference,
        tgt_session,
        &features.target,
        features.vocabulary.as_ref(),
        &cfg.vpr_params(),
        exec,
    )
    .stage("vpr")?;
    let (survivors, lpr) = if cfg.enable_sc_filter {
        lpr_filter(&vpr.accepted, ref_session, tgt_session, &cfg.lpr_params(), exec).stage("lpr")?
    } else {
        (vpr.accepted.clone(), Vec::new())
    };
    let registrations = register_candidates(
        survivors.as_slice(),
        None,
        ref_session,
        tgt_session,
        &cfg.registration_params(),
        exec,
    )
    .stage("registration")?;
    let counts = StageCounts {
        target_queries: features.target.timestamps.len(),
        reference_keyframes: vpr.keyframes.len(),
        vpr_proposed: vpr.proposed.len(),
        geo_verified: vpr.accepted.len(),
        lpr_survivors: survivors.len(),
        registration_survivors: registrations.iter().filter(|r| r.kept).count(),
    };
    Ok(Matching {
        vpr,
        lpr,
        survivors,
        registrations,
        counts,
    })
}

/// Applies the enabled filters to an arbitrary candidate list without
/// registering it. Geometric verification runs first, then ScanContext.
pub fn filter_candidates(
    candidates: &CandidateMatchList,
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    features: &Features,
    cfg: &PipelineConfig,
    exec: &impl Executor,
) -> Result<CandidateMatchList> {
    let mut current = candidates.clone();
    if cfg.enable_geo_verify {
        let results = verify_candidates(
            &current,
            ref_session,
            &features.reference,
            tgt_session,
            &features.target,
            &cfg.vpr_params(),
            exec,
        )
        .stage("geometric verification")?;
        let keep: Vec<bool> = results.iter().map(|r| r.passed).collect();
        current = current.select(&keep);
    }
    if cfg.enable_sc_filter {
        current = lpr_filter(&current, ref_session, tgt_session, &cfg.lpr_params(), exec)
            .stage("lpr")?
            .0;
    }
    Ok(current)
}

/// Result of one pipeline run.
#[derive(Debug, Clone)]
pub struct AlignmentRun {
    pub report: AlignmentReport,
    /// Target trajectory in the reference world frame.
    pub aligned: Trajectory,
    /// Reference world cloud followed by the aligned target cloud.
    pub merged: PointCloud,
    pub registrations: Vec<MatchRegistration>,
    pub relative: Option<RelativeTrajectory>,
    /// Vocabulary the visual stage used, for reuse by later runs.
    pub vocabulary: Option<Vocabulary>,
}

/// How the target trajectory is moved into the reference frame.
#[derive(Debug, Clone)]
pub enum Transforms {
    Rigid(TransformRecord),
    NonRigid(RelativeTrajectory),
}

/// Aligns, merges and scores.
pub fn finish(
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    transforms: Transforms,
    mode: Mode,
    cfg: &PipelineConfig,
    exec: &impl Executor,
) -> Result<AlignmentRun> {
    let (aligned, records, relative, gap) = match transforms {
        Transforms::Rigid(rec) => (
            apply_alignment(tgt_session.trajectory(), AlignmentMode::Rigid(rec.transform)),
            alloc::vec![rec],
            None,
            0.0,
        ),
        Transforms::NonRigid(rel) => {
            let spline = fit_relative_spline(&rel, cfg.smoothing).stage("alignment")?;
            let aligned = apply_alignment(tgt_session.trajectory(), AlignmentMode::NonRigid(&spline));
            let records = rel
                .entries()
                .iter()
                .map(|e| TransformRecord {
                    t_tgt: e.t_tgt,
                    transform: e.transform,
                    fitness: e.fitness,
                })
                .collect();
            let gap = rel.max_gap();
            (aligned, records, Some(rel), gap)
        }
    };
    let ref_cloud = ref_session.world_cloud().stage("merge")?;
    let tgt_cloud = aligned_target_cloud(tgt_session, &aligned).stage("merge")?;
    let p2p = point_to_point_error(&tgt_cloud, &ref_cloud, exec).stage("metrics")?;
    let mut merged = ref_cloud;
    merged.points.extend_from_slice(&tgt_cloud.points);
    let dens = density(&merged, cfg.density_radius, true, exec).stage("metrics")?;
    let mut config = *cfg;
    config.mode = mode;
    let mut report = AlignmentReport::empty(mode, config);
    report.reference_id = String::from(ref_session.session_id.as_str());
    report.target_id = String::from(tgt_session.session_id.as_str());
    report.p2p = p2p;
    report.asd = dens.asd;
    report.avd = dens.avd;
    report.merged_points = merged.len();
    report.transforms = records;
    report.max_match_gap = gap;
    Ok(AlignmentRun {
        report,
        aligned,
        merged,
        registrations: Vec::new(),
        relative,
        vocabulary: None,
    })
}

fn single(reg: &MatchRegistration) -> TransformRecord {
    TransformRecord {
        t_tgt: reg.t_tgt,
        transform: reg.transform,
        fitness: reg.fitness,
    }
}

/// Finishes a full-pipeline match set as rigid or non-rigid alignment.
pub fn finish_matching(
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    matching: &Matching,
    mode: Mode,
    cfg: &PipelineConfig,
    exec: &impl Executor,
) -> Result<AlignmentRun> {
    let rel = matching.relative()?;
    let transforms = match mode {
        Mode::VlmaNonrigid => Transforms::NonRigid(rel),
        Mode::VlmaRigid => {
            let best = rel.best().ok_or(Error::NoSurvivingMatches)?;
            Transforms::Rigid(TransformRecord {
                t_tgt: best.t_tgt,
                transform: best.transform,
                fitness: best.fitness,
            })
        }
        other => {
            return Err(Error::Config(alloc::format!(
                "mode {other} does not use the full match set"
            )))
        }
    };
    let mut run = finish(ref_session, tgt_session, transforms, mode, cfg, exec)?;
    run.report.counts = matching.counts;
    run.report.lpr = matching.lpr.clone();
    run.registrations = matching.registrations.clone();
    run.vocabulary = Some(matching.vpr.vocabulary.clone());
    Ok(run)
}

/// Registers the complete world clouds from identity.
fn gicp_baseline(
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    cfg: &PipelineConfig,
    exec: &impl Executor,
) -> Result<MatchRegistration> {
    let params = cfg.registration_params();
    let ref_world = ref_session.world_cloud().stage("gicp")?;
    let tgt_world = tgt_session.world_cloud().stage("gicp")?;
    let fine = PreparedCloud::new(&ref_world.points, &params.gicp, exec).stage("gicp")?;
    let coarse = match &params.coarse {
        Some(c) => Some(PreparedCloud::new(&ref_world.points, c, exec).stage("gicp")?),
        None => None,
    };
    let (transform, result) =
        register_pair(&(fine, coarse), &tgt_world, &Pose::identity(), &params, exec).stage("gicp")?;
    Ok(MatchRegistration {
        t_ref: ref_session.trajectory().start(),
        t_tgt: tgt_session.trajectory().start(),
        coarse: Pose::identity(),
        transform,
        fitness: result.fitness,
        converged: result.converged,
        iterations: result.iterations,
        kept: result.fitness <= params.xi,
    })
}

/// Highest-scoring visual proposal, registered without any gate.
fn vma_baseline(
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    features: &Features,
    cfg: &PipelineConfig,
    exec: &impl Executor,
) -> Result<(VprOutput, MatchRegistration)> {
    let mut params = cfg.vpr_params();
    params.geo_verify = false;
    let vpr = vpr_candidates(
        ref_session,
        &features.reference,
        tgt_session,
        &features.target,
        features.vocabulary.as_ref(),
        &params,
        exec,
    )
    .stage("vpr")?;
    let best = vpr
        .proposed
        .iter()
        .fold(None, |b: Option<&CandidateMatch>, c| match b {
            Some(b) if b.score >= c.score => Some(b),
            _ => Some(c),
        })
        .copied()
        .ok_or(Error::NoSurvivingMatches)
        .stage("vpr")?;
    let reg = register_candidates(&[best], None, ref_session, tgt_session, &cfg.registration_params(), exec)
        .stage("registration")?;
    Ok((vpr, reg.into_iter().next().expect("one registration")))
}

/// Keyframe scan indices of a session, spaced like the visual keyframes.
fn cloud_keyframes(session: &SessionMap, cfg: &PipelineConfig) -> Result<Vec<usize>> {
    let stamps: Vec<Timestamp> = session.clouds().iter().map(|c| c.0).collect();
    let keys = select_keyframes(session.trajectory(), &stamps, cfg.d_min, cfg.theta_min_deg)?;
    Ok(keys
        .iter()
        .filter_map(|t| stamps.binary_search_by(|s| s.total_cmp(t)).ok())
        .collect())
}

/// Closest ScanContext pair over both keyframe grids, registered with the
/// yaw implied by the best column shift.
fn lma_baseline(
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    cfg: &PipelineConfig,
    exec: &impl Executor,
) -> Result<MatchRegistration> {
    let lpr = cfg.lpr_params();
    let describe = |s: &SessionMap| -> Result<Vec<(usize, crate::lpr::ScanContext)>> {
        let keys = cloud_keyframes(s, cfg)?;
        exec.map(&keys, |&i| {
            aggregate_at_index(s, i, lpr.r_agg).map(|a| (i, scan_context(&a.cloud, &lpr.scan_context)))
        })
        .into_iter()
        .collect()
    };
    let refs = describe(ref_session).stage("lpr")?;
    let tgts = describe(tgt_session).stage("lpr")?;
    let mut best: Option<(f64, usize, usize, usize)> = None;
    for (ri, rd) in &refs {
        for (ti, td) in &tgts {
            let (shift, d) = sc_distance(rd, td).stage("lpr")?;
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, *ri, *ti, shift));
            }
        }
    }
    let (_, ri, ti, shift) = best.ok_or(Error::NoSurvivingMatches).stage("lpr")?;
    let cand = CandidateMatch {
        t_ref: ref_session.clouds()[ri].0,
        t_tgt: tgt_session.clouds()[ti].0,
        score: 1.0,
    };
    // the target scene is the reference scene turned by the shift angle, so
    // the reference frame needs the opposite turn
    let yaw = -shift_to_yaw(shift, &lpr.scan_context);
    let reg = register_candidates(
        &[cand],
        Some(&[yaw]),
        ref_session,
        tgt_session,
        &cfg.registration_params(),
        exec,
    )
    .stage("registration")?;
    Ok(reg.into_iter().next().expect("one registration"))
}

/// Runs the configured mode end to end. The vocabulary, if given, replaces
/// training on the reference keyframes.
pub fn run_pipeline(
    ref_session: &SessionMap,
    tgt_session: &SessionMap,
    vocabulary: Option<&Vocabulary>,
    cfg: &PipelineConfig,
    exec: &impl Executor,
) -> Result<AlignmentRun> {
    let features = || -> Result<Features> {
        let mut f = Features::extract(ref_session, tgt_session, exec)?;
        f.vocabulary = vocabulary.cloned();
        Ok(f)
    };
    cfg.validate()?;
    match cfg.mode {
        Mode::Gicp => {
            let reg = gicp_baseline(ref_session, tgt_session, cfg, exec)?;
            let mut run = finish(ref_session, tgt_session, Transforms::Rigid(single(&reg)), cfg.mode, cfg, exec)?;
            run.registrations = alloc::vec![reg];
            Ok(run)
        }
        Mode::Lma => {
            let reg = lma_baseline(ref_session, tgt_session, cfg, exec)?;
            let mut run = finish(ref_session, tgt_session, Transforms::Rigid(single(&reg)), cfg.mode, cfg, exec)?;
            run.registrations = alloc::vec![reg];
            Ok(run)
        }
        Mode::Vma => {
            let features = features()?;
            let (vpr, reg) = vma_baseline(ref_session, tgt_session, &features, cfg, exec)?;
            let mut run = finish(ref_session, tgt_session, Transforms::Rigid(single(&reg)), cfg.mode, cfg, exec)?;
            // unchecked stages pass every proposal through
            let n = vpr.proposed.len();
            run.report.counts = StageCounts {
                target_queries: features.target.timestamps.len(),
                reference_keyframes: vpr.keyframes.len(),
                vpr_proposed: n,
                geo_verified: n,
                lpr_survivors: n,
                registration_survivors: 1,
            };
            run.registrations = alloc::vec![reg];
            run.vocabulary = Some(vpr.vocabulary);
            Ok(run)
        }
        Mode::VlmaRigid | Mode::VlmaNonrigid => {
            let features = features()?;
            let matching = match_sessions(ref_session, tgt_session, &features, cfg, exec)?;
            finish_matching(ref_session, tgt_session, &matching, cfg.mode, cfg, exec)
        }
    }
}
