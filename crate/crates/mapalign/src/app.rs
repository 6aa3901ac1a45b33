//! The three command-line operations, independent of argument parsing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mapalign_core::metrics::{density, point_to_point_error, AlignmentReport};
use mapalign_core::pipeline::{run_pipeline, PipelineConfig};
use mapalign_core::synthgen::{generate_pair, GroundTruth, SynthConfig};
use mapalign_core::vocabulary::Vocabulary;
use mapalign_core::{Error, SessionMap};

use crate::exec::RayonExecutor;
use crate::formats::{format_pose, format_trajectory, CloudEncoding};
use crate::ingest::{io_err, load_session, read_cloud, write_session, IngestError};
use crate::report::{write_outputs, write_report, OutputPaths};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Input(IngestError),
    #[error("{0}")]
    NoSurvivingMatches(Error),
    #[error("{0}")]
    Pipeline(Error),
    #[error("writing outputs: {0}")]
    Output(IngestError),
}

impl AppError {
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_INPUT: i32 = 3;
    pub const EXIT_NO_MATCHES: i32 = 4;
    pub const EXIT_INTERNAL: i32 = 1;

    /// Process exit code: 2 for bad configuration, 3 for unreadable inputs,
    /// 4 when no match survives, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => Self::EXIT_CONFIG,
            AppError::Input(_) => Self::EXIT_INPUT,
            AppError::NoSurvivingMatches(_) => Self::EXIT_NO_MATCHES,
            AppError::Pipeline(_) | AppError::Output(_) => Self::EXIT_INTERNAL,
        }
    }

    fn from_core(e: Error) -> Self {
        match e.root() {
            Error::NoSurvivingMatches => AppError::NoSurvivingMatches(e),
            Error::Config(_) => AppError::Config(e.to_string()),
            _ => AppError::Pipeline(e),
        }
    }
}

fn executor(threads: usize) -> Result<RayonExecutor, AppError> {
    RayonExecutor::new(threads).map_err(|e| AppError::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone)]
pub struct AlignRequest {
    pub reference: PathBuf,
    pub target: PathBuf,
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    /// Vocabulary file: read when it exists, otherwise written after training.
    pub vocabulary: Option<PathBuf>,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub report: AlignmentReport,
    pub paths: OutputPaths,
}

/// Loads both sessions concurrently.
pub fn load_pair(reference: &Path, target: &Path) -> Result<(SessionMap, SessionMap), IngestError> {
    let (r, t) = std::thread::scope(|s| {
        let r = s.spawn(|| load_session(reference));
        let t = load_session(target);
        (r.join().expect("session loader panicked"), t)
    });
    Ok((r?, t?))
}

fn read_vocabulary(path: &Path) -> Result<Option<Vocabulary>, AppError> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path).map_err(|e| AppError::Input(io_err(path)(e)))?;
    Vocabulary::from_bytes(&bytes)
        .map(Some)
        .map_err(|e| AppError::Config(format!("vocabulary {}: {e}", path.display())))
}

/// Aligns the target session to the reference and writes the outputs. A run
/// that finds no usable match still leaves a report behind.
pub fn run_align(req: &AlignRequest) -> Result<AlignOutcome, AppError> {
    req.config.validate().map_err(|e| AppError::Config(e.to_string()))?;
    let exec = executor(req.threads)?;
    let (reference, target) = load_pair(&req.reference, &req.target).map_err(AppError::Input)?;
    let vocabulary = match &req.vocabulary {
        Some(p) => read_vocabulary(p)?,
        None => None,
    };
    let run = match run_pipeline(&reference, &target, vocabulary.as_ref(), &req.config, &exec) {
        Ok(run) => run,
        Err(e) => {
            let err = AppError::from_core(e);
            if matches!(err, AppError::NoSurvivingMatches(_)) {
                let mut report = AlignmentReport::empty(req.config.mode, req.config);
                report.reference_id = reference.session_id.clone();
                report.target_id = target.session_id.clone();
                write_report(&report, Some(&err.to_string()), &req.out_dir).map_err(AppError::Output)?;
            }
            return Err(err);
        }
    };
    let paths = write_outputs(&run.merged, &run.aligned, &run.report, &req.out_dir).map_err(AppError::Output)?;
    if let (Some(path), None, Some(trained)) = (&req.vocabulary, &vocabulary, &run.vocabulary) {
        fs::write(path, trained.to_bytes()).map_err(|e| AppError::Output(io_err(path)(e)))?;
    }
    Ok(AlignOutcome {
        report: run.report,
        paths,
    })
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const OFFSET_FILE: &str = "offset.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub reference: PathBuf,
    pub target: PathBuf,
    pub ground_truth: PathBuf,
    pub offset: PathBuf,
}

/// Generates a session pair and writes it under `out_dir`:
/// `reference/` and `target/` session directories, `ground_truth.txt` (the
/// true target trajectory in the reference world) and `offset.txt` (the
/// drift-free target-to-reference transform as `tx ty tz qx qy qz qw`).
pub fn run_synth(
    seed: u64,
    cfg: &SynthConfig,
    out_dir: &Path,
    encoding: CloudEncoding,
) -> Result<(SynthPaths, GroundTruth), AppError> {
    let (reference, target, truth) = generate_pair(seed, cfg).map_err(|e| AppError::Config(e.to_string()))?;
    let paths = SynthPaths {
        reference: write_session(&reference, &out_dir.join("reference"), encoding).map_err(AppError::Output)?,
        target: write_session(&target, &out_dir.join("target"), encoding).map_err(AppError::Output)?,
        ground_truth: out_dir.join(GROUND_TRUTH_FILE),
        offset: out_dir.join(OFFSET_FILE),
    };
    fs::write(&paths.ground_truth, format_trajectory(&truth.target))
        .map_err(|e| AppError::Output(io_err(&paths.ground_truth)(e)))?;
    fs::write(&paths.offset, format!("{}\n", format_pose(&truth.offset)))
        .map_err(|e| AppError::Output(io_err(&paths.offset)(e)))?;
    Ok((paths, truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub p2p: f64,
    pub asd: f64,
    pub avd: f64,
    pub merged_points: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsRequest {
    pub aligned: PathBuf,
    pub reference: PathBuf,
    pub radius: f64,
    pub include_self: bool,
    /// Optional CSV of per-point densities over the merged cloud.
    pub densities: Option<PathBuf>,
    pub threads: usize,
}

/// P2P from the aligned cloud to the reference; densities over both clouds
/// merged.
pub fn run_metrics(req: &MetricsRequest) -> Result<MetricsSummary, AppError> {
    let exec = executor(req.threads)?;
    let aligned = read_cloud(&req.aligned, "world").map_err(AppError::Input)?;
    let reference = read_cloud(&req.reference, "world").map_err(AppError::Input)?;
    let p2p = point_to_point_error(&aligned, &reference, &exec).map_err(AppError::from_core)?;
    let mut merged = reference;
    merged.points.extend_from_slice(&aligned.points);
    let dens = density(&merged, req.radius, req.include_self, &exec).map_err(AppError::from_core)?;
    if let Some(path) = &req.densities {
        let mut csv = String::from("x,y,z,neighbors,surface_density,volume_density\n");
        for (i, p) in merged.points.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                p.x,
                p.y,
                p.z,
                dens.counts[i],
                dens.surface(i),
                dens.volume(i)
            );
        }
        fs::write(path, csv).map_err(|e| AppError::Output(io_err(path)(e)))?;
    }
    Ok(MetricsSummary {
        p2p,
        asd: dens.asd,
        avd: dens.avd,
        merged_points: merged.len(),
    })
}
