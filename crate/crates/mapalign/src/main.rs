use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mapalign::app::{run_align, run_metrics, run_synth, AlignRequest, AppError, MetricsRequest};
use mapalign::config::{pipeline_from_text, read_config_file, synth_from_text};
use mapalign::formats::CloudEncoding;
use mapalign_core::metrics::DEFAULT_DENSITY_RADIUS;
use mapalign_core::pipeline::{Mode, PipelineConfig};
use mapalign_core::synthgen::SynthConfig;

/// Align 3D maps from independent mapping sessions of the same site.
#[derive(Parser)]
#[command(name = "mapalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align a target session to a reference session.
    Align(AlignArgs),
    /// Generate a synthetic session pair with ground truth.
    Synth(SynthArgs),
    /// Score an aligned cloud against a reference cloud.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct AlignArgs {
    /// Reference session manifest.
    #[arg(long)]
    reference: PathBuf,
    /// Target session manifest.
    #[arg(long)]
    target: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// key = value file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gicp, vma, lma, vlma-rigid or vlma-nonrigid.
    #[arg(long)]
    mode: Option<Mode>,
    /// Visual similarity threshold.
    #[arg(long)]
    alpha: Option<f64>,
    /// Geometric verification inlier ratio.
    #[arg(long)]
    phi: Option<f64>,
    /// ScanContext distance threshold.
    #[arg(long)]
    psi: Option<f64>,
    /// Registration fitness threshold, m^2.
    #[arg(long)]
    xi: Option<f64>,
    /// Scans on each side of a keyframe when aggregating clouds.
    #[arg(long)]
    r_agg: Option<usize>,
    /// Keyframe spacing, meters.
    #[arg(long)]
    d_min: Option<f64>,
    /// Keyframe rotation spacing, degrees.
    #[arg(long)]
    theta_min: Option<f64>,
    /// Density neighborhood radius, meters.
    #[arg(long)]
    density_radius: Option<f64>,
    #[arg(long)]
    sc_filter: Option<bool>,
    #[arg(long)]
    geo_verify: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Spline smoothing weight; 0 interpolates.
    #[arg(long)]
    smoothing: Option<f64>,
    /// Vocabulary file, reused when present and written otherwise.
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// key = value file of generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fraction of each path shared by both sessions.
    #[arg(long)]
    overlap: Option<f64>,
    /// Target drift magnitude, meters.
    #[arg(long)]
    drift: Option<f64>,
    /// Lidar range noise, meters.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// ascii or binary cloud files.
    #[arg(long, default_value = "binary")]
    encoding: CloudEncoding,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    aligned: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DENSITY_RADIUS)]
    radius: f64,
    /// Do not count a point as its own neighbor.
    #[arg(long)]
    exclude_self: bool,
    /// Write per-point densities of the merged cloud as CSV.
    #[arg(long)]
    densities: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn config_text(path: &Option<PathBuf>) -> Result<String, AppError> {
    match path {
        Some(p) => read_config_file(p).map_err(|e| AppError::Config(e.to_string())),
        None => Ok(String::new()),
    }
}

fn pipeline_config(a: &AlignArgs) -> Result<PipelineConfig, AppError> {
    let mut c = pipeline_from_text(&config_text(&a.config)?).map_err(|e| AppError::Config(e.to_string()))?;
    if let Some(v) = a.mode {
        c.mode = v;
    }
    macro_rules! flag {
        ($($arg:ident => $field:ident),*) => {$(
            if let Some(v) = a.$arg {
                c.$field = v;
            }
        )*};
    }
    flag!(alpha => alpha, phi => phi, psi => psi, xi => xi, r_agg => r_agg, d_min => d_min,
          theta_min => theta_min_deg, density_radius => density_radius, sc_filter => enable_sc_filter,
          geo_verify => enable_geo_verify, seed => seed, smoothing => smoothing);
    Ok(c)
}

fn synth_config(a: &SynthArgs) -> Result<SynthConfig, AppError> {
    let mut c = synth_from_text(&config_text(&a.config)?).map_err(|e| AppError::Config(e.to_string()))?;
    if let Some(v) = a.overlap {
        c.overlap_fraction = v;
    }
    if let Some(v) = a.drift {
        c.drift_magnitude = v;
    }
    if let Some(v) = a.noise {
        c.cloud_noise = v;
    }
    if let Some(v) = a.width {
        c.image_width = v;
    }
    if let Some(v) = a.height {
        c.image_height = v;
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Align(a) => {
            let req = AlignRequest {
                config: pipeline_config(&a)?,
                reference: a.reference,
                target: a.target,
                out_dir: a.out,
                vocabulary: a.vocabulary,
                threads: a.threads,
            };
            let out = run_align(&req)?;
            let r = &out.report;
            println!("mode: {}", r.mode.label());
            println!("p2p: {}", r.p2p);
            println!("asd: {}", r.asd);
            println!("avd: {}", r.avd);
            println!("report: {}", out.paths.report.display());
        }
        Command::Synth(a) => {
            let cfg = synth_config(&a)?;
            let (paths, _) = run_synth(a.seed, &cfg, &a.out, a.encoding)?;
            println!("reference: {}", paths.reference.display());
            println!("target: {}", paths.target.display());
            println!("ground truth: {}", paths.ground_truth.display());
        }
        Command::Metrics(a) => {
            let m = run_metrics(&MetricsRequest {
                aligned: a.aligned,
                reference: a.reference,
                radius: a.radius,
                include_self: !a.exclude_self,
                densities: a.densities,
                threads: a.threads,
            })?;
            println!("p2p: {}", m.p2p);
            println!("asd: {}", m.asd);
            println!("avd: {}", m.avd);
            println!("merged_points: {}", m.merged_points);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
