//! Run outputs: the merged cloud, the aligned trajectory and a plain-text
//! report with one `key: value` per line, grouped into `[section]` blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mapalign_core::metrics::AlignmentReport;
use mapalign_core::{PointCloud, Trajectory};

use crate::formats::{format_pose, format_timestamp, format_trajectory, CloudEncoding};
use crate::ingest::{io_err, write_cloud, IngestError};

pub const MERGED_FILE: &str = "merged.cloud";
pub const TRAJECTORY_FILE: &str = "aligned_trajectory.txt";
pub const REPORT_FILE: &str = "report.txt";

/// Renders `report`. `failure` replaces the `status: ok` line, for runs that
/// stopped before producing an alignment.
pub fn render_report(report: &AlignmentReport, failure: Option<&str>) -> String {
    let mut s = String::new();
    let c = &report.config;
    let n = &report.counts;
    // writing into a String cannot fail
    let mut w = |line: std::fmt::Arguments| {
        let _ = s.write_fmt(line);
        s.push('\n');
    };
    w(format_args!("[run]"));
    w(format_args!("mode: {}", report.mode.label()));
    w(format_args!("reference: {}", report.reference_id));
    w(format_args!("target: {}", report.target_id));
    match failure {
        None => w(format_args!("status: ok")),
        Some(msg) => w(format_args!("status: failed: {msg}")),
    }
    w(format_args!(""));
    w(format_args!("[config]"));
    w(format_args!("alpha: {}", c.alpha));
    w(format_args!("phi: {}", c.phi));
    w(format_args!("psi: {}", c.psi));
    w(format_args!("xi: {}", c.xi));
    w(format_args!("r_agg: {}", c.r_agg));
    w(format_args!("d_min: {}", c.d_min));
    w(format_args!("theta_min: {}", c.theta_min_deg));
    w(format_args!("density_radius: {}", c.density_radius));
    w(format_args!("enable_sc_filter: {}", c.enable_sc_filter));
    w(format_args!("enable_geo_verify: {}", c.enable_geo_verify));
    w(format_args!("seed: {}", c.seed));
    w(format_args!("smoothing: {}", c.smoothing));
    w(format_args!(""));
    w(format_args!("[vpr]"));
    w(format_args!("target_queries: {}", n.target_queries));
    w(format_args!("reference_keyframes: {}", n.reference_keyframes));
    w(format_args!("proposed: {}", n.vpr_proposed));
    w(format_args!(""));
    w(format_args!("[geoverify]"));
    w(format_args!("verified: {}", n.geo_verified));
    w(format_args!(""));
    w(format_args!("[lpr]"));
    w(format_args!("survivors: {}", n.lpr_survivors));
    for (i, r) in report.lpr.iter().enumerate() {
        w(format_args!(
            "pair.{i}: t_ref={} t_tgt={} distance={} shift={} kept={}",
            format_timestamp(r.t_ref),
            format_timestamp(r.t_tgt),
            r.distance,
            r.shift,
            r.kept
        ));
    }
    w(format_args!(""));
    w(format_args!("[registration]"));
    w(format_args!("survivors: {}", n.registration_survivors));
    for (i, t) in report.transforms.iter().enumerate() {
        w(format_args!(
            "transform.{i}: t_tgt={} fitness={} pose={}",
            format_timestamp(t.t_tgt),
            t.fitness,
            format_pose(&t.transform)
        ));
    }
    w(format_args!(""));
    w(format_args!("[alignment]"));
    w(format_args!("transforms: {}", report.transforms.len()));
    w(format_args!("max_match_gap: {}", report.max_match_gap));
    w(format_args!(""));
    w(format_args!("[metrics]"));
    w(format_args!("p2p: {}", report.p2p));
    w(format_args!("asd: {}", report.asd));
    w(format_args!("avd: {}", report.avd));
    w(format_args!("density_cloud: merged"));
    w(format_args!("merged_points: {}", report.merged_points));
    s
}

/// Looks up `key` in `section` of a rendered report.
pub fn report_value<'a>(text: &'a str, section: &str, key: &str) -> Option<&'a str> {
    let header = format!("[{section}]");
    text.lines()
        .skip_while(|l| *l != header)
        .skip(1)
        .take_while(|l| !l.starts_with('['))
        .find_map(|l| l.strip_prefix(key)?.strip_prefix(": "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub merged: PathBuf,
    pub trajectory: PathBuf,
    pub report: PathBuf,
}

/// Writes the merged cloud, the aligned trajectory and the report under
/// `out_dir`, creating it if needed.
pub fn write_outputs(
    merged: &PointCloud,
    aligned: &Trajectory,
    report: &AlignmentReport,
    out_dir: &Path,
) -> Result<OutputPaths, IngestError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let paths = OutputPaths {
        merged: out_dir.join(MERGED_FILE),
        trajectory: out_dir.join(TRAJECTORY_FILE),
        report: out_dir.join(REPORT_FILE),
    };
    write_cloud(&paths.merged, merged, CloudEncoding::Ascii)?;
    fs::write(&paths.trajectory, format_trajectory(aligned)).map_err(io_err(&paths.trajectory))?;
    write_report(report, None, out_dir)?;
    Ok(paths)
}

pub fn write_report(report: &AlignmentReport, failure: Option<&str>, out_dir: &Path) -> Result<PathBuf, IngestError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join(REPORT_FILE);
    fs::write(&path, render_report(report, failure)).map_err(io_err(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mapalign_core::pipeline::{Mode, PipelineConfig};

    #[test]
    fn empty_report_has_zeroed_counters() {
        let r = AlignmentReport::empty(Mode::Lma, PipelineConfig::default());
        let text = render_report(&r, None);
        assert_eq!(report_value(&text, "run", "mode"), Some("LMA"));
        assert_eq!(report_value(&text, "vpr", "proposed"), Some("0"));
        assert_eq!(report_value(&text, "registration", "survivors"), Some("0"));
        assert_eq!(report_value(&text, "metrics", "p2p"), Some("0"));
        assert_eq!(report_value(&text, "metrics", "density_cloud"), Some("merged"));
        assert_eq!(report_value(&text, "metrics", "nope"), None);
    }

    #[test]
    fn failure_is_reported() {
        let r = AlignmentReport::empty(Mode::VlmaNonrigid, PipelineConfig::default());
        let text = render_report(&r, Some("no candidate match survived registration"));
        assert!(report_value(&text, "run", "status").unwrap().starts_with("failed"));
    }
}
