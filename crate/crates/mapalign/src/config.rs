//! `key = value` configuration files for alignment runs and the synthetic
//! generator. Blank lines and `#` comments are ignored; later keys win.

use std::path::Path;
use std::str::FromStr;

use mapalign_core::pipeline::{Mode, PipelineConfig};
use mapalign_core::synthgen::SynthConfig;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

/// Applies one setting. Keys are the field names, with `theta_min` in
/// degrees.
pub fn set_pipeline(cfg: &mut PipelineConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "alpha" => cfg.alpha = parse(key, value)?,
        "phi" => cfg.phi = parse(key, value)?,
        "psi" => cfg.psi = parse(key, value)?,
        "xi" => cfg.xi = parse(key, value)?,
        "r_agg" => cfg.r_agg = parse(key, value)?,
        "d_min" => cfg.d_min = parse(key, value)?,
        "theta_min" => cfg.theta_min_deg = parse(key, value)?,
        "density_radius" => cfg.density_radius = parse(key, value)?,
        "mode" => cfg.mode = parse::<Mode>(key, value)?,
        "enable_sc_filter" => cfg.enable_sc_filter = parse(key, value)?,
        "enable_geo_verify" => cfg.enable_geo_verify = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "smoothing" => cfg.smoothing = parse(key, value)?,
        _ => return Err(ConfigError::UnknownKey(key.into())),
    }
    Ok(())
}

pub fn set_synth(cfg: &mut SynthConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "overlap_fraction" => cfg.overlap_fraction = parse(key, value)?,
        "drift_magnitude" => cfg.drift_magnitude = parse(key, value)?,
        "cloud_noise" => cfg.cloud_noise = parse(key, value)?,
        "image_width" => cfg.image_width = parse(key, value)?,
        "image_height" => cfg.image_height = parse(key, value)?,
        "path_length" => cfg.path_length = parse(key, value)?,
        "speed" => cfg.speed = parse(key, value)?,
        "lidar_rate" => cfg.lidar_rate = parse(key, value)?,
        "camera_rate" => cfg.camera_rate = parse(key, value)?,
        "lateral_offset" => cfg.lateral_offset = parse(key, value)?,
        "offset_min" => cfg.offset_min = parse(key, value)?,
        "offset_max" => cfg.offset_max = parse(key, value)?,
        "pillars" => cfg.pillars = parse(key, value)?,
        "camera_yaw" => cfg.camera_yaw_deg = parse(key, value)?,
        "camera_pitch" => cfg.camera_pitch_deg = parse(key, value)?,
        "start_time" => cfg.start_time = parse(key, value)?,
        _ => return Err(ConfigError::UnknownKey(key.into())),
    }
    Ok(())
}

pub fn pipeline_from_text(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::default();
    for (k, v) in parse_pairs(text)? {
        set_pipeline(&mut cfg, &k, &v)?;
    }
    Ok(cfg)
}

pub fn synth_from_text(text: &str) -> Result<SynthConfig, ConfigError> {
    let mut cfg = SynthConfig::default();
    for (k, v) in parse_pairs(text)? {
        set_synth(&mut cfg, &k, &v)?;
    }
    Ok(cfg)
}

pub fn read_config_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
