//! Session directories: a manifest naming the trajectory file, the cloud and
//! image directories, and the camera intrinsics.
//!
//! ```text
//! session_id = reference
//! trajectory_file = trajectory.txt
//! clouds_dir = clouds
//! images_dir = images
//! intrinsics = 160 160 159.5 119.5
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Clouds are
//! `<timestamp>.cloud` files and images `<timestamp>.pgm` files.

use std::fs;
use std::path::{Path, PathBuf};

use mapalign_core::geometry::Timestamp;
use mapalign_core::{GrayImage, Intrinsics, PointCloud, SessionMap};

use crate::formats::{
    decode_cloud, decode_pgm, encode_cloud, encode_pgm, format_timestamp, format_trajectory, parse_timestamp,
    parse_trajectory, CloudEncoding,
};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CLOUD_EXT: &str = "cloud";
pub const IMAGE_EXT: &str = "pgm";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("trajectory {path}: {message}")]
    TrajectoryFormat { path: PathBuf, message: String },
    #[error("cloud {path}: {message}")]
    CloudDecode { path: PathBuf, message: String },
    #[error("image {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("session {path}: {source}")]
    Session {
        path: PathBuf,
        source: mapalign_core::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionManifest {
    /// Directory that relative paths are resolved against.
    pub root: PathBuf,
    pub session_id: String,
    pub trajectory_file: PathBuf,
    pub clouds_dir: PathBuf,
    pub images_dir: PathBuf,
    pub intrinsics: Intrinsics,
}

impl SessionManifest {
    pub fn parse(text: &str, manifest_path: &Path) -> Result<Self, IngestError> {
        let err = |message: String| IngestError::ManifestParse {
            path: manifest_path.to_path_buf(),
            message,
        };
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut session_id = None;
        let mut trajectory = None;
        let mut clouds = None;
        let mut images = None;
        let mut intrinsics = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("line {}: expected `key = value`", i + 1)));
            };
            let value = value.trim();
            let slot = match key.trim() {
                "session_id" => &mut session_id,
                "trajectory_file" => &mut trajectory,
                "clouds_dir" => &mut clouds,
                "images_dir" => &mut images,
                "intrinsics" => {
                    let v: Vec<f64> = value
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| err(format!("line {}: intrinsics must be numbers", i + 1)))?;
                    let [fx, fy, cx, cy] = v[..] else {
                        return Err(err(format!("line {}: intrinsics need fx fy cx cy", i + 1)));
                    };
                    intrinsics = Some(Intrinsics::new(fx, fy, cx, cy).map_err(|e| err(e.to_string()))?);
                    continue;
                }
                other => return Err(err(format!("line {}: unknown key `{other}`", i + 1))),
            };
            *slot = Some(value.to_string());
        }
        let need = |v: Option<String>, key: &str| v.ok_or_else(|| err(format!("missing `{key}`")));
        let resolve = |p: String| root.join(p);
        Ok(Self {
            session_id: match session_id {
                Some(id) => id,
                None => root
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "session".into()),
            },
            trajectory_file: resolve(need(trajectory, "trajectory_file")?),
            clouds_dir: resolve(need(clouds, "clouds_dir")?),
            images_dir: resolve(need(images, "images_dir")?),
            intrinsics: intrinsics.ok_or_else(|| err("missing `intrinsics`".into()))?,
            root,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest = Self::parse(&text, path)?;
        for (p, dir) in [
            (&manifest.trajectory_file, false),
            (&manifest.clouds_dir, true),
            (&manifest.images_dir, true),
        ] {
            let ok = if dir { p.is_dir() } else { p.is_file() };
            if !ok {
                return Err(IngestError::ManifestParse {
                    path: path.to_path_buf(),
                    message: format!("{} does not exist", p.display()),
                });
            }
        }
        Ok(manifest)
    }

    /// Manifest text with paths relative to `root`.
    pub fn render(&self) -> String {
        let rel = |p: &Path| p.strip_prefix(&self.root).unwrap_or(p).display().to_string();
        let k = &self.intrinsics;
        format!(
            "session_id = {}\ntrajectory_file = {}\nclouds_dir = {}\nimages_dir = {}\nintrinsics = {} {} {} {}\n",
            self.session_id,
            rel(&self.trajectory_file),
            rel(&self.clouds_dir),
            rel(&self.images_dir),
            k.fx,
            k.fy,
            k.cx,
            k.cy
        )
    }
}

/// Files in `dir` with extension `ext`, keyed by the timestamp in their name
/// and sorted by it.
fn timestamped_files(
    dir: &Path,
    ext: &str,
    bad_name: impl Fn(PathBuf, String) -> IngestError,
) -> Result<Vec<(Timestamp, PathBuf)>, IngestError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        match parse_timestamp(stem) {
            Ok(t) => out.push((t, path)),
            Err(e) => return Err(bad_name(path, format!("file name: {e}"))),
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

pub fn read_cloud(path: &Path, frame_id: &str) -> Result<PointCloud, IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let err = |message: String| IngestError::CloudDecode {
        path: path.to_path_buf(),
        message,
    };
    let points = decode_cloud(&bytes).map_err(|e| err(e.0))?;
    PointCloud::new(points, frame_id).map_err(|e| err(e.to_string()))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, encoding: CloudEncoding) -> Result<(), IngestError> {
    fs::write(path, encode_cloud(&cloud.points, encoding)).map_err(io_err(path))
}

/// Loads every cloud and image eagerly; the session is immutable afterwards.
pub fn load_session(manifest_path: &Path) -> Result<SessionMap, IngestError> {
    let manifest = SessionManifest::load(manifest_path)?;
    let traj_path = &manifest.trajectory_file;
    let text = fs::read_to_string(traj_path).map_err(io_err(traj_path))?;
    let trajectory = parse_trajectory(&text).map_err(|e| IngestError::TrajectoryFormat {
        path: traj_path.clone(),
        message: e.0,
    })?;
    let cloud_err = |path, message| IngestError::CloudDecode { path, message };
    let clouds = timestamped_files(&manifest.clouds_dir, CLOUD_EXT, cloud_err)?
        .into_iter()
        .map(|(t, path)| Ok((t, read_cloud(&path, "lidar")?)))
        .collect::<Result<Vec<_>, IngestError>>()?;
    let image_err = |path, message| IngestError::ImageDecode { path, message };
    let images = timestamped_files(&manifest.images_dir, IMAGE_EXT, image_err)?
        .into_iter()
        .map(|(t, path)| {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let image = decode_pgm(&bytes).map_err(|e| IngestError::ImageDecode {
                path: path.clone(),
                message: e.0,
            })?;
            Ok((t, image))
        })
        .collect::<Result<Vec<(Timestamp, GrayImage)>, IngestError>>()?;
    SessionMap::new(manifest.session_id, manifest.intrinsics, images, clouds, trajectory).map_err(|source| {
        IngestError::Session {
            path: manifest_path.to_path_buf(),
            source,
        }
    })
}

/// Writes `session` as a session directory under `dir` and returns the
/// manifest path.
pub fn write_session(session: &SessionMap, dir: &Path, encoding: CloudEncoding) -> Result<PathBuf, IngestError> {
    let manifest = SessionManifest {
        root: dir.to_path_buf(),
        session_id: session.session_id.clone(),
        trajectory_file: dir.join("trajectory.txt"),
        clouds_dir: dir.join("clouds"),
        images_dir: dir.join("images"),
        intrinsics: session.intrinsics,
    };
    for d in [&manifest.clouds_dir, &manifest.images_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    fs::write(&manifest.trajectory_file, format_trajectory(session.trajectory()))
        .map_err(io_err(&manifest.trajectory_file))?;
    for (t, cloud) in session.clouds() {
        let path = manifest
            .clouds_dir
            .join(format!("{}.{CLOUD_EXT}", format_timestamp(*t)));
        write_cloud(&path, cloud, encoding)?;
    }
    for (t, image) in session.images() {
        let path = manifest
            .images_dir
            .join(format!("{}.{IMAGE_EXT}", format_timestamp(*t)));
        fs::write(&path, encode_pgm(image)).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.render()).map_err(io_err(&path))?;
    Ok(path)
}
