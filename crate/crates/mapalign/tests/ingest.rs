use std::fs;
use std::path::Path;

use mapalign::formats::{
    decode_cloud, decode_pgm, encode_cloud, encode_pgm, format_trajectory, parse_trajectory, CloudEncoding,
};
use mapalign::ingest::{load_session, read_cloud, write_session, IngestError};
use mapalign::report::{render_report, report_value, write_outputs};
use mapalign_core::geometry::{Point3, Pose, Trajectory, Vector3};
use mapalign_core::metrics::AlignmentReport;
use mapalign_core::pipeline::{Mode, PipelineConfig};
use mapalign_core::synthgen::{generate_pair, SynthConfig};
use mapalign_core::{GrayImage, PointCloud};
use proptest::prelude::*;
use tempfile::tempdir;

const MANIFEST: &str = "trajectory_file = traj.txt\nclouds_dir = clouds\nimages_dir = images\nintrinsics = 100 100 63.5 63.5\n";

fn minimal_session(dir: &Path, trajectory: &str) -> std::path::PathBuf {
    fs::create_dir_all(dir.join("clouds")).unwrap();
    fs::create_dir_all(dir.join("images")).unwrap();
    fs::write(dir.join("traj.txt"), trajectory).unwrap();
    fs::write(
        dir.join("clouds/100.5.cloud"),
        "VERSION 1\nFIELDS x y z\nPOINTS 2\nDATA ascii\n1 2 3\n-1 0.5 2\n",
    )
    .unwrap();
    let img = GrayImage::from_fn(128, 128, |x, y| ((x * 7 + y * 3) % 256) as u8);
    fs::write(dir.join("images/100.25.pgm"), encode_pgm(&img)).unwrap();
    let path = dir.join("manifest.txt");
    fs::write(&path, MANIFEST).unwrap();
    path
}

#[test]
fn minimal_session_loads() {
    let dir = tempdir().unwrap();
    let manifest = minimal_session(dir.path(), "100 0 0 0 0 0 0 1\n101 1 0 0 0 0 0 1\n");
    let s = load_session(&manifest).unwrap();
    assert_eq!(s.clouds().len(), 1);
    assert_eq!(s.images().len(), 1);
    assert_eq!(s.clouds()[0].0, 100.5);
    assert_eq!(s.images()[0].0, 100.25);
    assert_eq!(s.images()[0].1.width, 128);
    assert_eq!(s.trajectory().len(), 2);
    assert_eq!(s.intrinsics.cx, 63.5);
    assert_eq!(load_session(&manifest).unwrap(), s);
}

#[test]
fn decreasing_timestamps_are_a_trajectory_error() {
    let dir = tempdir().unwrap();
    let manifest = minimal_session(dir.path(), "101 0 0 0 0 0 0 1\n100 1 0 0 0 0 0 1\n");
    assert!(matches!(load_session(&manifest), Err(IngestError::TrajectoryFormat { .. })));
}

#[test]
fn broken_inputs_map_to_their_error_kinds() {
    let dir = tempdir().unwrap();
    let traj = "100 0 0 0 0 0 0 1\n101 1 0 0 0 0 0 1\n";
    let manifest = minimal_session(dir.path(), traj);

    fs::write(dir.path().join("clouds/100.7.cloud"), "VERSION 1\nFIELDS x y z\nPOINTS 3\nDATA ascii\n1 2 3\n").unwrap();
    assert!(matches!(load_session(&manifest), Err(IngestError::CloudDecode { .. })));
    fs::remove_file(dir.path().join("clouds/100.7.cloud")).unwrap();

    fs::write(dir.path().join("images/100.75.pgm"), "P5\n128 128\n255\n").unwrap();
    assert!(matches!(load_session(&manifest), Err(IngestError::ImageDecode { .. })));
    fs::remove_file(dir.path().join("images/100.75.pgm")).unwrap();

    fs::write(dir.path().join("images/noon.pgm"), "").unwrap();
    assert!(matches!(load_session(&manifest), Err(IngestError::ImageDecode { .. })));
    fs::remove_file(dir.path().join("images/noon.pgm")).unwrap();

    fs::write(&manifest, "trajectory_file = traj.txt\nclouds_dir = clouds\nimages_dir = images\n").unwrap();
    assert!(matches!(load_session(&manifest), Err(IngestError::ManifestParse { .. })));
    fs::write(&manifest, MANIFEST.replace("traj.txt", "missing.txt")).unwrap();
    assert!(matches!(load_session(&manifest), Err(IngestError::ManifestParse { .. })));
    assert!(matches!(
        load_session(&dir.path().join("nowhere.txt")),
        Err(IngestError::Io { .. })
    ));
}

#[test]
fn cloud_outside_trajectory_is_rejected() {
    let dir = tempdir().unwrap();
    let manifest = minimal_session(dir.path(), "100 0 0 0 0 0 0 1\n101 1 0 0 0 0 0 1\n");
    fs::write(dir.path().join("clouds/250.cloud"), "VERSION 1\nFIELDS x y z\nPOINTS 1\nDATA ascii\n1 2 3\n").unwrap();
    assert!(matches!(load_session(&manifest), Err(IngestError::Session { .. })));
}

#[test]
fn synthetic_session_round_trips_exactly() {
    let cfg = SynthConfig {
        path_length: 6.0,
        lidar_rate: 2.0,
        camera_rate: 2.0,
        ..SynthConfig::default()
    };
    let (reference, target, _) = generate_pair(7, &cfg).unwrap();
    let dir = tempdir().unwrap();
    for (session, encoding) in [(&reference, CloudEncoding::Binary), (&target, CloudEncoding::Ascii)] {
        let sub = dir.path().join(&session.session_id);
        let manifest = write_session(session, &sub, encoding).unwrap();
        let loaded = load_session(&manifest).unwrap();
        assert_eq!(loaded.trajectory(), session.trajectory());
        assert_eq!(loaded.session_id, session.session_id);
        assert_eq!(loaded.intrinsics, session.intrinsics);
        assert_eq!(loaded.images(), session.images());
        assert_eq!(loaded.clouds().len(), session.clouds().len());
        for ((ta, a), (tb, b)) in loaded.clouds().iter().zip(session.clouds()) {
            assert_eq!(ta, tb);
            assert_eq!(a.len(), b.len());
            for (p, q) in a.points.iter().zip(&b.points) {
                for k in 0..3 {
                    assert_eq!(p[k], q[k] as f32 as f64);
                }
            }
        }
    }
}

#[test]
fn three_point_cloud_output() {
    let dir = tempdir().unwrap();
    let pts = vec![Point3::new(0.1, 0.2, 0.3), Point3::new(-4.0, 1e-3, 7.25), Point3::new(1e5, -2.5, 0.0)];
    let merged = PointCloud::new(pts.clone(), "world").unwrap();
    let traj = Trajectory::new(vec![(0.0, Pose::identity()), (1.0, Pose::from_translation(1.0, 0.0, 0.0))]).unwrap();
    let report = AlignmentReport::empty(Mode::VlmaNonrigid, PipelineConfig::default());
    let paths = write_outputs(&merged, &traj, &report, &dir.path().join("out")).unwrap();
    let text = fs::read_to_string(&paths.merged).unwrap();
    assert!(text.lines().any(|l| l == "POINTS 3"));
    let back = read_cloud(&paths.merged, "world").unwrap();
    for (p, q) in back.points.iter().zip(&pts) {
        for k in 0..3 {
            assert_eq!(p[k], q[k] as f32 as f64);
        }
    }
    let traj_back = parse_trajectory(&fs::read_to_string(&paths.trajectory).unwrap()).unwrap();
    assert_eq!(traj_back, traj);
    let report_text = fs::read_to_string(&paths.report).unwrap();
    assert_eq!(report_text, render_report(&report, None));
    assert_eq!(report_value(&report_text, "lpr", "survivors"), Some("0"));
}

fn finite() -> impl Strategy<Value = f64> {
    -1e4f64..1e4
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clouds_round_trip_at_float32(
        raw in prop::collection::vec((finite(), finite(), finite()), 0..50),
        binary in any::<bool>(),
    ) {
        let pts: Vec<Point3> = raw.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
        let enc = if binary { CloudEncoding::Binary } else { CloudEncoding::Ascii };
        let back = decode_cloud(&encode_cloud(&pts, enc)).unwrap();
        prop_assert_eq!(back.len(), pts.len());
        for (p, q) in back.iter().zip(&pts) {
            for k in 0..3 {
                prop_assert_eq!(p[k], q[k] as f32 as f64);
            }
        }
    }

    #[test]
    fn trajectories_round_trip_exactly(
        start in -1e9f64..2e9,
        steps in prop::collection::vec((1e-3f64..5.0, finite(), finite(), finite(), -3.2f64..3.2, -1.0f64..1.0), 2..20),
    ) {
        let mut t = start;
        let mut samples = Vec::new();
        for &(dt, x, y, z, yaw, tilt) in &steps {
            t += dt;
            let q = nalgebra::UnitQuaternion::from_euler_angles(tilt, 0.5 * tilt, yaw);
            samples.push((t, Pose::new(q, Vector3::new(x, y, z))));
        }
        let traj = Trajectory::new(samples).unwrap();
        let back = parse_trajectory(&format_trajectory(&traj)).unwrap();
        prop_assert_eq!(back, traj);
    }

    #[test]
    fn pgm_round_trips(w in 64usize..90, h in 64usize..90, seed in any::<u64>()) {
        let img = GrayImage::from_fn(w, h, |x, y| (seed.wrapping_mul(x as u64 * 31 + y as u64 + 1) >> 56) as u8);
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }
}
