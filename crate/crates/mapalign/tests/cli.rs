use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mapalign::app::{run_synth, AppError};
use mapalign::formats::{parse_trajectory, CloudEncoding};
use mapalign::report::report_value;
use mapalign_core::synthgen::SynthConfig;
use tempfile::tempdir;

const SMALL: &str = "path_length = 8\nlidar_rate = 2\ncamera_rate = 2\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mapalign"))
}

fn small_cfg() -> SynthConfig {
    mapalign::config::synth_from_text(SMALL).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_twice_gives_identical_directories() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("synth.cfg");
    fs::write(&cfg, SMALL).unwrap();
    for name in ["a", "b"] {
        let status = bin()
            .args(["synth", "--seed", "42", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    let a = tree(&dir.path().join("a"));
    assert!(a.contains_key(Path::new("ground_truth.txt")));
    assert!(a.contains_key(Path::new("offset.txt")));
    assert!(a.contains_key(Path::new("reference/manifest.txt")));
    assert!(a.keys().any(|k| k.starts_with("target/clouds")));
    assert!(a == tree(&dir.path().join("b")));
}

#[test]
fn disjoint_sessions_never_come_within_five_meters() {
    let dir = tempdir().unwrap();
    let cfg = SynthConfig {
        overlap_fraction: 0.0,
        ..small_cfg()
    };
    let (paths, _) = run_synth(3, &cfg, dir.path(), CloudEncoding::Binary).unwrap();
    let truth = parse_trajectory(&fs::read_to_string(&paths.ground_truth).unwrap()).unwrap();
    // the reference is stored undistorted, so its file is its true path
    let reference = parse_trajectory(&fs::read_to_string(paths.reference.with_file_name("trajectory.txt")).unwrap()).unwrap();
    let closest = truth
        .samples()
        .iter()
        .flat_map(|(_, a)| reference.samples().iter().map(move |(_, b)| (a.translation() - b.translation()).norm()))
        .fold(f64::INFINITY, f64::min);
    assert!(closest > 5.0, "closest approach {closest}");
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");

    let missing = bin()
        .args(["align", "--reference", "nope/manifest.txt", "--target", "nope/manifest.txt", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(AppError::EXIT_INPUT));

    let bad_alpha = bin()
        .args(["align", "--reference", "a", "--target", "b", "--alpha", "1.5", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(bad_alpha.status.code(), Some(AppError::EXIT_CONFIG));

    let cfg = SynthConfig {
        overlap_fraction: 0.0,
        ..small_cfg()
    };
    let (paths, _) = run_synth(5, &cfg, &dir.path().join("pair"), CloudEncoding::Binary).unwrap();
    let none = bin()
        .args(["align", "--threads", "1", "--reference"])
        .arg(&paths.reference)
        .arg("--target")
        .arg(&paths.target)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        none.status.code(),
        Some(AppError::EXIT_NO_MATCHES),
        "{}",
        String::from_utf8_lossy(&none.stderr)
    );
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report_value(&report, "run", "status").unwrap().starts_with("failed"));
}

#[test]
fn align_reuses_a_saved_vocabulary() {
    let dir = tempdir().unwrap();
    let cfg = SynthConfig {
        overlap_fraction: 1.0,
        ..small_cfg()
    };
    let (paths, _) = run_synth(11, &cfg, &dir.path().join("pair"), CloudEncoding::Binary).unwrap();
    let vocab = dir.path().join("vocab.bin");
    let align = |out: &str| {
        let o = bin()
            .args(["align", "--mode", "vlma-rigid", "--reference"])
            .arg(&paths.reference)
            .arg("--target")
            .arg(&paths.target)
            .arg("--vocabulary")
            .arg(&vocab)
            .arg("--out")
            .arg(dir.path().join(out))
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(dir.path().join(out).join("report.txt")).unwrap()
    };
    let first = align("first");
    let saved = fs::read(&vocab).unwrap();
    assert!(saved.starts_with(b"VLMAVOC1"));
    let second = align("second");
    assert_eq!(fs::read(&vocab).unwrap(), saved);
    assert_eq!(first, second);
    for name in ["merged.cloud", "aligned_trajectory.txt"] {
        assert!(dir.path().join("second").join(name).is_file());
    }
}

#[test]
fn metrics_scores_two_clouds() {
    let dir = tempdir().unwrap();
    let cloud = "VERSION 1\nFIELDS x y z\nPOINTS 2\nDATA ascii\n0 0 0\n1 0 0\n";
    let a = dir.path().join("a.cloud");
    fs::write(&a, cloud).unwrap();
    let csv = dir.path().join("d.csv");
    let o = bin()
        .args(["metrics", "--aligned"])
        .arg(&a)
        .arg("--reference")
        .arg(&a)
        .arg("--densities")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l == "p2p: 0"), "{stdout}");
    assert!(stdout.lines().any(|l| l == "merged_points: 4"), "{stdout}");
    // each point coincides with one copy of itself
    let rows: Vec<String> = fs::read_to_string(&csv).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("2")));
}
