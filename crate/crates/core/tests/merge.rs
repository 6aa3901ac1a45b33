use mapalign_core::alignment::{apply_alignment, merge_maps, AlignmentMode};
use mapalign_core::exec::Sequential;
use mapalign_core::metrics::point_to_point_error;
use mapalign_core::synthgen::{generate_pair, SynthConfig};
use mapalign_core::{PointCloud, Pose};

fn session() -> mapalign_core::SessionMap {
    let cfg = SynthConfig {
        path_length: 6.0,
        lidar_rate: 2.0,
        camera_rate: 1.0,
        ..SynthConfig::default()
    };
    generate_pair(17, &cfg).unwrap().0
}

fn halves(merged: &PointCloud, n: usize) -> (PointCloud, PointCloud) {
    let a = PointCloud::new(merged.points[..n].to_vec(), "world").unwrap();
    let b = PointCloud::new(merged.points[n..].to_vec(), "world").unwrap();
    (a, b)
}

#[test]
fn self_merge_doubles_coincident_points() {
    let s = session();
    let world = s.world_cloud().unwrap();
    let aligned = apply_alignment(s.trajectory(), AlignmentMode::Rigid(Pose::identity()));
    let merged = merge_maps(&s, &s, &aligned).unwrap();
    assert_eq!(merged.len(), 2 * world.len());
    let (a, b) = halves(&merged, world.len());
    for (p, q) in a.points.iter().zip(&b.points) {
        assert!((p - q).norm() < 1e-6);
    }
}

#[test]
fn hundred_meter_offset_is_detected() {
    let s = session();
    let n = s.world_cloud().unwrap().len();
    let wrong = Pose::from_translation(100.0, 0.0, 0.0);
    let aligned = apply_alignment(s.trajectory(), AlignmentMode::Rigid(wrong));
    let (reference, target) = halves(&merge_maps(&s, &s, &aligned).unwrap(), n);
    let p2p = point_to_point_error(&target, &reference, &Sequential).unwrap();
    assert!(p2p > 1.0, "p2p {p2p}");
    let right = apply_alignment(s.trajectory(), AlignmentMode::Rigid(Pose::identity()));
    let (reference, target) = halves(&merge_maps(&s, &s, &right).unwrap(), n);
    assert!(point_to_point_error(&target, &reference, &Sequential).unwrap() < 1e-9);
}
