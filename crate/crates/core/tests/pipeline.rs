mod common;

use markreg::cloud_io::CloudFormat;
use markreg::metrics::{read_pose_file, rmse};
use markreg::pipeline::{
    exit_code, register, register_from_records, run_pipeline, CloudFormatName, DropReason, Mode, PipelineError,
    RegistrationOptions, RunConfig,
};
use markreg::synth::{scenes, write_outputs, NoiseSpec, Scene};
use markreg::tagdetect::DetectionRecord;

use common::{max_pairwise_overlap, truth_map};

const SIDE: f64 = 0.692;

fn low_overlap() -> Scene {
    Scene::new(scenes::low_overlap(NoiseSpec::default())).unwrap()
}

fn options(scene: &Scene) -> RegistrationOptions {
    let mut opts = RegistrationOptions::new(SIDE);
    opts.projection = Some(scene.projection());
    opts
}

#[test]
fn low_overlap_scene_registers_from_images() {
    let scene = low_overlap();
    let (clouds, gt) = scene.render_scans(0).unwrap();
    assert!(max_pairwise_overlap(&clouds, &gt, 0.05) < 0.15);

    let report = register(&clouds, &options(&scene)).unwrap();
    assert!(report.dropped.is_empty(), "{:?}", report.dropped);
    assert_eq!(report.anchor, 0);
    for d in &report.detections {
        let mut ids: Vec<u32> = d.decoded.iter().map(|(id, _)| *id).collect();
        ids.sort();
        assert_eq!(ids, scene.visible_markers(d.scan_id as usize), "scan {}", d.scan_id);
        assert!(d.rejected.is_empty());
    }
    let r = rmse(&report.scan_poses, &truth_map(&gt)).unwrap();
    assert!(r.translation < 0.005 && r.rotation < 1e-3, "{r:?}");
    for (j, pose) in &report.marker_poses {
        assert!((pose.translation - gt.marker_poses[j].translation).norm() < 0.01, "marker {j}");
    }

    let stages: f64 = report.timings.iter().map(|(_, s)| s).sum();
    assert!((stages - report.total_seconds).abs() <= 1e-9 * report.total_seconds.max(1.0));
    let names: Vec<&str> = report.timings.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["detect", "init_graph", "factor_graph"]);
    let text = report.to_text();
    assert!(text.contains("registered 5"));
    let log = text.split_once("# iter cost lambda step_norm accepted\n").unwrap().1;
    assert_eq!(log.lines().next().unwrap().split_whitespace().count(), 5);
}

#[test]
fn exact_corners_register_exactly() {
    let scene = low_overlap();
    let gt = scene.ground_truth();
    let ids: Vec<u32> = (0..5).collect();
    let report = register_from_records(&ids, &scene.true_detections(), &options(&scene)).unwrap();
    assert!(report.final_cost.unwrap() < 1e-12);
    let r = rmse(&report.scan_poses, &truth_map(&gt)).unwrap();
    assert!(r.translation < 1e-9 && r.rotation < 1e-9, "{r:?}");
}

#[test]
fn modes_share_observations() {
    let scene = low_overlap();
    let records = scene.true_detections();
    let ids: Vec<u32> = (0..5).collect();
    let mut opts = options(&scene);
    opts.mode = Mode::NoSecondGraph;
    let init_only = register_from_records(&ids, &records, &opts).unwrap();
    assert!(init_only.final_cost.is_none() && init_only.solver_log.is_none());
    assert_eq!(init_only.scan_poses, init_only.initial.as_ref().unwrap().scan_poses);

    opts.mode = Mode::NoFirstGraph;
    let no_first = register_from_records(&ids, &records, &opts).unwrap();
    assert_eq!(no_first.scan_poses.len(), 5);
    assert!(no_first.initial_cost.unwrap() > 1.0);
}

fn without(records: &[DetectionRecord], drop: impl Fn(&DetectionRecord) -> bool) -> Vec<DetectionRecord> {
    records.iter().filter(|r| !drop(r)).cloned().collect()
}

#[test]
fn scans_without_a_chain_are_dropped() {
    let scene = low_overlap();
    let records = scene.true_detections();
    let ids: Vec<u32> = (0..5).collect();
    let opts = options(&scene);

    let blind = register_from_records(&ids, &without(&records, |r| r.scan_id == 4), &opts).unwrap();
    assert_eq!(blind.dropped, vec![(4, DropReason::NoMarkers)]);
    assert!(blind.is_partial());
    assert_eq!(blind.scan_poses.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3]);

    // Scan 3 no longer reports tag 3, so scan 4 only sees a tag nobody else does.
    let split = register_from_records(&ids, &without(&records, |r| r.scan_id == 3 && r.marker_id == 3), &opts).unwrap();
    assert_eq!(split.dropped, vec![(4, DropReason::Disconnected)]);
    assert!(!split.observations.iter().any(|o| o.scan_id == 4));
}

#[test]
fn no_markers_is_an_error() {
    let err = register_from_records(&[0, 1], &[], &RegistrationOptions::new(SIDE)).unwrap_err();
    assert!(matches!(err, PipelineError::NoMarkers));
    assert_eq!(err.exit_code(), exit_code::NO_MARKERS);
}

#[test]
fn run_pipeline_reads_and_writes_files() {
    let scene = low_overlap();
    let (clouds, gt) = scene.render_scans(2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_outputs(&data, &scene, &clouds, &gt, CloudFormat::XyziCsv).unwrap();

    let mut cfg = RunConfig::load(&data.join("run.toml")).unwrap();
    assert_eq!(cfg.marker_size, SIDE);
    cfg.input = Some(data.clone());
    cfg.format = CloudFormatName::Csv;
    cfg.detections = Some(data.join("gt_detections.json"));
    cfg.output = Some(dir.path().join("out"));
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.timings.first().unwrap().0, "load");
    assert_eq!(report.timings.last().unwrap().0, "write");

    let out = dir.path().join("out");
    for name in ["poses.txt", "markers.txt", "detections.json", "merged.csv", "report.txt"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let est = read_pose_file(&out.join("poses.txt")).unwrap();
    let truth = read_pose_file(&data.join("gt_poses.txt")).unwrap();
    let r = rmse(&est, &truth).unwrap();
    assert!(r.translation < 1e-6 && r.rotation < 1e-6, "{r:?}");
}
