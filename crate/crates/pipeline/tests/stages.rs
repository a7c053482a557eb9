//! Stage wiring: artifacts, missing-stage errors and selection.

mod common;

use std::fs;

use proptest::prelude::*;
use vqi_core::cam::Method;
use vqi_core::coco::rle_encode;
use vqi_core::metrics::{EvaluationRow, Undefined};
use vqi_core::model::{write_bundle, BundleMeta, RegionSpec, SegModel, TensorBundle};
use vqi_core::npy;
use vqi_pipeline::select::select_core_method;
use vqi_pipeline::{stages, MissingArtifact, RunConfig};

fn missing_stage(err: anyhow::Error) -> &'static str {
    err.downcast_ref::<MissingArtifact>()
        .unwrap_or_else(|| panic!("expected a missing artifact, got {err:#}"))
        .stage
}

#[test]
fn stages_name_their_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    assert_eq!(missing_stage(stages::train(&cfg).unwrap_err()), "synth");
    stages::synth(&cfg).unwrap();
    assert_eq!(missing_stage(stages::eval_xai(&cfg).unwrap_err()), "train");
    assert_eq!(missing_stage(stages::explain(&cfg, None).unwrap_err()), "train");
    assert_eq!(missing_stage(stages::augment(&cfg, None).unwrap_err()), "eval-xai");
    assert_eq!(missing_stage(stages::retrain(&cfg).unwrap_err()), "augment");
    stages::train(&cfg).unwrap();
    assert_eq!(missing_stage(stages::compare(&cfg).unwrap_err()), "retrain");
    assert_eq!(
        missing_stage(stages::overlay(&cfg, 9, 1, Method::GradCam, 0.5).unwrap_err()),
        "explain"
    );
    let msg = format!("{:#}", stages::compare(&cfg).unwrap_err());
    assert!(msg.contains("retrain"), "{msg}");
}

#[test]
fn full_sequence_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    let report = stages::run_all(&cfg).unwrap();
    assert_eq!(report.categories, ["cable", "tower", "road_marking"]);
    report.check(1e-9).unwrap();
    for name in [
        "evaluation.csv",
        "evaluation.json",
        "timing.json",
        "chosen_method.json",
        "plan.json",
        "train_augmented.json",
        "augment_report.json",
        "comparison.csv",
        "comparison.json",
        "original/meta.json",
        "enhanced/meta.json",
    ] {
        assert!(cfg.out(name).exists(), "{name}");
    }
    let csv = fs::read_to_string(cfg.out("evaluation.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "Method, EPBG, BBox, IoU, Drop, Inc, Time(s)"
    );
    assert_eq!(csv.lines().count(), 6);
    let cmp = fs::read_to_string(cfg.out("comparison.csv")).unwrap();
    assert_eq!(
        cmp.lines().next().unwrap(),
        "Model, cable, tower, road_marking, Overall"
    );

    // one map per eval (image, class) pair and method
    let labels = stages::run_labels(&cfg).unwrap();
    let pairs = vqi_pipeline::data::eval_samples(&stages::load_eval_split(&cfg).unwrap(), &labels)
        .unwrap()
        .len();
    assert_eq!(fs::read_dir(cfg.out("maps")).unwrap().count(), pairs * 5);

    let selection = stages::read_selection(&cfg).unwrap();
    let rows = stages::read_evaluation(&cfg).unwrap().rows;
    assert_eq!(select_core_method(&rows).unwrap(), selection);

    let plan: vqi_core::augment::AugmentationPlan =
        serde_json::from_str(&fs::read_to_string(cfg.out("plan.json")).unwrap()).unwrap();
    assert!(plan.ops[0].rationale.contains(&selection.chosen));

    let png = stages::overlay(&cfg, 9, 1, Method::HiResCam, 0.5);
    // image 9 is the first eval image of the tiny config
    assert!(png.unwrap().exists());
}

#[test]
fn identical_models_compare_equal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    stages::synth(&cfg).unwrap();
    let net = stages::train(&cfg).unwrap();
    net.save(cfg.out(stages::ENHANCED_DIR)).unwrap();
    let report = stages::compare(&cfg).unwrap();
    assert_eq!(report.original, report.enhanced);
    assert!(report.delta().iter().flatten().all(|&d| d == 0.0));
    assert_eq!(report.overall_original, report.overall_enhanced);
}

#[test]
fn bundles_explain_with_gradient_methods_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(dir.path());
    stages::synth(&cfg).unwrap();
    let net = stages::train(&cfg).unwrap();
    let split = stages::load_eval_split(&cfg).unwrap();
    let image = split.images.values().next().unwrap().clone();
    let region = vqi_core::Mask::full(64, 64);
    let cap = net.capture(&image, &region, 1).unwrap();
    let bundle_dir = dir.path().join("bundle");
    write_bundle(
        &bundle_dir,
        &TensorBundle {
            image,
            activations: cap.activations,
            gradients: cap.gradients,
            scores: cap.scores,
            meta: BundleMeta {
                class: 1,
                region: RegionSpec::Mask(rle_encode(&region)),
                layer: net.target_layer().into(),
            },
        },
    )
    .unwrap();

    cfg.methods = vec![Method::GradCam, Method::HiResCam];
    let written = stages::explain(&cfg, Some(&bundle_dir)).unwrap();
    assert_eq!(written.len(), 2);
    let map = npy::read(&written[0]).unwrap();
    assert_eq!(map.shape(), &[64, 64]);

    cfg.methods = vec![Method::ScoreCam];
    let err = format!("{:#}", stages::explain(&cfg, Some(&bundle_dir)).unwrap_err());
    assert!(err.contains("requires live model"), "{err}");

    fs::remove_file(bundle_dir.join("gradients.npy")).unwrap();
    let err = format!("{:#}", stages::explain(&cfg, Some(&bundle_dir)).unwrap_err());
    assert!(err.contains("missing gradients"), "{err}");
}

#[test]
fn config_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    let path = dir.path().join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    assert_eq!(RunConfig::from_file(&path).unwrap(), cfg);
}

fn row(method: &str, ebpg: f64, bbox: f64, iou: f64, drop: f64, increase: f64, time_s: f64) -> EvaluationRow {
    EvaluationRow {
        method: method.into(),
        ebpg,
        bbox,
        iou,
        drop,
        increase,
        time_s,
        samples: 1,
        undefined: Undefined::default(),
        wall_s: time_s,
    }
}

fn reference_rows() -> Vec<EvaluationRow> {
    vec![
        row("GradCAM", 50.49, 48.39, 47.94, 5.21, 52.57, 3.21),
        row("GradCAM++", 58.13, 52.24, 53.22, 5.17, 54.66, 4.20),
        row("HiResCAM", 60.81, 41.69, 52.19, 5.01, 55.93, 3.13),
        row("XGradCAM", 57.94, 47.81, 53.09, 5.94, 55.01, 4.43),
        row("ScoreCAM", 54.01, 43.95, 51.94, 7.34, 47.19, 52.50),
    ]
}

#[test]
fn reference_rows_select_hirescam() {
    let s = select_core_method(&reference_rows()).unwrap();
    assert_eq!(s.chosen, "HiResCAM");
    assert_eq!(s.ranking, ["HiResCAM", "GradCAM++", "GradCAM", "XGradCAM", "ScoreCAM"]);
}

fn arb_rows() -> impl Strategy<Value = Vec<EvaluationRow>> {
    // coarse values force ties on every key
    proptest::collection::vec((0u8..3, 0u8..3, 0u8..3, 0u8..3), 1..7).prop_map(|keys| {
        keys.into_iter()
            .enumerate()
            .map(|(i, (d, inc, t, e))| row(&format!("m{i}"), e as f64, 0.0, 0.0, d as f64, inc as f64, t as f64))
            .collect()
    })
}

proptest! {
    #[test]
    fn winner_ignores_row_order(rows in arb_rows(), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let a = select_core_method(&rows).unwrap();
        let b = select_core_method(&shuffled).unwrap();
        prop_assert_eq!(a, b);
    }
}
