//! The framework stages. Each reads the artifacts of earlier stages from disk
//! and writes its own into `out_dir`.
//!
//! | stage    | reads                                   | writes                                             |
//! |----------|-----------------------------------------|----------------------------------------------------|
//! | synth    |                                         | `data_dir/{images/, train.json, eval.json, confusers.json}` |
//! | train    | train.json, eval.json                   | `original/`                                        |
//! | explain  | `original/`                             | `maps/{image}_{class}_{method}.npy`                |
//! | eval-xai | `original/`                             | evaluation.csv/json, timing.json, chosen_method.json |
//! | augment  | chosen_method.json, confusers.json      | plan.json, train_augmented.json, augment_report.json |
//! | retrain  | train_augmented.json                    | `enhanced/`                                        |
//! | compare  | `original/`, `enhanced/`, eval.json     | comparison.csv/json                                |
//! | overlay  | `maps/`                                 | `overlays/{image}_{class}_{method}.png`            |
//!
//! Wall-clock measurements only go to `timing.json`; every other artifact is
//! a deterministic function of the config.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vqi_core::augment::{self, AugmentationOp, AugmentationPlan, ChangeReport, Geometry};
use vqi_core::cam::{self, ExplanationMap, Method};
use vqi_core::coco::{rle_decode, write_coco, LabelSpace};
use vqi_core::metrics::{self, ComparisonReport, EvalSample, EvaluationRow, TimingMode};
use vqi_core::model::{load_bundle, RegionSpec, SegModel, ToyNet};
use vqi_core::npy::{self, Dtype};
use vqi_core::par::{self, Execution};
use vqi_core::synth::{self, ConfuserHint, CABLE, ROAD_MARKING};
use vqi_core::{Mask, Tensor};

use crate::config::RunConfig;
use crate::data::{self, Split};
use crate::overlay;
use crate::require;
use crate::select::{select_core_method, Selection};

pub const ARTIFACT_VERSION: u32 = 1;
pub const ORIGINAL_DIR: &str = "original";
pub const ENHANCED_DIR: &str = "enhanced";
pub const MAPS_DIR: &str = "maps";
pub const OVERLAYS_DIR: &str = "overlays";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<T> {
    let path = require(path, stage)?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn map_file_name(image_id: u64, class: usize, method: Method) -> String {
    format!("{image_id}_{class}_{}.npy", method.name())
}

/// Evaluation table as written to `evaluation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub version: u32,
    pub time_unit: String,
    pub rows: Vec<EvaluationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonArtifact {
    pub version: u32,
    #[serde(flatten)]
    pub report: ComparisonReport,
    pub delta: Vec<Option<f64>>,
}

pub fn load_eval_split(cfg: &RunConfig) -> Result<Split> {
    cfg.require_data()?;
    data::load_split(&cfg.data_dir, &cfg.data_dir.join("eval.json"), "synth")
}

pub fn load_train_split(cfg: &RunConfig) -> Result<Split> {
    cfg.require_data()?;
    data::load_split(&cfg.data_dir, &cfg.data_dir.join("train.json"), "synth")
}

/// Label space of a run: the evaluation categories in id order.
pub fn run_labels(cfg: &RunConfig) -> Result<LabelSpace> {
    cfg.require_data()?;
    Ok(data::label_space(&data::read_coco(
        &cfg.data_dir.join("eval.json"),
        "synth",
    )?))
}

pub fn load_model(cfg: &RunConfig, which: &str) -> Result<ToyNet> {
    let stage = if which == ENHANCED_DIR { "retrain" } else { "train" };
    let dir = cfg.out(which);
    require(dir.join("meta.json"), stage)?;
    ToyNet::load(&dir).with_context(|| format!("loading model from {}", dir.display()))
}

pub fn synth(cfg: &RunConfig) -> Result<synth::SynthDataset> {
    let dataset = synth::generate(&cfg.synth_config())?;
    dataset.write(&cfg.data_dir)?;
    Ok(dataset)
}

fn train_on(cfg: &RunConfig, split: &Split, labels: LabelSpace, dir: &str) -> Result<ToyNet> {
    let samples = data::train_samples(split, &labels)?;
    let model = ToyNet::train(&samples, labels, &cfg.train_config())?;
    model.save(cfg.out(dir))?;
    Ok(model)
}

pub fn train(cfg: &RunConfig) -> Result<ToyNet> {
    let labels = run_labels(cfg)?;
    let split = load_train_split(cfg)?;
    train_on(cfg, &split, labels, ORIGINAL_DIR)
}

/// Region explained for `class`: the prediction, or `gt` when the
/// prediction is empty.
pub fn explain_one(
    model: &dyn SegModel,
    image: &Tensor,
    class: usize,
    gt: Option<&Mask>,
    method: Method,
) -> Result<ExplanationMap> {
    let predicted = model.forward(image)?.predicted_mask(class);
    let (region, spec) = match gt {
        _ if !predicted.is_empty() => (predicted, RegionSpec::Predicted),
        Some(gt) if !gt.is_empty() => (gt.clone(), RegionSpec::GroundTruth),
        _ => bail!("class {class} is neither predicted nor annotated in this image"),
    };
    Ok(cam::explain(model, image, method, class, &region, spec)?)
}

fn explain_bundle(cfg: &RunConfig, bundle_dir: &Path) -> Result<Vec<PathBuf>> {
    let bundle = load_bundle(bundle_dir)?;
    let class = bundle.meta.class;
    let region = match &bundle.meta.region {
        RegionSpec::Mask(rle) => rle_decode(rle)?,
        _ => bundle.scores.predicted_mask(class),
    };
    if region.is_empty() {
        bail!("bundle {}: empty target region", bundle_dir.display());
    }
    let mut written = Vec::new();
    for &method in &cfg.methods {
        let map = cam::explain(
            &bundle,
            &bundle.image,
            method,
            class,
            &region,
            bundle.meta.region.clone(),
        )?;
        let path = cfg.out(MAPS_DIR).join(format!("bundle_{class}_{}.npy", method.name()));
        fs::create_dir_all(cfg.out(MAPS_DIR))?;
        npy::write(&path, &map.values, Dtype::F32)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes one NPY map per eval (image, class) pair and method, or for a
/// stored tensor bundle when `bundle` is given.
pub fn explain(cfg: &RunConfig, bundle: Option<&Path>) -> Result<Vec<PathBuf>> {
    if let Some(dir) = bundle {
        return explain_bundle(cfg, dir);
    }
    let model = load_model(cfg, ORIGINAL_DIR)?;
    let split = load_eval_split(cfg)?;
    let samples = data::eval_samples(&split, model.labels())?;
    let dir = cfg.out(MAPS_DIR);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let written = par::try_map(
        Execution::default(),
        &samples,
        |s: &EvalSample| -> Result<Vec<PathBuf>> {
            let mut paths = Vec::new();
            for &method in &cfg.methods {
                let map = explain_one(&model, &s.image, s.class, Some(&s.gt), method)?;
                let path = dir.join(map_file_name(s.image_id, s.class, method));
                npy::write(&path, &map.values, Dtype::F32)?;
                paths.push(path);
            }
            Ok(paths)
        },
    )?;
    Ok(written.into_iter().flatten().collect())
}

pub fn eval_xai(cfg: &RunConfig) -> Result<(Vec<EvaluationRow>, Selection)> {
    let model = load_model(cfg, ORIGINAL_DIR)?;
    let split = load_eval_split(cfg)?;
    let samples = data::eval_samples(&split, model.labels())?;
    let rows = metrics::evaluate_methods(&model, &samples, &cfg.methods, &cfg.eval_config())?;
    let selection = select_core_method(&rows).context("no evaluation rows")?;

    write_text(&cfg.out("evaluation.csv"), &metrics::evaluation_csv(&rows))?;
    let time_unit = match cfg.timing {
        TimingMode::WallClock => "wall-clock seconds per explanation",
        TimingMode::CostModel => "model passes x forward GMAC per explanation",
    };
    write_json(
        &cfg.out("evaluation.json"),
        &EvaluationArtifact {
            version: ARTIFACT_VERSION,
            time_unit: time_unit.into(),
            rows: rows.clone(),
        },
    )?;
    let timing: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|r| {
            (
                r.method.clone(),
                serde_json::json!({ "wall_s_per_explanation": r.wall_s }),
            )
        })
        .collect();
    write_json(&cfg.out("timing.json"), &timing)?;
    write_json(&cfg.out("chosen_method.json"), &selection)?;
    Ok((rows, selection))
}

pub fn read_evaluation(cfg: &RunConfig) -> Result<EvaluationArtifact> {
    read_json(&cfg.out("evaluation.json"), "eval-xai")
}

pub fn read_selection(cfg: &RunConfig) -> Result<Selection> {
    read_json(&cfg.out("chosen_method.json"), "eval-xai")
}

pub fn read_comparison(cfg: &RunConfig) -> Result<ComparisonArtifact> {
    read_json(&cfg.out("comparison.json"), "compare")
}

/// The standard plan: enlarge every cable annotation and add an annotation
/// for each confuser the expert marked.
pub fn default_plan(radius: usize, confusers: &[ConfuserHint], cable_id: u64, chosen: &str) -> AugmentationPlan {
    let mut plan = AugmentationPlan {
        author: "default".into(),
        ..AugmentationPlan::default()
    };
    plan.push(
        AugmentationOp::Enlarge {
            category_id: cable_id,
            radius,
        },
        format!("{chosen} maps extend beyond the thin cable annotations"),
    );
    for c in confusers {
        plan.push(
            AugmentationOp::AddAnnotation {
                image_id: c.image_id,
                category_id: None,
                category_name: Some(ROAD_MARKING.into()),
                geometry: Geometry::Polygon(vec![c.polygon.clone()]),
            },
            format!("{chosen} highlights this unannotated marking as evidence for the foreground"),
        );
    }
    plan
}

/// Applies `plan` to the training annotations and writes its artifacts.
pub fn apply_plan(cfg: &RunConfig, plan: &AugmentationPlan) -> Result<ChangeReport> {
    if plan.ops.is_empty() {
        bail!("empty plan");
    }
    let train = data::read_coco(&cfg.data_dir.join("train.json"), "synth")?;
    let (augmented, report) = augment::apply_plan(&train, plan)?;
    write_json(&cfg.out("plan.json"), plan)?;
    write_text(&cfg.out("train_augmented.json"), &write_coco(&augmented))?;
    write_json(&cfg.out("augment_report.json"), &report)?;
    Ok(report)
}

/// Runs the plan at `plan_path`, or the default plan built from the chosen
/// method and the dataset's confuser hints.
pub fn augment(cfg: &RunConfig, plan_path: Option<&Path>) -> Result<ChangeReport> {
    let plan = match plan_path {
        Some(p) => read_json(p, "augment")?,
        None => {
            let selection = read_selection(cfg)?;
            let confusers: Vec<ConfuserHint> = read_json(&cfg.data_dir.join("confusers.json"), "synth")?;
            let train = data::read_coco(&cfg.data_dir.join("train.json"), "synth")?;
            let cable = train
                .category_by_name(CABLE)
                .context("training annotations have no cable category")?;
            default_plan(cfg.enlarge_radius, &confusers, cable.id, &selection.chosen)
        }
    };
    apply_plan(cfg, &plan)
}

pub fn retrain(cfg: &RunConfig) -> Result<ToyNet> {
    let labels = run_labels(cfg)?;
    let annotations = require(cfg.out("train_augmented.json"), "augment")?;
    let split = data::load_split(&cfg.data_dir, &annotations, "augment")?;
    train_on(cfg, &split, labels, ENHANCED_DIR)
}

/// Pixel-pooled IoU of each foreground class over the split.
pub fn class_ious(model: &dyn SegModel, split: &Split, labels: &LabelSpace) -> Result<Vec<Option<f64>>> {
    let images: Vec<u64> = split.coco.images.iter().map(|i| i.id).collect();
    let per_image = par::try_map(Execution::default(), &images, |&id| -> Result<Vec<(Mask, Mask)>> {
        let scores = model.forward(&split.images[&id])?;
        (1..labels.class_count())
            .map(|c| Ok((scores.predicted_mask(c), data::class_mask(split, labels, id, c)?)))
            .collect()
    })?;
    (1..labels.class_count())
        .map(|c| {
            Ok(metrics::pooled_iou(
                per_image.iter().map(|pairs| (&pairs[c - 1].0, &pairs[c - 1].1)),
            )?)
        })
        .collect()
}

pub fn compare(cfg: &RunConfig) -> Result<ComparisonReport> {
    let original = load_model(cfg, ORIGINAL_DIR)?;
    let enhanced = load_model(cfg, ENHANCED_DIR)?;
    if original.labels() != enhanced.labels() {
        bail!("original and enhanced models use different label spaces");
    }
    let labels = original.labels().clone();
    let split = load_eval_split(cfg)?;
    let report = ComparisonReport::new(
        labels.names.clone(),
        class_ious(&original, &split, &labels)?,
        class_ious(&enhanced, &split, &labels)?,
    )?;
    write_text(&cfg.out("comparison.csv"), &report.to_csv())?;
    write_json(
        &cfg.out("comparison.json"),
        &ComparisonArtifact {
            version: ARTIFACT_VERSION,
            delta: report.delta(),
            report: report.clone(),
        },
    )?;
    Ok(report)
}

/// Renders a stored map from the explain stage over its image.
pub fn overlay(cfg: &RunConfig, image_id: u64, class: usize, method: Method, alpha: f64) -> Result<PathBuf> {
    let map_path = require(
        cfg.out(MAPS_DIR).join(map_file_name(image_id, class, method)),
        "explain",
    )?;
    let map = npy::read(&map_path)?;
    let split = load_eval_split(cfg)?;
    let image = split
        .image(image_id)
        .with_context(|| format!("unknown eval image {image_id}"))?;
    let png = overlay::export_overlay(image, &map, alpha)?;
    let path = cfg
        .out(OVERLAYS_DIR)
        .join(format!("{image_id}_{class}_{}.png", method.name()));
    fs::create_dir_all(cfg.out(OVERLAYS_DIR))?;
    fs::write(&path, png).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// synth → train → explain → eval-xai → augment → retrain → compare.
pub fn run_all(cfg: &RunConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    synth(cfg)?;
    train(cfg)?;
    explain(cfg, None)?;
    eval_xai(cfg)?;
    augment(cfg, None)?;
    retrain(cfg)?;
    compare(cfg)
}
