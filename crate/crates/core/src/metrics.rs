//! Plausibility, faithfulness and segmentation scores.
//!
//! Metric functions return `Ok(None)` for inputs on which they are undefined
//! (zero-energy map, empty ground truth). Aggregates exclude such cases and
//! count them instead of scoring them as zero.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cam::{explain, ExplanationMap, Method};
use crate::error::{Error, Result};
use crate::model::{RegionSpec, SegModel};
use crate::par::{self, Execution};
use crate::tensor::{Mask, Tensor};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

fn check_dims(map: &Tensor, gt: &Mask) -> Result<()> {
    if map.rank() != 2 || map.spatial() != gt.dims() {
        return Err(Error::Shape(format!("map {:?} vs mask {:?}", map.shape(), gt.dims())));
    }
    Ok(())
}

/// Energy-based pointing game: share of map energy inside `gt`, in percent.
pub fn ebpg(map: &Tensor, gt: &Mask) -> Result<Option<f64>> {
    check_dims(map, gt)?;
    let total = map.sum();
    if total <= 0.0 || gt.is_empty() {
        return Ok(None);
    }
    let inside: f64 = gt.indices().map(|i| map.data()[i]).sum();
    Ok(Some(100.0 * inside / total))
}

/// IoU between the map binarized at `threshold` (`v >= threshold`) and `gt`.
pub fn explanation_iou(map: &Tensor, gt: &Mask, threshold: f64) -> Result<Option<f64>> {
    check_dims(map, gt)?;
    let (h, w) = gt.dims();
    let bits = map.data().iter().map(|&v| v >= threshold).collect();
    let binary = Mask::from_bits(h, w, bits)?;
    let union = binary.union_count(gt);
    if union == 0 {
        return Ok(None);
    }
    Ok(Some(100.0 * binary.intersection_count(gt) as f64 / union as f64))
}

/// Axis-aligned pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelBox {
    pub fn of_mask(mask: &Mask) -> Option<PixelBox> {
        let w = mask.width();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for i in mask.indices() {
            let (y, x) = (i / w, i % w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        (x0 != usize::MAX).then(|| PixelBox {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        })
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.x..self.x + self.width).contains(&x) && (self.y..self.y + self.height).contains(&y)
    }
}

/// Top-N precision against a box of area N: the N hottest pixels (ties in
/// row-major order) and the share of them inside the box.
pub fn bbox_score(map: &Tensor, bbox: PixelBox) -> Result<Option<f64>> {
    if map.rank() != 2 {
        return Err(Error::Shape(format!("map must be H×W, got {:?}", map.shape())));
    }
    let (h, w) = map.spatial();
    if bbox.area() == 0 || bbox.x + bbox.width > w || bbox.y + bbox.height > h {
        return Err(Error::InvalidArgument(format!(
            "box {bbox:?} does not fit a {h}x{w} map"
        )));
    }
    if map.max() <= 0.0 {
        return Ok(None);
    }
    let n = bbox.area();
    let mut order: Vec<usize> = (0..h * w).collect();
    // stable sort keeps row-major order among equal values
    order.sort_by(|&a, &b| map.data()[b].total_cmp(&map.data()[a]));
    let hits = order[..n].iter().filter(|&&i| bbox.contains(i / w, i % w)).count();
    Ok(Some(100.0 * hits as f64 / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    /// Mean class probability over the region on the original image.
    pub original: f64,
    /// The same on the image multiplied by the map.
    pub masked: f64,
    pub drop: f64,
    pub increase: bool,
}

impl Faithfulness {
    pub fn from_scores(original: f64, masked: f64) -> Self {
        Self {
            original,
            masked,
            drop: 100.0 * (original - masked).max(0.0) / original,
            increase: masked > original,
        }
    }
}

/// Drop and Increase for one explanation. The region is held fixed between
/// the original and the masked pass.
pub fn drop_increase(
    model: &dyn SegModel,
    image: &Tensor,
    map: &Tensor,
    class: usize,
    region: &Mask,
) -> Result<Faithfulness> {
    if !model.is_live() {
        return Err(Error::Explain("Drop/Increase requires live model".into()));
    }
    let y = model.forward(image)?.mean_probability(class, region)?;
    let o = model
        .forward(&image.mul_spatial(map)?)?
        .mean_probability(class, region)?;
    Ok(Faithfulness::from_scores(y, o))
}

/// Per-class IoU of two masks in percent; `None` when both are empty.
pub fn seg_iou(pred: &Mask, gt: &Mask) -> Result<Option<f64>> {
    pooled_iou([(pred, gt)])
}

/// IoU with intersections and unions pooled over all pairs.
pub fn pooled_iou<'a>(pairs: impl IntoIterator<Item = (&'a Mask, &'a Mask)>) -> Result<Option<f64>> {
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pairs {
        if p.dims() != g.dims() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs ground truth {:?}",
                p.dims(),
                g.dims()
            )));
        }
        inter += p.intersection_count(g);
        union += p.union_count(g);
    }
    Ok((union > 0).then(|| 100.0 * inter as f64 / union as f64))
}

pub fn mean_iou(per_class: &[f64]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::InvalidArgument("mean_iou of no classes".into()));
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// One (image, class) pair to explain.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub image_id: u64,
    pub image: Tensor,
    pub class: usize,
    /// Union of the class's ground-truth annotations; never empty.
    pub gt: Mask,
}

/// How the `Time(s)` column is filled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Measured mean wall-clock seconds per explanation.
    #[default]
    WallClock,
    /// Model passes × forward multiply-accumulates / 1e9, a machine- and
    /// load-independent cost in "seconds at 1 GMAC/s". Falls back to wall
    /// clock for models that do not report their cost.
    CostModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub timing: TimingMode,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            timing: TimingMode::WallClock,
            execution: Execution::default(),
        }
    }
}

/// Number of pairs each aggregate excluded as undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Undefined {
    pub ebpg: usize,
    pub bbox: usize,
    pub iou: usize,
    pub faithfulness: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub method: String,
    pub ebpg: f64,
    pub bbox: f64,
    pub iou: f64,
    pub drop: f64,
    pub increase: f64,
    /// Mean seconds per explanation.
    pub time_s: f64,
    pub samples: usize,
    pub undefined: Undefined,
    /// Measured mean wall-clock seconds per explanation, whatever `time_s` holds.
    #[serde(skip)]
    pub wall_s: f64,
}

/// All scores of one explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScores {
    pub ebpg: Option<f64>,
    pub bbox: Option<f64>,
    pub iou: Option<f64>,
    pub faithfulness: Option<Faithfulness>,
    pub runtime_ms: f64,
    pub cost_s: Option<f64>,
}

pub fn score_map(
    model: &dyn SegModel,
    sample: &EvalSample,
    map: &ExplanationMap,
    region: &Mask,
    threshold: f64,
) -> Result<SampleScores> {
    let bbox = PixelBox::of_mask(&sample.gt).ok_or(Error::EmptyMask)?;
    let (h, w) = sample.image.spatial();
    let faithfulness = if model.is_live() {
        Some(drop_increase(model, &sample.image, &map.values, sample.class, region)?)
    } else {
        None
    };
    Ok(SampleScores {
        ebpg: ebpg(&map.values, &sample.gt)?,
        bbox: bbox_score(&map.values, bbox)?,
        iou: explanation_iou(&map.values, &sample.gt, threshold)?,
        faithfulness,
        runtime_ms: map.runtime_ms,
        cost_s: model
            .forward_macs(h, w)
            .map(|m| map.model_passes as f64 * m as f64 / 1e9),
    })
}

/// The region explained for a sample: the model's prediction for the class,
/// or the ground truth when the prediction is empty.
pub fn target_region(model: &dyn SegModel, sample: &EvalSample) -> Result<(Mask, RegionSpec)> {
    let predicted = model.forward(&sample.image)?.predicted_mask(sample.class);
    if predicted.is_empty() {
        Ok((sample.gt.clone(), RegionSpec::GroundTruth))
    } else {
        Ok((predicted, RegionSpec::Predicted))
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (f64, usize) {
    let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => missing += 1,
        }
    }
    (if n == 0 { f64::NAN } else { sum / n as f64 }, missing)
}

/// Aggregates per-sample scores of one method into a table row.
pub fn aggregate(method: Method, scores: &[SampleScores], timing: TimingMode) -> Result<EvaluationRow> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no valid samples".into()));
    }
    let (ebpg, u_ebpg) = mean_defined(scores.iter().map(|s| s.ebpg));
    let (bbox, u_bbox) = mean_defined(scores.iter().map(|s| s.bbox));
    let (iou, u_iou) = mean_defined(scores.iter().map(|s| s.iou));
    let (drop, u_faith) = mean_defined(scores.iter().map(|s| s.faithfulness.map(|f| f.drop)));
    let (increase, _) = mean_defined(
        scores
            .iter()
            .map(|s| s.faithfulness.map(|f| if f.increase { 100.0 } else { 0.0 })),
    );
    let wall_s = scores.iter().map(|s| s.runtime_ms).sum::<f64>() / scores.len() as f64 / 1e3;
    let time_s = match timing {
        TimingMode::WallClock => wall_s,
        TimingMode::CostModel => match scores.iter().map(|s| s.cost_s).collect::<Option<Vec<f64>>>() {
            Some(costs) => costs.iter().sum::<f64>() / costs.len() as f64,
            None => wall_s,
        },
    };
    Ok(EvaluationRow {
        method: method.name().to_string(),
        ebpg,
        bbox,
        iou,
        drop,
        increase,
        time_s,
        samples: scores.len(),
        undefined: Undefined {
            ebpg: u_ebpg,
            bbox: u_bbox,
            iou: u_iou,
            faithfulness: u_faith,
        },
        wall_s,
    })
}

/// Explains and scores every sample with every method.
pub fn evaluate_methods(
    model: &dyn SegModel,
    samples: &[EvalSample],
    methods: &[Method],
    config: &EvalConfig,
) -> Result<Vec<EvaluationRow>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no valid samples".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to evaluate".into()));
    }
    let per_sample = par::try_map(config.execution, samples, |s| -> Result<Vec<SampleScores>> {
        let (region, spec) = target_region(model, s)?;
        methods
            .iter()
            .map(|&m| {
                let map = explain(model, &s.image, m, s.class, &region, spec.clone())?;
                score_map(model, s, &map, &region, config.iou_threshold)
            })
            .collect()
    })?;
    methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let column: Vec<SampleScores> = per_sample.iter().map(|row| row[j].clone()).collect();
            aggregate(m, &column, config.timing)
        })
        .collect()
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "NA".into()
    }
}

pub const EVALUATION_HEADER: &str = "Method, EPBG, BBox, IoU, Drop, Inc, Time(s)";

/// Table-shaped CSV of evaluation rows.
pub fn evaluation_csv(rows: &[EvaluationRow]) -> String {
    let mut out = String::from(EVALUATION_HEADER);
    out.push('\n');
    for r in rows {
        let time = if r.time_s.is_finite() {
            format!("{:.4}", r.time_s)
        } else {
            "NA".into()
        };
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}, {}, {}",
            r.method,
            fmt_value(r.ebpg),
            fmt_value(r.bbox),
            fmt_value(r.iou),
            fmt_value(r.drop),
            fmt_value(r.increase),
            time
        );
    }
    out
}

/// Per-class IoU before and after enhancement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub categories: Vec<String>,
    /// `None` marks a class with empty prediction and ground truth.
    pub original: Vec<Option<f64>>,
    pub enhanced: Vec<Option<f64>>,
    pub overall_original: f64,
    pub overall_enhanced: f64,
}

fn overall(values: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    mean_iou(&defined)
}

impl ComparisonReport {
    pub fn new(categories: Vec<String>, original: Vec<Option<f64>>, enhanced: Vec<Option<f64>>) -> Result<Self> {
        if categories.len() != original.len() || categories.len() != enhanced.len() {
            return Err(Error::Shape("comparison rows must match the category list".into()));
        }
        Ok(Self {
            overall_original: overall(&original)?,
            overall_enhanced: overall(&enhanced)?,
            categories,
            original,
            enhanced,
        })
    }

    /// Checks that each overall figure is the mean of its row within `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        for (row, stated) in [
            (&self.original, self.overall_original),
            (&self.enhanced, self.overall_enhanced),
        ] {
            let mean = overall(row)?;
            if (mean - stated).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "overall {stated} differs from the class mean {mean}"
                )));
            }
        }
        Ok(())
    }

    pub fn delta(&self) -> Vec<Option<f64>> {
        self.original
            .iter()
            .zip(&self.enhanced)
            .map(|(a, b)| Some((*b)? - (*a)?))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("Model");
        for c in &self.categories {
            out.push_str(", ");
            out.push_str(c);
        }
        out.push_str(", Overall\n");
        for (name, row, total) in [
            ("Original", &self.original, self.overall_original),
            ("Enhanced", &self.enhanced, self.overall_enhanced),
        ] {
            out.push_str(name);
            for v in row.iter() {
                out.push_str(", ");
                out.push_str(&v.map_or("NA".into(), |v| format!("{v:.2}")));
            }
            let _ = writeln!(out, ", {total:.3}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::LabelSpace;
    use crate::model::ToyNet;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn ebpg_examples() {
        let gt = Mask::from_fn(4, 4, |r, _| r < 2);
        let inside = Tensor::new(
            vec![4, 4],
            (0..16).map(|i| if i < 8 { (i + 1) as f64 } else { 0.0 }).collect(),
        )
        .unwrap();
        assert_eq!(ebpg(&inside, &gt).unwrap(), Some(100.0));
        assert_abs_diff_eq!(
            ebpg(&Tensor::filled(&[4, 4], 0.3), &gt).unwrap().unwrap(),
            50.0,
            epsilon = 1e-12
        );
        assert_eq!(ebpg(&Tensor::zeros(&[4, 4]), &gt).unwrap(), None);
        assert_eq!(ebpg(&Tensor::filled(&[4, 4], 1.0), &Mask::new(4, 4)).unwrap(), None);
        assert!(ebpg(&Tensor::zeros(&[3, 4]), &gt).is_err());
    }

    #[test]
    fn iou_examples() {
        let gt = Mask::from_fn(2, 2, |r, c| r == c);
        assert_eq!(
            explanation_iou(&map(2, 2, &[0.9, 0.1, 0.2, 0.5]), &gt, 0.5).unwrap(),
            Some(100.0)
        );
        assert_eq!(
            explanation_iou(&map(2, 2, &[0.0, 1.0, 1.0, 0.0]), &gt, 0.5).unwrap(),
            Some(0.0)
        );
        assert_eq!(
            explanation_iou(&Tensor::zeros(&[2, 2]), &Mask::new(2, 2), 0.5).unwrap(),
            None
        );
    }

    #[test]
    fn bbox_examples_and_ties() {
        let b = PixelBox {
            x: 1,
            y: 0,
            width: 2,
            height: 1,
        };
        assert_eq!(
            bbox_score(&map(2, 3, &[0.0, 1.0, 1.0, 0.2, 0.2, 0.2]), b).unwrap(),
            Some(100.0)
        );
        assert_eq!(
            bbox_score(&map(2, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.2]), b).unwrap(),
            Some(0.0)
        );
        // all equal: the first N pixels in row-major order win
        assert_eq!(bbox_score(&Tensor::filled(&[2, 3], 0.5), b).unwrap(), Some(50.0));
        assert_eq!(bbox_score(&Tensor::zeros(&[2, 3]), b).unwrap(), None);
        assert!(bbox_score(
            &Tensor::zeros(&[2, 3]),
            PixelBox {
                x: 2,
                y: 0,
                width: 2,
                height: 1
            }
        )
        .is_err());
        let m = Mask::from_fn(5, 5, |r, c| (1..3).contains(&r) && c == 3);
        assert_eq!(
            PixelBox::of_mask(&m),
            Some(PixelBox {
                x: 3,
                y: 1,
                width: 1,
                height: 2
            })
        );
        assert_eq!(PixelBox::of_mask(&Mask::new(2, 2)), None);
    }

    #[test]
    fn faithfulness_examples() {
        let f = Faithfulness::from_scores(0.8, 0.6);
        assert_abs_diff_eq!(f.drop, 25.0, epsilon = 1e-12);
        assert!(!f.increase);
        let f = Faithfulness::from_scores(0.5, 0.7);
        assert_eq!(f.drop, 0.0);
        assert!(f.increase);

        let net = ToyNet::new(LabelSpace::new(["a"]), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let image = Tensor::new(vec![3, 6, 6], (0..108).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let f = drop_increase(&net, &image, &Tensor::filled(&[6, 6], 1.0), 1, &Mask::full(6, 6)).unwrap();
        assert_eq!(f.drop, 0.0);
        assert!(!f.increase);
    }

    #[test]
    fn segmentation_iou() {
        let a = Mask::from_fn(3, 3, |r, _| r == 0);
        assert_eq!(seg_iou(&a, &a).unwrap(), Some(100.0));
        assert_eq!(seg_iou(&Mask::new(3, 3), &Mask::new(3, 3)).unwrap(), None);
        let b = Mask::from_fn(3, 3, |r, c| r == 0 && c == 0);
        // pooled: (1 + 3) / (3 + 3), not the mean of 1/3 and 1
        assert_abs_diff_eq!(
            pooled_iou([(&b, &a), (&a, &a)]).unwrap().unwrap(),
            400.0 / 6.0,
            epsilon = 1e-12
        );
        assert_eq!(mean_iou(&[70.0, 70.0, 70.0]).unwrap(), 70.0);
        assert!(mean_iou(&[]).is_err());
    }

    #[test]
    fn comparison_overall_and_csv() {
        let cats: Vec<String> = ["cable", "tower"].map(String::from).to_vec();
        let r = ComparisonReport::new(cats, vec![Some(50.0), Some(90.0)], vec![Some(60.0), None]).unwrap();
        assert_eq!(r.overall_original, 70.0);
        assert_eq!(r.overall_enhanced, 60.0);
        r.check(1e-9).unwrap();
        assert_eq!(r.delta(), vec![Some(10.0), None]);
        assert_eq!(
            r.to_csv(),
            "Model, cable, tower, Overall\nOriginal, 50.00, 90.00, 70.000\nEnhanced, 60.00, NA, 60.000\n"
        );
        let mut bad = r.clone();
        bad.overall_original = 71.0;
        assert!(bad.check(0.005).is_err());
    }

    #[test]
    fn aggregation_excludes_undefined() {
        let s = |e: Option<f64>, f: Option<Faithfulness>| SampleScores {
            ebpg: e,
            bbox: Some(10.0),
            iou: None,
            faithfulness: f,
            runtime_ms: 2.0,
            cost_s: Some(0.5),
        };
        let rows = [
            s(Some(40.0), Some(Faithfulness::from_scores(0.8, 0.6))),
            s(None, Some(Faithfulness::from_scores(0.5, 0.7))),
        ];
        let r = aggregate(Method::HiResCam, &rows, TimingMode::WallClock).unwrap();
        assert_eq!(r.ebpg, 40.0);
        assert_eq!(r.undefined.ebpg, 1);
        assert_eq!(r.undefined.iou, 2);
        assert!(r.iou.is_nan());
        assert_abs_diff_eq!(r.drop, 12.5, epsilon = 1e-12);
        assert_eq!(r.increase, 50.0);
        assert_abs_diff_eq!(r.time_s, 0.002, epsilon = 1e-15);
        assert_eq!(
            aggregate(Method::HiResCam, &rows, TimingMode::CostModel)
                .unwrap()
                .time_s,
            0.5
        );
        assert!(evaluation_csv(&[r]).starts_with(
            "Method, EPBG, BBox, IoU, Drop, Inc, Time(s)\nHiResCAM, 40.00, 10.00, NA, 12.50, 50.00, 0.0020\n"
        ));
        assert!(aggregate(Method::GradCam, &[], TimingMode::WallClock).is_err());
    }

    #[test]
    fn single_sample_evaluation() {
        let net = ToyNet::new(LabelSpace::new(["a", "b"]), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let image = Tensor::new(vec![3, 8, 8], (0..192).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let sample = EvalSample {
            image_id: 1,
            image,
            class: 1,
            gt: Mask::from_fn(8, 8, |r, c| r > 4 && c > 1),
        };
        let cfg = EvalConfig::default();
        let rows = evaluate_methods(&net, std::slice::from_ref(&sample), &Method::ALL, &cfg).unwrap();
        assert_eq!(rows.len(), 5);
        for (row, m) in rows.iter().zip(Method::ALL) {
            let (region, spec) = target_region(&net, &sample).unwrap();
            let map = explain(&net, &sample.image, m, 1, &region, spec).unwrap();
            let s = score_map(&net, &sample, &map, &region, 0.5).unwrap();
            assert_eq!(Some(row.ebpg), s.ebpg);
            assert_eq!(Some(row.drop), s.faithfulness.map(|f| f.drop));
            assert!(row.time_s > 0.0);
        }
        assert!(evaluate_methods(&net, &[], &Method::ALL, &cfg).is_err());
    }
}
