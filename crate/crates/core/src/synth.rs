//! Deterministic synthetic inspection scenes.
//!
//! Each image shows 1–3 bright, thin, near-horizontal "cables", at most one
//! brown "tower" blob, and up to two "road markings": short near-vertical
//! strokes with the same brightness as the cables. The training split
//! annotates cables narrower than they are drawn and leaves road markings
//! unannotated; the evaluation split annotates everything at full width.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::coco::{polygon_to_mask, write_coco, Annotation, Category, CocoDataset, ImageInfo, Segmentation};
use crate::error::{Error, Result};
use crate::imageio;
use crate::par::{self, Execution};
use crate::tensor::{Mask, Tensor};

pub const CABLE: &str = "cable";
pub const TOWER: &str = "tower";
pub const ROAD_MARKING: &str = "road_marking";
pub const CABLE_ID: u64 = 1;
pub const TOWER_ID: u64 = 2;
pub const ROAD_MARKING_ID: u64 = 3;

/// Free space kept between objects of different kinds, in pixels.
const CLEARANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub train_count: usize,
    pub test_count: usize,
    /// Cable width used by the training annotations.
    pub annotation_width: f64,
    /// Cable width as drawn and as annotated in the evaluation split.
    pub eval_gt_width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            train_count: 60,
            test_count: 20,
            annotation_width: 1.0,
            eval_gt_width: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::InvalidArgument("split counts must be positive".into()));
        }
        if self.height < 24 || self.width < 24 {
            return Err(Error::InvalidArgument("images must be at least 24x24".into()));
        }
        if !(self.annotation_width > 0.0) || self.annotation_width > self.eval_gt_width {
            return Err(Error::InvalidArgument(format!(
                "need 0 < annotation_width ({}) <= eval_gt_width ({})",
                self.annotation_width, self.eval_gt_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: u64,
    pub file_name: String,
    pub split: Split,
    pub image: Tensor,
}

/// Location of an unannotated road marking in a training image, as an expert
/// reviewing the explanations would point it out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfuserHint {
    pub image_id: u64,
    pub polygon: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub images: Vec<SynthImage>,
    pub train: CocoDataset,
    pub eval: CocoDataset,
    pub confusers: Vec<ConfuserHint>,
}

#[derive(Debug, Clone, Copy)]
struct Line {
    y0: f64,
    y1: f64,
    width: f64,
}

impl Line {
    fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.width, self.y1 - self.y0);
        ((x * dy - (y - self.y0) * dx) / (dx * dx + dy * dy).sqrt()).abs()
    }

    /// Band of perpendicular width `w` around the line, clipped to `0 <= x <= width`.
    fn band(&self, w: f64) -> Vec<f64> {
        let slope = (self.y1 - self.y0) / self.width;
        let half = w / 2.0 * (1.0 + slope * slope).sqrt();
        vec![
            0.0,
            self.y0 - half,
            self.width,
            self.y1 - half,
            self.width,
            self.y1 + half,
            0.0,
            self.y0 + half,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Stroke {
    cx: f64,
    cy: f64,
    length: f64,
    angle: f64,
}

impl Stroke {
    /// (along, across) offsets of a point from the stroke center.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (dx, dy) = (x - self.cx, y - self.cy);
        ((dx * c + dy * s).abs(), (-dx * s + dy * c).abs())
    }

    fn rectangle(&self, w: f64) -> Vec<f64> {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (hl, hw) = (self.length / 2.0, w / 2.0);
        [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)]
            .iter()
            .flat_map(|&(a, b)| [self.cx + a * c - b * s, self.cy + a * s + b * c])
            .collect()
    }
}

struct Scene {
    cables: Vec<Line>,
    tower: Option<Vec<f64>>,
    strokes: Vec<Stroke>,
    image: Tensor,
}

fn coverage(half_width: f64, distance: f64) -> f64 {
    (half_width + 0.5 - distance).clamp(0.0, 1.0)
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Vec<f64> {
    (0..20)
        .flat_map(|i| {
            let t = i as f64 / 20.0 * std::f64::consts::TAU;
            [cx + rx * t.cos(), cy + ry * t.sin()]
        })
        .collect()
}

fn render_scene(config: &SynthConfig, stream: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let (h, w) = (config.height, config.width);
    let (hf, wf) = (h as f64, w as f64);
    let drawn = config.eval_gt_width;
    let keep_out = drawn / 2.0 + CLEARANCE;

    let n_cables = rng.gen_range(1..=3);
    let mut cables: Vec<Line> = Vec::new();
    for _ in 0..60 {
        if cables.len() == n_cables {
            break;
        }
        let y0 = rng.gen_range(6.0..hf - 6.0);
        let y1 = (y0 + rng.gen_range(-hf / 3.0..hf / 3.0)).clamp(6.0, hf - 6.0);
        let separated = cables
            .iter()
            .all(|c| (c.y0 - y0).abs() >= 10.0 && (c.y1 - y1).abs() >= 10.0 && (c.y0 > y0) == (c.y1 > y1));
        if separated {
            cables.push(Line { y0, y1, width: wf });
        }
    }

    let clear_of_cables = |m: &Mask| {
        m.indices().all(|i| {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            cables.iter().all(|c| c.distance(x, y) >= keep_out)
        })
    };

    let mut tower = None;
    let mut occupied = Mask::new(h, w);
    if rng.gen_bool(0.75) {
        for _ in 0..50 {
            let (rx, ry) = (rng.gen_range(4.0..7.0), rng.gen_range(6.0..10.0));
            let cx = rng.gen_range(rx + 1.0..wf - rx - 1.0);
            let cy = rng.gen_range(ry + 1.0..hf - ry - 1.0);
            let poly = ellipse(cx, cy, rx, ry);
            let m = polygon_to_mask(std::slice::from_ref(&poly), h, w).expect("ellipse is valid");
            if !m.is_empty() && clear_of_cables(&m) {
                occupied = grow(&m, CLEARANCE as usize);
                tower = Some(poly);
                break;
            }
        }
    }

    let n_strokes = rng.gen_range(0..=2);
    let mut strokes: Vec<Stroke> = Vec::new();
    for _ in 0..80 {
        if strokes.len() == n_strokes {
            break;
        }
        let s = Stroke {
            cx: rng.gen_range(8.0..wf - 8.0),
            cy: rng.gen_range(9.0..hf - 9.0),
            length: rng.gen_range(10.0..16.0),
            angle: rng.gen_range(70.0f64..110.0).to_radians(),
        };
        let m = polygon_to_mask(&[s.rectangle(drawn)], h, w).expect("rectangle is valid");
        if !m.is_empty() && clear_of_cables(&m) && m.intersection_count(&occupied) == 0 {
            occupied.union_with(&grow(&m, CLEARANCE as usize));
            strokes.push(s);
        }
    }

    // background: dim, smoothly shaded, noisy
    let base = rng.gen_range(0.15..0.32);
    let tint: [f64; 3] = [
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.03..0.03),
    ];
    let (gx, gy) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        let (x, y) = ((p % w) as f64 / wf - 0.5, (p / w) as f64 / hf - 0.5);
        for (c, t) in tint.iter().enumerate() {
            data[c * plane + p] = base + t + gx * x + gy * y + rng.gen_range(-0.04..0.04);
        }
    }

    if let Some(poly) = &tower {
        let m = polygon_to_mask(std::slice::from_ref(poly), h, w).expect("valid");
        let color = [0.62, 0.34, 0.06];
        for p in m.indices() {
            for (c, v) in color.iter().enumerate() {
                data[c * plane + p] = v + rng.gen_range(-0.03..0.03);
            }
        }
    }

    let mut paint = |alpha: f64, p: usize, brightness: f64| {
        if alpha > 0.0 {
            for c in 0..3 {
                let v = &mut data[c * plane + p];
                *v = *v * (1.0 - alpha) + brightness * alpha;
            }
        }
    };
    for line in &cables {
        let brightness = rng.gen_range(0.85..1.0);
        for p in 0..plane {
            let (x, y) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
            paint(coverage(drawn / 2.0, line.distance(x, y)), p, brightness);
        }
    }
    for s in &strokes {
        let brightness = rng.gen_range(0.85..1.0);
        for p in 0..plane {
            let (x, y) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
            let (along, across) = s.local(x, y);
            let alpha = coverage(drawn / 2.0, across) * coverage(s.length / 2.0, along);
            paint(alpha, p, brightness);
        }
    }

    let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let image = imageio::quantize(&Tensor::new(vec![3, h, w], data).expect("finite"));
    Scene {
        cables,
        tower,
        strokes,
        image,
    }
}

/// Chebyshev dilation used only for placement bookkeeping.
fn grow(m: &Mask, r: usize) -> Mask {
    let (h, w) = m.dims();
    Mask::from_fn(h, w, |y, x| {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
        (y0..=y1).any(|yy| (x0..=x1).any(|xx| m.get(yy, xx)))
    })
}

fn polygon_annotation(id: u64, image_id: u64, category_id: u64, poly: Vec<f64>, h: usize, w: usize) -> Annotation {
    let mask = polygon_to_mask(std::slice::from_ref(&poly), h, w).expect("generated polygons are valid");
    let bbox = crate::coco::mask_to_bbox(&mask).expect("generated objects are nonempty");
    Annotation {
        id,
        image_id,
        category_id,
        segmentation: Segmentation::Polygons(vec![poly]),
        area: mask.count() as f64,
        bbox,
        iscrowd: false,
        extra: Map::new(),
    }
}

fn category(id: u64, name: &str) -> Category {
    Category {
        id,
        name: name.into(),
        supercategory: None,
        extra: Map::new(),
    }
}

/// Generates both splits; identical configs give identical output.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    generate_with(config, Execution::default())
}

pub fn generate_with(config: &SynthConfig, exec: Execution) -> Result<SynthDataset> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let total = config.train_count + config.test_count;
    let scenes = par::map_range(exec, total, |i| render_scene(config, i as u64));

    let mut train = CocoDataset {
        categories: vec![category(CABLE_ID, CABLE), category(TOWER_ID, TOWER)],
        ..CocoDataset::default()
    };
    let mut eval = CocoDataset {
        categories: vec![
            category(CABLE_ID, CABLE),
            category(TOWER_ID, TOWER),
            category(ROAD_MARKING_ID, ROAD_MARKING),
        ],
        ..CocoDataset::default()
    };
    let mut images = Vec::with_capacity(total);
    let mut confusers = Vec::new();
    let (mut train_ann, mut eval_ann) = (1u64, 1u64);

    for (i, scene) in scenes.into_iter().enumerate() {
        let id = i as u64 + 1;
        let (split, file_name) = if i < config.train_count {
            (Split::Train, format!("train_{:04}.png", i + 1))
        } else {
            (Split::Eval, format!("eval_{:04}.png", i + 1 - config.train_count))
        };
        let info = ImageInfo {
            id,
            width: w,
            height: h,
            file_name: file_name.clone(),
            extra: Map::new(),
        };
        match split {
            Split::Train => {
                train.images.push(info);
                for line in &scene.cables {
                    let poly = line.band(config.annotation_width);
                    train
                        .annotations
                        .push(polygon_annotation(train_ann, id, CABLE_ID, poly, h, w));
                    train_ann += 1;
                }
                if let Some(poly) = &scene.tower {
                    train
                        .annotations
                        .push(polygon_annotation(train_ann, id, TOWER_ID, poly.clone(), h, w));
                    train_ann += 1;
                }
                for s in &scene.strokes {
                    confusers.push(ConfuserHint {
                        image_id: id,
                        polygon: s.rectangle(config.eval_gt_width),
                    });
                }
            }
            Split::Eval => {
                eval.images.push(info);
                for line in &scene.cables {
                    let poly = line.band(config.eval_gt_width);
                    eval.annotations
                        .push(polygon_annotation(eval_ann, id, CABLE_ID, poly, h, w));
                    eval_ann += 1;
                }
                if let Some(poly) = &scene.tower {
                    eval.annotations
                        .push(polygon_annotation(eval_ann, id, TOWER_ID, poly.clone(), h, w));
                    eval_ann += 1;
                }
                for s in &scene.strokes {
                    let poly = s.rectangle(config.eval_gt_width);
                    eval.annotations
                        .push(polygon_annotation(eval_ann, id, ROAD_MARKING_ID, poly, h, w));
                    eval_ann += 1;
                }
            }
        }
        images.push(SynthImage {
            id,
            file_name,
            split,
            image: scene.image,
        });
    }
    train.validate()?;
    eval.validate()?;
    Ok(SynthDataset {
        images,
        train,
        eval,
        confusers,
    })
}

impl SynthDataset {
    pub fn image(&self, id: u64) -> Option<&Tensor> {
        self.images.iter().find(|i| i.id == id).map(|i| &i.image)
    }

    /// Writes `images/*.png`, `train.json`, `eval.json` and `confusers.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let image_dir = dir.join("images");
        fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
        for img in &self.images {
            imageio::save_image(image_dir.join(&img.file_name), &img.image)?;
        }
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("train.json", write_coco(&self.train))?;
        write("eval.json", write_coco(&self.eval))?;
        write("confusers.json", serde_json::to_string_pretty(&self.confusers)?)?;
        Ok(())
    }
}
