//! COCO-style datasets: parsing with per-record validation, serialization,
//! and conversion of annotations into masks.
//!
//! Unknown fields on the document, images, categories and annotations are
//! kept in `extra` maps and written back unchanged.

mod raster;
mod rle;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tensor::Mask;

pub use raster::{mask_to_bbox, polygon_area, polygon_perimeter, polygon_to_mask};
pub use rle::{decode_counts_string, encode_counts_string, rle_decode, rle_encode, Rle};

/// Bounding boxes may overhang the image by this much (real exports carry
/// fractional polygon coordinates on the border).
const BBOX_TOLERANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub file_name: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segmentation {
    /// One or more flat `[x0, y0, x1, y1, ...]` rings.
    Polygons(Vec<Vec<f64>>),
    Rle(Rle),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SegmentationRepr {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [usize; 2], counts: CountsRepr },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CountsRepr {
    List(Vec<u32>),
    Compressed(String),
}

impl TryFrom<SegmentationRepr> for Segmentation {
    type Error = Error;

    fn try_from(repr: SegmentationRepr) -> Result<Self> {
        Ok(match repr {
            SegmentationRepr::Polygons(p) => Segmentation::Polygons(p),
            SegmentationRepr::Rle { size, counts } => {
                let (counts, compressed) = match counts {
                    CountsRepr::List(c) => (c, false),
                    CountsRepr::Compressed(s) => (decode_counts_string(&s)?, true),
                };
                Segmentation::Rle(Rle {
                    height: size[0],
                    width: size[1],
                    counts,
                    compressed,
                })
            }
        })
    }
}

impl From<&Segmentation> for SegmentationRepr {
    fn from(seg: &Segmentation) -> Self {
        match seg {
            Segmentation::Polygons(p) => SegmentationRepr::Polygons(p.clone()),
            Segmentation::Rle(r) => SegmentationRepr::Rle {
                size: [r.height, r.width],
                counts: if r.compressed {
                    CountsRepr::Compressed(r.to_compressed_string())
                } else {
                    CountsRepr::List(r.counts.clone())
                },
            },
        }
    }
}

impl Serialize for Segmentation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SegmentationRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Segmentation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SegmentationRepr::deserialize(d)?;
        Segmentation::try_from(repr).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: Segmentation,
    pub area: f64,
    pub bbox: [f64; 4],
    #[serde(serialize_with = "crowd_as_int")]
    pub iscrowd: bool,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn crowd_as_int<S: serde::Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    segmentation: Segmentation,
    #[serde(default)]
    area: Option<f64>,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    iscrowd: Option<Value>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

impl Annotation {
    pub fn mask(&self, height: usize, width: usize) -> Result<Mask> {
        annotation_mask(&self.segmentation, height, width)
    }
}

/// Rasterizes a segmentation at the given image size.
pub fn annotation_mask(seg: &Segmentation, height: usize, width: usize) -> Result<Mask> {
    match seg {
        Segmentation::Polygons(p) => polygon_to_mask(p, height, width),
        Segmentation::Rle(r) => {
            if (r.height, r.width) != (height, width) {
                return Err(Error::Rle(format!(
                    "size {}x{} does not match image {height}x{width}",
                    r.height, r.width
                )));
            }
            rle_decode(r)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CocoDataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
    /// Top-level sections other than the three above (`info`, `licenses`, ...).
    pub extra: Map<String, Value>,
}

impl CocoDataset {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn category_by_name(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    pub fn next_annotation_id(&self) -> u64 {
        self.annotations.iter().map(|a| a.id).max().map_or(1, |m| m + 1)
    }

    pub fn next_category_id(&self) -> u64 {
        self.categories.iter().map(|c| c.id).max().map_or(1, |m| m + 1)
    }

    /// Checks referential integrity and per-annotation geometry.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashMap::new();
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::coco(format!("image {}", img.id), "zero-sized image"));
            }
            if image_ids.insert(img.id, img).is_some() {
                return Err(Error::coco(format!("image {}", img.id), "duplicate image id"));
            }
        }
        let mut category_ids = HashSet::new();
        for cat in &self.categories {
            if !category_ids.insert(cat.id) {
                return Err(Error::coco(format!("category {}", cat.id), "duplicate category id"));
            }
        }
        let mut ann_ids = HashSet::new();
        for ann in &self.annotations {
            let record = format!("annotation {}", ann.id);
            if !ann_ids.insert(ann.id) {
                return Err(Error::coco(record, "duplicate annotation id"));
            }
            let img = image_ids
                .get(&ann.image_id)
                .ok_or_else(|| Error::coco(&record, format!("dangling image_id {}", ann.image_id)))?;
            if !category_ids.contains(&ann.category_id) {
                return Err(Error::coco(
                    &record,
                    format!("dangling category_id {}", ann.category_id),
                ));
            }
            validate_segmentation(&ann.segmentation, img)
                .map_err(|reason| Error::coco(&record, format!("malformed segmentation: {reason}")))?;
            if !(ann.area > 0.0) {
                return Err(Error::coco(&record, format!("non-positive area {}", ann.area)));
            }
            let [x, y, w, h] = ann.bbox;
            let inside = x >= -BBOX_TOLERANCE
                && y >= -BBOX_TOLERANCE
                && w >= 0.0
                && h >= 0.0
                && x + w <= img.width as f64 + BBOX_TOLERANCE
                && y + h <= img.height as f64 + BBOX_TOLERANCE;
            if !inside {
                return Err(Error::coco(&record, format!("bbox {:?} outside image", ann.bbox)));
            }
        }
        Ok(())
    }
}

fn validate_segmentation(seg: &Segmentation, img: &ImageInfo) -> std::result::Result<(), String> {
    match seg {
        Segmentation::Polygons(polys) => {
            if polys.is_empty() {
                return Err("empty polygon list".into());
            }
            for p in polys {
                if p.len() < 6 || p.len() % 2 != 0 {
                    return Err(format!("polygon with {} coordinates", p.len()));
                }
                if p.iter().any(|v| !v.is_finite()) {
                    return Err("non-finite polygon coordinate".into());
                }
            }
            Ok(())
        }
        Segmentation::Rle(r) => {
            if (r.height, r.width) != (img.height, img.width) {
                return Err(format!(
                    "rle size {}x{} differs from image {}x{}",
                    r.height, r.width, img.height, img.width
                ));
            }
            r.validate().map_err(|e| e.to_string())
        }
    }
}

/// Parses and validates a COCO JSON document.
pub fn parse_coco(json_text: &str) -> Result<CocoDataset> {
    let doc: Value = serde_json::from_str(json_text)?;
    let Value::Object(mut top) = doc else {
        return Err(Error::coco("document", "top level is not an object"));
    };
    let mut take_array = |key: &str, required: bool| -> Result<Vec<Value>> {
        match top.remove(key) {
            Some(Value::Array(items)) => Ok(items),
            Some(_) => Err(Error::coco(key, "expected an array")),
            None if required => Err(Error::coco("document", format!("missing field `{key}`"))),
            None => Ok(Vec::new()),
        }
    };
    let raw_images = take_array("images", true)?;
    let raw_categories = take_array("categories", true)?;
    let raw_annotations = take_array("annotations", false)?;

    let images = raw_images
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let record = record_name("image", i, &v);
            serde_json::from_value(v).map_err(|e| Error::coco(record, e.to_string()))
        })
        .collect::<Result<Vec<ImageInfo>>>()?;
    let categories = raw_categories
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let record = record_name("category", i, &v);
            serde_json::from_value(v).map_err(|e| Error::coco(record, e.to_string()))
        })
        .collect::<Result<Vec<Category>>>()?;

    let sizes: HashMap<u64, (usize, usize)> = images.iter().map(|i| (i.id, (i.height, i.width))).collect();
    let annotations = raw_annotations
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let record = record_name("annotation", i, &v);
            let raw: RawAnnotation = serde_json::from_value(v).map_err(|e| Error::coco(&record, e.to_string()))?;
            finish_annotation(raw, &sizes).map_err(|reason| Error::coco(&record, reason))
        })
        .collect::<Result<Vec<Annotation>>>()?;

    let dataset = CocoDataset {
        images,
        annotations,
        categories,
        extra: top,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn record_name(kind: &str, index: usize, v: &Value) -> String {
    match v.get("id").and_then(Value::as_u64) {
        Some(id) => format!("{kind} {id}"),
        None => format!("{kind} #{index}"),
    }
}

fn finish_annotation(
    raw: RawAnnotation,
    sizes: &HashMap<u64, (usize, usize)>,
) -> std::result::Result<Annotation, String> {
    let iscrowd = match raw.iscrowd {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => b,
        Some(Value::Number(n)) => n.as_u64().map(|v| v != 0).unwrap_or(true),
        Some(other) => return Err(format!("iscrowd must be 0/1, got {other}")),
    };
    let (area, bbox) = match (raw.area, raw.bbox) {
        (Some(a), Some(b)) => (a, b),
        (area, bbox) => {
            // fill in what the file left out from the rasterized geometry
            let &(h, w) = sizes
                .get(&raw.image_id)
                .ok_or_else(|| format!("dangling image_id {}", raw.image_id))?;
            let mask = annotation_mask(&raw.segmentation, h, w).map_err(|e| format!("malformed segmentation: {e}"))?;
            let b = match bbox {
                Some(b) => b,
                None => mask_to_bbox(&mask).map_err(|e| e.to_string())?,
            };
            (area.unwrap_or(mask.count() as f64), b)
        }
    };
    Ok(Annotation {
        id: raw.id,
        image_id: raw.image_id,
        category_id: raw.category_id,
        segmentation: raw.segmentation,
        area,
        bbox,
        iscrowd,
        extra: raw.extra,
    })
}

/// Serializes a dataset to pretty-printed COCO JSON.
pub fn write_coco(dataset: &CocoDataset) -> String {
    let mut top = Map::new();
    top.insert("images".into(), serde_json::to_value(&dataset.images).expect("images"));
    top.insert(
        "annotations".into(),
        serde_json::to_value(&dataset.annotations).expect("annotations"),
    );
    top.insert(
        "categories".into(),
        serde_json::to_value(&dataset.categories).expect("categories"),
    );
    for (k, v) in &dataset.extra {
        top.insert(k.clone(), v.clone());
    }
    serde_json::to_string_pretty(&Value::Object(top)).expect("dataset serializes")
}

/// Ordered foreground class names; class index `i + 1` is `names[i]` and
/// index 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub names: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    /// The four TTPLA categories.
    pub fn ttpla() -> Self {
        Self::new(["cable", "tower_wooden", "tower_lattice", "tower_tucohy"])
    }

    /// Number of classes including background.
    pub fn class_count(&self) -> usize {
        self.names.len() + 1
    }

    pub fn class_of(&self, category_name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == category_name).map(|i| i + 1)
    }

    pub fn name(&self, class: usize) -> &str {
        if class == 0 {
            "background"
        } else {
            &self.names[class - 1]
        }
    }

    /// Per-pixel class indices for one image; later annotations overwrite
    /// earlier ones and categories outside the label space are ignored.
    pub fn class_map(&self, dataset: &CocoDataset, image_id: u64) -> Result<Vec<u8>> {
        let img = dataset
            .image(image_id)
            .ok_or_else(|| Error::coco(format!("image {image_id}"), "unknown image"))?;
        let mut map = vec![0u8; img.height * img.width];
        for ann in dataset.annotations_for(image_id) {
            let Some(class) = dataset.category(ann.category_id).and_then(|c| self.class_of(&c.name)) else {
                continue;
            };
            let mask = ann.mask(img.height, img.width)?;
            for i in mask.indices() {
                map[i] = class as u8;
            }
        }
        Ok(map)
    }
}
