//! Expert-driven annotation edits: enlarging slender objects and adding
//! annotations for objects the model confuses with a target class.

use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::coco::{
    annotation_mask, mask_to_bbox, rle_decode, rle_encode, Annotation, Category, CocoDataset, Rle, Segmentation,
};
use crate::error::{Error, Result};
use crate::tensor::Mask;

/// Dilation by a (2r+1)×(2r+1) square, clipped to the mask bounds.
/// Computed separably with sliding-window counts.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let horizontal = window_any(mask.bits(), h, w, radius, true);
    let bits = window_any(&horizontal, h, w, radius, false);
    Mask::from_bits(h, w, bits).expect("same dimensions")
}

fn window_any(bits: &[bool], h: usize, w: usize, r: usize, along_rows: bool) -> Vec<bool> {
    let (lines, len) = if along_rows { (h, w) } else { (w, h) };
    let at = |line: usize, i: usize| if along_rows { line * w + i } else { i * w + line };
    let mut out = vec![false; h * w];
    for line in 0..lines {
        // count of set bits in [i - r, i + r]
        let mut count = bits[at(line, 0)..]
            .iter()
            .step_by(if along_rows { 1 } else { w })
            .take(r.min(len - 1) + 1)
            .filter(|&&b| b)
            .count();
        for i in 0..len {
            out[at(line, i)] = count > 0;
            if i + r + 1 < len && bits[at(line, i + r + 1)] {
                count += 1;
            }
            if i >= r && bits[at(line, i - r)] {
                count -= 1;
            }
        }
    }
    out
}

/// Rasterizes `ann`, dilates it by `radius` and stores the result as an
/// uncompressed RLE with recomputed area and bbox.
pub fn enlarge_annotation(ann: &Annotation, radius: usize, height: usize, width: usize) -> Result<Annotation> {
    let grown = dilate(&ann.mask(height, width)?, radius);
    let mut out = ann.clone();
    out.area = grown.count() as f64;
    out.bbox = mask_to_bbox(&grown)?;
    out.segmentation = Segmentation::Rle(rle_encode(&grown));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Polygon(Vec<Vec<f64>>),
    Mask(Rle),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentationOp {
    Enlarge {
        category_id: u64,
        radius: usize,
    },
    AddAnnotation {
        image_id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category_id: Option<u64>,
        /// Required when the category does not exist yet.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category_name: Option<String>,
        geometry: Geometry,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedOp {
    #[serde(flatten)]
    pub op: AugmentationOp,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub ops: Vec<PlannedOp>,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub timestamp: String,
}

impl AugmentationPlan {
    pub fn push(&mut self, op: AugmentationOp, rationale: impl Into<String>) {
        self.ops.push(PlannedOp {
            op,
            rationale: rationale.into(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub index: usize,
    pub kind: String,
    pub annotations_touched: usize,
    /// Foreground pixels gained (or, for an add, the new annotation's area).
    pub pixel_delta: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new_annotation_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new_category_id: Option<u64>,
    /// Set when an add duplicates an existing annotation of the same image
    /// and category.
    pub duplicate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub annotations_before: usize,
    pub annotations_after: usize,
    pub categories_before: usize,
    pub categories_after: usize,
    pub ops: Vec<OpReport>,
}

fn op_error(index: usize, reason: impl Into<String>) -> Error {
    Error::Augment {
        index,
        reason: reason.into(),
    }
}

fn geometry_mask(geometry: &Geometry, height: usize, width: usize) -> std::result::Result<Mask, String> {
    let mask = match geometry {
        Geometry::Polygon(polys) => {
            for poly in polys {
                if poly.len() < 6 || poly.len() % 2 != 0 {
                    return Err("polygon needs an even number of coordinates, at least 6".into());
                }
                let inside = poly.chunks(2).all(|p| {
                    p[0].is_finite()
                        && p[1].is_finite()
                        && (0.0..=width as f64).contains(&p[0])
                        && (0.0..=height as f64).contains(&p[1])
                });
                if !inside {
                    return Err("polygon lies outside the image".into());
                }
            }
            annotation_mask(&Segmentation::Polygons(polys.clone()), height, width).map_err(|e| e.to_string())?
        }
        Geometry::Mask(rle) => {
            if (rle.height, rle.width) != (height, width) {
                return Err(format!(
                    "mask is {}x{}, image is {height}x{width}",
                    rle.height, rle.width
                ));
            }
            rle_decode(rle).map_err(|e| e.to_string())?
        }
    };
    if mask.is_empty() {
        return Err("geometry covers no pixels".into());
    }
    Ok(mask)
}

fn apply_op(data: &mut CocoDataset, index: usize, op: &AugmentationOp) -> Result<OpReport> {
    match op {
        AugmentationOp::Enlarge { category_id, radius } => {
            if data.category(*category_id).is_none() {
                return Err(op_error(index, format!("unknown category_id {category_id}")));
            }
            let sizes: std::collections::HashMap<u64, (usize, usize)> =
                data.images.iter().map(|i| (i.id, (i.height, i.width))).collect();
            let (mut touched, mut delta) = (0, 0i64);
            for ann in data.annotations.iter_mut().filter(|a| a.category_id == *category_id) {
                let &(h, w) = sizes
                    .get(&ann.image_id)
                    .ok_or_else(|| op_error(index, format!("annotation {} has no image", ann.id)))?;
                let before = ann.mask(h, w).map_err(|e| op_error(index, e.to_string()))?.count() as i64;
                *ann = enlarge_annotation(ann, *radius, h, w).map_err(|e| op_error(index, e.to_string()))?;
                delta += ann.area as i64 - before;
                touched += 1;
            }
            Ok(OpReport {
                index,
                kind: "enlarge".into(),
                annotations_touched: touched,
                pixel_delta: delta,
                new_annotation_id: None,
                new_category_id: None,
                duplicate: false,
            })
        }
        AugmentationOp::AddAnnotation {
            image_id,
            category_id,
            category_name,
            geometry,
        } => {
            let img = data
                .image(*image_id)
                .ok_or_else(|| op_error(index, format!("unknown image_id {image_id}")))?;
            let (h, w) = (img.height, img.width);
            let mask = geometry_mask(geometry, h, w).map_err(|r| op_error(index, r))?;

            let existing = match (category_id, category_name) {
                (Some(id), _) => data.category(*id).map(|c| c.id),
                (None, Some(name)) => data.category_by_name(name).map(|c| c.id),
                (None, None) => return Err(op_error(index, "category_id or category_name is required")),
            };
            let mut new_category_id = None;
            let cat_id = match existing {
                Some(id) => id,
                None => {
                    let Some(name) = category_name.as_ref().filter(|n| !n.is_empty()) else {
                        return Err(op_error(index, "a new category needs a name"));
                    };
                    if data.category_by_name(name).is_some() {
                        return Err(op_error(
                            index,
                            format!("category name {name:?} already has another id"),
                        ));
                    }
                    let id = category_id.unwrap_or_else(|| data.next_category_id());
                    data.categories.push(Category {
                        id,
                        name: name.clone(),
                        supercategory: None,
                        extra: Map::new(),
                    });
                    new_category_id = Some(id);
                    id
                }
            };

            let mut duplicate = false;
            for other in data.annotations_for(*image_id).filter(|a| a.category_id == cat_id) {
                if other.mask(h, w).map_err(|e| op_error(index, e.to_string()))? == mask {
                    duplicate = true;
                    break;
                }
            }
            let segmentation = match geometry {
                Geometry::Polygon(p) => Segmentation::Polygons(p.clone()),
                Geometry::Mask(rle) => Segmentation::Rle(rle.clone()),
            };
            let id = data.next_annotation_id();
            data.annotations.push(Annotation {
                id,
                image_id: *image_id,
                category_id: cat_id,
                segmentation,
                area: mask.count() as f64,
                bbox: mask_to_bbox(&mask)?,
                iscrowd: false,
                extra: Map::new(),
            });
            Ok(OpReport {
                index,
                kind: "add_annotation".into(),
                annotations_touched: 1,
                pixel_delta: mask.count() as i64,
                new_annotation_id: Some(id),
                new_category_id,
                duplicate,
            })
        }
    }
}

/// Applies the ops in order to a copy of `dataset`. The first failing op
/// aborts the whole plan.
pub fn apply_plan(dataset: &CocoDataset, plan: &AugmentationPlan) -> Result<(CocoDataset, ChangeReport)> {
    let mut data = dataset.clone();
    let mut report = ChangeReport {
        annotations_before: dataset.annotations.len(),
        categories_before: dataset.categories.len(),
        ..ChangeReport::default()
    };
    for (index, step) in plan.ops.iter().enumerate() {
        report.ops.push(apply_op(&mut data, index, &step.op)?);
    }
    data.validate()?;
    report.annotations_after = data.annotations.len();
    report.categories_after = data.categories.len();
    Ok((data, report))
}
