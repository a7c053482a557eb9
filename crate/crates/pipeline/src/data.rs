//! Loading dataset splits from disk and turning them into model inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use vqi_core::coco::{parse_coco, CocoDataset, LabelSpace};
use vqi_core::imageio;
use vqi_core::metrics::EvalSample;
use vqi_core::model::TrainSample;
use vqi_core::{Mask, Tensor};

use crate::require;

/// A COCO dataset with its decoded images.
#[derive(Debug, Clone)]
pub struct Split {
    pub coco: CocoDataset,
    pub images: BTreeMap<u64, Tensor>,
}

impl Split {
    pub fn image(&self, id: u64) -> Option<&Tensor> {
        self.images.get(&id)
    }
}

pub fn read_coco(path: &Path, stage: &'static str) -> Result<CocoDataset> {
    let path = require(path, stage)?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    parse_coco(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads `annotations` (a COCO file) with images from `data_dir/images`.
pub fn load_split(data_dir: &Path, annotations: &Path, stage: &'static str) -> Result<Split> {
    let coco = read_coco(annotations, stage)?;
    let mut images = BTreeMap::new();
    for info in &coco.images {
        let path = require(data_dir.join("images").join(&info.file_name), "synth")?;
        let img = imageio::load_image(&path).with_context(|| format!("loading {}", path.display()))?;
        if img.spatial() != (info.height, info.width) {
            anyhow::bail!(
                "{} is {:?} but the annotations say {}x{}",
                path.display(),
                img.spatial(),
                info.height,
                info.width
            );
        }
        images.insert(info.id, img);
    }
    Ok(Split { coco, images })
}

/// Foreground classes in category-id order.
pub fn label_space(dataset: &CocoDataset) -> LabelSpace {
    let mut cats: Vec<_> = dataset.categories.iter().collect();
    cats.sort_by_key(|c| c.id);
    LabelSpace::new(cats.iter().map(|c| c.name.clone()))
}

pub fn train_samples(split: &Split, labels: &LabelSpace) -> Result<Vec<TrainSample>> {
    split
        .coco
        .images
        .iter()
        .map(|info| {
            let image = split.images[&info.id].clone();
            Ok(TrainSample::from_coco(&split.coco, info.id, image, labels)?)
        })
        .collect()
}

/// Ground-truth mask of one class in one image.
pub fn class_mask(split: &Split, labels: &LabelSpace, image_id: u64, class: usize) -> Result<Mask> {
    let info = split
        .coco
        .image(image_id)
        .with_context(|| format!("unknown image {image_id}"))?;
    let map = labels.class_map(&split.coco, image_id)?;
    Ok(Mask::from_bits(
        info.height,
        info.width,
        map.iter().map(|&c| c as usize == class).collect(),
    )?)
}

/// Every (image, class) pair with nonempty ground truth, ordered by image
/// then class.
pub fn eval_samples(split: &Split, labels: &LabelSpace) -> Result<Vec<EvalSample>> {
    let mut out = Vec::new();
    for info in &split.coco.images {
        for class in 1..labels.class_count() {
            let gt = class_mask(split, labels, info.id, class)?;
            if gt.is_empty() {
                continue;
            }
            out.push(EvalSample {
                image_id: info.id,
                image: split.images[&info.id].clone(),
                class,
                gt,
            });
        }
    }
    Ok(out)
}
