//! Replay adapter for tensors exported from an external segmentation model.
//!
//! A bundle is a directory holding `input.png`, `activations.npy` (K×h×w),
//! `gradients.npy` (K×h×w), `logits.npy` (C×H×W) and `meta.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Capture, RegionSpec, ScoreMaps, SegModel};
use crate::error::{Error, Result};
use crate::imageio;
use crate::npy::{self, Dtype};
use crate::tensor::{Mask, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    /// Class whose region score the stored gradients differentiate.
    pub class: usize,
    pub region: RegionSpec,
    pub layer: String,
}

/// Stored tensors of one explained prediction. `forward` replays the stored
/// logits whatever the input, so only gradient-based CAMs and plausibility
/// metrics can use it.
#[derive(Debug, Clone)]
pub struct TensorBundle {
    pub image: Tensor,
    pub activations: Tensor,
    pub gradients: Tensor,
    pub scores: ScoreMaps,
    pub meta: BundleMeta,
}

fn read_required(dir: &Path, file: &str, what: &str) -> Result<Tensor> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(Error::Model(format!("bundle {}: missing {what}", dir.display())));
    }
    npy::read(path)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<TensorBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::Model(format!("bundle {}: missing meta", dir.display())));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: BundleMeta = serde_json::from_str(&text)?;
    let image_path = dir.join("input.png");
    if !image_path.exists() {
        return Err(Error::Model(format!("bundle {}: missing input", dir.display())));
    }
    let image = imageio::load_image(&image_path)?;
    let activations = read_required(dir, "activations.npy", "activations")?;
    let gradients = read_required(dir, "gradients.npy", "gradients")?;
    let logits = read_required(dir, "logits.npy", "logits")?;

    if activations.rank() != 3 || activations.shape() != gradients.shape() {
        return Err(Error::Shape(format!(
            "activations {:?} and gradients {:?} must both be KxHxW",
            activations.shape(),
            gradients.shape()
        )));
    }
    if logits.rank() != 3 || logits.spatial() != image.spatial() {
        return Err(Error::Shape(format!(
            "logits {:?} do not match the {:?} input",
            logits.shape(),
            image.spatial()
        )));
    }
    if meta.class >= logits.shape()[0] {
        return Err(Error::Model(format!(
            "meta class {} but logits have {} classes",
            meta.class,
            logits.shape()[0]
        )));
    }
    Ok(TensorBundle {
        image,
        activations,
        gradients,
        scores: ScoreMaps::from_logits(logits)?,
        meta,
    })
}

/// Writes a bundle in the layout `load_bundle` expects.
pub fn write_bundle(dir: impl AsRef<Path>, bundle: &TensorBundle) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    imageio::save_image(dir.join("input.png"), &bundle.image)?;
    npy::write(dir.join("activations.npy"), &bundle.activations, Dtype::F32)?;
    npy::write(dir.join("gradients.npy"), &bundle.gradients, Dtype::F32)?;
    npy::write(dir.join("logits.npy"), &bundle.scores.logits, Dtype::F32)?;
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&bundle.meta)?).map_err(|e| Error::io(&path, e))
}

impl SegModel for TensorBundle {
    fn class_count(&self) -> usize {
        self.scores.class_count()
    }

    fn target_layer(&self) -> &str {
        &self.meta.layer
    }

    fn forward(&self, _image: &Tensor) -> Result<ScoreMaps> {
        Ok(self.scores.clone())
    }

    fn capture(&self, _image: &Tensor, _region: &Mask, class: usize) -> Result<Capture> {
        if class != self.meta.class {
            return Err(Error::Model(format!(
                "bundle holds gradients for class {}, not {class}",
                self.meta.class
            )));
        }
        Ok(Capture {
            activations: self.activations.clone(),
            gradients: self.gradients.clone(),
            scores: self.scores.clone(),
        })
    }

    fn is_live(&self) -> bool {
        false
    }
}
