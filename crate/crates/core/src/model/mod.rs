//! Segmentation model contract and the pieces shared by every implementation:
//! per-pixel class scores, the Dice loss and the region score that CAM
//! gradients differentiate.

mod bundle;
mod toynet;

use serde::{Deserialize, Serialize};

use crate::coco::Rle;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tensor::{Mask, Tensor};

pub use bundle::{load_bundle, write_bundle, BundleMeta, TensorBundle};
pub use toynet::{Params, ToyNet, TrainConfig, TrainSample, TARGET_CHANNELS};

/// Dice smoothing term.
pub const DICE_EPSILON: f64 = 1.0;

/// Logits and per-pixel softmax probabilities, both C×H×W.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    pub logits: Tensor,
    pub probabilities: Tensor,
}

impl ScoreMaps {
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        if logits.rank() != 3 {
            return Err(Error::Shape(format!("logits must be CxHxW, got {:?}", logits.shape())));
        }
        let probabilities = softmax_channels(&logits)?;
        Ok(Self { logits, probabilities })
    }

    pub fn class_count(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.logits.spatial()
    }

    /// Per-pixel argmax; ties go to the lower class index.
    pub fn argmax(&self) -> Vec<u8> {
        let c_count = self.class_count();
        let (h, w) = self.dims();
        let plane = h * w;
        let z = self.logits.data();
        (0..plane)
            .map(|p| {
                let mut best = 0;
                for c in 1..c_count {
                    if z[c * plane + p] > z[best * plane + p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn predicted_mask(&self, class: usize) -> Mask {
        let (h, w) = self.dims();
        let labels = self.argmax();
        Mask::from_bits(h, w, labels.iter().map(|&l| l as usize == class).collect()).expect("argmax covers every pixel")
    }

    /// Mean class probability over `region`.
    pub fn mean_probability(&self, class: usize, region: &Mask) -> Result<f64> {
        mean_over_region(&self.probabilities, class, region)
    }
}

fn softmax_channels(logits: &Tensor) -> Result<Tensor> {
    let c_count = logits.shape()[0];
    let plane = logits.shape()[1] * logits.shape()[2];
    Tensor::new(logits.shape().to_vec(), softmax(logits.data(), c_count, plane))
}

/// Softmax across the leading (class) axis of a flat C×plane buffer.
pub(crate) fn softmax(z: &[f64], c_count: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for p in 0..plane {
        let max = (0..c_count).map(|c| z[c * plane + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..c_count {
            let e = (z[c * plane + p] - max).exp();
            out[c * plane + p] = e;
            total += e;
        }
        for c in 0..c_count {
            // positive even when a logit gap underflows exp()
            out[c * plane + p] = (out[c * plane + p] / total).max(f64::MIN_POSITIVE);
        }
    }
    out
}

fn mean_over_region(t: &Tensor, class: usize, region: &Mask) -> Result<f64> {
    let (h, w) = t.spatial();
    if region.dims() != (h, w) {
        return Err(Error::Shape(format!("region {:?} vs scores {h}x{w}", region.dims())));
    }
    if class >= t.shape()[0] {
        return Err(Error::InvalidArgument(format!("class {class} out of range")));
    }
    let n = region.count();
    if n == 0 {
        return Err(Error::InvalidArgument("empty region".into()));
    }
    let plane = t.channel_slice(class);
    Ok(region.indices().map(|i| plane[i]).sum::<f64>() / n as f64)
}

/// Mean logit of `class` over `region`: the scalar that CAM gradients
/// differentiate for segmentation outputs.
pub fn region_score(scores: &ScoreMaps, class: usize, region: &Mask) -> Result<f64> {
    mean_over_region(&scores.logits, class, region)
}

/// Mean over classes of `1 - (2·Σpg + ε) / (Σp + Σg + ε)`.
///
/// `gt[c]` is the ground-truth mask of class `c`; probabilities are C×H×W.
pub fn dice_loss(probabilities: &Tensor, gt: &[Mask]) -> Result<f64> {
    if probabilities.rank() != 3 || probabilities.shape()[0] != gt.len() {
        return Err(Error::Shape(format!(
            "{:?} probabilities vs {} ground-truth masks",
            probabilities.shape(),
            gt.len()
        )));
    }
    let dims = probabilities.spatial();
    let mut total = 0.0;
    for (c, g) in gt.iter().enumerate() {
        if g.dims() != dims {
            return Err(Error::Shape(format!("mask {c} is {:?}, expected {dims:?}", g.dims())));
        }
        let p = probabilities.channel_slice(c);
        let (mut inter, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
        for (&pv, &gv) in p.iter().zip(g.bits()) {
            let gv = if gv { 1.0 } else { 0.0 };
            inter += pv * gv;
            sum_p += pv;
            sum_g += gv;
        }
        total += 1.0 - (2.0 * inter + DICE_EPSILON) / (sum_p + sum_g + DICE_EPSILON);
    }
    Ok(total / gt.len() as f64)
}

/// Where the CAM target region came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSpec {
    /// The model's predicted mask for the class.
    Predicted,
    /// The ground-truth mask (used when the prediction is empty).
    GroundTruth,
    /// An explicit mask.
    Mask(Rle),
}

/// Target-layer activations and the gradient of the region score with
/// respect to them, both K×h×w.
#[derive(Debug, Clone)]
pub struct Capture {
    pub activations: Tensor,
    pub gradients: Tensor,
    pub scores: ScoreMaps,
}

/// A segmentation model that CAM methods and faithfulness metrics can query.
pub trait SegModel: Send + Sync {
    fn class_count(&self) -> usize;

    fn target_layer(&self) -> &str;

    fn forward(&self, image: &Tensor) -> Result<ScoreMaps>;

    /// Activations of the target layer and `∂ region_score / ∂ activations`.
    fn capture(&self, image: &Tensor, region: &Mask, class: usize) -> Result<Capture>;

    /// Whether `forward` actually evaluates the model on new inputs. Replayed
    /// bundles return false; perturbation methods refuse to run on them.
    fn is_live(&self) -> bool {
        true
    }

    /// Multiply-accumulates of one forward pass at `h`×`w`, if known.
    fn forward_macs(&self, _height: usize, _width: usize) -> Option<u64> {
        None
    }
}

/// Forward passes over a batch of images, in input order.
pub fn forward_batch(model: &dyn SegModel, images: &[Tensor], exec: Execution) -> Result<Vec<ScoreMaps>> {
    par::try_map(exec, images, |img| model.forward(img))
}
