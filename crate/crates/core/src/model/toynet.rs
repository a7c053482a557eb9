//! A three-layer fully convolutional segmentation network with hand-written
//! backpropagation:
//!
//! ```text
//! conv1 3x3 (3 -> 8) + ReLU -> conv2 3x3 (8 -> 16) + ReLU -> conv3 1x1 (16 -> C)
//! ```
//!
//! Both 3×3 convolutions are zero-padded by one pixel, so the logits keep the
//! input resolution. The output of the second ReLU is the CAM target layer.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Capture, ScoreMaps, SegModel, DICE_EPSILON};
use crate::coco::LabelSpace;
use crate::error::{Error, Result};
use crate::npy::{self, Dtype};
use crate::tensor::{Mask, Tensor};

const IN_CHANNELS: usize = 3;
const HIDDEN_CHANNELS: usize = 8;
/// Channels of the target layer.
pub const TARGET_CHANNELS: usize = 16;
const TARGET_LAYER: &str = "conv2";
/// Subtracted from every input pixel before the first convolution.
const INPUT_CENTER: f64 = 0.5;

/// Network weights. Convolution kernels are stored `[out][in][ky][kx]`; the
/// 1×1 head is `[class][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub conv3_w: Vec<f64>,
    pub conv3_b: Vec<f64>,
}

impl Params {
    fn zeros(classes: usize) -> Self {
        Self {
            conv1_w: vec![0.0; HIDDEN_CHANNELS * IN_CHANNELS * 9],
            conv1_b: vec![0.0; HIDDEN_CHANNELS],
            conv2_w: vec![0.0; TARGET_CHANNELS * HIDDEN_CHANNELS * 9],
            conv2_b: vec![0.0; TARGET_CHANNELS],
            conv3_w: vec![0.0; classes * TARGET_CHANNELS],
            conv3_b: vec![0.0; classes],
        }
    }

    fn init(classes: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(classes);
        let mut he = |w: &mut [f64], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in w {
                *v = rng.gen_range(-bound..bound);
            }
        };
        he(&mut p.conv1_w, IN_CHANNELS * 9);
        he(&mut p.conv2_w, HIDDEN_CHANNELS * 9);
        he(&mut p.conv3_w, TARGET_CHANNELS);
        p
    }

    fn slices(&self) -> [&[f64]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.conv3_w,
            &self.conv3_b,
        ]
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.conv3_w,
            &mut self.conv3_b,
        ]
    }

    /// `self += alpha * other`
    fn axpy(&mut self, alpha: f64, other: &Params) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    fn scale(&mut self, alpha: f64) {
        for dst in self.slices_mut() {
            dst.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn classes(&self) -> usize {
        self.conv3_b.len()
    }

    /// All parameters flattened in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn unflatten_into(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for dst in self.slices_mut() {
            let n = dst.len();
            dst.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

// Hidden activations are stored zero-padded: each plane is (h+2)×(w+2) with
// pixel (y, x) at (y+1)·(w+2) + x+1. With that layout every 3×3 tap is one
// contiguous axpy of length `span` starting at the tap offset.

struct Layout {
    h: usize,
    w: usize,
    stride: usize,
    plane: usize,
    span: usize,
    base: usize,
}

impl Layout {
    fn new(h: usize, w: usize) -> Self {
        let stride = w + 2;
        Self {
            h,
            w,
            stride,
            plane: (h + 2) * stride,
            span: (h - 1) * stride + w,
            base: stride + 1,
        }
    }

    fn tap(&self, ky: usize, kx: usize) -> usize {
        ky * self.stride + kx
    }

    fn pad(&self, compact: &[f64], channels: usize) -> Vec<f64> {
        let mut out = vec![0.0; channels * self.plane];
        for c in 0..channels {
            for y in 0..self.h {
                let src = &compact[(c * self.h + y) * self.w..][..self.w];
                out[c * self.plane + self.base + y * self.stride..][..self.w].copy_from_slice(src);
            }
        }
        out
    }

    fn unpad(&self, padded: &[f64], channels: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(channels * self.h * self.w);
        for c in 0..channels {
            for y in 0..self.h {
                out.extend_from_slice(&padded[c * self.plane + self.base + y * self.stride..][..self.w]);
            }
        }
        out
    }

    /// Zeroes the border cells of every plane.
    fn clear_border(&self, padded: &mut [f64]) {
        for p in padded.chunks_exact_mut(self.plane) {
            p[..self.stride].fill(0.0);
            p[(self.h + 1) * self.stride..].fill(0.0);
            for y in 1..=self.h {
                p[y * self.stride] = 0.0;
                p[y * self.stride + self.w + 1] = 0.0;
            }
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// The nine shifted views of a padded plane that feed output offsets `0..span`.
fn tap_views<'a>(lay: &Layout, plane: &'a [f64]) -> [&'a [f64]; 9] {
    std::array::from_fn(|t| &plane[lay.tap(t / 3, t % 3)..][..lay.span])
}

/// `dst[j] += Σ_t k[t]·src_t[j]` over the nine taps.
fn accumulate_taps(dst: &mut [f64], k: &[f64], src: [&[f64]; 9]) {
    let n = dst.len();
    let [s0, s1, s2, s3, s4, s5, s6, s7, s8] = src.map(|s| &s[..n]);
    for j in 0..n {
        dst[j] += k[0] * s0[j]
            + k[1] * s1[j]
            + k[2] * s2[j]
            + k[3] * s3[j]
            + k[4] * s4[j]
            + k[5] * s5[j]
            + k[6] * s6[j]
            + k[7] * s7[j]
            + k[8] * s8[j];
    }
}

/// `[Σ_j d[j]·src_t[j]]_t`, with two interleaved partial sums per tap.
fn tap_dots(d: &[f64], src: [&[f64]; 9]) -> [f64; 9] {
    let n = d.len();
    let src = src.map(|s| &s[..n]);
    let mut acc = [[0.0f64; 2]; 9];
    for j in 0..n / 2 {
        let (d0, d1) = (d[2 * j], d[2 * j + 1]);
        for t in 0..9 {
            acc[t][0] += d0 * src[t][2 * j];
            acc[t][1] += d1 * src[t][2 * j + 1];
        }
    }
    std::array::from_fn(|t| {
        let tail = if n % 2 == 1 { d[n - 1] * src[t][n - 1] } else { 0.0 };
        acc[t][0] + acc[t][1] + tail
    })
}

/// 3×3 convolution with zero padding 1, padded layout in and out.
fn conv3x3_padded(input: &[f64], cin: usize, lay: &Layout, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let cout = bias.len();
    let mut out = vec![0.0; cout * lay.plane];
    let views: Vec<[&[f64]; 9]> = input
        .chunks_exact(lay.plane)
        .take(cin)
        .map(|p| tap_views(lay, p))
        .collect();
    for (o, out_o) in out.chunks_exact_mut(lay.plane).enumerate() {
        let dst = &mut out_o[lay.base..lay.base + lay.span];
        dst.fill(bias[o]);
        for (i, v) in views.iter().enumerate() {
            accumulate_taps(dst, &weight[(o * cin + i) * 9..][..9], *v);
        }
    }
    lay.clear_border(&mut out);
    out
}

#[cfg(test)]
fn conv3x3(input: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let lay = Layout::new(h, w);
    let out = conv3x3_padded(&lay.pad(input, cin), cin, &lay, weight, bias);
    lay.unpad(&out, bias.len())
}

/// Gradients of a padded 3×3 convolution given `dout` (border cells zero);
/// `dinput` is only formed when requested. The input gradient is itself a
/// convolution of `dout` with the flipped, transposed kernel.
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    lay: &Layout,
    weight: &[f64],
    dout: &[f64],
    cout: usize,
    want_dinput: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut dweight = vec![0.0; cout * cin * 9];
    let mut dbias = vec![0.0; cout];
    let views: Vec<[&[f64]; 9]> = input
        .chunks_exact(lay.plane)
        .take(cin)
        .map(|p| tap_views(lay, p))
        .collect();
    for o in 0..cout {
        let dout_o = &dout[o * lay.plane + lay.base..][..lay.span];
        dbias[o] = dout_o.iter().sum();
        for (i, v) in views.iter().enumerate() {
            dweight[(o * cin + i) * 9..][..9].copy_from_slice(&tap_dots(dout_o, *v));
        }
    }
    let dinput = want_dinput.then(|| {
        let mut flipped = vec![0.0; cin * cout * 9];
        for o in 0..cout {
            for i in 0..cin {
                for t in 0..9 {
                    flipped[(i * cout + o) * 9 + 8 - t] = weight[(o * cin + i) * 9 + t];
                }
            }
        }
        conv3x3_padded(dout, cout, lay, &flipped, &vec![0.0; cin])
    });
    (dweight, dbias, dinput)
}

struct Forward {
    /// Padded layout.
    x: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    /// Compact C×H×W layout from here on.
    a2: Vec<f64>,
    logits: Vec<f64>,
}

fn head(params: &Params, a2: &[f64], plane: usize) -> Vec<f64> {
    let classes = params.classes();
    let mut logits = vec![0.0; classes * plane];
    for (c, out) in logits.chunks_exact_mut(plane).enumerate() {
        out.fill(params.conv3_b[c]);
        for k in 0..TARGET_CHANNELS {
            axpy(
                out,
                params.conv3_w[c * TARGET_CHANNELS + k],
                &a2[k * plane..(k + 1) * plane],
            );
        }
    }
    logits
}

fn forward_pass(params: &Params, image: &[f64], h: usize, w: usize) -> Forward {
    let lay = Layout::new(h, w);
    let centered: Vec<f64> = image.iter().map(|v| v - INPUT_CENTER).collect();
    let x = lay.pad(&centered, IN_CHANNELS);
    let z1 = conv3x3_padded(&x, IN_CHANNELS, &lay, &params.conv1_w, &params.conv1_b);
    let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
    let z2 = conv3x3_padded(&a1, HIDDEN_CHANNELS, &lay, &params.conv2_w, &params.conv2_b);
    let a2 = lay
        .unpad(&z2, TARGET_CHANNELS)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect::<Vec<_>>();
    let logits = head(params, &a2, h * w);
    Forward {
        x,
        z1,
        a1,
        z2,
        a2,
        logits,
    }
}

/// One training example: a 3×H×W image and per-pixel class indices.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Tensor,
    pub labels: Vec<u8>,
}

impl TrainSample {
    /// Pairs an image with the class map of its annotations.
    pub fn from_coco(
        dataset: &crate::coco::CocoDataset,
        image_id: u64,
        image: Tensor,
        labels: &LabelSpace,
    ) -> Result<Self> {
        let labels = labels.class_map(dataset, image_id)?;
        let (h, w) = image.spatial();
        if labels.len() != h * w {
            return Err(Error::Shape(format!(
                "image {image_id} does not match its annotation size"
            )));
        }
        Ok(Self { image, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Heavy-ball momentum; 0 is plain SGD.
    #[serde(default)]
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 200,
            batch_size: 4,
            momentum: 0.0,
            seed: 0,
        }
    }
}

/// Per-class soft intersection, prediction mass and ground-truth mass.
#[derive(Debug, Clone, Default)]
struct DiceSums {
    inter: Vec<f64>,
    pred: Vec<f64>,
    truth: Vec<f64>,
}

impl DiceSums {
    fn add(&mut self, other: &DiceSums) {
        for (dst, src) in [
            (&mut self.inter, &other.inter),
            (&mut self.pred, &other.pred),
            (&mut self.truth, &other.truth),
        ] {
            if dst.is_empty() {
                dst.resize(src.len(), 0.0);
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn loss(&self) -> f64 {
        let c = self.inter.len();
        (0..c)
            .map(|k| 1.0 - (2.0 * self.inter[k] + DICE_EPSILON) / (self.pred[k] + self.truth[k] + DICE_EPSILON))
            .sum::<f64>()
            / c as f64
    }
}

struct Evaluated {
    fwd: Forward,
    probs: Vec<f64>,
    sums: DiceSums,
}

fn evaluate(params: &Params, sample: &TrainSample) -> Evaluated {
    let (h, w) = sample.image.spatial();
    let plane = h * w;
    let classes = params.classes();
    let fwd = forward_pass(params, sample.image.data(), h, w);
    let probs = super::softmax(&fwd.logits, classes, plane);
    let mut sums = DiceSums {
        inter: vec![0.0; classes],
        pred: vec![0.0; classes],
        truth: vec![0.0; classes],
    };
    for c in 0..classes {
        for (i, &pv) in probs[c * plane..(c + 1) * plane].iter().enumerate() {
            let g = (sample.labels[i] as usize == c) as u8 as f64;
            sums.inter[c] += pv * g;
            sums.pred[c] += pv;
            sums.truth[c] += g;
        }
    }
    Evaluated { fwd, probs, sums }
}

/// Weight gradient of the Dice loss whose sums are `total`, restricted to
/// the terms contributed by this sample.
fn backward(params: &Params, sample: &TrainSample, ev: &Evaluated, total: &DiceSums) -> Params {
    let (h, w) = sample.image.spatial();
    let plane = h * w;
    let classes = params.classes();
    let (fwd, p) = (&ev.fwd, ev.probs.as_slice());

    // dL/dp for L = mean_c [1 - (2I + e) / (P + G + e)]
    let mut dp = vec![0.0; classes * plane];
    for c in 0..classes {
        let den = total.pred[c] + total.truth[c] + DICE_EPSILON;
        let num = 2.0 * total.inter[c] + DICE_EPSILON;
        let (on, off) = (
            -(2.0 * den - num) / (den * den) / classes as f64,
            num / (den * den) / classes as f64,
        );
        for i in 0..plane {
            dp[c * plane + i] = if sample.labels[i] as usize == c { on } else { off };
        }
    }

    // softmax backward
    let mut dz = vec![0.0; classes * plane];
    for i in 0..plane {
        let dot: f64 = (0..classes).map(|c| p[c * plane + i] * dp[c * plane + i]).sum();
        for c in 0..classes {
            dz[c * plane + i] = p[c * plane + i] * (dp[c * plane + i] - dot);
        }
    }

    let mut grad = Params::zeros(classes);
    let mut da2 = vec![0.0; TARGET_CHANNELS * plane];
    for c in 0..classes {
        let dzc = &dz[c * plane..(c + 1) * plane];
        grad.conv3_b[c] = dzc.iter().sum();
        for k in 0..TARGET_CHANNELS {
            let a = &fwd.a2[k * plane..(k + 1) * plane];
            grad.conv3_w[c * TARGET_CHANNELS + k] = dzc.iter().zip(a).map(|(d, v)| d * v).sum();
            let wv = params.conv3_w[c * TARGET_CHANNELS + k];
            for (g, d) in da2[k * plane..(k + 1) * plane].iter_mut().zip(dzc) {
                *g += wv * d;
            }
        }
    }
    let lay = Layout::new(h, w);
    let dz2: Vec<f64> = lay
        .pad(&da2, TARGET_CHANNELS)
        .iter()
        .zip(&fwd.z2)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    let (dw2, db2, da1) = conv3x3_backward(
        &fwd.a1,
        HIDDEN_CHANNELS,
        &lay,
        &params.conv2_w,
        &dz2,
        TARGET_CHANNELS,
        true,
    );
    let da1 = da1.expect("requested");
    let dz1: Vec<f64> = da1
        .iter()
        .zip(&fwd.z1)
        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
        .collect();
    let (dw1, db1, _) = conv3x3_backward(&fwd.x, IN_CHANNELS, &lay, &params.conv1_w, &dz1, HIDDEN_CHANNELS, false);
    grad.conv2_w = dw2;
    grad.conv2_b = db2;
    grad.conv1_w = dw1;
    grad.conv1_b = db1;
    grad
}

/// Dice loss pooled over `samples` and its gradient, summed in slice order.
fn batch_loss_and_grad(params: &Params, samples: &[&TrainSample]) -> (f64, Params) {
    let evaluated: Vec<Evaluated> = samples.iter().map(|s| evaluate(params, s)).collect();
    let mut total = DiceSums::default();
    for ev in &evaluated {
        total.add(&ev.sums);
    }
    let pairs: Vec<(&TrainSample, &Evaluated)> = samples.iter().copied().zip(&evaluated).collect();
    let grads: Vec<Params> = pairs.iter().map(|(s, ev)| backward(params, s, ev, &total)).collect();
    let mut grad = Params::zeros(params.classes());
    for g in &grads {
        grad.axpy(1.0, g);
    }
    (total.loss(), grad)
}

#[derive(Serialize, Deserialize)]
struct ToyNetMeta {
    format: String,
    labels: LabelSpace,
    target_layer: String,
    seed: u64,
    loss_history: Vec<f64>,
}

const WEIGHT_FILES: [&str; 6] = [
    "conv1_weight.npy",
    "conv1_bias.npy",
    "conv2_weight.npy",
    "conv2_bias.npy",
    "conv3_weight.npy",
    "conv3_bias.npy",
];

/// The built-in segmentation network.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    params: Params,
    labels: LabelSpace,
    seed: u64,
    loss_history: Vec<f64>,
}

impl ToyNet {
    /// A freshly initialized network for `labels` (plus background).
    pub fn new(labels: LabelSpace, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(labels.class_count(), &mut rng);
        Self {
            params,
            labels,
            seed,
            loss_history: Vec::new(),
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean training loss per epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    /// Minimizes the Dice loss, pooled over each mini-batch, with SGD. Runs on
    /// the calling thread and is bitwise reproducible for a given seed.
    pub fn train(samples: &[TrainSample], labels: LabelSpace, config: &TrainConfig) -> Result<ToyNet> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let classes = labels.class_count();
        for (i, s) in samples.iter().enumerate() {
            let (h, w) = s.image.spatial();
            if s.image.rank() != 3 || s.image.shape()[0] != IN_CHANNELS || s.labels.len() != h * w {
                return Err(Error::Shape(format!("training sample {i} has inconsistent shape")));
            }
            if s.labels.iter().any(|&l| l as usize >= classes) {
                return Err(Error::InvalidArgument(format!("sample {i} has a label >= {classes}")));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut net = ToyNet {
            params: Params::init(classes, &mut rng),
            labels,
            seed: config.seed,
            loss_history: Vec::with_capacity(config.epochs),
        };
        let mut velocity = Params::zeros(classes);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                let batch: Vec<&TrainSample> = batch.iter().map(|&i| &samples[i]).collect();
                let (loss, grad) = batch_loss_and_grad(&net.params, &batch);
                epoch_loss += loss * batch.len() as f64;
                velocity.scale(config.momentum);
                velocity.axpy(1.0, &grad);
                net.params.axpy(-config.lr, &velocity);
            }
            let mean = epoch_loss / samples.len() as f64;
            if !mean.is_finite() || !net.params.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            net.loss_history.push(mean);
        }
        Ok(net)
    }

    /// Dice loss pooled over `samples` (the training objective for one
    /// mini-batch) and its flattened weight gradient, exposed for gradient
    /// checking.
    pub fn loss_and_gradient(&self, samples: &[TrainSample]) -> (f64, Vec<f64>) {
        let refs: Vec<&TrainSample> = samples.iter().collect();
        let (loss, grad) = batch_loss_and_grad(&self.params, &refs);
        (loss, grad.flatten())
    }

    /// Mean Dice loss computed through the public forward path.
    pub fn dice_loss_on(&self, samples: &[TrainSample]) -> Result<f64> {
        let classes = self.params.classes();
        let mut total = 0.0;
        for s in samples {
            let scores = self.forward(&s.image)?;
            let (h, w) = s.image.spatial();
            let gt: Vec<Mask> = (0..classes)
                .map(|c| {
                    Mask::from_bits(h, w, s.labels.iter().map(|&l| l as usize == c).collect())
                        .expect("label length checked")
                })
                .collect();
            total += super::dice_loss(&scores.probabilities, &gt)?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Region score recomputed from given target-layer activations through
    /// the 1×1 head.
    pub fn head_region_score(&self, activations: &Tensor, region: &Mask, class: usize) -> Result<f64> {
        let (h, w) = activations.spatial();
        let logits = head(&self.params, activations.data(), h * w);
        let scores = ScoreMaps::from_logits(Tensor::new(vec![self.params.classes(), h, w], logits)?)?;
        super::region_score(&scores, class, region)
    }

    fn check_image(&self, image: &Tensor) -> Result<(usize, usize)> {
        if image.rank() != 3 || image.shape()[0] != IN_CHANNELS {
            return Err(Error::Shape(format!("expected 3xHxW image, got {:?}", image.shape())));
        }
        if !self.params.is_finite() {
            return Err(Error::Model("model weights are not finite".into()));
        }
        Ok(image.spatial())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let c = self.params.classes();
        let shapes: [Vec<usize>; 6] = [
            vec![HIDDEN_CHANNELS, IN_CHANNELS, 3, 3],
            vec![HIDDEN_CHANNELS],
            vec![TARGET_CHANNELS, HIDDEN_CHANNELS, 3, 3],
            vec![TARGET_CHANNELS],
            vec![c, TARGET_CHANNELS],
            vec![c],
        ];
        for ((name, shape), data) in WEIGHT_FILES.iter().zip(shapes).zip(self.params.slices()) {
            npy::write(dir.join(name), &Tensor::new(shape, data.to_vec())?, Dtype::F64)?;
        }
        let meta = ToyNetMeta {
            format: "toynet-v1".into(),
            labels: self.labels.clone(),
            target_layer: TARGET_LAYER.into(),
            seed: self.seed,
            loss_history: self.loss_history.clone(),
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ToyNetMeta = serde_json::from_str(&text)?;
        let mut params = Params::zeros(meta.labels.class_count());
        for (name, dst) in WEIGHT_FILES.iter().zip(params.slices_mut()) {
            let t = npy::read(dir.join(name))?;
            if t.len() != dst.len() {
                return Err(Error::Model(format!(
                    "{name} holds {} values, expected {}",
                    t.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(t.data());
        }
        Ok(Self {
            params,
            labels: meta.labels,
            seed: meta.seed,
            loss_history: meta.loss_history,
        })
    }
}

impl SegModel for ToyNet {
    fn class_count(&self) -> usize {
        self.params.classes()
    }

    fn target_layer(&self) -> &str {
        TARGET_LAYER
    }

    fn forward(&self, image: &Tensor) -> Result<ScoreMaps> {
        let (h, w) = self.check_image(image)?;
        let fwd = forward_pass(&self.params, image.data(), h, w);
        ScoreMaps::from_logits(Tensor::new(vec![self.params.classes(), h, w], fwd.logits)?)
    }

    fn capture(&self, image: &Tensor, region: &Mask, class: usize) -> Result<Capture> {
        let (h, w) = self.check_image(image)?;
        if class >= self.class_count() {
            return Err(Error::InvalidArgument(format!("class {class} out of range")));
        }
        if region.dims() != (h, w) {
            return Err(Error::Shape(format!("region {:?} vs image {h}x{w}", region.dims())));
        }
        let n = region.count();
        if n == 0 {
            return Err(Error::InvalidArgument("empty region".into()));
        }
        let plane = h * w;
        let fwd = forward_pass(&self.params, image.data(), h, w);
        // y = mean_{p∈R} (b_c + Σ_k W[c,k] A_k(p))  =>  ∂y/∂A_k(p) = W[c,k] / |R| on R
        let mut grad = vec![0.0; TARGET_CHANNELS * plane];
        for k in 0..TARGET_CHANNELS {
            let g = self.params.conv3_w[class * TARGET_CHANNELS + k] / n as f64;
            for p in region.indices() {
                grad[k * plane + p] = g;
            }
        }
        Ok(Capture {
            activations: Tensor::new(vec![TARGET_CHANNELS, h, w], fwd.a2)?,
            gradients: Tensor::new(vec![TARGET_CHANNELS, h, w], grad)?,
            scores: ScoreMaps::from_logits(Tensor::new(vec![self.params.classes(), h, w], fwd.logits)?)?,
        })
    }

    fn forward_macs(&self, height: usize, width: usize) -> Option<u64> {
        let per_pixel = IN_CHANNELS * HIDDEN_CHANNELS * 9
            + HIDDEN_CHANNELS * TARGET_CHANNELS * 9
            + TARGET_CHANNELS * self.params.classes();
        Some((height * width * per_pixel) as u64)
    }
}
