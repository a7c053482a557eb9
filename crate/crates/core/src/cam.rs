//! Class activation maps.
//!
//! Every method turns target-layer activations `A` (K×h×w) and, for the
//! gradient methods, gradients `G` of the region score into a raw h×w map.
//! The raw map is then upsampled to the image size and min-max normalized.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{region_score, RegionSpec, SegModel};
use crate::tensor::{bilinear_resize, minmax_normalize, Mask, Tensor};

/// Stabilizer in the GradCAM++ and XGradCAM denominators.
pub const CAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    GradCam,
    GradCamPlusPlus,
    HiResCam,
    XGradCam,
    ScoreCam,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::GradCam,
        Method::GradCamPlusPlus,
        Method::HiResCam,
        Method::XGradCam,
        Method::ScoreCam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GradCam => "GradCAM",
            Method::GradCamPlusPlus => "GradCAM++",
            Method::HiResCam => "HiResCAM",
            Method::XGradCam => "XGradCAM",
            Method::ScoreCam => "ScoreCAM",
        }
    }

    /// Perturbation methods need a model that really runs on new inputs.
    pub fn needs_live_model(self) -> bool {
        self == Method::ScoreCam
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '+')
            .collect::<String>()
            .to_ascii_lowercase();
        let m = match key.as_str() {
            "gradcam" => Method::GradCam,
            "gradcam++" | "gradcampp" | "gradcamplusplus" => Method::GradCamPlusPlus,
            "hirescam" => Method::HiResCam,
            "xgradcam" => Method::XGradCam,
            "scorecam" => Method::ScoreCam,
            _ => return Err(Error::InvalidArgument(format!("unknown method {s:?}"))),
        };
        Ok(m)
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_pair(a: &Tensor, g: &Tensor) -> Result<(usize, usize, usize)> {
    if a.rank() != 3 {
        return Err(Error::Shape(format!("activations must be K×h×w, got {:?}", a.shape())));
    }
    if a.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "activations {:?} vs gradients {:?}",
            a.shape(),
            g.shape()
        )));
    }
    Ok((a.shape()[0], a.shape()[1], a.shape()[2]))
}

/// `ReLU(Σ_k w_k·A_k)`.
pub fn weighted_sum(a: &Tensor, weights: &[f64]) -> Result<Tensor> {
    if a.rank() != 3 || a.shape()[0] != weights.len() {
        return Err(Error::Shape(format!(
            "{} weights for activations {:?}",
            weights.len(),
            a.shape()
        )));
    }
    let (h, w) = a.spatial();
    let mut raw = vec![0.0; h * w];
    for (k, &wk) in weights.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        for (r, v) in raw.iter_mut().zip(a.channel_slice(k)) {
            *r += wk * v;
        }
    }
    Tensor::new(vec![h, w], raw.into_iter().map(|v| v.max(0.0)).collect())
}

pub fn gradcam_raw(a: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (k, h, w) = check_pair(a, g)?;
    let weights: Vec<f64> = (0..k)
        .map(|c| g.channel_slice(c).iter().sum::<f64>() / (h * w) as f64)
        .collect();
    weighted_sum(a, &weights)
}

pub fn hirescam_raw(a: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (k, h, w) = check_pair(a, g)?;
    let mut raw = vec![0.0; h * w];
    for c in 0..k {
        for ((r, av), gv) in raw.iter_mut().zip(a.channel_slice(c)).zip(g.channel_slice(c)) {
            *r += av * gv;
        }
    }
    Tensor::new(vec![h, w], raw.into_iter().map(|v| v.max(0.0)).collect())
}

pub fn gradcam_pp_raw(a: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (k, _, _) = check_pair(a, g)?;
    let weights: Vec<f64> = (0..k)
        .map(|c| {
            let a_sum: f64 = a.channel_slice(c).iter().sum();
            g.channel_slice(c)
                .iter()
                .map(|&gv| {
                    let g2 = gv * gv;
                    let alpha = g2 / (2.0 * g2 + a_sum * g2 * gv + CAM_EPSILON);
                    alpha * gv.max(0.0)
                })
                .sum()
        })
        .collect();
    weighted_sum(a, &weights)
}

pub fn xgradcam_raw(a: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (k, _, _) = check_pair(a, g)?;
    let weights: Vec<f64> = (0..k)
        .map(|c| {
            let ac = a.channel_slice(c);
            let denom = ac.iter().sum::<f64>() + CAM_EPSILON;
            ac.iter().zip(g.channel_slice(c)).map(|(av, gv)| av / denom * gv).sum()
        })
        .collect();
    weighted_sum(a, &weights)
}

/// Masked-input scores behind one ScoreCAM map. `scores[k]` is `None` for
/// channels that were skipped because their activation map is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCamTrace {
    pub scores: Vec<Option<f64>>,
    pub baseline: f64,
}

impl ScoreCamTrace {
    /// Softmax of `s_k − b` over the informative channels; skipped channels get 0.
    pub fn weights(&self) -> Result<Vec<f64>> {
        let max = self
            .scores
            .iter()
            .flatten()
            .map(|s| s - self.baseline)
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Explain("no informative channels".into()));
        }
        let exp: Vec<f64> = self
            .scores
            .iter()
            .map(|s| s.map_or(0.0, |s| (s - self.baseline - max).exp()))
            .collect();
        let total: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / total).collect())
    }
}

/// Runs the K masked forward passes and the zero-image baseline.
pub fn scorecam_trace(
    model: &dyn SegModel,
    image: &Tensor,
    activations: &Tensor,
    class: usize,
    region: &Mask,
) -> Result<ScoreCamTrace> {
    if !model.is_live() {
        return Err(Error::Explain("ScoreCAM requires live model".into()));
    }
    if activations.rank() != 3 || image.rank() != 3 {
        return Err(Error::Shape(
            "ScoreCAM needs K×h×w activations and a C×H×W image".into(),
        ));
    }
    let (h, w) = image.spatial();
    let k = activations.shape()[0];
    let baseline = region_score(&model.forward(&Tensor::zeros(image.shape()))?, class, region)?;
    let mut scores = Vec::with_capacity(k);
    for c in 0..k {
        let ch = activations.channel(c)?;
        if ch.max() == ch.min() {
            scores.push(None);
            continue;
        }
        let soft = minmax_normalize(&bilinear_resize(&ch, h, w)?);
        let masked = image.mul_spatial(&soft)?;
        scores.push(Some(region_score(&model.forward(&masked)?, class, region)?));
    }
    if scores.iter().all(Option::is_none) {
        return Err(Error::Explain("no informative channels".into()));
    }
    Ok(ScoreCamTrace { scores, baseline })
}

pub fn scorecam_raw(activations: &Tensor, trace: &ScoreCamTrace) -> Result<Tensor> {
    weighted_sum(activations, &trace.weights()?)
}

/// raw → bilinear upsample to `height`×`width` → min-max normalize.
pub fn postprocess(raw: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    Ok(minmax_normalize(&bilinear_resize(raw, height, width)?))
}

#[derive(Debug, Clone)]
pub struct ExplanationMap {
    /// H×W, values in [0, 1].
    pub values: Tensor,
    pub method: Method,
    pub class: usize,
    pub region: RegionSpec,
    pub runtime_ms: f64,
    /// Model evaluations (forward or forward+backward) the method used.
    pub model_passes: usize,
}

/// Explains `class` on `image` for the score averaged over `region`.
pub fn explain(
    model: &dyn SegModel,
    image: &Tensor,
    method: Method,
    class: usize,
    region: &Mask,
    region_spec: RegionSpec,
) -> Result<ExplanationMap> {
    if method.needs_live_model() && !model.is_live() {
        return Err(Error::Explain(format!("{method} requires live model")));
    }
    let (h, w) = image.spatial();
    let start = Instant::now();
    let cap = model.capture(image, region, class)?;
    let (a, g) = (&cap.activations, &cap.gradients);
    let (raw, passes) = match method {
        Method::GradCam => (gradcam_raw(a, g)?, 1),
        Method::GradCamPlusPlus => (gradcam_pp_raw(a, g)?, 1),
        Method::HiResCam => (hirescam_raw(a, g)?, 1),
        Method::XGradCam => (xgradcam_raw(a, g)?, 1),
        Method::ScoreCam => {
            let trace = scorecam_trace(model, image, a, class, region)?;
            let passes = 2 + trace.scores.iter().flatten().count();
            (scorecam_raw(a, &trace)?, passes)
        }
    };
    let values = postprocess(&raw, h, w)?;
    let runtime_ms = (start.elapsed().as_secs_f64() * 1e3).max(1e-6);
    Ok(ExplanationMap {
        values,
        method,
        class,
        region: region_spec,
        runtime_ms,
        model_passes: passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::LabelSpace;
    use crate::model::{ScoreMaps, ToyNet};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        t(shape, &(0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>())
    }

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        assert_eq!("grad-cam++".parse::<Method>().unwrap(), Method::GradCamPlusPlus);
        assert!("lime".parse::<Method>().is_err());
    }

    #[test]
    fn gradcam_hand_example() {
        let a = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let g = Tensor::filled(&[1, 2, 2], 1.0);
        let raw = gradcam_raw(&a, &g).unwrap();
        let map = postprocess(&raw, 2, 2).unwrap();
        for (v, e) in map.data().iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-12);
        }
        let scaled = postprocess(&gradcam_raw(&a, &g.scale(7.5).unwrap()).unwrap(), 2, 2).unwrap();
        assert_eq!(scaled.data(), map.data());
    }

    #[test]
    fn zero_gradients_give_zero_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, &[3, 4, 4], 0.0, 2.0);
        let g = Tensor::zeros(&[3, 4, 4]);
        for f in [gradcam_raw, hirescam_raw, gradcam_pp_raw, xgradcam_raw] {
            let map = postprocess(&f(&a, &g).unwrap(), 8, 8).unwrap();
            assert!(map.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn hirescam_single_hot_pixel() {
        let a = Tensor::filled(&[1, 2, 2], 5.0);
        let g = t(&[1, 2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let raw = hirescam_raw(&a, &g).unwrap();
        assert_eq!(raw.data(), &[5.0, 0.0, 0.0, 0.0]);
        assert_eq!(postprocess(&raw, 2, 2).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gradcam_pp_constant_case_and_scalar_oracle() {
        let a = Tensor::filled(&[1, 3, 3], 2.0);
        let g = Tensor::filled(&[1, 3, 3], 0.5);
        let map = postprocess(&gradcam_pp_raw(&a, &g).unwrap(), 3, 3).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(&mut rng, &[2, 3, 3], 0.0, 1.0);
        let g = random(&mut rng, &[2, 3, 3], -1.0, 1.0);
        // scalar transcription, one pixel at a time
        let mut oracle = [0.0f64; 9];
        for k in 0..2 {
            let mut sum_a = 0.0;
            for p in 0..9 {
                sum_a += a.data()[k * 9 + p];
            }
            let mut wk = 0.0;
            for p in 0..9 {
                let gkp = g.data()[k * 9 + p];
                let alpha = gkp.powi(2) / (2.0 * gkp.powi(2) + sum_a * gkp.powi(3) + 1e-8);
                wk += alpha * if gkp > 0.0 { gkp } else { 0.0 };
            }
            for p in 0..9 {
                oracle[p] += wk * a.data()[k * 9 + p];
            }
        }
        let raw = gradcam_pp_raw(&a, &g).unwrap();
        for (v, o) in raw.data().iter().zip(oracle) {
            assert_abs_diff_eq!(*v, o.max(0.0), epsilon = 1e-6);
        }
    }

    #[test]
    fn xgradcam_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, &[3, 4, 5], 0.0, 3.0);
        let consts = [0.7, -0.2, 1.3];
        let g = Tensor::new(vec![3, 4, 5], (0..60).map(|i| consts[i / 20]).collect()).unwrap();
        let x = xgradcam_raw(&a, &g).unwrap();
        let gc = gradcam_raw(&a, &g).unwrap();
        for (p, q) in x.data().iter().zip(gc.data()) {
            assert_abs_diff_eq!(*p, *q, epsilon = 1e-6);
        }
        let uniform = Tensor::filled(&[1, 3, 3], 2.0);
        let g = random(&mut rng, &[1, 3, 3], -1.0, 1.0);
        assert!(postprocess(&xgradcam_raw(&uniform, &g).unwrap(), 3, 3)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::zeros(&[2, 3, 3]);
        let g = Tensor::zeros(&[2, 3, 4]);
        assert!(gradcam_raw(&a, &g).is_err());
        assert!(weighted_sum(&a, &[1.0]).is_err());
    }

    fn toy() -> (ToyNet, Tensor, Mask) {
        let net = ToyNet::new(LabelSpace::new(["cable", "tower"]), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let image = random(&mut rng, &[3, 12, 12], 0.0, 1.0);
        let region = Mask::from_fn(12, 12, |r, c| r < 6 && c > 3);
        (net, image, region)
    }

    #[test]
    fn scorecam_decomposition_oracle() {
        let (net, image, region) = toy();
        let map = explain(&net, &image, Method::ScoreCam, 1, &region, RegionSpec::Predicted).unwrap();
        let cap = net.capture(&image, &region, 1).unwrap();
        let trace = scorecam_trace(&net, &image, &cap.activations, 1, &region).unwrap();
        assert_eq!(map.model_passes, 2 + trace.scores.iter().flatten().count());

        // recompute from the captured scores: plain softmax, plain sum
        let live: Vec<(usize, f64)> = trace
            .scores
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.map(|s| (k, s - trace.baseline)))
            .collect();
        let denom: f64 = live.iter().map(|(_, d)| d.exp()).sum();
        let mut raw = vec![0.0; 144];
        for &(k, d) in &live {
            for p in 0..144 {
                raw[p] += d.exp() / denom * cap.activations.data()[k * 144 + p];
            }
        }
        let raw = Tensor::new(vec![12, 12], raw.into_iter().map(|v| v.max(0.0)).collect()).unwrap();
        let expected = minmax_normalize(&raw);
        for (a, b) in map.values.data().iter().zip(expected.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    struct OneChannel;

    impl SegModel for OneChannel {
        fn class_count(&self) -> usize {
            2
        }
        fn target_layer(&self) -> &str {
            "only"
        }
        fn forward(&self, image: &Tensor) -> Result<ScoreMaps> {
            let (h, w) = image.spatial();
            let mut logits = vec![0.0; 2 * h * w];
            logits[h * w..].copy_from_slice(image.channel_slice(0));
            ScoreMaps::from_logits(Tensor::new(vec![2, h, w], logits)?)
        }
        fn capture(&self, image: &Tensor, _region: &Mask, _class: usize) -> Result<crate::model::Capture> {
            let (h, w) = image.spatial();
            let a = image.channel(0)?.reshape(vec![1, h, w])?;
            Ok(crate::model::Capture {
                gradients: Tensor::filled(&[1, h, w], 1.0),
                scores: self.forward(image)?,
                activations: a,
            })
        }
    }

    #[test]
    fn scorecam_single_channel_and_constant_channels() {
        let image = Tensor::new(vec![3, 2, 3], (0..18).map(|i| ((i % 6) as f64 - 2.0) * 0.5).collect()).unwrap();
        let region = Mask::full(2, 3);
        let map = explain(
            &OneChannel,
            &image,
            Method::ScoreCam,
            1,
            &region,
            RegionSpec::GroundTruth,
        )
        .unwrap();
        let relu_a = image.channel(0).unwrap().map(|v| v.max(0.0)).unwrap();
        assert_eq!(map.values.data(), minmax_normalize(&relu_a).data());

        let flat = Tensor::filled(&[3, 2, 3], 0.4);
        let err = explain(
            &OneChannel,
            &flat,
            Method::ScoreCam,
            1,
            &region,
            RegionSpec::GroundTruth,
        )
        .unwrap_err();
        assert!(err.to_string().contains("no informative channels"), "{err}");
    }

    #[test]
    fn maps_are_normalized_on_the_toy_model() {
        let (net, image, region) = toy();
        for m in Method::ALL {
            let map = explain(&net, &image, m, 2, &region, RegionSpec::Predicted).unwrap();
            assert_eq!(map.values.shape(), &[12, 12]);
            assert!(map.runtime_ms > 0.0);
            let max = map.values.max();
            assert!(map.values.min() >= 0.0 && (max == 1.0 || max == 0.0), "{m}: max {max}");
        }
    }
}
