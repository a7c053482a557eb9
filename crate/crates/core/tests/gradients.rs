//! Target-layer gradients reported by capture against central differences
//! of the region score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqi_core::coco::LabelSpace;
use vqi_core::model::{SegModel, ToyNet, TARGET_CHANNELS};
use vqi_core::{Mask, Tensor};

#[test]
fn capture_gradients_match_central_differences() {
    let step = 1e-3;
    for run in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + run);
        let net = ToyNet::new(LabelSpace::new(["a", "b", "c"]), run);
        let (h, w) = (rng.gen_range(6..14), rng.gen_range(6..14));
        let image = Tensor::new(vec![3, h, w], (0..3 * h * w).map(|_| rng.gen()).collect()).unwrap();
        let mut region = Mask::from_bits(h, w, (0..h * w).map(|_| rng.gen_bool(0.4)).collect()).unwrap();
        region.set(0, 0, true);
        let class = rng.gen_range(0..4);
        let cap = net.capture(&image, &region, class).unwrap();
        let a = cap.activations.data().to_vec();
        for _ in 0..8 {
            // half the probes inside the region where the gradient is nonzero
            let idx = if rng.gen_bool(0.5) {
                let p = region.indices().nth(rng.gen_range(0..region.count())).unwrap();
                rng.gen_range(0..TARGET_CHANNELS) * h * w + p
            } else {
                rng.gen_range(0..a.len())
            };
            let score = |delta: f64| {
                let mut probe = a.clone();
                probe[idx] += delta;
                let t = Tensor::new(vec![TARGET_CHANNELS, h, w], probe).unwrap();
                net.head_region_score(&t, &region, class).unwrap()
            };
            let numeric = (score(step) - score(-step)) / (2.0 * step);
            let analytic = cap.gradients.data()[idx];
            let scale = numeric.abs().max(analytic.abs());
            let rel = if scale < 1e-12 {
                0.0
            } else {
                (numeric - analytic).abs() / scale
            };
            assert!(rel < 1e-3, "run {run} idx {idx}: {numeric} vs {analytic}");
        }
    }
}
