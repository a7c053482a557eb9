//! Dense row-major arrays and binary masks.

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64`, row-major.
///
/// Every constructor rejects NaN and infinities, and every operation in this
/// module maps finite inputs to finite outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("extents must be positive, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0), "bad shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a 2-D tensor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![h, w], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(height, width)` of a 2-D tensor or the trailing two axes of a 3-D one.
    pub fn spatial(&self) -> (usize, usize) {
        let n = self.shape.len();
        if n < 2 {
            (1, self.shape[0])
        } else {
            (self.shape[n - 2], self.shape[n - 1])
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Channel `k` of a C×H×W tensor as an H×W tensor.
    pub fn channel(&self, k: usize) -> Result<Tensor> {
        if self.rank() != 3 || k >= self.shape[0] {
            return Err(Error::Shape(format!(
                "channel {k} of tensor with shape {:?}",
                self.shape
            )));
        }
        let plane = self.shape[1] * self.shape[2];
        Ok(Tensor {
            shape: vec![self.shape[1], self.shape[2]],
            data: self.data[k * plane..(k + 1) * plane].to_vec(),
        })
    }

    pub fn channel_slice(&self, k: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Multiplies every channel of a C×H×W tensor by an H×W map.
    pub fn mul_spatial(&self, map: &Tensor) -> Result<Tensor> {
        if self.rank() != 3 || map.shape() != [self.shape[1], self.shape[2]] {
            return Err(Error::Shape(format!(
                "cannot apply {:?} map to {:?} tensor",
                map.shape(),
                self.shape
            )));
        }
        let plane = map.len();
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(plane) {
            for (v, m) in chunk.iter_mut().zip(&map.data) {
                *v *= m;
            }
        }
        Tensor::new(self.shape.clone(), data)
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(t: &Tensor) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Arithmetic mean over `axes`; the remaining axes keep their order.
///
/// Pooling every axis yields a single-element tensor of shape `[1]`.
pub fn global_average(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    if axes.is_empty() {
        return Err(Error::InvalidArgument("no axes to pool".into()));
    }
    if t.rank() < 2 {
        return Err(Error::Shape("global_average needs at least two axes".into()));
    }
    if let Some(&bad) = axes.iter().find(|&&a| a >= t.rank()) {
        return Err(Error::InvalidArgument(format!("axis {bad} out of range")));
    }
    let pooled = |a: usize| axes.contains(&a);
    let kept: Vec<usize> = (0..t.rank()).filter(|&a| !pooled(a)).collect();
    let out_shape: Vec<usize> = if kept.is_empty() {
        vec![1]
    } else {
        kept.iter().map(|&a| t.shape[a]).collect()
    };
    let count: usize = axes.iter().map(|&a| t.shape[a]).product();
    let mut sums = vec![0.0; out_shape.iter().product()];

    let mut index = vec![0usize; t.rank()];
    for &v in &t.data {
        let mut flat = 0;
        for &a in &kept {
            flat = flat * t.shape[a] + index[a];
        }
        sums[flat] += v;
        for a in (0..t.rank()).rev() {
            index[a] += 1;
            if index[a] < t.shape[a] {
                break;
            }
            index[a] = 0;
        }
    }
    let data = sums.into_iter().map(|s| s / count as f64).collect();
    Tensor::new(out_shape, data)
}

/// Bilinear resampling of a 2-D map with half-pixel centers.
///
/// Output pixel `(r, c)` samples the source at
/// `((r + 0.5) * h / out_h - 0.5, (c + 0.5) * w / out_w - 0.5)`, clamped to the
/// source grid.
pub fn bilinear_resize(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if t.rank() != 2 {
        return Err(Error::Shape(format!("bilinear_resize expects 2-D, got {:?}", t.shape)));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("output size must be positive".into()));
    }
    let (h, w) = (t.shape[0], t.shape[1]);
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let src = &t.data;
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            data.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Tensor::new(vec![out_h, out_w], data)
}

/// Affine rescale onto `[0, 1]`; a constant tensor maps to all zeros.
pub fn minmax_normalize(t: &Tensor) -> Tensor {
    let (lo, hi) = (t.min(), t.max());
    let range = hi - lo;
    let data = if range > 0.0 {
        t.data.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; t.len()]
    };
    Tensor {
        shape: t.shape.clone(),
        data,
    }
}

/// Binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self { height, width, bits }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.bits[r * self.width + c] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union_with(&mut self, other: &Mask) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a || b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Row-major indices of the set pixels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// 0/1 values as an H×W tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.height, self.width],
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&Tensor::zeros(&[2, 2])).data(), &[0.0; 4]);
        assert_eq!(relu(&t(&[1], &[3.5])).data(), &[3.5]);
    }

    #[test]
    fn global_average_examples() {
        let a = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_average(&a, &[1, 2]).unwrap().data(), &[2.5]);
        let c = Tensor::filled(&[3, 4, 5], 1.25);
        assert_eq!(global_average(&c, &[1, 2]).unwrap().data(), &[1.25; 3]);
        let s = t(&[2, 1, 1], &[5.0, 7.0]);
        assert_eq!(global_average(&s, &[1, 2]).unwrap().data(), &[5.0, 7.0]);
        assert!(global_average(&s, &[]).is_err());
        assert!(global_average(&t(&[3], &[1.0, 2.0, 3.0]), &[0]).is_err());
    }

    #[test]
    fn global_average_leading_axis() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);
        assert_eq!(global_average(&a, &[0]).unwrap().data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn resize_constant_and_single_source() {
        let c = Tensor::filled(&[3, 5], 0.7);
        let out = bilinear_resize(&c, 11, 2).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let one = t(&[1, 1], &[4.0]);
        let out = bilinear_resize(&one, 3, 4).unwrap();
        assert_eq!(out.data(), &[4.0; 12]);
    }

    #[test]
    fn resize_checkerboard_by_hand() {
        // Source coordinates for 2 -> 4 are {-0.25, 0.25, 0.75, 1.25}, clamped
        // to {0, 0.25, 0.75, 1}; the bilinear interpolant of [[0,1],[1,0]] is
        // x + y - 2xy.
        let src = t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]);
        let out = bilinear_resize(&src, 4, 4).unwrap();
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (r, y) in coords.iter().enumerate() {
            for (c, x) in coords.iter().enumerate() {
                assert_abs_diff_eq!(out.data()[r * 4 + c], x + y - 2.0 * x * y, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(out.data()[5], 0.375);
        assert_abs_diff_eq!(out.data()[6], 0.625);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(minmax_normalize(&t(&[3], &[0.0, 5.0, 10.0])).data(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&t(&[3], &[2.0, 2.0, 2.0])).data(), &[0.0; 3]);
        assert_eq!(minmax_normalize(&t(&[2], &[-1.0, 1.0])).data(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn mul_spatial_broadcasts_over_channels() {
        let img = Tensor::filled(&[3, 2, 2], 2.0);
        let map = t(&[2, 2], &[0.0, 0.5, 1.0, 0.25]);
        let out = img.mul_spatial(&map).unwrap();
        assert_eq!(&out.data()[4..8], &[0.0, 1.0, 2.0, 0.5]);
    }

    fn small_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            proptest::collection::vec(-10.0f64..10.0, h * w).prop_map(move |d| Tensor::new(vec![h, w], d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn resize_same_size_is_identity(m in small_tensor()) {
            let (h, w) = m.spatial();
            let out = bilinear_resize(&m, h, w).unwrap();
            for (a, b) in out.data().iter().zip(m.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn normalize_range_and_idempotence(m in small_tensor()) {
            let n = minmax_normalize(&m);
            prop_assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            if m.max() > m.min() {
                let nn = minmax_normalize(&n);
                for (a, b) in nn.data().iter().zip(n.data()) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn relu_idempotent_and_monotone(m in small_tensor(), shift in 0.0f64..5.0) {
            let r = relu(&m);
            let rr = relu(&r);
            prop_assert_eq!(rr.data(), r.data());
            let bigger = m.map(|v| v + shift).unwrap();
            for (a, b) in relu(&m).data().iter().zip(relu(&bigger).data()) {
                prop_assert!(a <= b);
            }
        }

        #[test]
        fn resize_stays_within_source_range(m in small_tensor(), oh in 1usize..9, ow in 1usize..9) {
            let out = bilinear_resize(&m, oh, ow).unwrap();
            prop_assert!(out.min() >= m.min() - 1e-12 && out.max() <= m.max() + 1e-12);
        }
    }
}
