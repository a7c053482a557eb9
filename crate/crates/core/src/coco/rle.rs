//! Column-major run-length encoding of masks, including the compressed
//! string form used by COCO tooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mask;

/// Run lengths in column-major order, alternating zero-runs and one-runs and
/// starting with a (possibly empty) zero-run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rle {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
    /// Whether the JSON form uses the compressed string encoding.
    #[serde(default)]
    pub compressed: bool,
}

impl Rle {
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if total != (self.height * self.width) as u64 {
            return Err(Error::Rle(format!(
                "counts sum to {total}, expected {}x{}={}",
                self.height,
                self.width,
                self.height * self.width
            )));
        }
        Ok(())
    }

    pub fn to_compressed_string(&self) -> String {
        encode_counts_string(&self.counts)
    }
}

pub fn rle_encode(mask: &Mask) -> Rle {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..w {
        for r in 0..h {
            let bit = mask.get(r, c);
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        height: h,
        width: w,
        counts,
        compressed: false,
    }
}

pub fn rle_decode(rle: &Rle) -> Result<Mask> {
    rle.validate()?;
    let (h, w) = (rle.height, rle.width);
    let mut mask = Mask::new(h, w);
    let mut pos = 0usize;
    let mut value = false;
    for &run in &rle.counts {
        if value {
            for p in pos..pos + run as usize {
                mask.set(p % h, p / h, true);
            }
        }
        pos += run as usize;
        value = !value;
    }
    Ok(mask)
}

/// Compressed COCO counts: each value (delta-coded against the count two
/// positions back, from the fourth count on) is written as little-endian 5-bit
/// groups with a continuation bit, offset by 48 into printable ASCII.
pub fn encode_counts_string(counts: &[u32]) -> String {
    let mut out = String::with_capacity(counts.len() * 2);
    for (i, &count) in counts.iter().enumerate() {
        let mut x = count as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}

pub fn decode_counts_string(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<u32> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let b = *bytes
                .get(p)
                .ok_or_else(|| Error::Rle("truncated compressed counts".into()))?;
            if !(48..48 + 64).contains(&b) {
                return Err(Error::Rle(format!("invalid character {:?} at offset {p}", b as char)));
            }
            if k >= 12 {
                return Err(Error::Rle("count overflows 60 bits".into()));
            }
            let c = (b - 48) as i64;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2] as i64;
        }
        let count = u32::try_from(x).map_err(|_| Error::Rle(format!("count {x} out of range")))?;
        counts.push(count);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_top_left_pixel() {
        let mut m = Mask::new(2, 2);
        m.set(0, 0, true);
        assert_eq!(rle_encode(&m).counts, vec![0, 1, 3]);
    }

    #[test]
    fn column_major_order() {
        let mut m = Mask::new(2, 2);
        m.set(1, 0, true);
        assert_eq!(rle_encode(&m).counts, vec![1, 1, 2]);
        let mut m = Mask::new(2, 2);
        m.set(0, 1, true);
        assert_eq!(rle_encode(&m).counts, vec![2, 1, 1]);
    }

    #[test]
    fn all_zero_mask() {
        let m = Mask::new(3, 5);
        let rle = rle_encode(&m);
        assert_eq!(rle.counts, vec![15]);
        assert_eq!(rle.area(), 0);
    }

    #[test]
    fn decode_rejects_wrong_sum() {
        let rle = Rle {
            height: 2,
            width: 2,
            counts: vec![1, 1],
            compressed: false,
        };
        assert!(rle_decode(&rle).is_err());
    }

    #[test]
    fn compressed_rejects_bad_characters() {
        assert!(decode_counts_string("01 2").is_err());
        assert!(decode_counts_string("0~").is_err());
        // continuation bit set on the last group
        assert!(decode_counts_string("P").is_err());
    }

    #[test]
    fn compressed_known_values() {
        // -1 (a delta) and large counts exercise the sign and continuation bits
        assert_eq!(encode_counts_string(&[0, 1, 3]), "013");
        assert_eq!(decode_counts_string("013").unwrap(), vec![0, 1, 3]);
        let counts = vec![100, 5, 1000, 3, 40000, 17];
        let s = encode_counts_string(&counts);
        assert_eq!(decode_counts_string(&s).unwrap(), counts);
    }

    fn mask_strategy() -> impl Strategy<Value = Mask> {
        (1usize..24, 1usize..24).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| Mask::from_bits(h, w, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn encode_decode_identity(m in mask_strategy()) {
            let rle = rle_encode(&m);
            prop_assert_eq!(rle.area() as usize, m.count());
            prop_assert_eq!(rle_decode(&rle).unwrap(), m);
        }

        #[test]
        fn string_form_round_trips(m in mask_strategy()) {
            let rle = rle_encode(&m);
            let s = rle.to_compressed_string();
            prop_assert_eq!(decode_counts_string(&s).unwrap(), rle.counts);
        }
    }
}
