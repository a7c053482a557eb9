//! Compressed RLE strings checked against masks encoded by the reference
//! COCO tooling, plus encode/decode and parse/write round trips.

use std::path::Path;

use proptest::prelude::*;
use vqi_core::coco::{decode_counts_string, parse_coco, rle_decode, rle_encode, write_coco};
use vqi_core::synth::{generate, SynthConfig};
use vqi_core::Mask;

/// Same LCG and mask families the reference strings were produced from.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0 >> 33
    }
}

fn reference_mask(i: u64) -> Mask {
    let mut g = Lcg(1000 + i);
    let h = 1 + (g.next() % 40) as usize;
    let w = 1 + (g.next() % 40) as usize;
    let mut m = Mask::new(h, w);
    match i % 3 {
        0 => {
            let d = g.next() % 100;
            for r in 0..h {
                for c in 0..w {
                    m.set(r, c, g.next() % 100 < d);
                }
            }
        }
        1 => {
            for _ in 0..1 + g.next() % 4 {
                let r0 = (g.next() % h as u64) as usize;
                let c0 = (g.next() % w as u64) as usize;
                let r1 = r0 + 1 + (g.next() % (h - r0) as u64) as usize;
                let c1 = c0 + 1 + (g.next() % (w - c0) as u64) as usize;
                for r in r0..r1 {
                    for c in c0..c1 {
                        m.set(r, c, true);
                    }
                }
            }
        }
        _ => {
            let k = 1 + (g.next() % 17) as usize;
            for r in 0..h {
                for c in 0..w {
                    m.set(r, c, ((c * h + r) / k) % 2 == 1);
                }
            }
        }
    }
    m
}

pub struct Reference {
    pub index: u64,
    pub height: usize,
    pub width: usize,
    pub area: usize,
    pub counts: String,
}

pub fn references() -> Vec<Reference> {
    let text =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/rle_reference.txt")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.splitn(5, ' ').collect();
            Reference {
                index: f[0].parse().unwrap(),
                height: f[1].parse().unwrap(),
                width: f[2].parse().unwrap(),
                area: f[3].parse().unwrap(),
                counts: f[4].to_string(),
            }
        })
        .collect()
}

#[test]
fn compressed_strings_match_reference_tooling() {
    let refs = references();
    assert_eq!(refs.len(), 20);
    for r in refs {
        let mask = reference_mask(r.index);
        assert_eq!(mask.dims(), (r.height, r.width), "case {}", r.index);
        assert_eq!(mask.count(), r.area, "case {}", r.index);
        let rle = rle_encode(&mask);
        assert_eq!(rle.to_compressed_string(), r.counts, "case {}", r.index);
        assert_eq!(decode_counts_string(&r.counts).unwrap(), rle.counts, "case {}", r.index);
    }
}

#[test]
fn synth_annotations_survive_write_then_parse() {
    let d = generate(&SynthConfig {
        train_count: 8,
        test_count: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    for ds in [&d.train, &d.eval] {
        let text = write_coco(ds);
        let back = parse_coco(&text).unwrap();
        assert_eq!(&back, ds);
        assert_eq!(write_coco(&back), text);
    }
}

#[test]
fn foreign_fields_survive_parse_then_write() {
    let text = r#"{
      "info": {"description": "x", "year": 2020},
      "licenses": [],
      "images": [{"id": 3, "width": 4, "height": 3, "file_name": "a.png", "date_captured": "now"}],
      "categories": [{"id": 1, "name": "cable", "supercategory": "line"}],
      "annotations": [
        {"id": 1, "image_id": 3, "category_id": 1, "iscrowd": 0, "area": 4.0, "bbox": [0, 0, 2, 2],
         "segmentation": [[0, 0, 2, 0, 2, 2, 0, 2]], "score": 0.5},
        {"id": 2, "image_id": 3, "category_id": 1, "iscrowd": 1, "area": 2.0, "bbox": [1, 1, 1, 2],
         "segmentation": {"size": [3, 4], "counts": [4, 2, 6]}}
      ]
    }"#;
    let parsed = parse_coco(text).unwrap();
    let written = write_coco(&parsed);
    let reparsed = parse_coco(&written).unwrap();
    assert_eq!(parsed, reparsed);
    assert_eq!(written, write_coco(&reparsed));
    let v: serde_json::Value = serde_json::from_str(&written).unwrap();
    assert_eq!(v["info"]["year"], 2020);
    assert_eq!(v["images"][0]["date_captured"], "now");
    assert_eq!(v["annotations"][0]["score"], 0.5);
}

fn arb_mask() -> impl Strategy<Value = Mask> {
    (1usize..24, 1usize..24).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| Mask::from_bits(h, w, bits).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rle_round_trip(mask in arb_mask()) {
        let rle = rle_encode(&mask);
        prop_assert_eq!(rle.area() as usize, mask.count());
        prop_assert_eq!(&rle_decode(&rle).unwrap(), &mask);
        let counts = decode_counts_string(&rle.to_compressed_string()).unwrap();
        prop_assert_eq!(counts, rle.counts);
    }
}
