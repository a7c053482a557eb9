//! Polygon rasterization and mask geometry.

use crate::error::{Error, Result};
use crate::tensor::Mask;

/// Rasterizes one or more flat `[x0, y0, x1, y1, ...]` polygons.
///
/// Pixel `(r, c)` is set when its center `(c + 0.5, r + 0.5)` lies inside a
/// polygon under the even-odd rule; multiple polygons are OR-ed.
pub fn polygon_to_mask(polygons: &[Vec<f64>], height: usize, width: usize) -> Result<Mask> {
    if polygons.is_empty() {
        return Err(Error::InvalidArgument("no polygons".into()));
    }
    let mut mask = Mask::new(height, width);
    for poly in polygons {
        fill_polygon(&mut mask, poly)?;
    }
    Ok(mask)
}

fn vertices(flat: &[f64]) -> Result<Vec<(f64, f64)>> {
    if !flat.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "polygon has odd coordinate count {}",
            flat.len()
        )));
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("polygon has non-finite coordinates".into()));
    }
    let pts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
        if distinct.len() >= 3 {
            return Ok(pts);
        }
    }
    Err(Error::InvalidArgument(
        "degenerate polygon: fewer than 3 distinct points".into(),
    ))
}

fn fill_polygon(mask: &mut Mask, flat: &[f64]) -> Result<()> {
    let pts = vertices(flat)?;
    let (h, w) = mask.dims();
    let n = pts.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for r in 0..h {
        let y = r as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % n];
            if (y0 > y) != (y1 > y) {
                xs.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        // a center at x is inside iff an odd number of crossings lie strictly right of it
        for pair in xs.chunks_exact(2) {
            let (a, b) = (pair[0], pair[1]);
            // centers with a <= cx < b
            let first = (a - 0.5).ceil().max(0.0);
            let last = (b - 0.5).ceil() - 1.0;
            if last < first {
                continue;
            }
            let last = last.min(w as f64 - 1.0);
            let mut c = first;
            while c <= last {
                mask.set(r, c as usize, true);
                c += 1.0;
            }
        }
    }
    Ok(())
}

/// Tightest `[x, y, width, height]` box around the set pixels.
pub fn mask_to_bbox(mask: &Mask) -> Result<[f64; 4]> {
    let (h, w) = mask.dims();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    if r0 == usize::MAX {
        return Err(Error::EmptyMask);
    }
    Ok([c0 as f64, r0 as f64, (c1 - c0 + 1) as f64, (r1 - r0 + 1) as f64])
}

/// Shoelace area of a flat polygon.
pub fn polygon_area(flat: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    let n = pts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice.abs() / 2.0
}

pub fn polygon_perimeter(flat: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % n];
            ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Per-pixel crossing-number test, independent of the scanline fill.
    fn oracle(polys: &[Vec<f64>], h: usize, w: usize) -> Mask {
        Mask::from_fn(h, w, |r, c| {
            let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
            polys.iter().any(|flat| {
                let pts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > py) != (yj > py) && px < xi + (py - yi) * (xj - xi) / (yj - yi) {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            })
        })
    }

    #[test]
    fn square_covers_sixteen_centers() {
        let sq = vec![vec![0.0, 0.0, 4.0, 0.0, 4.0, 4.0, 0.0, 4.0]];
        let m = polygon_to_mask(&sq, 5, 5).unwrap();
        assert_eq!(m.count(), 16);
        assert_eq!(m, oracle(&sq, 5, 5));
        assert!(!m.get(4, 0) && !m.get(0, 4));
    }

    #[test]
    fn covering_polygon_sets_everything() {
        let big = vec![vec![-1.0, -1.0, 10.0, -1.0, 10.0, 9.0, -1.0, 9.0]];
        assert_eq!(polygon_to_mask(&big, 7, 6).unwrap(), Mask::full(7, 6));
    }

    #[test]
    fn sliver_between_centers_is_empty() {
        let sliver = vec![vec![0.0, 1.0, 5.0, 1.0, 5.0, 1.2, 0.0, 1.2]];
        let m = polygon_to_mask(&sliver, 5, 5).unwrap();
        assert!(m.is_empty());
        assert_eq!(m, oracle(&sliver, 5, 5));
    }

    #[test]
    fn degenerate_polygons_error() {
        assert!(polygon_to_mask(&[vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]], 4, 4).is_err());
        assert!(polygon_to_mask(&[vec![0.0, 0.0, 1.0]], 4, 4).is_err());
        assert!(polygon_to_mask(&[], 4, 4).is_err());
    }

    #[test]
    fn polygons_are_ored() {
        let a = vec![0.0, 0.0, 2.0, 0.0, 2.0, 2.0, 0.0, 2.0];
        let b = vec![3.0, 3.0, 5.0, 3.0, 5.0, 5.0, 3.0, 5.0];
        let m = polygon_to_mask(&[a, b], 6, 6).unwrap();
        assert_eq!(m.count(), 8);
    }

    #[test]
    fn bbox_examples() {
        let mut m = Mask::new(6, 6);
        m.set(2, 3, true);
        assert_eq!(mask_to_bbox(&m).unwrap(), [3.0, 2.0, 1.0, 1.0]);
        assert_eq!(mask_to_bbox(&Mask::full(4, 7)).unwrap(), [0.0, 0.0, 7.0, 4.0]);
        let mut m = Mask::new(6, 7);
        m.set(0, 0, true);
        m.set(4, 5, true);
        assert_eq!(mask_to_bbox(&m).unwrap(), [0.0, 0.0, 6.0, 5.0]);
        assert!(matches!(mask_to_bbox(&Mask::new(3, 3)), Err(Error::EmptyMask)));
    }

    /// Star-shaped simple polygon: sorted angles with random radii around a center.
    fn simple_polygon() -> impl Strategy<Value = Vec<f64>> {
        (3usize..10)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(0.0f64..1.0, n),
                    proptest::collection::vec(2.0f64..9.0, n),
                    10.0f64..14.0,
                    10.0f64..14.0,
                )
            })
            .prop_map(|(mut angles, radii, cx, cy)| {
                angles.sort_by(f64::total_cmp);
                let mut flat = Vec::new();
                for (i, (a, r)) in angles.iter().zip(&radii).enumerate() {
                    let theta = (i as f64 + a) / angles.len() as f64 * std::f64::consts::TAU;
                    flat.push(cx + r * theta.cos());
                    flat.push(cy + r * theta.sin());
                }
                flat
            })
    }

    proptest! {
        #[test]
        fn matches_crossing_oracle(poly in simple_polygon()) {
            let polys = vec![poly];
            let m = polygon_to_mask(&polys, 24, 24).unwrap();
            prop_assert_eq!(m, oracle(&polys, 24, 24));
        }

        #[test]
        fn area_within_perimeter_of_shoelace(poly in simple_polygon()) {
            let m = polygon_to_mask(std::slice::from_ref(&poly), 24, 24).unwrap();
            let diff = (m.count() as f64 - polygon_area(&poly)).abs();
            prop_assert!(diff <= polygon_perimeter(&poly), "diff {} perimeter {}", diff, polygon_perimeter(&poly));
        }
    }
}
