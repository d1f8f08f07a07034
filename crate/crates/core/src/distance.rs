//! Box overlap and feature distances.

use crate::attributes::{AttributeVector, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::types::{BBox, Embedding};

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of `target` covered by `occluder`.
pub fn occlusion_fraction(target: &BBox, occluder: &BBox) -> f64 {
    (target.intersection_area(occluder) / target.area()).clamp(0.0, 1.0)
}

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &Embedding, v: &Embedding) -> Result<f64> {
    cosine_distance_slices(u.as_slice(), v.as_slice())
}

pub fn cosine_distance_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((1.0 - dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 2.0))
}

/// Mean absolute per-slot difference of two attribute vectors.
pub fn attribute_distance(p: &AttributeVector, q: &AttributeVector) -> f64 {
    let sum: f64 = p.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()).sum();
    sum / NUM_ATTRIBUTES as f64
}

/// Slice form of [`attribute_distance`] for callers holding raw values.
pub fn attribute_distance_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != NUM_ATTRIBUTES || q.len() != NUM_ATTRIBUTES {
        let got = if p.len() != NUM_ATTRIBUTES { p.len() } else { q.len() };
        return Err(Error::DimensionMismatch { expected: NUM_ATTRIBUTES, got });
    }
    let sum: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / NUM_ATTRIBUTES as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::new(l, t, w, h).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 5.0, 5.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &b(10.0, 0.0, 10.0, 10.0)), 0.0);
        let half = iou(&a, &b(5.0, 0.0, 10.0, 10.0));
        assert!((half - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn occlusion_cases() {
        let t = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(occlusion_fraction(&t, &b(-1.0, -1.0, 12.0, 12.0)), 1.0);
        assert_eq!(occlusion_fraction(&t, &b(11.0, 0.0, 3.0, 3.0)), 0.0);
        assert_eq!(occlusion_fraction(&t, &b(0.0, 0.0, 5.0, 10.0)), 0.5);
    }

    #[test]
    fn cosine_cases() {
        let u = Embedding(vec![1.0, 2.0, -3.0]);
        let neg = Embedding(u.0.iter().map(|v| -v).collect());
        assert!(cosine_distance(&u, &u).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&u, &neg).unwrap() - 2.0).abs() < 1e-15);
        let x = Embedding(vec![1.0, 0.0]);
        let y = Embedding(vec![0.0, 1.0]);
        assert_eq!(cosine_distance(&x, &y).unwrap(), 1.0);
        assert!(matches!(
            cosine_distance(&x, &Embedding::zeros(2)),
            Err(Error::DegenerateEmbedding)
        ));
        assert!(matches!(
            cosine_distance(&x, &u),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn attribute_distance_cases() {
        let ones = AttributeVector::splat(1.0).unwrap();
        let zeros = AttributeVector::splat(0.0).unwrap();
        let half = AttributeVector::splat(0.5).unwrap();
        assert_eq!(attribute_distance(&ones, &ones), 0.0);
        assert_eq!(attribute_distance(&ones, &zeros), 1.0);
        assert_eq!(attribute_distance(&half, &zeros), 0.5);
        assert!(attribute_distance_slices(&[0.0; 31], &[0.0; 32]).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..60.0f64, 0.5..60.0f64)
            .prop_map(|(l, t, w, h)| BBox { left: l, top: t, width: w, height: h })
    }

    fn arb_attrs() -> impl Strategy<Value = AttributeVector> {
        prop::collection::vec(0.0..=1.0f64, NUM_ATTRIBUTES)
            .prop_map(|v| AttributeVector::prob_from_slice(&v).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let x = iou(&a, &c);
            prop_assert_eq!(x, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn attribute_distance_symmetric_and_bounded(p in arb_attrs(), q in arb_attrs()) {
            let d = attribute_distance(&p, &q);
            prop_assert_eq!(d, attribute_distance(&q, &p));
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn cosine_symmetric_and_bounded(
            u in prop::collection::vec(-1.0..1.0f64, 8),
            v in prop::collection::vec(-1.0..1.0f64, 8),
        ) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-6) && v.iter().any(|x| x.abs() > 1e-6));
            let d = cosine_distance_slices(&u, &v).unwrap();
            prop_assert_eq!(d, cosine_distance_slices(&v, &u).unwrap());
            prop_assert!((0.0..=2.0).contains(&d));
        }

        #[test]
        fn occlusion_bounded_and_monotone(t in arb_box(), shift in 0.0..1.0f64) {
            // an occluder sliding in from the right covers more as the shift grows
            let cover = |s: f64| BBox { left: t.right() - s * t.width, top: t.top, width: t.width, height: t.height };
            let lo = occlusion_fraction(&t, &cover(shift * 0.5));
            let hi = occlusion_fraction(&t, &cover(shift));
            prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
            prop_assert!(hi >= lo);
        }
    }
}
