use ndarray::Array2;

use crate::anomaly::AnomalyMap;
use crate::error::{Error, Result};

/// Mann–Whitney AUROC of `(score, is_positive)` pairs; ties count one half.
///
/// The statistic is accumulated as an exact integer (twice the number of
/// correctly ordered pairs plus the number of tied pairs) and divided once.
fn auroc_of(mut items: Vec<(f64, bool)>) -> Result<f64> {
    if items.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::config("scores", "NaN score"));
    }
    let positives = items.iter().filter(|(_, p)| *p).count();
    let negatives = items.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    items.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < items.len() && items[j].0 == items[i].0 {
            if items[j].1 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        twice_u += p * (2 * neg_below + q);
        neg_below += q;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives as u128 * negatives as u128) as f64)
}

/// Image-level AUROC; `labels[i]` is true for defective images.
pub fn image_auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "scores vs labels",
            &[scores.len()],
            &[labels.len()],
        ));
    }
    auroc_of(scores.iter().copied().zip(labels.iter().copied()).collect())
}

/// Pixel-level AUROC over the pooled pixels of all maps.
pub fn pixel_auroc(maps: &[AnomalyMap], masks: &[Array2<bool>]) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(Error::shape("maps vs masks", &[maps.len()], &[masks.len()]));
    }
    let total: usize = masks.iter().map(|m| m.len()).sum();
    let mut items = Vec::with_capacity(total);
    for (m, k) in maps.iter().zip(masks) {
        if m.values.dim() != k.dim() {
            let (a, b) = (m.values.dim(), k.dim());
            return Err(Error::shape(
                "anomaly map vs mask",
                &[b.0, b.1],
                &[a.0, a.1],
            ));
        }
        items.extend(m.values.iter().zip(k.iter()).map(|(&v, &p)| (v as f64, p)));
    }
    auroc_of(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::MapBranch;
    use proptest::prelude::*;

    fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut twice, mut pairs) = (0u64, 0u64);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1;
                    twice += if si > sj {
                        2
                    } else if si == sj {
                        1
                    } else {
                        0
                    };
                }
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn perfect_and_inverted_rankings() {
        let labels = [false, false, true, true];
        assert_eq!(image_auroc(&[1.0, 2.0, 3.0, 4.0], &labels).unwrap(), 1.0);
        assert_eq!(image_auroc(&[4.0, 3.0, 2.0, 1.0], &labels).unwrap(), 0.0);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            image_auroc(&[1.0, 2.0], &[true, true]),
            Err(Error::SingleClass {
                positives: 2,
                negatives: 0
            })
        ));
    }

    #[test]
    fn pixel_maps_equal_to_masks_and_constant_maps() {
        let mask = Array2::from_shape_fn((4, 4), |(i, j)| i == j);
        let perfect = AnomalyMap::new(mask.mapv(|b| b as u8 as f32), MapBranch::Fused);
        assert_eq!(
            pixel_auroc(&[perfect], std::slice::from_ref(&mask)).unwrap(),
            1.0
        );
        let flat = AnomalyMap::new(Array2::from_elem((4, 4), 0.3), MapBranch::Fused);
        assert_eq!(
            pixel_auroc(&[flat], std::slice::from_ref(&mask)).unwrap(),
            0.5
        );
        let wrong = AnomalyMap::new(Array2::zeros((3, 4)), MapBranch::Fused);
        assert!(matches!(
            pixel_auroc(&[wrong], &[mask]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn matches_pair_counting(data in proptest::collection::vec((0u8..12, any::<bool>()), 2..120)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(image_auroc(&scores, &labels).unwrap(), pair_count(&scores, &labels));
        }

        #[test]
        fn invariant_under_increasing_transform(data in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(image_auroc(&scores, &labels).unwrap(), image_auroc(&warped, &labels).unwrap());
        }

        #[test]
        fn complement_sums_to_one(data in proptest::collection::vec((0u8..6, any::<bool>()), 2..60)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let sum = image_auroc(&scores, &labels).unwrap() + image_auroc(&scores, &flipped).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
