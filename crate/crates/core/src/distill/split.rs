use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Train/validation index sets for `n` items. The train share is
/// `floor(ratio * n)`, capped so that at least one item is left for validation.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptyDataset("nothing to split".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(
            "split_ratio",
            format!("{ratio} is not in (0, 1)"),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64 + 1e-9).floor() as usize).min(n - 1);
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

/// Deterministic shuffled split of `items` into (train, validation).
pub fn split_dataset<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, val) = split_indices(items.len(), ratio, seed)?;
    let pick = |ids: Vec<usize>| ids.into_iter().map(|i| items[i].clone()).collect();
    Ok((pick(train), pick(val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_items_split_80_20_stably() {
        let items: Vec<u32> = (0..100).collect();
        let a = split_dataset(&items, 0.8, 7).unwrap();
        assert_eq!((a.0.len(), a.1.len()), (80, 20));
        assert_eq!(a, split_dataset(&items, 0.8, 7).unwrap());
    }

    #[test]
    fn five_items_leave_one_for_validation() {
        let (t, v) = split_dataset(&[1, 2, 3, 4, 5], 0.8, 0).unwrap();
        assert_eq!((t.len(), v.len()), (4, 1));
        let (t, v) = split_dataset(&[1, 2], 0.9, 0).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
    }

    #[test]
    fn seeds_change_the_permutation_only() {
        let items: Vec<u32> = (0..50).collect();
        let a = split_dataset(&items, 0.8, 1).unwrap();
        let b = split_dataset(&items, 0.8, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.0.len(), b.0.len());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            split_dataset::<u8>(&[], 0.8, 0),
            Err(Error::EmptyDataset(_))
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..300, ratio in 0.01f64..0.99, seed in any::<u64>()) {
            let (t, v) = split_indices(n, ratio, seed).unwrap();
            prop_assert!(!v.is_empty());
            let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
