use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Split;
use crate::error::{CmktError, Result};

/// Part sizes for `n` items under `ratio`: train and validation are
/// `n·r/Σr` rounded half-to-even, test takes the remainder.
pub fn split_sizes(n: usize, ratio: (u32, u32, u32)) -> Result<(usize, usize, usize)> {
    let total = (ratio.0 + ratio.1 + ratio.2) as f64;
    if total == 0.0 {
        return Err(CmktError::InvalidArgument("split ratio sums to zero".into()));
    }
    let train = (n as f64 * ratio.0 as f64 / total).round_ties_even() as usize;
    let val = (n as f64 * ratio.1 as f64 / total).round_ties_even() as usize;
    if train + val > n {
        return Err(CmktError::InvalidArgument(format!("ratio {ratio:?} overflows {n} items")));
    }
    Ok((train, val, n - train - val))
}

/// Seeded shuffle-and-cut. Each part keeps the items' original order.
pub fn split_dataset<T>(items: Vec<T>, ratio: (u32, u32, u32), seed: u64) -> Result<Split<T>> {
    let n = items.len();
    if n < 3 {
        return Err(CmktError::InvalidArgument(format!("need at least 3 items to split, got {n}")));
    }
    let (n_train, n_val, _) = split_sizes(n, ratio)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // part id per original position
    let mut part = vec![2u8; n];
    for (rank, &i) in order.iter().enumerate() {
        part[i] = if rank < n_train { 0 } else if rank < n_train + n_val { 1 } else { 2 };
    }
    let mut split = Split::default();
    for (item, p) in items.into_iter().zip(part) {
        match p {
            0 => split.train.push(item),
            1 => split.validation.push(item),
            _ => split.test.push(item),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_sizes() {
        assert_eq!(split_sizes(4345, (8, 1, 1)).unwrap(), (3476, 434, 435));
        assert_eq!(split_dataset((0..4345).collect(), (8, 1, 1), 0).unwrap().sizes(), (3476, 434, 435));
        assert_eq!(split_dataset((0..10).collect(), (8, 1, 1), 0).unwrap().sizes(), (8, 1, 1));
    }

    #[test]
    fn seeded() {
        let a = split_dataset((0..100).collect::<Vec<_>>(), (8, 1, 1), 5).unwrap();
        assert_eq!(a, split_dataset((0..100).collect(), (8, 1, 1), 5).unwrap());
        assert_ne!(a, split_dataset((0..100).collect(), (8, 1, 1), 6).unwrap());
    }

    #[test]
    fn too_few_items() {
        assert!(split_dataset(vec![1, 2], (8, 1, 1), 0).is_err());
    }

    proptest! {
        #[test]
        fn partitions(n in 3usize..600, seed in any::<u64>()) {
            let s = split_dataset((0..n).collect::<Vec<_>>(), (8, 1, 1), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            prop_assert_eq!(all.len(), n);
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), n);
        }
    }
}
