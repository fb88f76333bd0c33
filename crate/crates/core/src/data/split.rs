use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

/// Training / validation / test proportions.
pub const PAPER_RATIOS: [f64; 3] = [0.9, 0.05, 0.05];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded generator for one purpose (`stream`) derived from a user seed.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SPLIT_STREAM: u64 = 1 << 62;
const BATCH_STREAM: u64 = 1 << 61;

/// Shuffles `0..n` with Fisher–Yates and cuts it into contiguous
/// train / validation / test runs. Validation and test sizes are rounded
/// to nearest; the remainder goes to training.
pub fn split(n: usize, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, DataError> {
    if n == 0 {
        return Err(DataError::EmptyDataset);
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(ratios));
    }
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n);
    let n_test = ((n as f64 * ratios[2]).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed, SPLIT_STREAM));
    let test = idx.split_off(n_train + n_val);
    let validation = idx.split_off(n_train);
    Ok(DatasetSplit { train: idx, validation, test })
}

/// Reshuffles `indices` for `epoch` (seeded by `(seed, epoch)`) and chunks
/// them into batches; the last batch may be short.
pub fn minibatches(indices: &[usize], batch_size: usize, epoch: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order = indices.to_vec();
    order.shuffle(&mut seeded_rng(seed, BATCH_STREAM + epoch as u64));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_sizes() {
        let s = split(10_000, PAPER_RATIOS, 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (9000, 500, 500));
    }

    #[test]
    fn small_rounding() {
        let s = split(20, PAPER_RATIOS, 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (18, 1, 1));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(split(500, PAPER_RATIOS, 3).unwrap(), split(500, PAPER_RATIOS, 3).unwrap());
        assert_ne!(split(500, PAPER_RATIOS, 3).unwrap(), split(500, PAPER_RATIOS, 4).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(split(0, PAPER_RATIOS, 1), Err(DataError::EmptyDataset)));
        assert!(matches!(split(10, [0.5, 0.5, 0.5], 1), Err(DataError::BadRatios(_))));
        assert!(matches!(split(10, [1.2, -0.1, -0.1], 1), Err(DataError::BadRatios(_))));
    }

    #[test]
    fn batch_sizes() {
        let idx: Vec<usize> = (0..90).collect();
        let b = minibatches(&idx, 30, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![30, 30, 30]);
        let idx: Vec<usize> = (0..31).collect();
        let b = minibatches(&idx, 30, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![30, 1]);
    }

    #[test]
    fn epochs_reshuffle() {
        let idx: Vec<usize> = (0..100).collect();
        let e1: Vec<usize> = minibatches(&idx, 30, 1, 5).concat();
        let e2: Vec<usize> = minibatches(&idx, 30, 2, 5).concat();
        assert_ne!(e1, e2);
        assert_eq!(e1, minibatches(&idx, 30, 1, 5).concat());
    }

    proptest! {
        #[test]
        fn split_partitions(n in 3usize..2000, seed in any::<u64>()) {
            let s = split(n, PAPER_RATIOS, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn batches_permute(n in 1usize..300, batch in 1usize..64, epoch in 0usize..10, seed in any::<u64>()) {
            let idx: Vec<usize> = (0..n).map(|i| i * 3).collect();
            let batches = minibatches(&idx, batch, epoch, seed);
            prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
            let mut flat = batches.concat();
            flat.sort_unstable();
            prop_assert_eq!(flat, idx);
        }
    }
}
