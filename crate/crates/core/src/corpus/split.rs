use super::CorpusError;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Document indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded k-fold split of `len` documents.
///
/// Indices are shuffled once, then cut into `k` contiguous folds whose sizes
/// differ by at most one. Fold `i` holds out chunk `i`; its first half
/// (rounded down) is validation, the rest test. Everything else is training.
pub fn split_kfold(len: usize, k: usize, seed: u64) -> Result<Vec<FoldSplit>, CorpusError> {
    if k < 2 || len < 2 * k {
        return Err(CorpusError::DatasetTooSmall { len, k });
    }
    let mut order: Vec<usize> = (0..len).collect();
    Rng::with_stream(seed, 0x5EED_F01D).shuffle(&mut order);

    let base = len / k;
    let extra = len % k;
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for i in 0..k {
        let size = base + usize::from(i < extra);
        bounds.push(bounds[i] + size);
    }

    Ok((0..k)
        .map(|i| {
            let held = &order[bounds[i]..bounds[i + 1]];
            let n_val = held.len() / 2;
            let train = order[..bounds[i]]
                .iter()
                .chain(&order[bounds[i + 1]..])
                .copied()
                .collect();
            FoldSplit {
                train,
                validation: held[..n_val].to_vec(),
                test: held[n_val..].to_vec(),
            }
        })
        .collect())
}
