use rand::seq::SliceRandom;

use super::corpus::{Dataset, MultiViewExample};
use super::vocab::PAD;
use crate::rng;

/// Shortest padded sentence; equals the widest default filter window.
pub const MIN_PADDED_LEN: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    /// `tokens[example][view]`, padded to the batch's per-view length.
    pub tokens: Vec<Vec<Vec<usize>>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn pad_to(tokens: &[usize], len: usize) -> Vec<usize> {
    let mut out = tokens.to_vec();
    if out.len() < len {
        out.resize(len, PAD);
    }
    out
}

/// Per-view padding of a single example to at least `min_len`; used for
/// inference so predictions never depend on batch composition.
pub fn pad_example(ex: &MultiViewExample, min_len: usize) -> Vec<Vec<usize>> {
    ex.tokens.iter().map(|t| pad_to(t, min_len)).collect()
}

/// Shuffled, padded mini-batches over `indices`; the order is keyed by
/// `(seed, epoch)` only.
pub fn batch_iter<'a>(
    dataset: &'a Dataset,
    indices: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
    min_len: usize,
) -> impl Iterator<Item = Batch> + 'a {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order = indices.to_vec();
    order.shuffle(&mut rng::stream(seed, &[rng::TAG_SHUFFLE, epoch as u64]));
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| {
        let n_views = dataset.n_views();
        let lens: Vec<usize> = (0..n_views)
            .map(|v| {
                idx.iter()
                    .map(|&i| dataset.examples[i].tokens[v].len())
                    .max()
                    .unwrap_or(0)
                    .max(min_len)
            })
            .collect();
        let tokens = idx
            .iter()
            .map(|&i| {
                (0..n_views)
                    .map(|v| pad_to(&dataset.examples[i].tokens[v], lens[v]))
                    .collect()
            })
            .collect();
        Batch {
            labels: idx.iter().map(|&i| dataset.examples[i].label).collect(),
            indices: idx,
            tokens,
        }
    })
}
