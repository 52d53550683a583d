use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Index lists into a dataset. `dev` is always carved from the training pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
    pub fold: Option<usize>,
}

impl DatasetSplit {
    /// Moves a seeded random `dev_fraction` of `pool` into dev (at least one
    /// example when the pool has two or more).
    pub fn carve_dev(pool: &[usize], test: Vec<usize>, dev_fraction: f64, seed: u64, fold: Option<usize>) -> Self {
        let mut shuffled = pool.to_vec();
        shuffled.shuffle(&mut rng::stream(seed, &[rng::TAG_FOLDS, fold.map_or(u64::MAX, |f| f as u64), 1]));
        let n_dev = if pool.len() >= 2 {
            ((pool.len() as f64 * dev_fraction).round() as usize).clamp(1, pool.len() - 1)
        } else {
            0
        };
        let mut dev = shuffled[..n_dev].to_vec();
        let mut train = shuffled[n_dev..].to_vec();
        dev.sort_unstable();
        train.sort_unstable();
        let mut test = test;
        test.sort_unstable();
        DatasetSplit { train, dev, test, fold }
    }
}

/// Stratified `k`-fold partition. Fold `i` tests on its partition and trains
/// on the rest, minus a random dev slice. Returns warnings for classes with
/// fewer than `k` members.
pub fn make_folds(
    labels: &[usize],
    k: usize,
    seed: u64,
    dev_fraction: f64,
) -> Result<(Vec<DatasetSplit>, Vec<String>)> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Invalid(format!("need k >= 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Invalid(format!("{n} examples cannot fill {k} folds")));
    }
    let n_classes = labels.iter().map(|l| l + 1).max().unwrap_or(0);
    let mut r = rng::stream(seed, &[rng::TAG_FOLDS]);
    let mut warnings = Vec::new();
    let mut assignment = vec![0usize; n];
    // Round-robin dealing continues across classes so fold sizes stay within one.
    let mut cursor = 0usize;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            warnings.push(format!(
                "class {c} has {} examples, fewer than {k} folds",
                members.len()
            ));
        }
        members.shuffle(&mut r);
        for i in members {
            assignment[i] = cursor % k;
            cursor += 1;
        }
    }
    let splits = (0..k)
        .map(|f| {
            let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let pool: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            DatasetSplit::carve_dev(&pool, test, dev_fraction, seed, Some(f))
        })
        .collect();
    Ok((splits, warnings))
}
