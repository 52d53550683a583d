use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Neighbors {
    pub ranked: Vec<Neighbor>,
    pub warnings: Vec<String>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Symmetric in its arguments bit for bit.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

/// The `k` rows most cosine-similar to row `query`, best first, ties to the
/// lower index. Zero rows are skipped with a warning.
pub fn nearest_neighbors(query: usize, vectors: &Tensor, k: usize) -> Result<Neighbors> {
    let n = vectors.rows();
    if query >= n {
        return Err(Error::Invalid(format!("query {query} out of range for {n} vectors")));
    }
    if k >= n {
        return Err(Error::Invalid(format!("k = {k} must be below the {n} vectors")));
    }
    let q = vectors.row(query);
    if norm(q) == 0.0 {
        return Err(Error::Invalid(format!("query vector {query} has zero norm")));
    }
    let mut out = Neighbors::default();
    let mut scored = Vec::with_capacity(n - 1);
    for i in (0..n).filter(|&i| i != query) {
        let v = vectors.row(i);
        if norm(v) == 0.0 {
            out.warnings.push(format!("vector {i} has zero norm and was excluded"));
            continue;
        }
        scored.push(Neighbor {
            index: i,
            similarity: cosine(q, v),
        });
    }
    scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.index.cmp(&b.index)));
    if scored.len() < k {
        out.warnings.push(format!("only {} candidates for k = {k}", scored.len()));
    }
    scored.truncate(k);
    out.ranked = scored;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_ranks_first_with_similarity_one() {
        let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let nn = nearest_neighbors(0, &v, 2).unwrap();
        assert_eq!(nn.ranked[0].index, 2);
        assert!((nn.ranked[0].similarity - 1.0).abs() < 1e-15);
        assert!(nn.ranked.iter().all(|n| n.index != 0));
    }

    #[test]
    fn orthogonal_corpus_has_zero_similarities_and_index_ties() {
        let v = Tensor::identity(4);
        let nn = nearest_neighbors(2, &v, 3).unwrap();
        assert!(nn.ranked.iter().all(|n| n.similarity == 0.0));
        assert_eq!(nn.ranked.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn zero_vectors_are_excluded_with_warning() {
        let v = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let nn = nearest_neighbors(0, &v, 2).unwrap();
        assert_eq!(nn.ranked.len(), 1);
        assert_eq!(nn.warnings.len(), 2);
        assert!(nearest_neighbors(1, &v, 1).is_err());
        assert!(nearest_neighbors(0, &v, 3).is_err());
    }
}
