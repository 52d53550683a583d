use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Ridge added to the pooled covariance, relative to its mean eigenvalue.
pub const RIDGE_SCALE: f64 = 1e-6;

fn mean_and_scatter(x: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dims2();
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = DVector::from_fn(d, |j, _| m.column(j).sum() / n as f64);
    let mut c = m;
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    let scatter = c.transpose() * &c;
    (mean, scatter)
}

/// `sqrt((mu_a - mu_b)^T S^-1 (mu_a - mu_b))` where `S` is the pooled
/// within-class covariance plus `1e-6 * trace(S) / d` on the diagonal.
pub fn mahalanobis_between(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::shape("mahalanobis_between", a.shape(), b.shape()));
    }
    let (na, nb, d) = (a.rows(), b.rows(), a.cols());
    if na == 0 || nb == 0 || na + nb < 3 {
        return Err(Error::Invalid(format!(
            "pooled covariance needs both clusters non-empty and 3+ points, got {na} and {nb}"
        )));
    }
    let (ma, sa) = mean_and_scatter(a);
    let (mb, sb) = mean_and_scatter(b);
    let mut pooled = (sa + sb) / (na + nb - 2) as f64;
    let ridge = RIDGE_SCALE * pooled.trace() / d as f64;
    for i in 0..d {
        pooled[(i, i)] += ridge;
    }
    let diff = ma - mb;
    let chol = pooled
        .cholesky()
        .ok_or_else(|| Error::Invalid("within-class covariance is singular even after the ridge".into()))?;
    let y = chol
        .l()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::Invalid("within-class covariance is singular even after the ridge".into()))?;
    Ok(y.norm())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationRow {
    pub view: String,
    pub class_a: usize,
    pub class_b: usize,
    pub mahalanobis: f64,
    pub space: String,
}

/// Distances between every pair of classes present in `labels`, with
/// `class_a < class_b`.
pub fn class_separation(vectors: &Tensor, labels: &[usize], view: &str, space: &str) -> Result<Vec<SeparationRow>> {
    if vectors.rows() != labels.len() {
        return Err(Error::Invalid(format!("{} vectors for {} labels", vectors.rows(), labels.len())));
    }
    let n_classes = labels.iter().map(|l| l + 1).max().unwrap_or(0);
    let clusters: Vec<Option<Tensor>> = (0..n_classes)
        .map(|c| {
            let rows: Vec<Vec<f64>> = labels
                .iter()
                .enumerate()
                .filter(|&(_, &l)| l == c)
                .map(|(i, _)| vectors.row(i).to_vec())
                .collect();
            (!rows.is_empty()).then(|| Tensor::from_rows(&rows).expect("equal widths"))
        })
        .collect();
    let mut out = Vec::new();
    for a in 0..n_classes {
        for b in a + 1..n_classes {
            if let (Some(ca), Some(cb)) = (&clusters[a], &clusters[b]) {
                out.push(SeparationRow {
                    view: view.to_string(),
                    class_a: a,
                    class_b: b,
                    mahalanobis: mahalanobis_between(ca, cb)?,
                    space: space.to_string(),
                });
            }
        }
    }
    Ok(out)
}
