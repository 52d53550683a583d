use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{matmul, Tensor};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionResult {
    /// `[k x d]`, orthonormal rows.
    pub components: Tensor,
    /// `[n x k]`, the centered data in component coordinates.
    pub projected: Tensor,
    pub mean: Vec<f64>,
    /// Eigenvalues of the sample covariance, nonincreasing.
    pub explained_variance: Vec<f64>,
    /// Share of the total variance per component.
    pub explained_ratio: Vec<f64>,
}

/// Sample covariance of the rows, and the centered data.
pub(crate) fn centered_covariance(x: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
    let (n, d) = x.dims2();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut c = x.clone();
    for i in 0..n {
        for (v, m) in c.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = matmul(&c.transpose(), &c).expect("square");
    cov.scale_in_place(1.0 / (n as f64 - 1.0));
    (cov, c, mean)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
}

fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Unit vector orthogonal to `basis`, from the first standard basis vector
/// that survives Gram-Schmidt.
fn complement(d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best = vec![0.0; d];
    let mut best_norm = 0.0;
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        orthogonalize(&mut e, basis);
        orthogonalize(&mut e, basis);
        let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > best_norm + 1e-12 {
            best = e;
            best_norm = n;
        }
    }
    normalize(&mut best);
    best
}

/// Top eigenpair of a symmetric matrix restricted to the complement of
/// `basis`.
fn leading_eigenpair(cov: &Tensor, basis: &[Vec<f64>], scale: f64) -> (Vec<f64>, f64) {
    let d = cov.rows();
    // largest column, nudged along its own axis so that it is rarely
    // orthogonal to the dominant eigenvector
    let mut v: Vec<f64> = {
        let mut best = (0, -1.0);
        for j in 0..d {
            let n: f64 = (0..d).map(|i| cov.at(i, j).powi(2)).sum();
            if n > best.1 {
                best = (j, n);
            }
        }
        (0..d).map(|i| cov.at(i, best.0) + if i == best.0 { 1e-3 } else { 0.0 }).collect()
    };
    orthogonalize(&mut v, basis);
    if normalize(&mut v) <= 1e-300 {
        v = complement(d, basis);
    }
    for _ in 0..POWER_MAX_ITERS {
        let mut w = mat_vec(cov, &v);
        orthogonalize(&mut w, basis);
        if normalize(&mut w) <= scale * 1e-14 {
            // the remaining spectrum is (numerically) zero
            return (v, 0.0);
        }
        let diff: f64 = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if diff < POWER_TOL {
            break;
        }
    }
    let lambda: f64 = v.iter().zip(mat_vec(cov, &v)).map(|(a, b)| a * b).sum();
    (v, lambda.max(0.0))
}

/// Principal components of the rows of `vectors` by power iteration with
/// deflation. Each component's largest-magnitude entry is made positive.
pub fn pca_project(vectors: &Tensor, k: usize) -> Result<ProjectionResult> {
    if vectors.rank() != 2 {
        return Err(Error::Invalid(format!("pca expects a matrix, got shape {:?}", vectors.shape())));
    }
    let (n, d) = vectors.dims2();
    if n < 2 {
        return Err(Error::Invalid(format!("pca needs at least 2 points, got {n}")));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::Invalid(format!("pca component count {k} outside 1..={}", (n - 1).min(d))));
    }
    let (cov, centered, mean) = centered_covariance(vectors);
    let trace: f64 = (0..d).map(|i| cov.at(i, i)).sum();
    if !(trace > 0.0) {
        return Err(Error::Invalid("pca input has zero variance in every direction".into()));
    }

    let mut deflated = cov.clone();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for _ in 0..k {
        let (mut v, lambda) = leading_eigenpair(&deflated, &basis, trace);
        let lead = crate::numerics::argmax(&v.iter().map(|x| x.abs()).collect::<Vec<_>>());
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                let x = deflated.at(i, j) - lambda * v[i] * v[j];
                deflated.data_mut()[i * d + j] = x;
            }
        }
        variances.push(lambda);
        basis.push(v);
    }
    let components = Tensor::from_rows(&basis)?;
    let projected = matmul(&centered, &components.transpose())?;
    Ok(ProjectionResult {
        components,
        projected,
        mean,
        explained_ratio: variances.iter().map(|v| v / trace).collect(),
        explained_variance: variances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_give_axis_zero() {
        let x = Tensor::from_rows(&[vec![-2.0, 0.0], vec![1.0, 0.0], vec![4.0, 0.0], vec![5.0, 0.0]]).unwrap();
        let p = pca_project(&x, 1).unwrap();
        assert!((p.components.at(0, 0) - 1.0).abs() < 1e-12);
        assert!(p.components.at(0, 1).abs() < 1e-12);
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_cross_has_equal_variances() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let p = pca_project(&x, 2).unwrap();
        assert!((p.explained_variance[0] - p.explained_variance[1]).abs() < 1e-12);
        assert!((p.explained_variance[0] - 2.0 / 3.0).abs() < 1e-12);
        let dot: f64 = p.components.row(0).iter().zip(p.components.row(1)).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn zero_variance_and_bad_k_are_errors() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(pca_project(&x, 1).is_err());
        let y = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 2.0]]).unwrap();
        assert!(pca_project(&y, 2).is_err());
        assert!(pca_project(&y, 0).is_err());
        assert!(pca_project(&y, 1).is_ok());
    }

    #[test]
    fn rank_deficient_data_still_yields_orthonormal_basis() {
        // three collinear points in 3-d: the second component has variance
        // zero, and must still be orthogonal to the first
        let x = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![2.0, 2.0, 0.0]]).unwrap();
        let p = pca_project(&x, 2).unwrap();
        assert!(p.explained_variance[1].abs() < 1e-12);
        let c = &p.components;
        let dot: f64 = c.row(0).iter().zip(c.row(1)).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
        assert!((c.row(1).iter().map(|a| a * a).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
