//! Small dense linear-algebra helpers shared by the clustering and Gaussian code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Arithmetic mean of a non-empty set of equal-length rows.
pub fn mean_of<R: AsRef<[f64]>>(rows: &[R]) -> Vec<f64> {
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    let mut acc = vec![0.0; dim];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.as_ref()) {
            *a += v;
        }
    }
    let n = rows.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Sample mean and unbiased (n - 1) sample covariance. With fewer than two
/// rows the covariance is the zero matrix.
pub fn sample_mean_cov<R: AsRef<[f64]>>(rows: &[R]) -> (DVector<f64>, DMatrix<f64>) {
    let mean = DVector::from_vec(mean_of(rows));
    let dim = mean.len();
    let mut cov = DMatrix::zeros(dim, dim);
    if rows.len() >= 2 {
        for r in rows {
            let d = DVector::from_column_slice(r.as_ref()) - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= (rows.len() - 1) as f64;
    }
    (mean, cov)
}

/// Averages a matrix with its transpose in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// A Cholesky factor of `cov + ridge * I`, with its log-determinant.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Factor {
    /// Factors `cov + floor * I`. If rounding leaves the matrix indefinite the
    /// ridge is grown by decades until the factorization succeeds.
    pub fn regularized(cov: &DMatrix<f64>, floor: f64) -> Factor {
        let n = cov.nrows();
        let mut sym = cov.clone();
        symmetrize(&mut sym);
        let mut ridge = floor.max(f64::MIN_POSITIVE);
        loop {
            let mut m = sym.clone();
            for i in 0..n {
                m[(i, i)] += ridge;
            }
            if let Some(chol) = Cholesky::new(m) {
                let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                return Factor { chol, log_det };
            }
            ridge *= 10.0;
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `dᵀ Σ⁻¹ d`.
    pub fn quadratic_form(&self, d: &DVector<f64>) -> f64 {
        // Forward substitution with L only: dᵀ(LLᵀ)⁻¹d = |L⁻¹d|².
        let l = self.chol.l_dirty();
        let n = d.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = d[i];
            for (j, yj) in y.iter().enumerate().take(i) {
                s -= l[(i, j)] * yj;
            }
            y[i] = s / l[(i, i)];
        }
        y.iter().map(|v| v * v).sum()
    }

    /// Mahalanobis distance of `x` from `mean` under this covariance.
    pub fn mahalanobis(&self, x: &[f64], mean: &DVector<f64>) -> f64 {
        let d = DVector::from_iterator(x.len(), x.iter().zip(mean.iter()).map(|(a, b)| a - b));
        self.quadratic_form(&d).max(0.0).sqrt()
    }
}

/// Median of a non-empty slice (mutates order).
pub fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0, "median of empty slice");
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_matches_explicit_inverse() {
        let cov = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = Factor::regularized(&cov, 0.0);
        let d = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let inv = cov.clone().try_inverse().unwrap();
        let expected = (d.transpose() * inv * &d)[(0, 0)];
        assert!((f.quadratic_form(&d) - expected).abs() < 1e-12);
        assert!((f.log_det() - cov.determinant().ln()).abs() < 1e-12);
    }

    #[test]
    fn singular_covariance_gets_ridge() {
        let cov = DMatrix::zeros(2, 2);
        let f = Factor::regularized(&cov, 1e-6);
        assert!((f.log_det() - 2.0 * 1e-6f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_in_place(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
