use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sample_mean_cov, symmetrize, Factor};

/// Ridge added to covariances before they are inverted.
pub const COV_FLOOR: f64 = 1e-6;

/// One weighted Gaussian with the number of samples behind it.
///
/// `covariance` holds the exact unbiased sample covariance (zero before the
/// second sample); the ridge floor is applied only when the matrix is used,
/// see [`factor`](Self::factor).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianComponent {
    pub fn from_point(f: &[f64]) -> GaussianComponent {
        GaussianComponent {
            weight: 1.0,
            mean: DVector::from_column_slice(f),
            covariance: DMatrix::zeros(f.len(), f.len()),
            count: 1,
        }
    }

    pub fn from_samples<R: AsRef<[f64]>>(rows: &[R]) -> Result<GaussianComponent> {
        if rows.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        let (mean, covariance) = sample_mean_cov(rows);
        Ok(GaussianComponent {
            weight: 1.0,
            mean,
            covariance,
            count: rows.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Absorbs one sample:
    ///
    /// `μ_n = (μ_{n-1} (n - 1) + f) / n`
    /// `Σ_n = (n - 2)/(n - 1) Σ_{n-1} + (f - μ_{n-1})(f - μ_{n-1})ᵀ / n`
    pub fn update(&mut self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: f.len(),
            });
        }
        let n = self.count + 1;
        let d = DVector::from_column_slice(f) - &self.mean;
        if n == 1 {
            self.mean = DVector::from_column_slice(f);
            self.covariance.fill(0.0);
        } else {
            let nf = n as f64;
            self.mean = (&self.mean * (nf - 1.0) + DVector::from_column_slice(f)) / nf;
            self.covariance *= (nf - 2.0) / (nf - 1.0);
            self.covariance.ger(1.0 / nf, &d, &d, 1.0);
            symmetrize(&mut self.covariance);
        }
        self.count = n;
        Ok(())
    }

    /// Cholesky factor of the ridge-regularized covariance.
    pub fn factor(&self, floor: f64) -> Factor {
        Factor::regularized(&self.covariance, floor)
    }

    pub fn mahalanobis(&self, f: &[f64], floor: f64) -> f64 {
        self.factor(floor).mahalanobis(f, &self.mean)
    }

    /// Marginal over the given coordinates.
    pub fn marginal(&self, indices: &[usize]) -> GaussianComponent {
        let k = indices.len();
        GaussianComponent {
            weight: self.weight,
            mean: DVector::from_iterator(k, indices.iter().map(|&i| self.mean[i])),
            covariance: DMatrix::from_fn(k, k, |r, c| self.covariance[(indices[r], indices[c])]),
            count: self.count,
        }
    }

    /// Exact sample statistics of the union of the two underlying sample sets.
    pub fn pooled(a: &GaussianComponent, b: &GaussianComponent) -> GaussianComponent {
        let (na, nb) = (a.count as f64, b.count as f64);
        let n = na + nb;
        let delta = &b.mean - &a.mean;
        let mean = (&a.mean * na + &b.mean * nb) / n;
        let mut scatter = &a.covariance * (na - 1.0).max(0.0) + &b.covariance * (nb - 1.0).max(0.0);
        scatter.ger(na * nb / n, &delta, &delta, 1.0);
        let covariance = if n > 1.0 { scatter / (n - 1.0) } else { scatter };
        GaussianComponent {
            weight: a.weight + b.weight,
            mean,
            covariance,
            count: a.count + b.count,
        }
    }
}

/// Functional form of [`GaussianComponent::update`].
pub fn incremental_update(c: &GaussianComponent, f: &[f64]) -> Result<GaussianComponent> {
    let mut out = c.clone();
    out.update(f)?;
    Ok(out)
}

/// Bhattacharyya distance between two Gaussians, both ridge-regularized by `floor`:
///
/// `⅛ δᵀ Σ̄⁻¹ δ + ½ ln(det Σ̄ / sqrt(det Σ1 det Σ2))`, `Σ̄ = (Σ1 + Σ2) / 2`.
pub fn bhattacharyya(g1: &GaussianComponent, g2: &GaussianComponent, floor: f64) -> Result<f64> {
    let f1 = g1.factor(floor);
    let f2 = g2.factor(floor);
    bhattacharyya_factored(g1, &f1, g2, &f2, floor)
}

/// As [`bhattacharyya`] with the two individual factors already computed.
pub fn bhattacharyya_factored(
    g1: &GaussianComponent,
    f1: &Factor,
    g2: &GaussianComponent,
    f2: &Factor,
    floor: f64,
) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            found: g2.dim(),
        });
    }
    let avg = (&g1.covariance + &g2.covariance) * 0.5;
    let fa = Factor::regularized(&avg, floor);
    let delta = &g1.mean - &g2.mean;
    let mean_term = fa.quadratic_form(&delta) / 8.0;
    let cov_term = 0.5 * (fa.log_det() - 0.5 * (f1.log_det() + f2.log_det()));
    Ok(mean_term + cov_term)
}
