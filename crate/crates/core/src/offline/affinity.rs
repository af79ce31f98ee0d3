use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{median_in_place, squared_distance};

/// Floor applied to the kernel width when all points coincide.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Symmetric, non-negative pairwise affinities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(pub DMatrix<f64>);

impl AffinityMatrix {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    fn max_off_diagonal(&self) -> f64 {
        let n = self.len();
        let mut m: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    m = m.max(self.0[(i, j)]);
                }
            }
        }
        m
    }
}

/// Median of all pairwise Euclidean distances.
pub fn median_pairwise_distance<P: AsRef<[f64]>>(points: &[P]) -> f64 {
    let n = points.len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(squared_distance(points[i].as_ref(), points[j].as_ref()).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    median_in_place(&mut d)
}

/// Gaussian-kernel affinity `exp(-|xi - xj|² / 2σ²)`. `kernel_scale` overrides
/// σ; by default σ is the median pairwise distance.
pub fn build_affinity<P: AsRef<[f64]>>(points: &[P], kernel_scale: Option<f64>) -> Result<AffinityMatrix> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let sigma = kernel_scale
        .unwrap_or_else(|| median_pairwise_distance(points))
        .max(SIGMA_FLOOR);
    let denom = 2.0 * sigma * sigma;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (-squared_distance(points[i].as_ref(), points[j].as_ref()) / denom).exp();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(AffinityMatrix(a))
}

/// Scales each matrix by its largest off-diagonal entry and averages them
/// with equal weights.
pub fn combine_affinities(a: &AffinityMatrix, b: &AffinityMatrix) -> Result<AffinityMatrix> {
    if a.0.shape() != b.0.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let scale = |m: &AffinityMatrix| {
        let mx = m.max_off_diagonal();
        if mx > 0.0 {
            &m.0 / mx
        } else {
            m.0.clone()
        }
    };
    let mut out = (scale(a) + scale(b)) * 0.5;
    out.fill_diagonal(0.0);
    Ok(AffinityMatrix(out))
}
