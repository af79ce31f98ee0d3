//! Normalized spectral clustering (Ng, Jordan & Weiss).

use nalgebra::{DMatrix, SymmetricEigen};

use super::affinity::AffinityMatrix;
use super::kmeans::{kmeans, ClusteringResult, KMeansConfig};
use crate::error::{Error, Result};

/// Degrees below this are floored so isolated points do not divide by zero.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// Leading eigenvectors of `D^-1/2 A D^-1/2`, computed once and reused for
/// every cluster count up to `max_k`.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// n × max_k, columns ordered by descending eigenvalue.
    vectors: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl SpectralEmbedding {
    pub fn new(affinity: &AffinityMatrix, max_k: usize) -> Result<SpectralEmbedding> {
        let n = affinity.len();
        if max_k == 0 || max_k > n {
            return Err(Error::TooFewPoints {
                needed: max_k.max(1),
                got: n,
            });
        }
        let a = &affinity.0;
        let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / a.row(i).sum().max(DEGREE_FLOOR).sqrt()).collect();
        let l = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * a[(i, j)] * inv_sqrt[j]);
        let eig = SymmetricEigen::new(l);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
        let mut vectors = DMatrix::zeros(n, max_k);
        for (c, &src) in order.iter().take(max_k).enumerate() {
            vectors.set_column(c, &eig.eigenvectors.column(src));
        }
        Ok(SpectralEmbedding {
            vectors,
            eigenvalues: order.iter().take(max_k).map(|&i| eig.eigenvalues[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn max_k(&self) -> usize {
        self.vectors.ncols()
    }

    /// Rows of the top-`k` eigenvector matrix, each scaled to unit length.
    pub fn rows(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| {
                let row: Vec<f64> = (0..k).map(|c| self.vectors[(i, c)]).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.into_iter().map(|v| v / norm).collect()
                } else {
                    row
                }
            })
            .collect()
    }

    /// k-means on the normalized embedding rows. Means and objective of the
    /// result live in the embedding space.
    pub fn cluster(&self, k: usize, seed: u64, config: &KMeansConfig) -> Result<ClusteringResult> {
        if k > self.max_k() {
            return Err(Error::Config(format!(
                "embedding holds {} eigenvectors, {} requested",
                self.max_k(),
                k
            )));
        }
        kmeans(&self.rows(k), k, seed, config)
    }
}

/// One-shot spectral clustering into `k` groups.
pub fn spectral_cluster(affinity: &AffinityMatrix, k: usize, seed: u64) -> Result<ClusteringResult> {
    if k > affinity.len() {
        return Err(Error::TooFewPoints {
            needed: k,
            got: affinity.len(),
        });
    }
    SpectralEmbedding::new(affinity, k)?.cluster(k, seed, &KMeansConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offline::affinity::build_affinity;
    use crate::offline::kmeans::tests::{planted, same_partition};

    #[test]
    fn block_diagonal_recovers_blocks() {
        let n = 10;
        let a = DMatrix::from_fn(n, n, |i, j| if i != j && (i < 4) == (j < 4) { 0.8 } else { 0.0 });
        let r = spectral_cluster(&AffinityMatrix(a), 2, 0).unwrap();
        let truth: Vec<usize> = (0..n).map(|i| usize::from(i >= 4)).collect();
        assert!(same_partition(&r.labels, &truth));
    }

    #[test]
    fn planted_three_clusters() {
        let (pts, truth) = planted(&[[0.0, 0.0], [8.0, 0.0], [4.0, 7.0]], 25, 0.8, 21);
        let a = build_affinity(&pts, Some(1.5)).unwrap();
        let r = spectral_cluster(&a, 3, 4).unwrap();
        assert!(same_partition(&r.labels, &truth));
    }

    #[test]
    fn rows_have_unit_norm() {
        let (pts, _) = planted(&[[0.0, 0.0], [5.0, 5.0]], 15, 1.0, 1);
        let emb = SpectralEmbedding::new(&build_affinity(&pts, None).unwrap(), 3).unwrap();
        for k in 1..=3 {
            for row in emb.rows(k) {
                let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn isolated_point_is_floored() {
        let mut a = DMatrix::from_element(4, 4, 0.5);
        a.fill_diagonal(0.0);
        for j in 0..4 {
            a[(3, j)] = 0.0;
            a[(j, 3)] = 0.0;
        }
        let r = spectral_cluster(&AffinityMatrix(a), 2, 0).unwrap();
        assert_eq!(r.labels.len(), 4);
        assert!(r.labels[..3].iter().all(|&l| l == r.labels[0]));
        assert_ne!(r.labels[3], r.labels[0]);
    }
}
