//! k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::squared_distance;

/// Labels, centroids and sizes of a hard partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    /// Cluster index in `0..k` per point.
    pub labels: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
}

impl ClusteringResult {
    /// Builds means, sizes and objective from a labeling. Empty clusters get
    /// `fallback` centroids when given, otherwise the zero vector.
    pub fn from_labels<P: AsRef<[f64]>>(
        points: &[P],
        labels: Vec<usize>,
        k: usize,
        fallback: Option<&[Vec<f64>]>,
    ) -> ClusteringResult {
        let dim = points.first().map_or(0, |p| p.as_ref().len());
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sizes[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.as_ref()) {
                *s += v;
            }
        }
        let means: Vec<Vec<f64>> = sums
            .into_iter()
            .enumerate()
            .map(|(c, s)| {
                if sizes[c] == 0 {
                    fallback.map_or_else(|| vec![0.0; dim], |f| f[c].clone())
                } else {
                    s.into_iter().map(|v| v / sizes[c] as f64).collect()
                }
            })
            .collect();
        let objective = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| squared_distance(p.as_ref(), &means[l]))
            .sum();
        ClusteringResult {
            labels,
            means,
            sizes,
            objective,
        }
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == cluster).then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iter: 300,
        }
    }
}

/// Best-of-`restarts` k-means. Deterministic for a given seed.
pub fn kmeans<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<ClusteringResult> {
    validate(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusteringResult> = None;
    for _ in 0..config.restarts.max(1) {
        let init = plus_plus_init(points, k, &mut rng);
        let (result, _) = lloyd(points, init, config.max_iter);
        if best.as_ref().is_none_or(|b| result.objective < b.objective) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn validate<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::TooFewPoints {
            needed: k,
            got: points.len(),
        });
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.as_ref().len(),
        });
    }
    Ok(())
}

/// k-means++ seeding: each next center is drawn with probability proportional
/// to the squared distance to the nearest chosen center.
pub fn plus_plus_init<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].as_ref().to_vec());
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if *d <= 0.0 {
                    continue;
                }
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iterations from the given centers until the assignment is a fixed
/// point or `max_iter` is reached. Also returns the objective after every
/// assignment step.
///
/// A cluster that empties is re-seeded at the point farthest from its
/// assigned center.
pub fn lloyd<P: AsRef<[f64]>>(
    points: &[P],
    mut centers: Vec<Vec<f64>>,
    max_iter: usize,
) -> (ClusteringResult, Vec<f64>) {
    let k = centers.len();
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let assigned: Vec<(usize, f64)> = points.iter().map(|p| nearest_center(p.as_ref(), &centers)).collect();
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        history.push(assigned.iter().map(|a| a.1).sum());
        let converged = new_labels == labels;
        labels = new_labels;
        if converged {
            break;
        }
        let mut result = ClusteringResult::from_labels(points, labels.clone(), k, Some(&centers));
        reseed_empty(points, &mut result, &assigned);
        centers = result.means;
    }
    let result = ClusteringResult::from_labels(points, labels, k, Some(&centers));
    (result, history)
}

fn reseed_empty<P: AsRef<[f64]>>(points: &[P], result: &mut ClusteringResult, assigned: &[(usize, f64)]) {
    let mut taken = vec![false; points.len()];
    for c in 0..result.k() {
        if result.sizes[c] != 0 {
            continue;
        }
        let far = assigned
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        if let Some(i) = far {
            taken[i] = true;
            result.means[c] = points[i].as_ref().to_vec();
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn planted(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(vec![
                    center[0] + noise.sample(&mut rng),
                    center[1] + noise.sample(&mut rng),
                ]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    /// True when two labelings agree up to a permutation of cluster ids.
    pub(crate) fn same_partition(a: &[usize], b: &[usize]) -> bool {
        use std::collections::HashMap;
        let mut ab = HashMap::new();
        let mut ba = HashMap::new();
        a.iter()
            .zip(b)
            .all(|(x, y)| *ab.entry(*x).or_insert(*y) == *y && *ba.entry(*y).or_insert(*x) == *x)
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 4.0], vec![4.0, 2.0]];
        let r = kmeans(&pts, 1, 0, &KMeansConfig::default()).unwrap();
        assert_eq!(r.sizes, vec![3]);
        assert!((r.means[0][0] - 2.0).abs() < 1e-12 && (r.means[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_planted_gaussians() {
        let (pts, truth) = planted(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 30, 1.0, 7);
        let r = kmeans(&pts, 3, 1, &KMeansConfig::default()).unwrap();
        assert!(same_partition(&r.labels, &truth));
        for c in 0..3 {
            let members: Vec<&Vec<f64>> = r.members(c).into_iter().map(|i| &pts[i]).collect();
            let m = crate::linalg::mean_of(&members);
            assert!(squared_distance(&m, &r.means[c]).sqrt() < 1e-9);
        }
    }

    #[test]
    fn lloyd_objective_non_increasing_and_fixed_point() {
        let (pts, _) = planted(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]], 25, 1.2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = plus_plus_init(&pts, 4, &mut rng);
        let (r, hist) = lloyd(&pts, init, 300);
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{hist:?}");
        }
        for (p, &l) in pts.iter().zip(&r.labels) {
            assert_eq!(nearest_center(p, &r.means).0, l);
        }
    }

    #[test]
    fn k_larger_than_n_is_an_error() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            kmeans(&pts, 3, 0, &KMeansConfig::default()),
            Err(Error::TooFewPoints { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn identical_points_leave_empty_clusters_guarded() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let r = kmeans(&pts, 3, 0, &KMeansConfig::default()).unwrap();
        assert_eq!(r.sizes.iter().sum::<usize>(), 5);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let (pts, _) = planted(&[[0.0, 0.0], [2.0, 0.0]], 20, 1.0, 11);
        let a = kmeans(&pts, 2, 42, &KMeansConfig::default()).unwrap();
        let b = kmeans(&pts, 2, 42, &KMeansConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
