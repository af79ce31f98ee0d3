//! Davies-Bouldin cluster validity and model selection over the cluster count.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::affinity::{build_affinity, AffinityMatrix};
use super::kmeans::{kmeans, ClusteringResult, KMeansConfig};
use super::spectral::SpectralEmbedding;
use crate::error::{Error, Result};
use crate::linalg::euclidean;

/// Davies-Bouldin index with intra-cluster spread
/// `S_k = sqrt(mean_i |x_i - μ_k|)` (square root of the mean unsquared
/// distance). Coincident centroids make that pair's ratio infinite.
pub fn db_index<P: AsRef<[f64]>>(result: &ClusteringResult, points: &[P]) -> Result<f64> {
    let k = result.k();
    if k < 2 {
        return Err(Error::Config("Davies-Bouldin index needs at least 2 clusters".into()));
    }
    if result.sizes.contains(&0) {
        return Err(Error::InvalidInput(
            "Davies-Bouldin index undefined with empty clusters".into(),
        ));
    }
    let mut dist_sum = vec![0.0; k];
    for (p, &l) in points.iter().zip(&result.labels) {
        dist_sum[l] += euclidean(p.as_ref(), &result.means[l]);
    }
    let spread: Vec<f64> = dist_sum
        .iter()
        .zip(&result.sizes)
        .map(|(s, &n)| (s / n as f64).sqrt())
        .collect();
    let mut total = 0.0;
    for a in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for b in 0..k {
            if a == b {
                continue;
            }
            let m = euclidean(&result.means[a], &result.means[b]);
            let r = if m > 0.0 {
                (spread[a] + spread[b]) / m
            } else {
                f64::INFINITY
            };
            worst = worst.max(r);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    KMeans,
    Spectral,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::KMeans => "kmeans",
            Method::Spectral => "spectral",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" | "k-means" => Ok(Method::KMeans),
            "spectral" => Ok(Method::Spectral),
            other => Err(Error::Config(format!("unknown clustering method `{other}`"))),
        }
    }
}

/// Clusters one point set at any requested K. For spectral clustering the
/// eigen-decomposition is done once, up to `max_k`.
pub struct Clusterer<'a, P> {
    points: &'a [P],
    embedding: Option<SpectralEmbedding>,
    pub kmeans: KMeansConfig,
}

impl<'a, P: AsRef<[f64]> + Sync> Clusterer<'a, P> {
    /// `affinity` is only used by spectral clustering; when absent it is built
    /// from `points` with the median-heuristic kernel.
    pub fn new(points: &'a [P], method: Method, affinity: Option<AffinityMatrix>, max_k: usize) -> Result<Self> {
        if max_k > points.len() {
            return Err(Error::TooFewPoints {
                needed: max_k,
                got: points.len(),
            });
        }
        let embedding = match method {
            Method::KMeans => None,
            Method::Spectral => {
                let a = match affinity {
                    Some(a) => a,
                    None => build_affinity(points, None)?,
                };
                if a.len() != points.len() {
                    return Err(Error::DimensionMismatch {
                        expected: points.len(),
                        found: a.len(),
                    });
                }
                Some(SpectralEmbedding::new(&a, max_k)?)
            }
        };
        Ok(Clusterer {
            points,
            embedding,
            kmeans: KMeansConfig::default(),
        })
    }

    pub fn points(&self) -> &[P] {
        self.points
    }

    /// Partition into `k` clusters. Means and objective are always expressed
    /// in the original point space.
    pub fn cluster(&self, k: usize, seed: u64) -> Result<ClusteringResult> {
        match &self.embedding {
            None => kmeans(self.points, k, seed, &self.kmeans),
            Some(e) => {
                let r = e.cluster(k, seed, &self.kmeans)?;
                Ok(ClusteringResult::from_labels(self.points, r.labels, k, None))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelectionCurve {
    /// `(K, V_DB(K))`; infinite when a partition had empty clusters.
    pub entries: Vec<(usize, f64)>,
    pub chosen: usize,
}

/// Which extreme of the Davies-Bouldin curve selects K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DbRule {
    /// Lower is better (the usual reading of the index).
    #[default]
    Argmin,
    /// Literal argmax.
    Argmax,
}

/// Clusters at every K in `k_range` and picks K by the Davies-Bouldin rule,
/// breaking ties toward smaller K. Returns the curve and the chosen partition.
pub fn select_k<P: AsRef<[f64]> + Sync>(
    clusterer: &Clusterer<'_, P>,
    k_range: RangeInclusive<usize>,
    seed: u64,
    rule: DbRule,
) -> Result<(ModelSelectionCurve, ClusteringResult)> {
    if k_range.is_empty() {
        return Err(Error::Config("empty K range".into()));
    }
    let ks: Vec<usize> = k_range.collect();
    let runs: Vec<(usize, ClusteringResult, f64)> = ks
        .par_iter()
        .map(|&k| {
            let r = clusterer.cluster(k, seed)?;
            let v = if r.sizes.contains(&0) {
                f64::INFINITY
            } else {
                db_index(&r, clusterer.points())?
            };
            Ok((k, r, v))
        })
        .collect::<Result<_>>()?;

    let better = |v: f64, best: f64| match rule {
        DbRule::Argmin => v < best,
        DbRule::Argmax => v.is_finite() && (v > best || !best.is_finite()),
    };
    let mut best = 0;
    for i in 1..runs.len() {
        if better(runs[i].2, runs[best].2) {
            best = i;
        }
    }
    let entries = runs.iter().map(|(k, _, v)| (*k, *v)).collect();
    let chosen = runs[best].0;
    let result = runs.into_iter().nth(best).map(|r| r.1).expect("non-empty");
    Ok((ModelSelectionCurve { entries, chosen }, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offline::kmeans::tests::planted;

    fn two_clusters(spread: f64) -> (Vec<Vec<f64>>, ClusteringResult) {
        // Four points per cluster on the axes around (0,0) and (4,0).
        let mut pts = Vec::new();
        for c in [0.0, 4.0] {
            for (dx, dy) in [(spread, 0.0), (-spread, 0.0), (0.0, spread), (0.0, -spread)] {
                pts.push(vec![c + dx, dy]);
            }
        }
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let r = ClusteringResult::from_labels(&pts, labels, 2, None);
        (pts, r)
    }

    #[test]
    fn singletons_score_zero() {
        let pts = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        let r = ClusteringResult::from_labels(&pts, vec![0, 1], 2, None);
        assert_eq!(db_index(&r, &pts).unwrap(), 0.0);
    }

    #[test]
    fn hand_built_two_clusters() {
        // Every point sits at distance 1 from its centroid: S = sqrt(1) = 1, M = 4.
        let (pts, r) = two_clusters(1.0);
        assert!((db_index(&r, &pts).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shrinking_spread_lowers_index() {
        let mut last = f64::INFINITY;
        for s in [2.0, 1.0, 0.5, 0.25] {
            let (pts, r) = two_clusters(s);
            let v = db_index(&r, &pts).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn coincident_centroids_are_infinite() {
        let pts = vec![vec![-1.0], vec![1.0], vec![-2.0], vec![2.0]];
        let r = ClusteringResult::from_labels(&pts, vec![0, 0, 1, 1], 2, None);
        assert_eq!(db_index(&r, &pts).unwrap(), f64::INFINITY);
    }

    #[test]
    fn index_preconditions() {
        let pts = vec![vec![0.0], vec![1.0]];
        let one = ClusteringResult::from_labels(&pts, vec![0, 0], 1, None);
        assert!(db_index(&one, &pts).is_err());
        let empty = ClusteringResult::from_labels(&pts, vec![0, 0], 2, None);
        assert!(db_index(&empty, &pts).is_err());
    }

    #[test]
    fn invariant_under_translation_and_rotation() {
        let (pts, truth) = planted(&[[0.0, 0.0], [6.0, 1.0], [2.0, 7.0]], 20, 1.0, 13);
        let r = ClusteringResult::from_labels(&pts, truth.clone(), 3, None);
        let v = db_index(&r, &pts).unwrap();
        let (c, s) = (0.6f64.cos(), 0.6f64.sin());
        let moved: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| vec![c * p[0] - s * p[1] + 5.0, s * p[0] + c * p[1] - 3.0])
            .collect();
        let r2 = ClusteringResult::from_labels(&moved, truth, 3, None);
        assert!((db_index(&r2, &moved).unwrap() - v).abs() < 1e-9);
    }

    #[test]
    fn selects_planted_count() {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0], [5.0, 20.0]];
        let (pts, _) = planted(&centers, 30, 1.0, 99);
        for method in [Method::KMeans, Method::Spectral] {
            let c = Clusterer::new(&pts, method, None, 10).unwrap();
            let (curve, result) = select_k(&c, 2..=10, 3, DbRule::Argmin).unwrap();
            assert_eq!(curve.chosen, 5, "{method:?} {:?}", curve.entries);
            assert_eq!(curve.entries.len(), 9);
            assert_eq!(result.k(), 5);
        }
    }

    #[test]
    fn tight_blob_reports_curve() {
        let (pts, _) = planted(&[[0.0, 0.0]], 40, 0.1, 4);
        let c = Clusterer::new(&pts, Method::Spectral, None, 4).unwrap();
        let (curve, _) = select_k(&c, 2..=4, 0, DbRule::Argmin).unwrap();
        assert_eq!(curve.entries.len(), 3);
        assert!((2..=4).contains(&curve.chosen));
    }

    #[test]
    fn forty_object_range_has_39_candidates() {
        let centers: Vec<[f64; 2]> = (0..20)
            .map(|i| [(i % 5) as f64 * 10.0, (i / 5) as f64 * 10.0])
            .collect();
        let (pts, _) = planted(&centers, 3, 0.5, 8);
        let c = Clusterer::new(&pts, Method::KMeans, None, 40).unwrap();
        let (curve, _) = select_k(&c, 2..=40, 1, DbRule::Argmin).unwrap();
        assert_eq!(curve.entries.len(), 39);
        assert_eq!(curve.entries.first().unwrap().0, 2);
        assert_eq!(curve.entries.last().unwrap().0, 40);
    }

    #[test]
    fn argmax_rule_picks_largest_finite() {
        let (pts, _) = planted(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 20, 1.0, 6);
        let c = Clusterer::new(&pts, Method::KMeans, None, 6).unwrap();
        let (curve, _) = select_k(&c, 2..=6, 0, DbRule::Argmax).unwrap();
        let max = curve
            .entries
            .iter()
            .filter(|e| e.1.is_finite())
            .map(|e| e.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let picked = curve.entries.iter().find(|e| e.0 == curve.chosen).unwrap().1;
        assert_eq!(picked, max);
    }
}
