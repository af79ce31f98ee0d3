use super::kmeans::ClusteringResult;
use crate::error::{Error, Result};
use crate::linalg::squared_distance;

/// Default share of points (percent) trimmed from each cluster.
pub const DEFAULT_BETA: f64 = 75.0;

/// Number of points `⌈β% · n⌉` removed from a cluster of size `n`.
pub fn removal_count(beta: f64, n: usize) -> usize {
    let x = beta * n as f64 / 100.0;
    let r = x.round();
    // Absorb rounding so exact products such as 75% of 16 are not bumped up.
    let c = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (c as usize).min(n)
}

/// Marks the `⌈β% · n_k⌉` points farthest from each cluster mean as removed.
/// Means are left as they were. Among equally distant points the later index
/// is removed first.
pub fn refine_clusters<P: AsRef<[f64]>>(result: &ClusteringResult, points: &[P], beta: f64) -> Result<Vec<bool>> {
    if !(0.0..100.0).contains(&beta) {
        return Err(Error::Config(format!("beta must be in [0, 100), got {beta}")));
    }
    let mut retained = vec![true; points.len()];
    for c in 0..result.k() {
        let mut members: Vec<(usize, f64)> = result
            .members(c)
            .into_iter()
            .map(|i| (i, squared_distance(points[i].as_ref(), &result.means[c])))
            .collect();
        members.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
        for &(i, _) in members.iter().take(removal_count(beta, members.len())) {
            retained[i] = false;
        }
    }
    Ok(retained)
}

/// Share of all points held by each cluster.
pub fn tro_probability(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0.0; sizes.len()];
    }
    sizes.iter().map(|&n| n as f64 / total as f64).collect()
}
