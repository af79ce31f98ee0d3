//! First-order interaction graph over discovered objects.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::models::LocationModel;
use crate::online::COV_FLOOR;

/// Default prior weight of every edge.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Complete directed graph with row-stochastic weights and zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    /// Node object ids, ascending.
    pub ids: Vec<usize>,
    pub alpha: f64,
    /// `weights[k][j]`: weight of the edge from `ids[k]` to `ids[j]`.
    pub weights: Vec<Vec<f64>>,
}

impl InteractionGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn node(&self, id: usize) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        Some(self.weights[self.node(from)?][self.node(to)?])
    }

    /// `(from, to, weight)` for every off-diagonal edge, heaviest first.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut e: Vec<(usize, usize, f64)> = Vec::new();
        for (k, row) in self.weights.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if k != j {
                    e.push((self.ids[k], self.ids[j], w));
                }
            }
        }
        e.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        e
    }
}

/// Drops consecutive repeats.
pub fn collapse_repeats(sequence: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(sequence.len());
    for &s in sequence {
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}

/// Counts transitions between distinct consecutive objects and normalizes
/// each row after adding `alpha` to every off-diagonal entry.
pub fn build_graph(sequences: &[Vec<usize>], ids: &[usize], alpha: f64) -> Result<InteractionGraph> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let k = ids.len();
    let node = |id: usize| {
        ids.binary_search(&id)
            .map_err(|_| Error::InvalidInput(format!("object {id} is not a graph node")))
    };
    let mut counts = vec![vec![0.0; k]; k];
    for seq in sequences {
        for w in collapse_repeats(seq).windows(2) {
            counts[node(w[0])?][node(w[1])?] += 1.0;
        }
    }
    let weights = counts
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let total: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != r)
                .map(|(_, c)| alpha + c)
                .sum();
            row.iter()
                .enumerate()
                .map(|(j, c)| if j == r { 0.0 } else { (alpha + c) / total })
                .collect()
        })
        .collect();
    Ok(InteractionGraph { ids, alpha, weights })
}

/// The heaviest successor of object `id`; ties go to the smaller id. `None`
/// for unknown ids and single-node graphs.
pub fn next_object(graph: &InteractionGraph, id: usize) -> Option<usize> {
    let k = graph.node(id)?;
    let mut best: Option<(f64, usize)> = None;
    for (j, &w) in graph.weights[k].iter().enumerate() {
        if j != k && best.is_none_or(|(bw, _)| w > bw) {
            best = Some((w, j));
        }
    }
    best.map(|(_, j)| graph.ids[j])
}

/// Most likely position under the location model. Each component mean seeds
/// a fixed-point ascent `x ← (Σ w_l P_l)⁻¹ Σ w_l P_l μ_l`, with `P_l` the
/// component precisions and `w_l` their weighted responsibilities at `x`;
/// the best local mode is returned, ties to the earlier seed. For a single
/// component this is its mean.
pub fn suggest_location(model: &LocationModel) -> Result<[f64; 3]> {
    let mut parts = Vec::with_capacity(model.components.len());
    for c in &model.components {
        if c.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: c.dim(),
            });
        }
        let cov = Matrix3::from_fn(|r, k| c.covariance[(r, k)]) + Matrix3::identity() * COV_FLOOR;
        let precision = cov
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("singular location covariance".into()))?;
        parts.push((c.weight, Vector3::new(c.mean[0], c.mean[1], c.mean[2]), precision));
    }
    let score = |x: &Vector3<f64>| {
        parts
            .iter()
            .map(|(w, m, p)| {
                let d = x - m;
                w * (-0.5 * d.dot(&(p * d))).exp()
            })
            .sum::<f64>()
    };
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for (_, seed, _) in &parts {
        let mut x = *seed;
        for _ in 0..MODE_ITERATIONS {
            let mut lhs = Matrix3::zeros();
            let mut rhs = Vector3::zeros();
            for (w, m, p) in &parts {
                let d = x - m;
                let r = w * (-0.5 * d.dot(&(p * d))).exp();
                lhs += p * r;
                rhs += p * m * r;
            }
            let Some(next) = lhs.try_inverse().map(|inv| inv * rhs) else {
                break;
            };
            let step = (next - x).norm();
            x = next;
            if step < 1e-12 {
                break;
            }
        }
        let s = score(&x);
        if best.is_none_or(|(bs, _)| s > bs) {
            best = Some((s, x));
        }
    }
    best.map(|(_, x)| [x[0], x[1], x[2]])
        .ok_or_else(|| Error::InvalidInput("location model has no components".into()))
}

const MODE_ITERATIONS: usize = 500;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{location_likelihood, LikelihoodMode};
    use crate::online::GaussianComponent;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    #[test]
    fn pure_prior_is_uniform() {
        let g = build_graph(&[], &[1, 2, 3], DEFAULT_ALPHA).unwrap();
        for (k, row) in g.weights.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert_eq!(w, if j == k { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn alternating_sequence_dominates() {
        let g = build_graph(&[vec![1, 2, 1, 2]], &[1, 2, 3], DEFAULT_ALPHA).unwrap();
        assert_eq!(next_object(&g, 1), Some(2));
        assert_eq!(next_object(&g, 2), Some(1));
        assert!((g.weight(1, 2).unwrap() - 2.05 / 2.1).abs() < 1e-12);
        assert!(build_graph(&[vec![1, 9]], &[1, 2], DEFAULT_ALPHA).is_err());
        assert!(build_graph(&[], &[1], 0.0).is_err());
    }

    #[test]
    fn tie_goes_to_smaller_id() {
        let g = build_graph(&[], &[4, 7, 9], DEFAULT_ALPHA).unwrap();
        assert_eq!(next_object(&g, 9), Some(4));
        assert_eq!(next_object(&g, 4), Some(7));
        assert_eq!(next_object(&build_graph(&[], &[3], 1.0).unwrap(), 3), None);
    }

    fn iso(m: [f64; 3], s2: f64, w: f64) -> GaussianComponent {
        GaussianComponent {
            weight: w,
            mean: DVector::from_column_slice(&m),
            covariance: DMatrix::identity(3, 3) * s2,
            count: 10,
        }
    }

    #[test]
    fn suggested_location_follows_weight() {
        let one = LocationModel {
            components: vec![iso([1.0, 2.0, 3.0], 0.1, 1.0)],
        };
        let s = suggest_location(&one).unwrap();
        assert!(s.iter().zip([1.0, 2.0, 3.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        let two = LocationModel {
            components: vec![iso([0.0, 0.0, 0.0], 0.01, 0.1), iso([5.0, 0.0, 0.0], 0.01, 0.9)],
        };
        let s = suggest_location(&two).unwrap();
        assert!((s[0] - 5.0).abs() < 1e-9 && s[1] == 0.0 && s[2] == 0.0);
    }

    #[test]
    fn overlapping_components_match_grid_search() {
        let m = LocationModel {
            components: vec![iso([0.0, 0.0, 0.0], 1.0, 0.6), iso([0.8, 0.0, 0.0], 0.5, 0.4)],
        };
        let s = suggest_location(&m).unwrap();
        let score = |x: f64| location_likelihood(&m, &[x, 0.0, 0.0], LikelihoodMode::Unnormalized).unwrap();
        let grid_best = (-200..=300)
            .map(|i| i as f64 * 0.01)
            .max_by(|a, b| score(*a).total_cmp(&score(*b)))
            .unwrap();
        assert!((grid_best - s[0]).abs() <= 0.01);
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rows_stochastic(seqs in proptest::collection::vec(proptest::collection::vec(0usize..6, 0..30), 0..5),
                           alpha in 0.001f64..2.0) {
            let g = build_graph(&seqs, &[0, 1, 2, 3, 4, 5], alpha).unwrap();
            for (k, row) in g.weights.iter().enumerate() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert_eq!(row[k], 0.0);
                prop_assert!(row.iter().enumerate().all(|(j, &w)| j == k || w > 0.0));
            }
            let collapsed: Vec<Vec<usize>> = seqs.iter().map(|s| collapse_repeats(s)).collect();
            prop_assert_eq!(build_graph(&collapsed, &[0, 1, 2, 3, 4, 5], alpha).unwrap(), g);
        }
    }
}
