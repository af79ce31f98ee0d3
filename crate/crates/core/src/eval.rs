//! 3D overlap scoring of discovered objects against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned 3D box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Box3 {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Box3> {
        if (0..3).any(|i| !(min[i] < max[i]) || !min[i].is_finite() || !max[i].is_finite()) {
            return Err(Error::InvalidInput(format!("degenerate box {min:?} {max:?}")));
        }
        Ok(Box3 { min, max })
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| (self.max[i] - self.min[i]).max(0.0)).product()
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.min[i] + self.max[i]))
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn intersection(&self, other: &Box3) -> f64 {
        (0..3)
            .map(|i| (self.max[i].min(other.max[i]) - self.min[i].max(other.min[i])).max(0.0))
            .product()
    }

    pub fn iou(&self, other: &Box3) -> f64 {
        let inter = self.intersection(other);
        let union = self.volume() + other.volume() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Default per-tail trim of [`bbox_of_cluster`].
pub const DEFAULT_TRIM: f64 = 0.05;
/// Minimum box side.
pub const BOX_FLOOR: f64 = 1e-3;

/// Per axis, the range left after dropping the `⌈trim·n⌉` lowest and
/// `⌈trim·n⌉` highest coordinates (never all of them). Sides shorter than
/// [`BOX_FLOOR`] are widened to it around their center.
pub fn bbox_of_cluster(points: &[[f64; 3]], trim: f64) -> Result<Box3> {
    if points.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::Config(format!("trim must be in [0, 0.5), got {trim}")));
    }
    let n = points.len();
    let cut = ((trim * n as f64 - 1e-9).ceil().max(0.0) as usize).min((n - 1) / 2);
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for axis in 0..3 {
        let mut v: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        v.sort_by(f64::total_cmp);
        let (mut lo, mut hi) = (v[cut], v[n - 1 - cut]);
        if hi - lo < BOX_FLOOR {
            let c = 0.5 * (lo + hi);
            lo = c - 0.5 * BOX_FLOOR;
            hi = c + 0.5 * BOX_FLOOR;
        }
        min[axis] = lo;
        max[axis] = hi;
    }
    Ok(Box3 { min, max })
}

/// Overlap of two objects given as box sets: the best IoU over all pairs.
pub fn object_iou(a: &[Box3], b: &[Box3]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x.iou(y)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TroScore {
    pub discovered: usize,
    pub ground_truth: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// `(discovered index, ground-truth index, IoU)` of every match.
    #[serde(skip)]
    pub matches: Vec<(usize, usize, f64)>,
}

pub fn f1_score(recall: f64, precision: f64) -> f64 {
    if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    }
}

impl TroScore {
    pub fn from_counts(discovered: usize, ground_truth: usize, tp: usize) -> TroScore {
        let recall = if ground_truth == 0 {
            0.0
        } else {
            tp as f64 / ground_truth as f64
        };
        let precision = if discovered == 0 {
            0.0
        } else {
            tp as f64 / discovered as f64
        };
        TroScore {
            discovered,
            ground_truth,
            true_positives: tp,
            false_positives: discovered - tp,
            recall,
            precision,
            f1: f1_score(recall, precision),
            matches: Vec::new(),
        }
    }
}

/// Greedy one-to-one matching in descending IoU over pairs reaching
/// `threshold`. Each object is a set of boxes (one per location component
/// for discoveries, one per site for ground truth). Unmatched discoveries,
/// including second matches to an already claimed ground-truth object, are
/// false positives.
pub fn evaluate_tros(discovered: &[Vec<Box3>], ground_truth: &[Vec<Box3>], threshold: f64) -> TroScore {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in discovered.iter().enumerate() {
        for (j, g) in ground_truth.iter().enumerate() {
            let v = object_iou(d, g);
            if v >= threshold && v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_d = vec![false; discovered.len()];
    let mut used_g = vec![false; ground_truth.len()];
    let mut matches = Vec::new();
    for (v, i, j) in pairs {
        if !used_d[i] && !used_g[j] {
            used_d[i] = true;
            used_g[j] = true;
            matches.push((i, j, v));
        }
    }
    let mut score = TroScore::from_counts(discovered.len(), ground_truth.len(), matches.len());
    score.matches = matches;
    score
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(c: [f64; 3], s: f64) -> Box3 {
        Box3::new(c.map(|v| v - s / 2.0), c.map(|v| v + s / 2.0)).unwrap()
    }

    #[test]
    fn iou_closed_form() {
        let a = cube([0.0, 0.0, 0.0], 2.0);
        let b = Box3::new([0.0, -1.0, -1.0], [2.0, 1.0, 1.0]).unwrap();
        assert!((a.iou(&b) - 4.0 / 12.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&cube([5.0, 0.0, 0.0], 1.0)), 0.0);
        assert!(Box3::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn trimmed_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 3]> = (0..1000)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        let b = bbox_of_cluster(&pts, 0.0).unwrap();
        assert!(pts.iter().all(|p| b.contains(p)));

        let one = bbox_of_cluster(&[[1.0, 2.0, 3.0]; 5], DEFAULT_TRIM).unwrap();
        assert!((one.volume() - BOX_FLOOR.powi(3)).abs() < 1e-15);
        assert!(one.contains(&[1.0, 2.0, 3.0]));

        let mut noisy = pts[..950].to_vec();
        noisy.extend((0..50).map(|_| [5.0 + rng.random::<f64>(), 5.0, 5.0]));
        let t = bbox_of_cluster(&noisy, DEFAULT_TRIM).unwrap();
        assert!(noisy[950..].iter().all(|p| !t.contains(p)));
    }

    #[test]
    fn identity_and_duplicates() {
        let gt = vec![vec![cube([0.0; 3], 1.0)], vec![cube([3.0, 0.0, 0.0], 1.0)]];
        let s = evaluate_tros(&gt, &gt, 0.2);
        assert_eq!((s.recall, s.precision, s.f1), (1.0, 1.0, 1.0));
        let dup = vec![vec![cube([0.0; 3], 1.0)], vec![cube([0.05, 0.0, 0.0], 1.0)]];
        let s = evaluate_tros(&dup, &gt[..1], 0.2);
        assert_eq!((s.true_positives, s.false_positives), (1, 1));
    }

    #[test]
    fn moveable_matches_any_site() {
        let gt = vec![vec![cube([0.0; 3], 1.0), cube([4.0, 0.0, 0.0], 1.0)]];
        let d = vec![vec![cube([4.1, 0.0, 0.0], 1.0)]];
        assert_eq!(evaluate_tros(&d, &gt, 0.2).true_positives, 1);
    }

    /// Maximum bipartite matching by exhaustive search.
    fn brute_force(ok: &[Vec<bool>], i: usize, used: &mut Vec<bool>) -> usize {
        if i == ok.len() {
            return 0;
        }
        let mut best = brute_force(ok, i + 1, used);
        for j in 0..used.len() {
            if ok[i][j] && !used[j] {
                used[j] = true;
                best = best.max(1 + brute_force(ok, i + 1, used));
                used[j] = false;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn greedy_matches_exhaustive_on_perturbed_boxes(seed in 0u64..10_000, n_gt in 1usize..6, n_d in 0usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<Vec<Box3>> = (0..n_gt).map(|j| vec![cube([3.0 * j as f64, 0.0, 0.0], 1.0)]).collect();
            let d: Vec<Vec<Box3>> = (0..n_d)
                .map(|_| {
                    let j = rng.random_range(0..n_gt + 2) as f64;
                    let c = [3.0 * j + rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3), 0.0];
                    vec![cube(c, rng.random_range(0.5..1.5))]
                })
                .collect();
            let ok: Vec<Vec<bool>> = d.iter().map(|x| gt.iter().map(|g| object_iou(x, g) >= 0.2).collect()).collect();
            let best = brute_force(&ok, 0, &mut vec![false; n_gt]);
            let s = evaluate_tros(&d, &gt, 0.2);
            prop_assert_eq!(s.true_positives, best);
            prop_assert!((s.f1 - f1_score(s.recall, s.precision)).abs() < 1e-12);

            let mut rev = d.clone();
            rev.reverse();
            prop_assert_eq!(evaluate_tros(&rev, &gt, 0.2).true_positives, s.true_positives);
        }
    }
}
