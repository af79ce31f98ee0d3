//! Modes of interaction: temporal-pyramid snippet descriptors and their clustering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean_of, squared_distance};
use crate::models::UsageSnippet;
use crate::offline::{select_k, Clusterer, DbRule, KChoice, Method};
use crate::stream::ChannelScaler;

/// Pyramid depth per channel; `None` leaves the channel out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub position: Option<usize>,
    pub appearance: Option<usize>,
    pub motion: Option<usize>,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            position: Some(3),
            appearance: None,
            motion: Some(1),
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        let levels = [self.position, self.appearance, self.motion];
        if levels.iter().all(Option::is_none) {
            return Err(Error::Config("pyramid uses no channel".into()));
        }
        if levels.contains(&Some(0)) {
            return Err(Error::Config("pyramid levels must be at least 1".into()));
        }
        Ok(())
    }

    fn deepest(&self) -> usize {
        [self.position, self.appearance, self.motion]
            .into_iter()
            .flatten()
            .max()
            .unwrap_or(1)
    }
}

/// Segment bounds `[start, end)` of `n` frames split into `l` parts; the
/// first `n % l` segments get one extra frame.
pub fn segments(n: usize, l: usize) -> Vec<(usize, usize)> {
    let (base, rem) = (n / l, n % l);
    let mut out = Vec::with_capacity(l);
    let mut start = 0;
    for i in 0..l {
        let len = base + usize::from(i < rem);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Level-major, segment-minor means of per-frame rows.
pub fn pyramid_of<R: AsRef<[f64]>>(rows: &[R], levels: usize) -> Result<Vec<f64>> {
    if levels == 0 || rows.len() < levels {
        return Err(Error::InvalidInput(format!(
            "{} frames cannot be split into {levels} segments",
            rows.len()
        )));
    }
    let mut out = Vec::new();
    for l in 1..=levels {
        for (a, b) in segments(rows.len(), l) {
            out.extend(mean_of(&rows[a..b]));
        }
    }
    Ok(out)
}

/// Temporal-pyramid descriptor of one snippet: position, appearance and
/// motion pyramids (those enabled) concatenated in that order.
pub fn temporal_pyramid(snippet: &UsageSnippet, config: &PyramidConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if snippet.frames.len() < config.deepest() {
        return Err(Error::InvalidInput(format!(
            "snippet of {} frames is shorter than {} pyramid levels",
            snippet.frames.len(),
            config.deepest()
        )));
    }
    let mut out = Vec::new();
    if let Some(l) = config.position {
        let rows = snippet
            .frames
            .iter()
            .map(|f| f.position.map(|p| p.to_vec()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidInput("snippet has no position".into()))?;
        out.extend(pyramid_of(&rows, l)?);
    }
    if let Some(l) = config.appearance {
        let rows: Vec<&[f64]> = snippet.frames.iter().map(|f| f.appearance.as_slice()).collect();
        out.extend(pyramid_of(&rows, l)?);
    }
    if let Some(l) = config.motion {
        let rows: Vec<&[f64]> = snippet.frames.iter().map(|f| f.motion.as_slice()).collect();
        out.extend(pyramid_of(&rows, l)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoiCluster {
    /// Indices into the snippet list, ascending.
    pub members: Vec<usize>,
    /// Mean member descriptor (standardized space).
    pub centroid: Vec<f64>,
    pub representative: usize,
    /// Share of the object's snippets in this cluster.
    pub confidence: f64,
}

/// Member closest to `centroid`; equal distances resolve to the smaller index.
pub fn representative<P: AsRef<[f64]>>(members: &[usize], descriptors: &[P], centroid: &[f64]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for &m in members {
        let d = squared_distance(descriptors[m].as_ref(), centroid);
        if d < best.0 || (d == best.0 && m < best.1) {
            best = (d, m);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoiConfig {
    pub pyramid: PyramidConfig,
    pub method: Method,
    /// `None` selects K by Davies-Bouldin over `[2 ..= min(6, n - 1)]`.
    pub k: Option<KChoice>,
    pub seed: u64,
    pub lambda: f64,
}

impl Default for MoiConfig {
    fn default() -> Self {
        MoiConfig {
            pyramid: PyramidConfig::default(),
            method: Method::Spectral,
            k: None,
            seed: 0,
            lambda: 0.2,
        }
    }
}

/// Upper end of the default MOI model-selection range.
pub const MOI_MAX_K: usize = 6;

fn single(n: usize, points: &[Vec<f64>]) -> Vec<MoiCluster> {
    let members: Vec<usize> = (0..n).collect();
    let centroid = mean_of(points);
    vec![MoiCluster {
        representative: representative(&members, points, &centroid),
        members,
        centroid,
        confidence: 1.0,
    }]
}

/// Clusters snippet descriptors into MOIs. Descriptors are standardized per
/// dimension first. Fewer than two snippets, or identical descriptors, give a
/// single cluster. Empty clusters are dropped.
pub fn cluster_mois(
    descriptors: &[Vec<f64>],
    method: Method,
    k: Option<KChoice>,
    seed: u64,
) -> Result<Vec<MoiCluster>> {
    let n = descriptors.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n < 2 {
        return Ok(single(n, descriptors));
    }
    let rows: Vec<&[f64]> = descriptors.iter().map(Vec::as_slice).collect();
    let scaler = ChannelScaler::fit(&rows)?;
    let points: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
    if points.iter().all(|p| p == &points[0]) {
        return Ok(single(n, &points));
    }

    let k = k.unwrap_or(KChoice::DbRange(2, MOI_MAX_K.min(n - 1).max(2)));
    let max_k = match k {
        KChoice::Known(k) => k,
        KChoice::DbRange(_, hi) => hi,
    };
    let clusterer = Clusterer::new(&points, method, None, max_k)?;
    let result = match k {
        KChoice::Known(k) => clusterer.cluster(k, seed)?,
        KChoice::DbRange(lo, hi) => select_k(&clusterer, lo..=hi, seed, DbRule::Argmin)?.1,
    };
    Ok((0..result.k())
        .filter(|&c| result.sizes[c] > 0)
        .map(|c| {
            let members = result.members(c);
            let centroid = mean_of(&members.iter().map(|&i| points[i].as_slice()).collect::<Vec<_>>());
            MoiCluster {
                representative: representative(&members, &points, &centroid),
                confidence: members.len() as f64 / n as f64,
                members,
                centroid,
            }
        })
        .collect())
}

/// Clusters whose confidence reaches `lambda`.
pub fn common_mois(clusters: &[MoiCluster], lambda: f64) -> Vec<MoiCluster> {
    clusters.iter().filter(|c| c.confidence >= lambda).cloned().collect()
}

/// Descriptors and MOI clusters of one object's snippets.
pub fn discover_mois(snippets: &[UsageSnippet], config: &MoiConfig) -> Result<(Vec<Vec<f64>>, Vec<MoiCluster>)> {
    let descriptors = snippets
        .iter()
        .map(|s| temporal_pyramid(s, &config.pyramid))
        .collect::<Result<Vec<_>>>()?;
    let clusters = cluster_mois(&descriptors, config.method, config.k, config.seed)?;
    Ok((descriptors, clusters))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoiCurvePoint {
    pub lambda: f64,
    pub recall: f64,
    pub precision: f64,
    pub retained: usize,
    pub true_positives: usize,
}

/// Recall and precision of the retained clusters at every `lambda`.
///
/// A retained cluster is a true positive when the ground-truth label of its
/// representative has not been claimed yet; later clusters with the same
/// label are false positives. Clusters are visited by confidence, highest
/// first. Precision is 1 when nothing is retained.
pub fn evaluate_mois(clusters: &[MoiCluster], gt: &[usize], lambdas: &[f64]) -> Vec<MoiCurvePoint> {
    let mut labels: Vec<usize> = gt.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let total = labels.len();
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        clusters[b]
            .confidence
            .total_cmp(&clusters[a].confidence)
            .then(a.cmp(&b))
    });
    lambdas
        .iter()
        .map(|&lambda| {
            let mut claimed = Vec::new();
            let mut retained = 0;
            for &c in &order {
                if clusters[c].confidence < lambda {
                    continue;
                }
                retained += 1;
                let label = gt[clusters[c].representative];
                if !claimed.contains(&label) {
                    claimed.push(label);
                }
            }
            let tp = claimed.len();
            MoiCurvePoint {
                lambda,
                recall: if total == 0 { 0.0 } else { tp as f64 / total as f64 },
                precision: if retained == 0 {
                    1.0
                } else {
                    tp as f64 / retained as f64
                },
                retained,
                true_positives: tp,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SnippetFrame;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn snippet(rows: &[[f64; 2]]) -> UsageSnippet {
        UsageSnippet {
            object: 0,
            stream: 0,
            operator: 0,
            start: 0,
            end: rows.len() as u64 - 1,
            frames: rows
                .iter()
                .enumerate()
                .map(|(t, r)| SnippetFrame {
                    t: t as u64,
                    gaze: None,
                    position: Some([r[0], 0.0, 0.0]),
                    appearance: vec![],
                    motion: r.to_vec(),
                    interpolated: false,
                })
                .collect(),
            first_appearance: vec![],
        }
    }

    #[test]
    fn segment_split_front_loads_remainder() {
        assert_eq!(segments(7, 3), vec![(0, 3), (3, 5), (5, 7)]);
        assert_eq!(segments(6, 1), vec![(0, 6)]);
    }

    #[test]
    fn six_frame_three_levels() {
        let rows: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, (i * i) as f64]).collect();
        let cfg = PyramidConfig {
            position: None,
            appearance: None,
            motion: Some(3),
        };
        let d = temporal_pyramid(&snippet(&rows), &cfg).unwrap();
        let mean = |a: usize, b: usize| {
            let n = (b - a) as f64;
            [
                rows[a..b].iter().map(|r| r[0]).sum::<f64>() / n,
                rows[a..b].iter().map(|r| r[1]).sum::<f64>() / n,
            ]
        };
        let expected: Vec<f64> = [(0, 6), (0, 3), (3, 6), (0, 2), (2, 4), (4, 6)]
            .iter()
            .flat_map(|&(a, b)| mean(a, b))
            .collect();
        assert_eq!(d.len(), 12);
        for (x, y) in d.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short_snippet_rejected() {
        let cfg = PyramidConfig {
            position: Some(5),
            ..Default::default()
        };
        assert!(temporal_pyramid(&snippet(&[[0.0, 0.0]; 3]), &cfg).is_err());
    }

    #[test]
    fn representative_rules() {
        let d = vec![vec![0.0], vec![2.0], vec![1.0]];
        assert_eq!(representative(&[1], &d, &[5.0]), 1);
        assert_eq!(representative(&[0, 1], &d, &[1.0]), 0);
        assert_eq!(representative(&[1, 0], &d, &[1.0]), 0);
        assert_eq!(representative(&[0, 1, 2], &d, &[1.0]), 2);
    }

    fn clusters_of_sizes(sizes: &[usize]) -> Vec<MoiCluster> {
        let n: usize = sizes.iter().sum();
        let mut next = 0;
        sizes
            .iter()
            .map(|&s| {
                let members: Vec<usize> = (next..next + s).collect();
                next += s;
                MoiCluster {
                    representative: members[0],
                    members,
                    centroid: vec![],
                    confidence: s as f64 / n as f64,
                }
            })
            .collect()
    }

    #[test]
    fn common_threshold() {
        let c = clusters_of_sizes(&[6, 3, 1]);
        assert_eq!(common_mois(&c, 0.0).len(), 3);
        let kept: Vec<usize> = common_mois(&c, 0.2).iter().map(|c| c.members.len()).collect();
        assert_eq!(kept, vec![6, 3]);
        assert!(common_mois(&c, 1.0).is_empty());
        assert_eq!(common_mois(&clusters_of_sizes(&[10]), 1.0).len(), 1);
    }

    #[test]
    fn duplicate_representative_is_false_positive() {
        let c = clusters_of_sizes(&[4, 3, 3]);
        let mut gt = vec![0; 10];
        gt[4..7].iter_mut().for_each(|g| *g = 1);
        gt[7..].iter_mut().for_each(|g| *g = 0);
        let p = evaluate_mois(&c, &gt, &[0.0])[0];
        assert_eq!((p.retained, p.true_positives), (3, 2));
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-12 && p.recall == 1.0);
        let perfect = evaluate_mois(&clusters_of_sizes(&[5, 5]), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1], &[0.2])[0];
        assert_eq!((perfect.recall, perfect.precision), (1.0, 1.0));
    }

    #[test]
    fn identical_snippets_single_cluster() {
        let d = vec![vec![1.0, 2.0]; 5];
        let c = cluster_mois(&d, Method::Spectral, None, 0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members.len(), 5);
        assert_eq!(cluster_mois(&d[..1], Method::Spectral, None, 0).unwrap().len(), 1);
    }

    #[test]
    fn three_prototypes_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let protos = [[0.0, 0.0, 0.0, 0.0], [3.0, 0.0, 1.0, 0.0], [0.0, 3.0, 0.0, -2.0]];
        let mut d = Vec::new();
        let mut truth = Vec::new();
        for i in 0..15 {
            let p = protos[i % 3];
            d.push(p.iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<f64>>());
            truth.push(i % 3);
        }
        let c = cluster_mois(&d, Method::Spectral, None, 1).unwrap();
        assert_eq!(c.len(), 3);
        for cl in &c {
            assert!(cl.members.iter().all(|&m| truth[m] == truth[cl.members[0]]));
        }
        let s: f64 = c.iter().map(|c| c.confidence).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn levels_average_back_to_global_mean(n in 3usize..40, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![noise.sample(&mut rng), noise.sample(&mut rng)]).collect();
            let d = pyramid_of(&rows, 3).unwrap();
            let global = &d[0..2];
            for (l, offset) in [(2usize, 2usize), (3, 6)] {
                let mut acc = [0.0; 2];
                for (s, (a, b)) in segments(n, l).into_iter().enumerate() {
                    for k in 0..2 {
                        acc[k] += d[offset + 2 * s + k] * (b - a) as f64 / n as f64;
                    }
                }
                prop_assert!((acc[0] - global[0]).abs() < 1e-9 && (acc[1] - global[1]).abs() < 1e-9);
            }
        }

        #[test]
        fn representative_is_member_and_order_free(seed in 0u64..500, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let d: Vec<Vec<f64>> = (0..n).map(|_| vec![noise.sample(&mut rng)]).collect();
            let members: Vec<usize> = (0..n).collect();
            let c = mean_of(&d);
            let r = representative(&members, &d, &c);
            prop_assert!(members.contains(&r));
            let rev: Vec<usize> = members.iter().rev().copied().collect();
            prop_assert_eq!(representative(&rev, &d, &c), r);
        }
    }
}
