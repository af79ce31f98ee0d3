//! Batch discovery: features from every stream are pooled and clustered.

pub mod affinity;
pub mod kmeans;
pub mod refine;
pub mod spectral;
pub mod validity;

use serde::{Deserialize, Serialize};

pub use affinity::{build_affinity, combine_affinities, AffinityMatrix};
pub use kmeans::{kmeans, ClusteringResult, KMeansConfig};
pub use refine::{refine_clusters, tro_probability, DEFAULT_BETA};
pub use spectral::{spectral_cluster, SpectralEmbedding};
pub use validity::{db_index, select_k, Clusterer, DbRule, Method, ModelSelectionCurve};

use crate::error::{Error, Result};
use crate::stream::{assemble_stream, image_parts, normalize_channels, FeatureConfig, Stream};

/// A frame inside a set of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartRef {
    pub stream: usize,
    /// Index into `Stream::records`.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KChoice {
    Known(usize),
    /// Davies-Bouldin selection over an inclusive range.
    DbRange(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub features: FeatureConfig,
    pub method: Method,
    pub k: KChoice,
    pub seed: u64,
    pub beta: f64,
    /// Pooled points are thinned by a uniform stride to at most this many.
    pub max_points: usize,
    pub db_rule: DbRule,
    /// Restrict image-center parts to fixation frames.
    pub center_on_fixations: bool,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            features: FeatureConfig::default(),
            method: Method::Spectral,
            k: KChoice::Known(20),
            seed: 0,
            beta: DEFAULT_BETA,
            max_points: 1500,
            db_rule: DbRule::Argmin,
            center_on_fixations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineObject {
    pub id: usize,
    pub members: Vec<PartRef>,
    /// Members surviving refinement.
    pub retained: Vec<PartRef>,
    /// Centroid in normalized feature space.
    pub mean: Vec<f64>,
    pub size: usize,
    pub probability: f64,
}

impl OfflineObject {
    /// 3D positions of the retained members that have one.
    pub fn retained_positions(&self, streams: &[Stream]) -> Vec<[f64; 3]> {
        self.retained
            .iter()
            .filter_map(|r| streams[r.stream].records[r.index].position)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDiscovery {
    /// Sorted by probability, highest first.
    pub objects: Vec<OfflineObject>,
    pub curve: Option<ModelSelectionCurve>,
    /// Points clustered after thinning.
    pub points: usize,
    pub stride: usize,
}

/// Pooled features of every stream, thinned to `max_points`.
pub(crate) fn pooled_features(
    streams: &[Stream],
    features: &FeatureConfig,
    center_on_fixations: bool,
    max_points: usize,
) -> Result<(Vec<PartRef>, Vec<crate::stream::FeatureVector>, usize)> {
    features.validate()?;
    let mut refs = Vec::new();
    let mut feats = Vec::new();
    for (s, stream) in streams.iter().enumerate() {
        let parts = image_parts(stream, features.part_mode(), center_on_fixations);
        for (index, f) in assemble_stream(stream, &parts, features)? {
            refs.push(PartRef { stream: s, index });
            feats.push(f);
        }
    }
    let stride = feats.len().div_ceil(max_points.max(1)).max(1);
    if stride > 1 {
        refs = refs.into_iter().step_by(stride).collect();
        feats = feats.into_iter().step_by(stride).collect();
    }
    Ok((refs, feats, stride))
}

/// Assemble features → (affinity) → cluster at a known K or by
/// Davies-Bouldin selection → score clusters → trim each by β.
pub fn discover_offline(streams: &[Stream], config: &OfflineConfig) -> Result<OfflineDiscovery> {
    let (refs, feats, stride) =
        pooled_features(streams, &config.features, config.center_on_fixations, config.max_points)?;
    if feats.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: feats.len(),
        });
    }
    let (normalized, _) = normalize_channels(&feats)?;
    let layout = normalized[0].layout;
    let points: Vec<Vec<f64>> = normalized.into_iter().map(|f| f.values).collect();

    let max_k = match config.k {
        KChoice::Known(k) => k,
        KChoice::DbRange(lo, hi) => {
            if lo < 2 || hi < lo {
                return Err(Error::Config(format!("invalid K range [{lo}..{hi}]")));
            }
            hi
        }
    };
    if max_k > points.len() {
        return Err(Error::TooFewPoints {
            needed: max_k,
            got: points.len(),
        });
    }

    let affinity = match config.method {
        Method::KMeans => None,
        Method::Spectral if layout.position_dim > 0 && layout.appearance_dim > 0 => {
            let split = |pick_position: bool| -> Vec<Vec<f64>> {
                points
                    .iter()
                    .map(|p| {
                        (0..layout.window)
                            .flat_map(|slot| {
                                let r = if pick_position {
                                    layout.position_range(slot)
                                } else {
                                    layout.appearance_range(slot)
                                };
                                p[r.expect("channel active")].iter().copied()
                            })
                            .collect()
                    })
                    .collect()
            };
            let pos = build_affinity(&split(true), None)?;
            let app = build_affinity(&split(false), None)?;
            Some(combine_affinities(&pos, &app)?)
        }
        Method::Spectral => Some(build_affinity(&points, None)?),
    };

    let clusterer = Clusterer::new(&points, config.method, affinity, max_k)?;
    let (result, curve) = match config.k {
        KChoice::Known(k) => (clusterer.cluster(k, config.seed)?, None),
        KChoice::DbRange(lo, hi) => {
            let (curve, r) = select_k(&clusterer, lo..=hi, config.seed, config.db_rule)?;
            (r, Some(curve))
        }
    };

    let probability = tro_probability(&result.sizes);
    let retained = refine_clusters(&result, &points, config.beta)?;
    let mut objects: Vec<OfflineObject> = (0..result.k())
        .filter(|&c| result.sizes[c] > 0)
        .map(|c| {
            let idx = result.members(c);
            OfflineObject {
                id: c,
                members: idx.iter().map(|&i| refs[i]).collect(),
                retained: idx.iter().filter(|&&i| retained[i]).map(|&i| refs[i]).collect(),
                mean: result.means[c].clone(),
                size: result.sizes[c],
                probability: probability[c],
            }
        })
        .collect();
    objects.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.id.cmp(&b.id)));

    Ok(OfflineDiscovery {
        objects,
        curve,
        points: points.len(),
        stride,
    })
}
