//! Per-object models: location mixture, appearance view store and usage snippets.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{euclidean, median_in_place, squared_distance};
use crate::offline::{db_index, kmeans, KMeansConfig};
use crate::online::{GaussianComponent, OnlineObject, COV_FLOOR};
use crate::stream::{ChannelScaler, FeatureLayout, Stream};

/// Largest number of location components tried for one object.
pub const LOCATION_MAX_COMPONENTS: usize = 4;
/// A multi-site split is accepted only when its Davies-Bouldin index is below this.
pub const LOCATION_SPLIT_DB: f64 = 1.0;
/// Every component of an accepted split must hold at least this share of points.
pub const LOCATION_MIN_SHARE: f64 = 0.1;

/// Gaussian mixture over 3D position.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationModel {
    pub components: Vec<GaussianComponent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodMode {
    /// `Σ θ exp(-½ m²)` without normalization constants; 1 at a lone component's mean.
    #[default]
    Unnormalized,
    /// Proper mixture density.
    Density,
}

impl LocationModel {
    pub fn single(points: &[[f64; 3]]) -> Result<LocationModel> {
        Ok(LocationModel {
            components: vec![GaussianComponent::from_samples(points)?],
        })
    }

    pub fn weights_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Mean of the component with the largest weight.
    pub fn dominant_mean(&self) -> [f64; 3] {
        let c = self
            .components
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.weight.total_cmp(&b.1.weight).then(b.0.cmp(&a.0)))
            .map(|(_, c)| c)
            .expect("non-empty location model");
        [c.mean[0], c.mean[1], c.mean[2]]
    }
}

/// Offline location model: k-means over member positions with the number of
/// components (1 to 4) chosen by the Davies-Bouldin index. A split is kept
/// only if its index is below [`LOCATION_SPLIT_DB`] and no component is
/// smaller than [`LOCATION_MIN_SHARE`] of the points.
pub fn build_location_model(positions: &[[f64; 3]], seed: u64) -> Result<LocationModel> {
    if positions.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let distinct = positions.iter().any(|p| p != &positions[0]);
    if positions.len() < 2 || !distinct {
        return LocationModel::single(positions);
    }
    let n = positions.len();
    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    for k in 2..=LOCATION_MAX_COMPONENTS.min(n) {
        let r = kmeans(positions, k, seed, &KMeansConfig::default())?;
        if r.sizes.iter().any(|&s| (s as f64) < LOCATION_MIN_SHARE * n as f64) {
            continue;
        }
        let v = db_index(&r, positions)?;
        if v < LOCATION_SPLIT_DB && best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, r.labels, k));
        }
    }
    let Some((_, labels, k)) = best else {
        return LocationModel::single(positions);
    };
    let components = (0..k)
        .map(|c| {
            let pts: Vec<[f64; 3]> = positions
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| *p)
                .collect();
            let mut g = GaussianComponent::from_samples(&pts)?;
            g.weight = pts.len() as f64 / n as f64;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocationModel { components })
}

/// Online location model: the position marginal of each mixture component,
/// mapped back to scene units through the scaler the stream was normalized with.
pub fn location_model_from_online(
    object: &OnlineObject,
    layout: &FeatureLayout,
    scaler: &ChannelScaler,
) -> Option<LocationModel> {
    let range = layout.position_range(layout.center_slot())?;
    let idx: Vec<usize> = range.clone().collect();
    let scale: Vec<f64> = scaler.scale[range.clone()].to_vec();
    let components = object
        .components
        .iter()
        .map(|c| {
            let mut m = c.marginal(&idx);
            let mean: Vec<f64> = scaler.restore(m.mean.as_slice(), range.clone());
            m.mean = DVector::from_vec(mean);
            for r in 0..idx.len() {
                for col in 0..idx.len() {
                    m.covariance[(r, col)] *= scale[r] * scale[col];
                }
            }
            m
        })
        .collect();
    Some(LocationModel { components })
}

/// Mixture likelihood of a position. In the default mode this is
/// `Σ_l θ_l exp(-½ (f - μ_l)ᵀ Σ_l⁻¹ (f - μ_l))`, which lies in (0, 1].
pub fn location_likelihood(model: &LocationModel, f: &[f64], mode: LikelihoodMode) -> Result<f64> {
    let mut total = 0.0;
    for c in &model.components {
        if c.dim() != f.len() {
            return Err(Error::DimensionMismatch {
                expected: c.dim(),
                found: f.len(),
            });
        }
        let factor = c.factor(COV_FLOOR);
        let m = factor.mahalanobis(f, &c.mean);
        let mut v = c.weight * (-0.5 * m * m).exp();
        if mode == LikelihoodMode::Density {
            let d = f.len() as f64;
            v /= ((2.0 * std::f64::consts::PI).powf(d) * factor.log_det().exp()).sqrt();
        }
        total += v;
    }
    Ok(total)
}

/// A stored view of an object.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub descriptor: Vec<f64>,
    pub stream: usize,
    pub t: u64,
}

/// Views of one object used for recognition by nearest-neighbor matching.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceStore {
    pub object: usize,
    pub views: Vec<View>,
    pub match_threshold: f64,
}

/// One view is kept per this many member frames.
pub const VIEW_STRIDE: usize = 10;
/// At most this many views per object.
pub const MAX_VIEWS: usize = 50;

impl AppearanceStore {
    /// Samples views from member frames (in temporal order): one per
    /// [`VIEW_STRIDE`] frames, thinned evenly to [`MAX_VIEWS`].
    pub fn sample(object: usize, frames: &[View], match_threshold: f64) -> AppearanceStore {
        let strided: Vec<&View> = frames.iter().step_by(VIEW_STRIDE).collect();
        let views = if strided.len() > MAX_VIEWS {
            (0..MAX_VIEWS)
                .map(|i| strided[i * strided.len() / MAX_VIEWS].clone())
                .collect()
        } else {
            strided.into_iter().cloned().collect()
        };
        AppearanceStore {
            object,
            views,
            match_threshold,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.views.first().map(|v| v.descriptor.len())
    }
}

/// Twice the median pairwise distance between views; infinite with fewer than two views.
pub fn default_match_threshold(views: &[View]) -> f64 {
    let mut d = Vec::new();
    for i in 0..views.len() {
        for j in (i + 1)..views.len() {
            d.push(euclidean(&views[i].descriptor, &views[j].descriptor));
        }
    }
    if d.is_empty() {
        f64::INFINITY
    } else {
        2.0 * median_in_place(&mut d)
    }
}

/// Nearest stored view across all stores. Returns the owning object and the
/// distance when within that store's threshold. Equal distances resolve to the
/// lower object id.
pub fn appearance_match(stores: &[AppearanceStore], descriptor: &[f64]) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(f64, usize, f64)> = None;
    let mut any = false;
    for s in stores {
        for v in &s.views {
            any = true;
            if v.descriptor.len() != descriptor.len() {
                return Err(Error::DimensionMismatch {
                    expected: v.descriptor.len(),
                    found: descriptor.len(),
                });
            }
            let d = squared_distance(&v.descriptor, descriptor);
            let better = match best {
                None => true,
                Some((bd, bo, _)) => d < bd || (d == bd && s.object < bo),
            };
            if better {
                best = Some((d, s.object, s.match_threshold));
            }
        }
    }
    if !any {
        return Err(Error::InvalidInput("appearance stores are empty".into()));
    }
    Ok(best.and_then(|(d, o, thr)| {
        let d = d.sqrt();
        (d <= thr).then_some((o, d))
    }))
}

/// One frame of a usage snippet. Gap frames carry `interpolated = true`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetFrame {
    pub t: u64,
    pub gaze: Option<[f64; 2]>,
    pub position: Option<[f64; 3]>,
    pub appearance: Vec<f64>,
    pub motion: Vec<f64>,
    pub interpolated: bool,
}

/// A contiguous clip during which one object is attended.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageSnippet {
    pub object: usize,
    pub stream: usize,
    pub operator: u32,
    pub start: u64,
    pub end: u64,
    /// Per-frame rows; may be empty for snippets loaded from an index only.
    pub frames: Vec<SnippetFrame>,
    /// Appearance of the first frame.
    pub first_appearance: Vec<f64>,
}

impl UsageSnippet {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn lerp<const N: usize>(a: [f64; N], b: [f64; N], w: f64) -> [f64; N] {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * w)
}

/// Fills `None` entries by linear interpolation between the nearest present
/// neighbors, or by copying when only one side exists.
fn fill_gaps<const N: usize>(values: &mut [Option<[f64; N]>], ts: &[u64]) {
    let present: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if present.is_empty() {
        return;
    }
    for i in 0..values.len() {
        if values[i].is_some() {
            continue;
        }
        let after = present.partition_point(|&p| p < i);
        let prev = after.checked_sub(1).map(|k| present[k]);
        let next = present.get(after).copied();
        values[i] = match (prev, next) {
            (Some(p), Some(n)) => {
                let w = (ts[i] - ts[p]) as f64 / (ts[n] - ts[p]) as f64;
                Some(lerp(values[p].unwrap(), values[n].unwrap(), w))
            }
            (Some(p), None) => values[p],
            (None, Some(n)) => values[n],
            (None, None) => None,
        };
    }
}

/// Splits a labeled stream into usage snippets.
///
/// A snippet is a maximal run of frames labeled with one object, where
/// unlabeled stretches of at most `gap_tolerance` frames are bridged. Bridged
/// frames get gaze and position by linear interpolation and descriptors from
/// the nearest labeled frame (the earlier one on ties). Runs shorter than
/// `min_len` frames are dropped.
pub fn extract_usage_snippets(
    stream: &Stream,
    stream_index: usize,
    labels: &[Option<usize>],
    min_len: u64,
    gap_tolerance: u64,
) -> Vec<UsageSnippet> {
    let mut runs: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, label) in labels.iter().enumerate().take(stream.records.len()) {
        let Some(object) = *label else { continue };
        let t = stream.records[i].t;
        match runs.last_mut() {
            Some((o, idx))
                if *o == object
                    && t - stream.records[*idx.last().unwrap()].t - 1 <= gap_tolerance
                    && no_other_label_between(labels, *idx.last().unwrap(), i) =>
            {
                idx.push(i)
            }
            _ => runs.push((object, vec![i])),
        }
    }

    runs.into_iter()
        .filter_map(|(object, idx)| {
            let first = &stream.records[idx[0]];
            let last = &stream.records[*idx.last().unwrap()];
            let (start, end) = (first.t, last.t);
            if end - start + 1 < min_len {
                return None;
            }
            let mut frames = Vec::with_capacity((end - start + 1) as usize);
            let mut k = 0;
            for t in start..=end {
                while stream.records[idx[k]].t < t {
                    k += 1;
                }
                let rk = &stream.records[idx[k]];
                if rk.t == t {
                    frames.push(SnippetFrame {
                        t,
                        gaze: rk.gaze,
                        position: rk.position,
                        appearance: rk.appearance.clone(),
                        motion: rk.motion.clone(),
                        interpolated: false,
                    });
                } else {
                    let prev = &stream.records[idx[k - 1]];
                    let src = if t - prev.t <= rk.t - t { prev } else { rk };
                    frames.push(SnippetFrame {
                        t,
                        gaze: None,
                        position: None,
                        appearance: src.appearance.clone(),
                        motion: src.motion.clone(),
                        interpolated: true,
                    });
                }
            }
            let ts: Vec<u64> = frames.iter().map(|f| f.t).collect();
            let mut gaze: Vec<Option<[f64; 2]>> = frames.iter().map(|f| f.gaze).collect();
            let mut pos: Vec<Option<[f64; 3]>> = frames.iter().map(|f| f.position).collect();
            fill_gaps(&mut gaze, &ts);
            fill_gaps(&mut pos, &ts);
            for ((f, g), p) in frames.iter_mut().zip(gaze).zip(pos) {
                f.gaze = g;
                f.position = p;
            }
            Some(UsageSnippet {
                object,
                stream: stream_index,
                operator: first.operator,
                start,
                end,
                first_appearance: first.appearance.clone(),
                frames,
            })
        })
        .collect()
}

/// Restores the frames of a snippet known only by its range, e.g. one read
/// from a model file. Every frame of the range counts as labeled; missing
/// gaze and positions are interpolated.
pub fn reload_snippet(stream: &Stream, snippet: &UsageSnippet) -> Result<UsageSnippet> {
    let labels: Vec<Option<usize>> = stream
        .records
        .iter()
        .map(|r| (snippet.start..=snippet.end).contains(&r.t).then_some(snippet.object))
        .collect();
    let mut found = extract_usage_snippets(stream, snippet.stream, &labels, 0, snippet.len());
    if found.len() != 1 || found[0].start != snippet.start || found[0].end != snippet.end {
        return Err(Error::InvalidInput(format!(
            "snippet {}-{} does not match stream {}",
            snippet.start, snippet.end, snippet.stream
        )));
    }
    let mut s = found.remove(0);
    s.first_appearance = snippet.first_appearance.clone();
    Ok(s)
}

fn no_other_label_between(labels: &[Option<usize>], a: usize, b: usize) -> bool {
    labels[a + 1..b].iter().all(Option::is_none)
}

/// Everything learned about one discovered object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub id: usize,
    pub location: LocationModel,
    pub appearance: AppearanceStore,
    pub snippets: Vec<UsageSnippet>,
}

/// The persisted result of a discovery run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    /// Directory of the streams the models were learned from, if known.
    pub streams: Option<String>,
    pub objects: Vec<ObjectModel>,
}

impl KnowledgeBase {
    pub fn object(&self, id: usize) -> Option<&ObjectModel> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Per stream, the object ids of its snippets in temporal order.
    pub fn interaction_sequences(&self) -> Vec<Vec<usize>> {
        let mut all: Vec<(usize, u64, usize)> = self
            .objects
            .iter()
            .flat_map(|o| o.snippets.iter().map(move |s| (s.stream, s.start, o.id)))
            .collect();
        all.sort();
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut current: Option<usize> = None;
        for (stream, _, id) in all {
            if current != Some(stream) {
                out.push(Vec::new());
                current = Some(stream);
            }
            out.last_mut().unwrap().push(id);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{FrameRecord, StreamHeader};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_box(rng: &mut impl Rng, lo: [f64; 3], size: f64, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| std::array::from_fn(|i| lo[i] + size * rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn identical_points_single_component() {
        let m = build_location_model(&[[1.0, 2.0, 3.0]; 10], 0).unwrap();
        assert_eq!(m.components.len(), 1);
        assert_eq!(m.components[0].mean.as_slice(), &[1.0, 2.0, 3.0]);
        let one = build_location_model(&[[1.0, 2.0, 3.0]], 0).unwrap();
        assert_eq!(one.components.len(), 1);
    }

    #[test]
    fn fixed_object_single_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = uniform_box(&mut rng, [1.0, 1.0, 1.0], 0.3, 300);
        assert_eq!(build_location_model(&pts, 0).unwrap().components.len(), 1);
    }

    #[test]
    fn two_sites_two_components_weighted_by_dwell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = uniform_box(&mut rng, [0.0, 0.0, 1.0], 0.3, 240);
        pts.extend(uniform_box(&mut rng, [2.5, 0.0, 1.0], 0.3, 120));
        let m = build_location_model(&pts, 0).unwrap();
        assert_eq!(m.components.len(), 2);
        let mut w: Vec<f64> = m.components.iter().map(|c| c.weight).collect();
        w.sort_by(f64::total_cmp);
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12 && (w[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn likelihood_closed_forms() {
        let iso = |m: [f64; 3], s2: f64, w: f64| GaussianComponent {
            weight: w,
            mean: DVector::from_column_slice(&m),
            covariance: nalgebra::DMatrix::identity(3, 3) * s2,
            count: 10,
        };
        let single = LocationModel {
            components: vec![iso([0.0, 0.0, 0.0], 0.25, 1.0)],
        };
        let at_mean = location_likelihood(&single, &[0.0, 0.0, 0.0], LikelihoodMode::Unnormalized).unwrap();
        assert!((at_mean - 1.0).abs() < 1e-5);
        let one_sd = location_likelihood(&single, &[0.5, 0.0, 0.0], LikelihoodMode::Unnormalized).unwrap();
        assert!((one_sd - (-0.5f64).exp()).abs() < 1e-5);

        let pair = LocationModel {
            components: vec![iso([0.0, 0.0, 0.0], 1.0, 0.3), iso([1.0, 1.0, 0.0], 4.0, 0.7)],
        };
        let f = [0.5, -0.5, 1.0];
        let q1: f64 = f.iter().map(|v| v * v).sum::<f64>() / (1.0 + COV_FLOOR);
        let q2: f64 = [0.5f64 - 1.0, -0.5 - 1.0, 1.0].iter().map(|v| v * v).sum::<f64>() / (4.0 + COV_FLOOR);
        let expected = 0.3 * (-0.5 * q1).exp() + 0.7 * (-0.5 * q2).exp();
        let got = location_likelihood(&pair, &f, LikelihoodMode::Unnormalized).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(location_likelihood(&pair, &[0.0, 0.0], LikelihoodMode::Unnormalized).is_err());
    }

    fn view(d: Vec<f64>) -> View {
        View {
            descriptor: d,
            stream: 0,
            t: 0,
        }
    }

    #[test]
    fn appearance_matching_rules() {
        let stores = vec![
            AppearanceStore {
                object: 3,
                views: vec![view(vec![1.0, 0.0])],
                match_threshold: 0.5,
            },
            AppearanceStore {
                object: 1,
                views: vec![view(vec![-1.0, 0.0])],
                match_threshold: 0.5,
            },
        ];
        assert_eq!(appearance_match(&stores, &[1.0, 0.0]).unwrap(), Some((3, 0.0)));
        // Equidistant: lower object id wins, but it is beyond the threshold.
        assert_eq!(appearance_match(&stores, &[0.0, 0.0]).unwrap(), None);
        let mut loose = stores.clone();
        loose.iter_mut().for_each(|s| s.match_threshold = 2.0);
        assert_eq!(appearance_match(&loose, &[0.0, 0.0]).unwrap().map(|m| m.0), Some(1));
        loose.reverse();
        assert_eq!(appearance_match(&loose, &[0.0, 0.0]).unwrap().map(|m| m.0), Some(1));
        assert!(appearance_match(&stores, &[0.0]).is_err());
        assert!(appearance_match(&[], &[0.0]).is_err());
    }

    #[test]
    fn store_sampling_cadence_and_cap() {
        let frames: Vec<View> = (0..2000).map(|i| view(vec![i as f64])).collect();
        let s = AppearanceStore::sample(0, &frames[..95], 1.0);
        assert_eq!(s.views.len(), 10);
        let s = AppearanceStore::sample(0, &frames, 1.0);
        assert_eq!(s.views.len(), MAX_VIEWS);
    }

    fn labeled_stream(n: u64) -> Stream {
        let header = StreamHeader {
            appearance_dim: 1,
            motion_dim: 1,
            ..Default::default()
        };
        let records = (0..n)
            .map(|t| FrameRecord {
                t,
                operator: 2,
                gaze: Some([t as f64, 0.0]),
                fixation: true,
                position: Some([t as f64, 0.0, 0.0]),
                appearance: vec![t as f64],
                motion: vec![0.0],
            })
            .collect();
        Stream::new(header, records).unwrap()
    }

    #[test]
    fn snippet_length_threshold() {
        let s = labeled_stream(100);
        let mut labels = vec![None; 100];
        labels[10..55].iter_mut().for_each(|l| *l = Some(0));
        labels[70..90].iter_mut().for_each(|l| *l = Some(1));
        let snips = extract_usage_snippets(&s, 0, &labels, 30, 5);
        assert_eq!(snips.len(), 1);
        assert_eq!((snips[0].start, snips[0].end), (10, 54));
        assert_eq!(snips[0].operator, 2);
        assert_eq!(snips[0].first_appearance, vec![10.0]);
    }

    #[test]
    fn short_gap_is_bridged_with_interpolation() {
        let mut s = labeled_stream(60);
        s.records[22].position = None;
        let mut labels = vec![None; 60];
        labels[0..20].iter_mut().for_each(|l| *l = Some(4));
        labels[23..50].iter_mut().for_each(|l| *l = Some(4));
        let snips = extract_usage_snippets(&s, 0, &labels, 30, 5);
        assert_eq!(snips.len(), 1);
        let sn = &snips[0];
        assert_eq!((sn.start, sn.end), (0, 49));
        assert_eq!(sn.frames.len(), 50);
        for f in &sn.frames[20..23] {
            assert!(f.interpolated);
            assert!((f.position.unwrap()[0] - f.t as f64).abs() < 1e-12);
        }
        // Frame 20 copies 19, frame 22 copies 23, frame 21 ties toward 19.
        assert_eq!(sn.frames[20].appearance, vec![19.0]);
        assert_eq!(sn.frames[21].appearance, vec![19.0]);
        assert_eq!(sn.frames[22].appearance, vec![23.0]);

        // A gap longer than the tolerance splits the run.
        let split = extract_usage_snippets(&s, 0, &labels, 1, 2);
        assert_eq!(split.len(), 2);
    }

    #[test]
    fn other_object_between_breaks_run() {
        let s = labeled_stream(30);
        let mut labels = vec![Some(0); 30];
        labels[15] = Some(1);
        let snips = extract_usage_snippets(&s, 0, &labels, 1, 5);
        assert_eq!(snips.iter().map(|s| s.object).collect::<Vec<_>>(), vec![0, 1, 0]);
    }
}
