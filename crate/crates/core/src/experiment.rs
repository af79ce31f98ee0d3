//! End-to-end runs on labeled scenarios: discovery, model building and scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{bbox_of_cluster, evaluate_tros, Box3, TroScore, DEFAULT_TRIM};
use crate::graph::{build_graph, next_object, InteractionGraph, DEFAULT_ALPHA};
use crate::models::{
    build_location_model, default_match_threshold, extract_usage_snippets, location_model_from_online, AppearanceStore,
    KnowledgeBase, LocationModel, ObjectModel, View,
};
use crate::offline::{discover_offline, KChoice, Method, OfflineConfig, OfflineDiscovery};
use crate::online::{DiscoveryEvent, MixtureMode, OnlineConfig, OnlineObject, OnlineState};
use crate::stream::{
    assemble_stream, image_parts, ChannelMode, ChannelScaler, FeatureConfig, FeatureLayout, FeatureVector, Stream,
};
use crate::synth::{generate_scenario, GroundTruth, ScenarioSpec};

/// Shortest usage snippet kept, in frames.
pub const MIN_SNIPPET_FRAMES: u64 = 30;
/// Unlabeled frames bridged inside a snippet.
pub const SNIPPET_GAP: u64 = 5;
/// Frames of the warm-up prefix the online scaler is fitted on.
pub const WARMUP_FRAMES: usize = 500;
/// Default minimum member frames of a reported online object.
pub const DEFAULT_MIN_SUPPORT: u64 = 60;

/// Index of the component of `model` with the largest weighted
/// unnormalized likelihood at `p`.
fn owning_component(model: &LocationModel, p: &[f64; 3]) -> Result<usize> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (l, c) in model.components.iter().enumerate() {
        let f = c.factor(crate::online::COV_FLOOR);
        let d = f.mahalanobis(p, &c.mean);
        let s = c.weight.ln() - 0.5 * d * d;
        if s > best.0 {
            best = (s, l);
        }
    }
    Ok(best.1)
}

/// One trimmed box per location component, built from the positions that
/// component owns. Components owning no position get no box.
pub fn component_boxes(model: &LocationModel, positions: &[[f64; 3]], trim: f64) -> Result<Vec<Box3>> {
    let mut split: Vec<Vec<[f64; 3]>> = vec![Vec::new(); model.components.len()];
    for p in positions {
        split[owning_component(model, p)?].push(*p);
    }
    split
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| bbox_of_cluster(s, trim))
        .collect()
}

/// Member frames of one object in one stream, as record indices.
type Labels = Vec<Vec<Option<usize>>>;

fn object_model(id: usize, streams: &[Stream], labels: &Labels, location: LocationModel, gap: u64) -> ObjectModel {
    let mut views = Vec::new();
    let mut snippets = Vec::new();
    for (s, stream) in streams.iter().enumerate() {
        let own: Vec<Option<usize>> = labels[s].iter().map(|l| l.filter(|&o| o == id)).collect();
        for (i, l) in own.iter().enumerate() {
            if l.is_some() {
                views.push(View {
                    descriptor: stream.records[i].appearance.clone(),
                    stream: s,
                    t: stream.records[i].t,
                });
            }
        }
        snippets.extend(
            extract_usage_snippets(stream, s, &labels[s], MIN_SNIPPET_FRAMES, gap)
                .into_iter()
                .filter(|sn| sn.object == id),
        );
    }
    let sampled = AppearanceStore::sample(id, &views, f64::INFINITY);
    let threshold = default_match_threshold(&sampled.views);
    ObjectModel {
        id,
        location,
        appearance: AppearanceStore {
            match_threshold: threshold,
            ..sampled
        },
        snippets,
    }
}

/// Result of offline discovery turned into object models.
pub struct OfflineRun {
    pub discovery: OfflineDiscovery,
    pub kb: KnowledgeBase,
    /// Per object, one box per location component.
    pub boxes: Vec<Vec<Box3>>,
}

/// Runs offline discovery and builds a model of every discovered object from
/// all of its members: a location mixture, sampled views and snippets.
/// Members are a thinned subset of the frames, so snippet runs bridge gaps up
/// to the thinning stride.
pub fn run_offline(streams: &[Stream], config: &OfflineConfig) -> Result<OfflineRun> {
    let discovery = discover_offline(streams, config)?;
    let mut labels: Labels = streams.iter().map(|s| vec![None; s.records.len()]).collect();
    for o in &discovery.objects {
        for r in &o.members {
            labels[r.stream][r.index] = Some(o.id);
        }
    }
    let gap = discovery.stride as u64 + SNIPPET_GAP;
    let mut objects = Vec::new();
    let mut boxes = Vec::new();
    for o in &discovery.objects {
        let positions: Vec<[f64; 3]> = o
            .members
            .iter()
            .filter_map(|r| streams[r.stream].records[r.index].position)
            .collect();
        if positions.is_empty() {
            continue;
        }
        let location = build_location_model(&positions, config.seed)?;
        boxes.push(component_boxes(&location, &positions, DEFAULT_TRIM)?);
        objects.push(object_model(o.id, streams, &labels, location, gap));
    }
    Ok(OfflineRun {
        discovery,
        kb: KnowledgeBase { streams: None, objects },
        boxes,
    })
}

/// Image parts and features of an online pass over every stream, in order.
pub fn online_features(streams: &[Stream], features: &FeatureConfig) -> Result<Vec<(usize, usize, FeatureVector)>> {
    features.validate()?;
    let mut out = Vec::new();
    for (s, stream) in streams.iter().enumerate() {
        let parts = image_parts(stream, features.part_mode(), features.attention);
        for (index, f) in assemble_stream(stream, &parts, features)? {
            out.push((s, index, f));
        }
    }
    Ok(out)
}

pub struct OnlineRun {
    pub events: Vec<DiscoveryEvent>,
    pub objects: Vec<OnlineObject>,
    pub layout: FeatureLayout,
    pub scaler: ChannelScaler,
    pub kb: KnowledgeBase,
    pub boxes: Vec<Vec<Box3>>,
}

/// Single pass over the streams in order. Features are standardized with a
/// scaler fitted on the first [`WARMUP_FRAMES`] features and then frozen.
/// Objects with fewer than `min_support` member frames are dropped.
pub fn run_online(
    streams: &[Stream],
    features: &FeatureConfig,
    config: &OnlineConfig,
    min_support: u64,
) -> Result<OnlineRun> {
    let feats = online_features(streams, features)?;
    if feats.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: feats.len(),
        });
    }
    let warm: Vec<&[f64]> = feats
        .iter()
        .take(WARMUP_FRAMES)
        .map(|(_, _, f)| f.values.as_slice())
        .collect();
    let scaler = ChannelScaler::fit(&warm)?;
    let layout = feats[0].2.layout;
    let mut state = OnlineState::new(*config, layout)?;
    let mut events = Vec::new();
    for (s, _, f) in &feats {
        let g = FeatureVector {
            t: f.t,
            values: scaler.apply(&f.values),
            layout,
        };
        events.extend(state.push_frame(*s, &g)?);
    }
    let objects = state.finalize(min_support);

    let mut labels: Labels = streams.iter().map(|s| vec![None; s.records.len()]).collect();
    for o in &objects {
        for m in &o.members {
            for t in m.start..=m.end {
                if let Some(i) = streams[m.stream].index_of(t) {
                    labels[m.stream][i] = Some(o.id);
                }
            }
        }
    }
    let mut models = Vec::new();
    let mut boxes = Vec::new();
    for o in &objects {
        let positions: Vec<[f64; 3]> = o
            .members
            .iter()
            .flat_map(|m| {
                let s = &streams[m.stream];
                (m.start..=m.end).filter_map(move |t| s.index_of(t).and_then(|i| s.records[i].position))
            })
            .collect();
        let location = match location_model_from_online(o, &layout, &scaler) {
            Some(l) => l,
            None if !positions.is_empty() => LocationModel::single(&positions)?,
            None => continue,
        };
        boxes.push(if positions.is_empty() {
            Vec::new()
        } else {
            component_boxes(&location, &positions, DEFAULT_TRIM)?
        });
        models.push(object_model(o.id, streams, &labels, location, SNIPPET_GAP));
    }
    Ok(OnlineRun {
        events,
        objects,
        layout,
        scaler,
        kb: KnowledgeBase {
            streams: None,
            objects: models,
        },
        boxes,
    })
}

/// Share of matched ground-truth objects whose dominant successor is
/// recovered: the graph's most likely next object of the matching discovery
/// must be matched to the ground-truth dominant successor. `None` when no
/// matched object has a matched dominant successor.
pub fn successor_recovery(
    graph: &InteractionGraph,
    kb: &KnowledgeBase,
    score: &TroScore,
    script: &[Vec<f64>],
) -> Option<f64> {
    let to_gt = |d: usize| score.matches.iter().find(|m| m.0 == d).map(|m| m.1);
    let to_disc = |g: usize| score.matches.iter().find(|m| m.1 == g).map(|m| m.0);
    let (mut hits, mut total) = (0, 0);
    for &(d, g, _) in &score.matches {
        let Some(row) = script.get(g) else { continue };
        let dominant = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))?;
        if to_disc(dominant).is_none() {
            continue;
        }
        total += 1;
        let id = kb.objects[d].id;
        let predicted = next_object(graph, id).and_then(|n| kb.objects.iter().position(|o| o.id == n));
        if predicted.and_then(to_gt) == Some(dominant) {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Offline cell of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineCell {
    pub method: Method,
    pub channels: ChannelMode,
    pub attention: bool,
    pub window: usize,
    pub k: KChoice,
    /// Restricts center-mode parts to fixation frames.
    #[serde(default)]
    pub fixated: bool,
}

/// Online sweep of an experiment grid: every combination of the thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineSweep {
    pub channels: Vec<ChannelMode>,
    pub eps1: Vec<f64>,
    pub eps2: Vec<f64>,
    pub eps3: Vec<f64>,
    pub mixture: Vec<MixtureMode>,
    pub xi: usize,
    pub min_support: u64,
}

impl Default for OnlineSweep {
    fn default() -> Self {
        OnlineSweep {
            channels: vec![ChannelMode::Position, ChannelMode::Both],
            eps1: vec![1.5],
            eps2: vec![3.0],
            eps3: vec![1.0],
            mixture: vec![MixtureMode::Weighted],
            xi: OnlineConfig::default().xi,
            min_support: DEFAULT_MIN_SUPPORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub seeds: Vec<u64>,
    pub iou: f64,
    pub alpha: f64,
    pub scenario: ScenarioSpec,
    pub offline: Vec<OfflineCell>,
    pub online: Option<OnlineSweep>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            seeds: vec![0],
            iou: 0.2,
            alpha: DEFAULT_ALPHA,
            scenario: ScenarioSpec::default(),
            offline: Vec::new(),
            online: None,
        }
    }
}

impl ExperimentGrid {
    pub fn from_toml(text: &str) -> Result<ExperimentGrid> {
        let g: ExperimentGrid = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one seed".into()));
        }
        if !(self.iou > 0.0 && self.iou <= 1.0) {
            return Err(Error::Config(format!(
                "iou threshold must be in (0, 1], got {}",
                self.iou
            )));
        }
        self.scenario.validate()?;
        for c in &self.offline {
            FeatureConfig {
                channels: c.channels,
                window: c.window,
                attention: c.attention,
            }
            .validate()?;
        }
        if let Some(o) = &self.online {
            if o.channels.is_empty() || o.mixture.is_empty() {
                return Err(Error::Config(
                    "online sweep needs at least one channel mode and mixture mode".into(),
                ));
            }
            for (e1, e2, e3) in o.grid() {
                OnlineConfig {
                    eps1: e1,
                    eps2: e2,
                    eps3: e3,
                    xi: o.xi,
                    ..Default::default()
                }
                .validate()?;
            }
        }
        Ok(())
    }
}

impl OnlineSweep {
    /// Every `(ε1, ε2, ε3)` combination in grid order.
    pub fn grid(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &a in &self.eps1 {
            for &b in &self.eps2 {
                for &c in &self.eps3 {
                    out.push((a, b, c));
                }
            }
        }
        out
    }
}

/// One evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub seed: u64,
    /// `offline` or `online`.
    pub mode: String,
    /// Human-readable parameters of the cell.
    pub params: String,
    pub score: TroScore,
    pub successor_recovery: Option<f64>,
}

/// Results of a grid, pooled over seeds per parameter setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cells: Vec<CellResult>,
    /// Per `(mode, params)`, the score from summed counts over seeds.
    pub pooled: Vec<(String, String, TroScore)>,
}

fn offline_params(c: &OfflineCell) -> String {
    let k = match c.k {
        KChoice::Known(k) => format!("k={k}"),
        KChoice::DbRange(a, b) => format!("db={a}..{b}"),
    };
    format!(
        "method={} channels={} attention={} fixated={} window={} {k}",
        c.method.name(),
        c.channels.name(),
        c.attention,
        c.fixated,
        c.window
    )
}

/// Offline evaluation of one cell on a generated scenario.
pub fn offline_cell(
    streams: &[Stream],
    gt: &GroundTruth,
    cell: &OfflineCell,
    seed: u64,
    iou: f64,
    alpha: f64,
) -> Result<CellResult> {
    let config = OfflineConfig {
        features: FeatureConfig {
            channels: cell.channels,
            window: cell.window,
            attention: cell.attention,
        },
        method: cell.method,
        k: cell.k,
        seed,
        center_on_fixations: cell.fixated,
        ..Default::default()
    };
    let run = run_offline(streams, &config)?;
    let score = evaluate_tros(&run.boxes, &gt.boxes(), iou);
    let ids: Vec<usize> = run.kb.objects.iter().map(|o| o.id).collect();
    let graph = build_graph(&run.kb.interaction_sequences(), &ids, alpha)?;
    Ok(CellResult {
        seed,
        mode: "offline".into(),
        params: offline_params(cell),
        successor_recovery: successor_recovery(&graph, &run.kb, &score, &gt.script),
        score,
    })
}

/// Online evaluation at one threshold setting. Online features use a single
/// frame with gaze-centered parts.
#[allow(clippy::too_many_arguments)]
pub fn online_cell(
    streams: &[Stream],
    gt: &GroundTruth,
    channels: ChannelMode,
    config: &OnlineConfig,
    min_support: u64,
    seed: u64,
    iou: f64,
    alpha: f64,
) -> Result<CellResult> {
    let features = FeatureConfig {
        channels,
        window: 1,
        attention: true,
    };
    let run = run_online(streams, &features, config, min_support)?;
    let score = evaluate_tros(&run.boxes, &gt.boxes(), iou);
    let ids: Vec<usize> = run.kb.objects.iter().map(|o| o.id).collect();
    let graph = build_graph(&run.kb.interaction_sequences(), &ids, alpha)?;
    Ok(CellResult {
        seed,
        mode: "online".into(),
        params: format!(
            "channels={} eps1={} eps2={} eps3={} xi={} mixture={}",
            channels.name(),
            crate::io::fmt_g9(config.eps1),
            crate::io::fmt_g9(config.eps2),
            crate::io::fmt_g9(config.eps3),
            config.xi,
            config.mixture.name()
        ),
        successor_recovery: successor_recovery(&graph, &run.kb, &score, &gt.script),
        score,
    })
}

/// Runs every cell of the grid for every seed. Cells run in parallel; the
/// result order depends only on the grid.
pub fn run_grid(grid: &ExperimentGrid) -> Result<EvalReport> {
    grid.validate()?;
    let scenes: Vec<(u64, Vec<Stream>, GroundTruth)> = grid
        .seeds
        .par_iter()
        .map(|&seed| {
            let spec = ScenarioSpec {
                seed,
                ..grid.scenario.clone()
            };
            let (streams, gt) = generate_scenario(&spec)?;
            Ok((seed, streams.into_iter().map(|s| s.1).collect(), gt))
        })
        .collect::<Result<_>>()?;

    enum Job<'a> {
        Offline(&'a OfflineCell),
        Online(ChannelMode, OnlineConfig, u64),
    }
    let mut jobs = Vec::new();
    for scene in &scenes {
        for c in &grid.offline {
            jobs.push((scene, Job::Offline(c)));
        }
        if let Some(o) = &grid.online {
            for &ch in &o.channels {
                for &mixture in &o.mixture {
                    for (e1, e2, e3) in o.grid() {
                        let cfg = OnlineConfig {
                            eps1: e1,
                            eps2: e2,
                            eps3: e3,
                            xi: o.xi,
                            mixture,
                            ..Default::default()
                        };
                        jobs.push((scene, Job::Online(ch, cfg, o.min_support)));
                    }
                }
            }
        }
    }
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|((seed, streams, gt), job)| match job {
            Job::Offline(c) => offline_cell(streams, gt, c, *seed, grid.iou, grid.alpha),
            Job::Online(ch, cfg, ms) => online_cell(streams, gt, *ch, cfg, *ms, *seed, grid.iou, grid.alpha),
        })
        .collect::<Result<_>>()?;

    let mut pooled: Vec<(String, String, (usize, usize, usize))> = Vec::new();
    for c in &cells {
        let s = &c.score;
        match pooled.iter_mut().find(|p| p.0 == c.mode && p.1 == c.params) {
            Some(p) => {
                p.2 .0 += s.discovered;
                p.2 .1 += s.ground_truth;
                p.2 .2 += s.true_positives;
            }
            None => pooled.push((
                c.mode.clone(),
                c.params.clone(),
                (s.discovered, s.ground_truth, s.true_positives),
            )),
        }
    }
    Ok(EvalReport {
        cells,
        pooled: pooled
            .into_iter()
            .map(|(m, p, (d, g, tp))| (m, p, TroScore::from_counts(d, g, tp)))
            .collect(),
    })
}

/// Cell with the highest F1; ties go to the earlier cell.
pub fn best_cell<'a>(cells: impl IntoIterator<Item = &'a CellResult>) -> Option<&'a CellResult> {
    cells.into_iter().fold(None, |best: Option<&CellResult>, c| match best {
        Some(b) if b.score.f1 >= c.score.f1 => Some(b),
        _ => Some(c),
    })
}

/// Cell with the highest recall, then the highest precision.
pub fn best_recall_cell<'a>(cells: impl IntoIterator<Item = &'a CellResult>) -> Option<&'a CellResult> {
    cells.into_iter().fold(None, |best: Option<&CellResult>, c| match best {
        Some(b) if (b.score.recall, b.score.precision) >= (c.score.recall, c.score.precision) => Some(b),
        _ => Some(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::online::GaussianComponent;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn boxes_follow_components() {
        let comp = |x: f64| GaussianComponent {
            weight: 0.5,
            mean: DVector::from_vec(vec![x, 0.0, 0.0]),
            covariance: DMatrix::identity(3, 3) * 0.01,
            count: 10,
        };
        let model = LocationModel {
            components: vec![comp(0.0), comp(5.0)],
        };
        let mut pts = Vec::new();
        for i in 0..20 {
            let d = i as f64 * 0.01;
            pts.push([d, d, d]);
            pts.push([5.0 + d, d, d]);
        }
        let boxes = component_boxes(&model, &pts, 0.0).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(boxes[0].max[0] < 1.0 && boxes[1].min[0] > 4.0);
        let one = component_boxes(&model, &pts[..1], 0.0).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn grid_from_toml() {
        let g = ExperimentGrid::from_toml(
            r#"
            seeds = [1, 2]
            [scenario]
            operators = 1
            [[offline]]
            method = "spectral"
            channels = "both"
            attention = true
            window = 25
            k = { known = 20 }
            [online]
            channels = ["pos", "both"]
            eps2 = [3.0, 6.0]
            "#,
        )
        .unwrap();
        assert_eq!(g.offline[0].k, KChoice::Known(20));
        assert_eq!(g.online.as_ref().unwrap().grid().len(), 2);
        assert!(ExperimentGrid::from_toml("seeds = []").is_err());
        assert!(ExperimentGrid::from_toml("iou = 2.0").is_err());
    }

    #[test]
    fn best_cell_prefers_earlier_ties() {
        let cell = |f1: f64, r: f64| CellResult {
            seed: 0,
            mode: "online".into(),
            params: format!("{f1}"),
            score: TroScore {
                f1,
                recall: r,
                ..Default::default()
            },
            successor_recovery: None,
        };
        let cells = [cell(0.5, 0.5), cell(0.7, 0.6), cell(0.7, 0.9)];
        assert_eq!(best_cell(&cells).unwrap().params, "0.7");
        assert_eq!(best_recall_cell(&cells).unwrap().score.recall, 0.9);
    }
}
