//! Streaming discovery of objects as incrementally updated Gaussian mixtures.
//!
//! Frames are pushed one at a time. A frame close enough (in mixture
//! Mahalanobis distance) to an existing object updates that object's nearest
//! component; otherwise runs of consecutive similar frames accumulate as a
//! candidate until `xi` frames long, at which point the candidate becomes a
//! new object. After every frame, objects whose appearance statistics are
//! within a Bhattacharyya threshold are merged: the younger object's
//! components are appended to the older object's mixture.

pub mod gaussian;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use gaussian::{bhattacharyya, incremental_update, GaussianComponent, COV_FLOOR};

use crate::error::{Error, Result};
use crate::linalg::{euclidean, Factor};
use crate::stream::{FeatureLayout, FeatureVector};

/// How the per-component Mahalanobis distances of an object are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureMode {
    /// `Σ_i θ_i |f - μ_i|_Σi`.
    #[default]
    Weighted,
    /// `min_i |f - μ_i|_Σi`.
    Min,
}

impl MixtureMode {
    pub fn name(self) -> &'static str {
        match self {
            MixtureMode::Weighted => "weighted",
            MixtureMode::Min => "min",
        }
    }
}

impl std::str::FromStr for MixtureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(MixtureMode::Weighted),
            "min" => Ok(MixtureMode::Min),
            other => Err(Error::Config(format!("unknown mixture mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Consecutive-similarity threshold (Euclidean).
    pub eps1: f64,
    /// Assignment threshold (Mahalanobis standard deviations).
    pub eps2: f64,
    /// Merge threshold (Bhattacharyya distance over appearance).
    pub eps3: f64,
    /// Frames a candidate must persist before it becomes an object.
    pub xi: usize,
    /// Missing frames tolerated between two consecutive parts.
    pub gap_tolerance: u64,
    pub cov_floor: f64,
    pub mixture: MixtureMode,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            eps1: 1.5,
            eps2: 3.0,
            eps3: 1.0,
            xi: 40,
            gap_tolerance: 5,
            cov_floor: COV_FLOOR,
            mixture: MixtureMode::Weighted,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0 && self.eps2 > 0.0 && self.eps3 > 0.0 && self.cov_floor > 0.0) {
            return Err(Error::Config("online thresholds must be positive".into()));
        }
        if self.xi < 2 {
            return Err(Error::Config("xi must be at least 2".into()));
        }
        Ok(())
    }
}

/// Frames `start..=end` of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MemberRange {
    pub stream: usize,
    pub start: u64,
    pub end: u64,
}

impl MemberRange {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineObject {
    pub id: usize,
    /// Mixture over the full feature vector.
    pub components: Vec<GaussianComponent>,
    /// Statistics of the appearance coordinates; absent without an appearance channel.
    pub appearance: Option<GaussianComponent>,
    /// Sorted, non-overlapping.
    pub members: Vec<MemberRange>,
}

impl OnlineObject {
    pub fn support(&self) -> u64 {
        self.members.iter().map(MemberRange::len).sum()
    }

    pub fn contains(&self, stream: usize, t: u64) -> bool {
        self.members
            .iter()
            .any(|m| m.stream == stream && (m.start..=m.end).contains(&t))
    }

    fn reweight(&mut self) {
        let total: usize = self.components.iter().map(|c| c.count).sum();
        for c in &mut self.components {
            c.weight = c.count as f64 / total as f64;
        }
    }

    fn add_member(&mut self, stream: usize, t: u64) {
        if let Some(last) = self.members.last_mut() {
            if last.stream == stream && last.end + 1 == t {
                last.end = t;
                return;
            }
        }
        self.members.push(MemberRange {
            stream,
            start: t,
            end: t,
        });
    }
}

/// `Σ_i θ_i |f - μ_i|_Σi` (or the minimum, per `mode`).
pub fn mixture_distance(object: &OnlineObject, f: &[f64], mode: MixtureMode, floor: f64) -> f64 {
    let factors: Vec<Factor> = object.components.iter().map(|c| c.factor(floor)).collect();
    mixture_distance_factored(&object.components, &factors, f, mode)
}

fn mixture_distance_factored(
    components: &[GaussianComponent],
    factors: &[Factor],
    f: &[f64],
    mode: MixtureMode,
) -> f64 {
    let d = components
        .iter()
        .zip(factors)
        .map(|(c, fac)| (c.weight, fac.mahalanobis(f, &c.mean)));
    match mode {
        MixtureMode::Weighted => d.map(|(w, m)| w * m).sum(),
        MixtureMode::Min => d.map(|(_, m)| m).fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Assigned,
    CandidateReset,
    ObjectCreated,
    ObjectsMerged,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Assigned => "assigned",
            EventKind::CandidateReset => "candidate_reset",
            EventKind::ObjectCreated => "object_created",
            EventKind::ObjectsMerged => "objects_merged",
        }
    }
}

impl std::str::FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "assigned" => EventKind::Assigned,
            "candidate_reset" => EventKind::CandidateReset,
            "object_created" => EventKind::ObjectCreated,
            "objects_merged" => EventKind::ObjectsMerged,
            other => return Err(Error::InvalidInput(format!("unknown event kind `{other}`"))),
        })
    }
}

/// One step of the discovery control flow. For merges `objects` is
/// `[survivor, removed]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryEvent {
    pub kind: EventKind,
    pub stream: usize,
    pub t: u64,
    pub objects: Vec<usize>,
}

impl fmt::Display for DiscoveryEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.t, self.kind.as_str())?;
        for o in &self.objects {
            write!(f, " {o}")?;
        }
        Ok(())
    }
}

struct Tracked {
    object: OnlineObject,
    factors: Vec<Factor>,
    appearance_factor: Option<Factor>,
}

impl Tracked {
    fn refactor(&mut self, floor: f64) {
        self.factors = self.object.components.iter().map(|c| c.factor(floor)).collect();
        self.appearance_factor = self.object.appearance.as_ref().map(|a| a.factor(floor));
    }
}

/// Single-writer discovery state.
pub struct OnlineState {
    config: OnlineConfig,
    layout: FeatureLayout,
    appearance_indices: Vec<usize>,
    objects: Vec<Tracked>,
    next_id: usize,
    candidate: Vec<(u64, Vec<f64>)>,
    previous: Option<(usize, u64, Vec<f64>)>,
    dirty: BTreeSet<usize>,
}

/// Coordinates of the appearance channel across all window slots.
pub fn appearance_indices(layout: &FeatureLayout) -> Vec<usize> {
    (0..layout.window)
        .filter_map(|s| layout.appearance_range(s))
        .flatten()
        .collect()
}

impl OnlineState {
    pub fn new(config: OnlineConfig, layout: FeatureLayout) -> Result<OnlineState> {
        config.validate()?;
        Ok(OnlineState {
            config,
            layout,
            appearance_indices: appearance_indices(&layout),
            objects: Vec::new(),
            next_id: 0,
            candidate: Vec::new(),
            previous: None,
            dirty: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &OnlineConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &OnlineObject> {
        self.objects.iter().map(|t| &t.object)
    }

    /// Total Gaussian components stored across all objects.
    pub fn component_count(&self) -> usize {
        self.objects.iter().map(|t| t.object.components.len()).sum()
    }

    fn appearance_of(&self, f: &[f64]) -> Vec<f64> {
        self.appearance_indices.iter().map(|&i| f[i]).collect()
    }

    /// Processes one image part of stream `stream` and returns the events it
    /// caused, merges included.
    pub fn push_frame(&mut self, stream: usize, f: &FeatureVector) -> Result<Vec<DiscoveryEvent>> {
        if f.values.len() != self.layout.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.len(),
                found: f.values.len(),
            });
        }
        let t = f.t;
        let values = &f.values;
        let mut events = Vec::new();
        let event = |kind, objects| DiscoveryEvent {
            kind,
            stream,
            t,
            objects,
        };

        let closest = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                (
                    i,
                    mixture_distance_factored(&tr.object.components, &tr.factors, values, self.config.mixture),
                )
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let assigned = matches!(closest, Some((_, d)) if d <= self.config.eps2);
        if assigned {
            let (i, _) = closest.expect("checked");
            let appearance = self.appearance_of(values);
            let floor = self.config.cov_floor;
            let tr = &mut self.objects[i];
            let l = tr
                .object
                .components
                .iter()
                .zip(&tr.factors)
                .enumerate()
                .map(|(l, (c, fac))| (l, fac.mahalanobis(values, &c.mean)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(l, _)| l)
                .expect("objects have at least one component");
            tr.object.components[l].update(values)?;
            tr.object.reweight();
            if let Some(app) = tr.object.appearance.as_mut() {
                app.update(&appearance)?;
            }
            tr.object.add_member(stream, t);
            tr.factors[l] = tr.object.components[l].factor(floor);
            tr.appearance_factor = tr.object.appearance.as_ref().map(|a| a.factor(floor));
            let id = tr.object.id;
            self.dirty.insert(id);
            self.candidate.clear();
            events.push(event(EventKind::Assigned, vec![id]));
        } else {
            let similar = match &self.previous {
                Some((ps, pt, pf)) => {
                    *ps == stream
                        && t.checked_sub(*pt)
                            .is_some_and(|gap| gap <= self.config.gap_tolerance + 1)
                        && euclidean(values, pf) < self.config.eps1
                }
                None => false,
            };
            if similar {
                self.candidate.push((t, values.clone()));
                if self.candidate.len() >= self.config.xi {
                    let id = self.create_object(stream)?;
                    events.push(event(EventKind::ObjectCreated, vec![id]));
                }
            } else {
                if self.candidate.len() >= 2 {
                    events.push(event(EventKind::CandidateReset, vec![]));
                }
                self.candidate.clear();
                self.candidate.push((t, values.clone()));
            }
        }
        self.previous = Some((stream, t, values.clone()));

        for mut e in self.try_merge()? {
            e.stream = stream;
            e.t = t;
            events.push(e);
        }
        Ok(events)
    }

    fn create_object(&mut self, stream: usize) -> Result<usize> {
        let rows: Vec<&[f64]> = self.candidate.iter().map(|(_, f)| f.as_slice()).collect();
        let component = GaussianComponent::from_samples(&rows)?;
        let appearance = if self.appearance_indices.is_empty() {
            None
        } else {
            let app: Vec<Vec<f64>> = rows.iter().map(|f| self.appearance_of(f)).collect();
            Some(GaussianComponent::from_samples(&app)?)
        };
        let id = self.next_id;
        self.next_id += 1;
        let mut object = OnlineObject {
            id,
            components: vec![component],
            appearance,
            members: Vec::new(),
        };
        for (t, _) in &self.candidate {
            object.add_member(stream, *t);
        }
        let mut tracked = Tracked {
            object,
            factors: Vec::new(),
            appearance_factor: None,
        };
        tracked.refactor(self.config.cov_floor);
        self.objects.push(tracked);
        self.candidate.clear();
        self.dirty.insert(id);
        Ok(id)
    }

    fn position(&self, id: usize) -> Option<usize> {
        self.objects.iter().position(|t| t.object.id == id)
    }

    /// Flags every object for the next merge check.
    pub fn mark_all_dirty(&mut self) {
        self.dirty = self.objects.iter().map(|t| t.object.id).collect();
    }

    /// Repeatedly merges the closest pair of objects (by appearance
    /// Bhattacharyya distance) while that distance is below `eps3`. Only pairs
    /// involving an object changed since the last check are examined; all
    /// other pairs are already known to be at least `eps3` apart. The younger
    /// object is folded into the older one.
    pub fn try_merge(&mut self) -> Result<Vec<DiscoveryEvent>> {
        let mut events = Vec::new();
        if self.appearance_indices.is_empty() {
            self.dirty.clear();
            return Ok(events);
        }
        let floor = self.config.cov_floor;
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for &d in &self.dirty {
                let Some(a) = self.position(d) else { continue };
                for b in 0..self.objects.len() {
                    if b == a {
                        continue;
                    }
                    let (ta, tb) = (&self.objects[a], &self.objects[b]);
                    let (lo, hi) = if ta.object.id < tb.object.id {
                        (ta.object.id, tb.object.id)
                    } else {
                        (tb.object.id, ta.object.id)
                    };
                    let dist = gaussian::bhattacharyya_factored(
                        ta.object.appearance.as_ref().expect("appearance channel"),
                        ta.appearance_factor.as_ref().expect("appearance channel"),
                        tb.object.appearance.as_ref().expect("appearance channel"),
                        tb.appearance_factor.as_ref().expect("appearance channel"),
                        floor,
                    )?;
                    let better = match best {
                        None => true,
                        Some((bd, bl, bh)) => dist < bd || (dist == bd && (lo, hi) < (bl, bh)),
                    };
                    if better {
                        best = Some((dist, lo, hi));
                    }
                }
            }
            match best {
                Some((dist, survivor, removed)) if dist < self.config.eps3 => {
                    self.merge(survivor, removed);
                    self.dirty.remove(&removed);
                    self.dirty.insert(survivor);
                    events.push(DiscoveryEvent {
                        kind: EventKind::ObjectsMerged,
                        stream: 0,
                        t: 0,
                        objects: vec![survivor, removed],
                    });
                }
                _ => break,
            }
        }
        self.dirty.clear();
        Ok(events)
    }

    fn merge(&mut self, survivor: usize, removed: usize) {
        let r = self.position(removed).expect("live object");
        let gone = self.objects.remove(r).object;
        let s = self.position(survivor).expect("live object");
        let tr = &mut self.objects[s];
        tr.object.components.extend(gone.components);
        tr.object.reweight();
        if let (Some(a), Some(b)) = (tr.object.appearance.as_ref(), gone.appearance.as_ref()) {
            tr.object.appearance = Some(GaussianComponent::pooled(a, b));
        }
        tr.object.members.extend(gone.members);
        tr.object.members.sort();
        let mut merged: Vec<MemberRange> = Vec::with_capacity(tr.object.members.len());
        for m in tr.object.members.drain(..) {
            match merged.last_mut() {
                Some(last) if last.stream == m.stream && last.end + 1 >= m.start => last.end = last.end.max(m.end),
                _ => merged.push(m),
            }
        }
        tr.object.members = merged;
        tr.refactor(self.config.cov_floor);
    }

    /// Snapshot of the objects with at least `min_support` member frames,
    /// ordered by id, mixture weights renormalized.
    pub fn finalize(&self, min_support: u64) -> Vec<OnlineObject> {
        let mut out: Vec<OnlineObject> = self
            .objects
            .iter()
            .map(|t| t.object.clone())
            .filter(|o| o.support() >= min_support)
            .collect();
        for o in &mut out {
            o.reweight();
        }
        out.sort_by_key(|o| o.id);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(pos: usize, app: usize) -> FeatureLayout {
        FeatureLayout {
            window: 1,
            position_dim: pos,
            appearance_dim: app,
        }
    }

    fn fv(t: u64, values: Vec<f64>, l: FeatureLayout) -> FeatureVector {
        FeatureVector { t, values, layout: l }
    }

    fn config(xi: usize) -> OnlineConfig {
        OnlineConfig {
            xi,
            ..Default::default()
        }
    }

    #[test]
    fn xi_identical_frames_create_one_object() {
        let l = layout(3, 0);
        let mut s = OnlineState::new(config(5), l).unwrap();
        let mut created = Vec::new();
        for t in 1..=5 {
            for e in s.push_frame(0, &fv(t, vec![1.0, 2.0, 3.0], l)).unwrap() {
                created.push((e.kind, e.t));
            }
        }
        assert_eq!(created, vec![(EventKind::ObjectCreated, 5)]);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn short_run_then_jump_resets() {
        let l = layout(3, 0);
        let mut s = OnlineState::new(config(5), l).unwrap();
        let mut kinds = Vec::new();
        for t in 1..=4 {
            kinds.extend(
                s.push_frame(0, &fv(t, vec![0.0; 3], l))
                    .unwrap()
                    .into_iter()
                    .map(|e| e.kind),
            );
        }
        kinds.extend(
            s.push_frame(0, &fv(5, vec![50.0; 3], l))
                .unwrap()
                .into_iter()
                .map(|e| e.kind),
        );
        assert_eq!(kinds, vec![EventKind::CandidateReset]);
        assert!(s.is_empty());
    }

    #[test]
    fn gap_within_tolerance_keeps_candidate() {
        let l = layout(3, 0);
        let mut s = OnlineState::new(config(4), l).unwrap();
        for t in [1, 2, 8, 9] {
            s.push_frame(0, &fv(t, vec![0.0; 3], l)).unwrap();
        }
        assert_eq!(s.len(), 1);
        let mut s = OnlineState::new(config(4), l).unwrap();
        for t in [1, 2, 9, 10] {
            s.push_frame(0, &fv(t, vec![0.0; 3], l)).unwrap();
        }
        assert!(s.is_empty());
    }

    #[test]
    fn mixture_distance_closed_forms() {
        let g = |m: Vec<f64>, s2: f64, w: f64| GaussianComponent {
            weight: w,
            covariance: nalgebra::DMatrix::identity(m.len(), m.len()) * s2,
            mean: nalgebra::DVector::from_vec(m),
            count: 4,
        };
        let single = OnlineObject {
            id: 0,
            components: vec![g(vec![1.0, 1.0], 4.0, 1.0)],
            appearance: None,
            members: vec![],
        };
        assert_eq!(mixture_distance(&single, &[1.0, 1.0], MixtureMode::Weighted, 0.0), 0.0);
        let d = mixture_distance(&single, &[4.0, 5.0], MixtureMode::Weighted, 0.0);
        assert!((d - 5.0 / 2.0).abs() < 1e-9);

        let pair = OnlineObject {
            id: 0,
            components: vec![g(vec![0.0, 0.0], 1.0, 0.5), g(vec![10.0, 0.0], 4.0, 0.5)],
            appearance: None,
            members: vec![],
        };
        // Distances: 3 / 1 and 7 / 2.
        let d = mixture_distance(&pair, &[3.0, 0.0], MixtureMode::Weighted, 0.0);
        assert!((d - 0.5 * (3.0 + 3.5)).abs() < 1e-9);
        let d = mixture_distance(&pair, &[3.0, 0.0], MixtureMode::Min, 0.0);
        assert!((d - 3.0).abs() < 1e-9);
    }

    fn run(s: &mut OnlineState, start: u64, n: u64, base: &[f64], jitter: f64) -> Vec<DiscoveryEvent> {
        let l = s.layout;
        let mut ev = Vec::new();
        for i in 0..n {
            let v: Vec<f64> = base
                .iter()
                .enumerate()
                .map(|(d, b)| b + jitter * (((i * 31 + d as u64 * 17) % 13) as f64 / 13.0 - 0.5))
                .collect();
            ev.extend(s.push_frame(0, &fv(start + i, v, l)).unwrap());
        }
        ev
    }

    #[test]
    fn identical_appearance_merges_into_two_components() {
        let l = layout(1, 2);
        let cfg = OnlineConfig {
            xi: 6,
            eps1: 1.0,
            eps2: 2.0,
            eps3: 1.0,
            ..Default::default()
        };
        let mut s = OnlineState::new(cfg, l).unwrap();
        run(&mut s, 0, 10, &[0.0, 5.0, 5.0], 0.2);
        let ev = run(&mut s, 100, 10, &[30.0, 5.0, 5.0], 0.2);
        assert!(ev
            .iter()
            .any(|e| e.kind == EventKind::ObjectsMerged && e.objects == vec![0, 1]));
        let objs = s.finalize(0);
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].components.len(), 2);
        let w: f64 = objs[0].components.iter().map(|c| c.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
        assert!(objs[0].contains(0, 3) && objs[0].contains(0, 105));
    }

    #[test]
    fn distant_appearance_does_not_merge() {
        let l = layout(1, 2);
        let cfg = OnlineConfig {
            xi: 6,
            eps1: 1.0,
            eps2: 2.0,
            eps3: 1.0,
            ..Default::default()
        };
        let mut s = OnlineState::new(cfg, l).unwrap();
        run(&mut s, 0, 10, &[0.0, 5.0, 5.0], 0.2);
        run(&mut s, 100, 10, &[30.0, 5.0 + 100.0 * 0.2, 5.0], 0.2);
        assert_eq!(s.finalize(0).len(), 2);
    }

    #[test]
    fn finalize_support_filter() {
        let l = layout(2, 0);
        let mut s = OnlineState::new(config(3), l).unwrap();
        assert!(s.finalize(0).is_empty());
        run(&mut s, 0, 3, &[0.0, 0.0], 0.0);
        assert_eq!(s.finalize(0).len(), 1);
        assert_eq!(s.finalize(3).len(), 1);
        assert!(s.finalize(4).is_empty());
    }

    #[test]
    fn config_validation() {
        let l = layout(2, 0);
        assert!(OnlineState::new(config(1), l).is_err());
        let bad = OnlineConfig {
            eps2: 0.0,
            ..Default::default()
        };
        assert!(OnlineState::new(bad, l).is_err());
    }
}
