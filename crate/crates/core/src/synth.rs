//! Synthetic scenarios with ground truth: a room of fixed and moveable
//! objects visited by operators following a Markov task script.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Box3;
use crate::linalg::euclidean;
use crate::stream::{
    filter_saccades, FrameRecord, Stream, StreamHeader, DEFAULT_DEG_PER_PX, SACCADE_THRESHOLD, VELOCITY_WINDOW,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// One box for a fixed object, several for a moveable one.
    pub sites: Vec<Box3>,
    /// Number of modes of interaction (1 to 3).
    pub mois: usize,
    pub dwell_mean: f64,
    pub dwell_std: f64,
}

impl ObjectSpec {
    pub fn moveable(&self) -> bool {
        self.sites.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub fps: f64,
    pub operators: u32,
    pub sequences_per_operator: u32,
    pub visits_per_sequence: usize,
    pub appearance_dim: usize,
    pub motion_dim: usize,
    pub appearance_noise: f64,
    pub motion_noise: f64,
    /// Gaze jitter during fixations, degrees.
    pub gaze_jitter: f64,
    pub min_dwell: usize,
    /// Inclusive frame range of a saccadic transit.
    pub transit_frames: [usize; 2],
    /// Probability of a background glance between two visits.
    pub glance_probability: f64,
    pub glance_frames: [usize; 2],
    /// Per-frame probability that position tracking drops out.
    pub dropout_rate: f64,
    pub dropout_frames: [usize; 2],
    /// Glances land uniformly inside this box.
    pub room: Box3,
    pub objects: Vec<ObjectSpec>,
    /// Row-stochastic transition table; generated when absent.
    pub script: Option<Vec<Vec<f64>>>,
    /// Weight of each object's dominant successor in a generated script.
    pub dominant_weight: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            fps: 30.0,
            operators: 5,
            sequences_per_operator: 2,
            visits_per_sequence: 12,
            appearance_dim: 32,
            motion_dim: 16,
            appearance_noise: 0.15,
            motion_noise: 0.3,
            gaze_jitter: 0.2,
            min_dwell: 50,
            transit_frames: [6, 12],
            glance_probability: 0.7,
            glance_frames: [5, 15],
            dropout_rate: 0.002,
            dropout_frames: [10, 40],
            room: Box3 {
                min: [0.0, 0.0, 0.0],
                max: [8.0, 6.0, 2.5],
            },
            objects: default_objects(),
            script: None,
            dominant_weight: 0.6,
        }
    }
}

/// Twenty objects on a 5 by 5 grid of sites: fifteen fixed objects in the
/// middle three rows, five moveable objects with one site in each outer row.
fn default_objects() -> Vec<ObjectSpec> {
    let site = |i: usize, j: usize| {
        let c = [
            0.8 + 1.6 * i as f64,
            0.6 + 1.2 * j as f64,
            0.9 + 0.3 * ((i + j) % 3) as f64,
        ];
        let s = [
            0.3 + 0.1 * ((i * 3 + j) % 3) as f64,
            0.3 + 0.1 * ((i + 2 * j) % 3) as f64,
            0.25 + 0.05 * ((i + j) % 2) as f64,
        ];
        Box3 {
            min: std::array::from_fn(|k| c[k] - s[k] / 2.0),
            max: std::array::from_fn(|k| c[k] + s[k] / 2.0),
        }
    };
    let mois = |id: usize| match id {
        0..=2 | 15 => 2,
        3 => 3,
        _ => 1,
    };
    let mut objects = Vec::new();
    for j in 1..4 {
        for i in 0..5 {
            objects.push(vec![site(i, j)]);
        }
    }
    for i in 0..5 {
        objects.push(vec![site(i, 0), site(i, 4)]);
    }
    objects
        .into_iter()
        .enumerate()
        .map(|(id, sites)| ObjectSpec {
            sites,
            mois: mois(id),
            dwell_mean: 75.0,
            dwell_std: 15.0,
        })
        .collect()
}

fn check_range(name: &str, r: [usize; 2], min: usize) -> Result<()> {
    if r[0] < min || r[1] < r[0] {
        return Err(Error::Config(format!("{name} range {r:?} is invalid (minimum {min})")));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<ScenarioSpec> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Config("scenario has no objects".into()));
        }
        if !(self.fps > 0.0) || self.operators == 0 || self.sequences_per_operator == 0 || self.visits_per_sequence == 0
        {
            return Err(Error::Config(
                "fps, operators, sequences and visits must be positive".into(),
            ));
        }
        if self.appearance_dim == 0 || self.motion_dim == 0 {
            return Err(Error::Config("descriptor dimensions must be positive".into()));
        }
        for v in [
            self.appearance_noise,
            self.motion_noise,
            self.gaze_jitter,
            self.dropout_rate,
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config("noise levels must be finite and non-negative".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.glance_probability) || self.dropout_rate >= 1.0 {
            return Err(Error::Config("probabilities must lie in [0, 1)".into()));
        }
        check_range("transit_frames", self.transit_frames, 1)?;
        check_range("glance_frames", self.glance_frames, 5)?;
        check_range("dropout_frames", self.dropout_frames, 1)?;
        if self.min_dwell < 5 {
            return Err(Error::Config("min_dwell must be at least 5 frames".into()));
        }
        Box3::new(self.room.min, self.room.max)?;
        for (id, o) in self.objects.iter().enumerate() {
            if o.sites.is_empty() || !(1..=3).contains(&o.mois) {
                return Err(Error::Config(format!(
                    "object {id} needs at least one site and 1 to 3 MOIs"
                )));
            }
            for b in &o.sites {
                Box3::new(b.min, b.max)?;
            }
            if !(o.dwell_mean > 0.0 && o.dwell_std >= 0.0) {
                return Err(Error::Config(format!("object {id} has an invalid dwell distribution")));
            }
        }
        if let Some(script) = &self.script {
            validate_script(script, self.objects.len())?;
        }
        Ok(())
    }
}

/// Checks that `script` is a `k × k` row-stochastic table in which every
/// object can be reached from object 0.
pub fn validate_script(script: &[Vec<f64>], k: usize) -> Result<()> {
    if script.len() != k || script.iter().any(|r| r.len() != k) {
        return Err(Error::Config(format!("script must be {k} x {k}")));
    }
    for (i, row) in script.iter().enumerate() {
        if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("script row {i} is not stochastic")));
        }
    }
    let mut seen = vec![false; k];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for (j, &p) in script[i].iter().enumerate() {
            if p > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!("object {j} is unreachable in the script")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: usize,
    pub sites: Vec<Box3>,
    pub mois: usize,
}

/// A dwell on one object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    pub stream: usize,
    pub start: u64,
    pub end: u64,
    pub object: usize,
    pub site: usize,
    pub moi: usize,
}

/// A fixation on background clutter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Glance {
    pub stream: usize,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtStream {
    pub name: String,
    pub operator: u32,
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub objects: Vec<GtObject>,
    pub streams: Vec<GtStream>,
    /// Sorted by stream, then start.
    pub visits: Vec<Visit>,
    pub glances: Vec<Glance>,
    pub script: Vec<Vec<f64>>,
    /// Smallest distance between two appearance prototypes.
    pub prototype_separation: f64,
}

/// Frames at each end of a fixation segment that the velocity window
/// blurs into the neighboring saccade.
pub const SACCADE_MARGIN: u64 = 2;

impl GroundTruth {
    pub fn boxes(&self) -> Vec<Vec<Box3>> {
        self.objects.iter().map(|o| o.sites.clone()).collect()
    }

    pub fn visit_at(&self, stream: usize, t: u64) -> Option<&Visit> {
        let i = self.visits.partition_point(|v| (v.stream, v.end) < (stream, t));
        self.visits
            .get(i)
            .filter(|v| v.stream == stream && v.start <= t && t <= v.end)
    }

    /// Object attended at frame `t` of `stream`.
    pub fn label(&self, stream: usize, t: u64) -> Option<usize> {
        self.visit_at(stream, t).map(|v| v.object)
    }

    /// Visited object ids per stream, in order.
    pub fn sequences(&self) -> Vec<Vec<usize>> {
        (0..self.streams.len())
            .map(|s| self.visits.iter().filter(|v| v.stream == s).map(|v| v.object).collect())
            .collect()
    }

    /// Planted fixation mask of one stream: dwell and glance frames except
    /// the [`SACCADE_MARGIN`] frames next to a transit.
    pub fn planted_fixations(&self, stream: usize) -> Vec<bool> {
        let n = self.streams[stream].frames;
        let mut mask = vec![false; n as usize];
        let segments = self
            .visits
            .iter()
            .filter(|v| v.stream == stream)
            .map(|v| (v.start, v.end))
            .chain(
                self.glances
                    .iter()
                    .filter(|g| g.stream == stream)
                    .map(|g| (g.start, g.end)),
            );
        for (start, end) in segments {
            let lo = if start == 0 { 0 } else { start + SACCADE_MARGIN };
            let hi = if end + 1 == n {
                end
            } else {
                end.saturating_sub(SACCADE_MARGIN)
            };
            for t in lo..=hi {
                if t <= end && t >= start {
                    mask[t as usize] = true;
                }
            }
        }
        mask
    }
}

/// Generated per-object prototypes.
struct World {
    appearance: Vec<Vec<f64>>,
    /// `motion[o][m]` = (base, drift) of MOI `m` of object `o`.
    motion: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    script: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| sd * d.sample(rng)).collect()
}

fn build_world(spec: &ScenarioSpec) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    let k = spec.objects.len();
    let appearance = (0..k)
        .map(|_| gaussian_vec(&mut rng, spec.appearance_dim, 1.0))
        .collect();
    let motion = spec
        .objects
        .iter()
        .map(|o| {
            (0..o.mois)
                .map(|_| {
                    (
                        gaussian_vec(&mut rng, spec.motion_dim, 1.0),
                        gaussian_vec(&mut rng, spec.motion_dim, 1.0),
                    )
                })
                .collect()
        })
        .collect();
    let script = spec.script.clone().unwrap_or_else(|| {
        if k == 1 {
            return vec![vec![1.0]];
        }
        // A random cyclic order gives every object one dominant successor.
        let mut order: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut next = vec![0; k];
        for i in 0..k {
            next[order[i]] = order[(i + 1) % k];
        }
        let rest = if k > 2 {
            (1.0 - spec.dominant_weight) / (k - 2) as f64
        } else {
            0.0
        };
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if j == i {
                            0.0
                        } else if j == next[i] {
                            if k > 2 {
                                spec.dominant_weight
                            } else {
                                1.0
                            }
                        } else {
                            rest
                        }
                    })
                    .collect()
            })
            .collect()
    });
    World {
        appearance,
        motion,
        script,
    }
}

fn sample_row(rng: &mut impl Rng, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn uniform_in(rng: &mut impl Rng, b: &Box3) -> [f64; 3] {
    std::array::from_fn(|i| rng.random_range(b.min[i]..b.max[i]))
}

/// Slab `m` of `n` equal slabs of `b` along x.
fn slab(b: &Box3, m: usize, n: usize) -> Box3 {
    let w = (b.max[0] - b.min[0]) / n as f64;
    let mut s = *b;
    s.min[0] = b.min[0] + w * m as f64;
    s.max[0] = s.min[0] + w;
    s
}

const TRANSIT_GAZE: [[f64; 2]; 2] = [[0.0, 0.0], [640.0, 480.0]];

/// Streams and ground truth for a scenario. Stream `s` belongs to operator
/// `s / sequences_per_operator`. Each stream's fixation column comes from
/// the velocity filter.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Vec<(String, Stream)>, GroundTruth)> {
    spec.validate()?;
    let world = build_world(spec);
    let header = StreamHeader {
        appearance_dim: spec.appearance_dim,
        motion_dim: spec.motion_dim,
        fps: spec.fps,
        deg_per_px: DEFAULT_DEG_PER_PX,
        ..Default::default()
    };
    let jitter_px = spec.gaze_jitter / header.deg_per_px;
    let center = [header.width / 2.0, header.height / 2.0];
    let app_noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut streams = Vec::new();
    let mut gt_streams = Vec::new();
    let mut visits = Vec::new();
    let mut glances = Vec::new();
    for s in 0..(spec.operators * spec.sequences_per_operator) as usize {
        let operator = s as u32 / spec.sequences_per_operator;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s as u64);
        let mut records: Vec<FrameRecord> = Vec::new();
        let noisy = |rng: &mut ChaCha8Rng, base: &[f64], sd: f64| -> Vec<f64> {
            base.iter().map(|b| b + sd * app_noise.sample(rng)).collect()
        };
        let jittered = |rng: &mut ChaCha8Rng, g: [f64; 2]| -> [f64; 2] {
            [
                (g[0] + jitter_px * app_noise.sample(rng)).clamp(0.0, header.width),
                (g[1] + jitter_px * app_noise.sample(rng)).clamp(0.0, header.height),
            ]
        };
        let background =
            |rng: &mut ChaCha8Rng, t: u64, position: [f64; 3], gaze: [f64; 2], appearance: Vec<f64>| FrameRecord {
                t,
                operator,
                gaze: Some(gaze),
                fixation: false,
                position: Some(position),
                appearance,
                motion: gaussian_vec(rng, spec.motion_dim, spec.motion_noise),
            };
        let transit = |rng: &mut ChaCha8Rng, records: &mut Vec<FrameRecord>, from: [f64; 3], to: [f64; 3]| {
            let n = rng.random_range(spec.transit_frames[0]..=spec.transit_frames[1]);
            for i in 0..n {
                let w = (i + 1) as f64 / (n + 1) as f64;
                let p = std::array::from_fn(|k| from[k] + (to[k] - from[k]) * w);
                let app = gaussian_vec(rng, spec.appearance_dim, 1.0);
                let t = records.len() as u64;
                let r = background(rng, t, p, TRANSIT_GAZE[i % 2], app);
                records.push(r);
            }
        };

        let mut object = rng.random_range(0..spec.objects.len());
        let mut site = rng.random_range(0..spec.objects[object].sites.len());
        for v in 0..spec.visits_per_sequence {
            let o = &spec.objects[object];
            let moi = rng.random_range(0..o.mois);
            let dwell_dist = Normal::new(o.dwell_mean, o.dwell_std).map_err(|e| Error::Config(e.to_string()))?;
            let dwell = (dwell_dist.sample(&mut rng).round().max(0.0) as usize).max(spec.min_dwell);
            let region = slab(&o.sites[site], moi, o.mois);
            let (base, drift) = &world.motion[object][moi];
            let start = records.len() as u64;
            for i in 0..dwell {
                let phase = i as f64 / dwell as f64 - 0.5;
                let m: Vec<f64> = base.iter().zip(drift).map(|(b, d)| b + d * phase).collect();
                let gaze = jittered(&mut rng, center);
                let position = uniform_in(&mut rng, &region);
                let appearance = noisy(&mut rng, &world.appearance[object], spec.appearance_noise);
                let motion = noisy(&mut rng, &m, spec.motion_noise);
                records.push(FrameRecord {
                    t: records.len() as u64,
                    operator,
                    gaze: Some(gaze),
                    fixation: true,
                    position: Some(position),
                    appearance,
                    motion,
                });
            }
            visits.push(Visit {
                stream: s,
                start,
                end: records.len() as u64 - 1,
                object,
                site,
                moi,
            });
            if v + 1 == spec.visits_per_sequence {
                break;
            }
            let next = sample_row(&mut rng, &world.script[object]);
            let next_site = rng.random_range(0..spec.objects[next].sites.len());
            let from = spec.objects[object].sites[site].center();
            let to = spec.objects[next].sites[next_site].center();
            if rng.random::<f64>() < spec.glance_probability {
                let spot = uniform_in(&mut rng, &spec.room);
                transit(&mut rng, &mut records, from, spot);
                let n = rng.random_range(spec.glance_frames[0]..=spec.glance_frames[1]);
                let look = [rng.random_range(160.0..480.0), rng.random_range(120.0..360.0)];
                let clutter = gaussian_vec(&mut rng, spec.appearance_dim, 1.0);
                let start = records.len() as u64;
                for _ in 0..n {
                    let g = jittered(&mut rng, look);
                    let p = std::array::from_fn(|k| spot[k] + 0.02 * app_noise.sample(&mut rng));
                    let app = noisy(&mut rng, &clutter, spec.appearance_noise);
                    let t = records.len() as u64;
                    let r = background(&mut rng, t, p, g, app);
                    records.push(r);
                }
                glances.push(Glance {
                    stream: s,
                    start,
                    end: records.len() as u64 - 1,
                });
                transit(&mut rng, &mut records, spot, to);
            } else {
                transit(&mut rng, &mut records, from, to);
            }
            object = next;
            site = next_site;
        }

        let mut t = 0;
        while t < records.len() {
            if rng.random::<f64>() < spec.dropout_rate {
                let n = rng.random_range(spec.dropout_frames[0]..=spec.dropout_frames[1]);
                for r in records.iter_mut().skip(t).take(n) {
                    r.position = None;
                }
                t += n;
            } else {
                t += 1;
            }
        }

        let mut stream = Stream::new(header.clone(), records)?;
        let flags = filter_saccades(&stream.gaze_samples(), VELOCITY_WINDOW, SACCADE_THRESHOLD, spec.fps)?;
        for (r, f) in stream.records.iter_mut().zip(flags) {
            r.fixation = f;
        }
        let name = format!("op{}_seq{}", operator, s as u32 % spec.sequences_per_operator);
        gt_streams.push(GtStream {
            name: name.clone(),
            operator,
            frames: stream.records.len() as u64,
        });
        streams.push((name, stream));
    }

    let mut separation = f64::INFINITY;
    for i in 0..world.appearance.len() {
        for j in (i + 1)..world.appearance.len() {
            separation = separation.min(euclidean(&world.appearance[i], &world.appearance[j]));
        }
    }
    let gt = GroundTruth {
        objects: spec
            .objects
            .iter()
            .enumerate()
            .map(|(id, o)| GtObject {
                id,
                sites: o.sites.clone(),
                mois: o.mois,
            })
            .collect(),
        streams: gt_streams,
        visits,
        glances,
        script: world.script,
        prototype_separation: separation,
    };
    Ok((streams, gt))
}
