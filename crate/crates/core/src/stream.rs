//! Observation streams: frame records, saccade filtering, image-part selection
//! and sliding-window feature assembly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular velocity (degrees per second) above which a gaze window is a saccade.
pub const SACCADE_THRESHOLD: f64 = 100.0;
/// Centered window (in samples) over which gaze velocity is averaged.
pub const VELOCITY_WINDOW: usize = 5;
/// A 200 pixel crop subtends 19.3 degrees in the scene camera.
pub const DEFAULT_DEG_PER_PX: f64 = 19.3 / 200.0;
/// Position descriptors are 3D points.
pub const POSITION_DIM: usize = 3;

/// Per-stream constants declared in the stream file header.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub appearance_dim: usize,
    pub motion_dim: usize,
    pub fps: f64,
    pub deg_per_px: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for StreamHeader {
    fn default() -> Self {
        StreamHeader {
            appearance_dim: 32,
            motion_dim: 16,
            fps: 30.0,
            deg_per_px: DEFAULT_DEG_PER_PX,
            width: 640.0,
            height: 480.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub t: u64,
    /// Pixel coordinates; `None` when the tracker dropped the sample.
    pub gaze: Option<[f64; 2]>,
    /// Degrees per pixel.
    pub deg_per_px: f64,
}

/// One time-stamped observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: u64,
    pub operator: u32,
    pub gaze: Option<[f64; 2]>,
    /// Fixation flag as recorded alongside the stream (see [`filter_saccades`]).
    pub fixation: bool,
    /// 3D point of regard; `None` when camera tracking was lost.
    pub position: Option<[f64; 3]>,
    pub appearance: Vec<f64>,
    pub motion: Vec<f64>,
}

impl FrameRecord {
    pub fn gaze_sample(&self, deg_per_px: f64) -> GazeSample {
        GazeSample {
            t: self.t,
            gaze: self.gaze,
            deg_per_px,
        }
    }
}

/// A single recording: header plus frames in increasing frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub header: StreamHeader,
    pub records: Vec<FrameRecord>,
}

impl Stream {
    pub fn new(header: StreamHeader, records: Vec<FrameRecord>) -> Result<Stream> {
        let stream = Stream { header, records };
        stream.validate()?;
        Ok(stream)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if !(h.fps > 0.0) || !(h.deg_per_px > 0.0) {
            return Err(Error::InvalidInput("fps and degrees-per-pixel must be positive".into()));
        }
        check_monotone(self.records.iter().map(|r| r.t))?;
        for r in &self.records {
            if r.appearance.len() != h.appearance_dim {
                return Err(Error::DimensionMismatch {
                    expected: h.appearance_dim,
                    found: r.appearance.len(),
                });
            }
            if r.motion.len() != h.motion_dim {
                return Err(Error::DimensionMismatch {
                    expected: h.motion_dim,
                    found: r.motion.len(),
                });
            }
            if let Some(p) = r.position {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("non-finite position at frame {}", r.t)));
                }
            }
            if let Some([x, y]) = r.gaze {
                if !(0.0..=h.width).contains(&x) || !(0.0..=h.height).contains(&y) {
                    return Err(Error::InvalidInput(format!("gaze outside image at frame {}", r.t)));
                }
            }
        }
        Ok(())
    }

    pub fn gaze_samples(&self) -> Vec<GazeSample> {
        self.records
            .iter()
            .map(|r| r.gaze_sample(self.header.deg_per_px))
            .collect()
    }

    /// Recomputes every record's fixation flag with the default filter.
    pub fn refilter(&mut self) -> Result<()> {
        let flags = filter_saccades(
            &self.gaze_samples(),
            VELOCITY_WINDOW,
            SACCADE_THRESHOLD,
            self.header.fps,
        )?;
        for (r, f) in self.records.iter_mut().zip(flags) {
            r.fixation = f;
        }
        Ok(())
    }

    /// Position of frame `t` in `records`.
    pub fn index_of(&self, t: u64) -> Option<usize> {
        self.records.binary_search_by_key(&t, |r| r.t).ok()
    }

    pub fn fixation_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.fixation).count() as f64 / self.records.len() as f64
    }
}

fn check_monotone(ts: impl Iterator<Item = u64>) -> Result<()> {
    let mut prev: Option<u64> = None;
    for (position, t) in ts.enumerate() {
        if let Some(p) = prev {
            if t <= p {
                return Err(Error::NonMonotoneFrames {
                    position,
                    previous: p,
                    current: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// Angular speed in degrees/second between two consecutive samples, if both carry gaze.
fn pair_velocity(a: &GazeSample, b: &GazeSample, fps: f64) -> Option<f64> {
    let (ga, gb) = (a.gaze?, b.gaze?);
    let px = ((gb[0] - ga[0]).powi(2) + (gb[1] - ga[1]).powi(2)).sqrt();
    let dpp = 0.5 * (a.deg_per_px + b.deg_per_px);
    Some(px * dpp * fps / (b.t - a.t) as f64)
}

/// Velocity-threshold fixation detection.
///
/// For every sample the window of `velocity_window` samples centered on it
/// (clipped at the stream ends) is taken, and the speeds of all consecutive
/// pairs inside the window with gaze present are averaged. A sample is a
/// fixation when its own gaze is present and that average does not exceed
/// `threshold`. A window with no measurable pair has zero velocity.
pub fn filter_saccades(samples: &[GazeSample], velocity_window: usize, threshold: f64, fps: f64) -> Result<Vec<bool>> {
    if !(fps > 0.0) {
        return Err(Error::Config("fps must be positive".into()));
    }
    if velocity_window < 2 {
        return Err(Error::Config("velocity window must span at least 2 samples".into()));
    }
    check_monotone(samples.iter().map(|s| s.t))?;
    if samples.is_empty() {
        return Ok(Vec::new());
    }

    // speed[j] is the speed of the pair (j - 1, j).
    let speed: Vec<Option<f64>> = std::iter::once(None)
        .chain(samples.windows(2).map(|w| pair_velocity(&w[0], &w[1], fps)))
        .collect();

    let before = (velocity_window - 1) / 2;
    let after = velocity_window - 1 - before;
    let n = samples.len();
    Ok((0..n)
        .map(|i| {
            if samples[i].gaze.is_none() {
                return false;
            }
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n - 1);
            let (sum, count) = speed[lo + 1..=hi]
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            let mean = if count == 0 { 0.0 } else { sum / count as f64 };
            mean <= threshold
        })
        .collect())
}

/// How an image part is cropped from a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartMode {
    /// Crop around the image center.
    Center,
    /// Crop around the gaze fixation.
    Gaze,
}

/// The attended crop of one frame. Descriptor content lives in the frame
/// record at `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImagePart {
    pub t: u64,
    pub index: usize,
    pub mode: PartMode,
    pub fixated: bool,
}

/// Gaze parts exist only on fixated frames with gaze; center parts always exist.
pub fn select_image_part(record: &FrameRecord, index: usize, mode: PartMode, fixated: bool) -> Option<ImagePart> {
    match mode {
        PartMode::Center => Some(ImagePart {
            t: record.t,
            index,
            mode,
            fixated,
        }),
        PartMode::Gaze if fixated && record.gaze.is_some() => Some(ImagePart {
            t: record.t,
            index,
            mode,
            fixated,
        }),
        PartMode::Gaze => None,
    }
}

/// Image parts for every record of a stream, aligned with `stream.records`.
///
/// With `fixations_only` center parts are also restricted to fixation frames.
pub fn image_parts(stream: &Stream, mode: PartMode, fixations_only: bool) -> Vec<Option<ImagePart>> {
    stream
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if fixations_only && !r.fixation {
                return None;
            }
            select_image_part(r, i, mode, r.fixation)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    #[serde(alias = "pos")]
    Position,
    #[serde(alias = "app")]
    Appearance,
    Both,
}

impl ChannelMode {
    pub fn uses_position(self) -> bool {
        matches!(self, ChannelMode::Position | ChannelMode::Both)
    }

    pub fn uses_appearance(self) -> bool {
        matches!(self, ChannelMode::Appearance | ChannelMode::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelMode::Position => "pos",
            ChannelMode::Appearance => "app",
            ChannelMode::Both => "both",
        }
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" | "position" => Ok(ChannelMode::Position),
            "app" | "appearance" => Ok(ChannelMode::Appearance),
            "both" => Ok(ChannelMode::Both),
            other => Err(Error::Config(format!("unknown channel mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub channels: ChannelMode,
    /// Odd window length in frames; 1 means a single frame.
    pub window: usize,
    /// Gaze-fixation parts when set, image-center parts otherwise.
    pub attention: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            channels: ChannelMode::Both,
            window: 1,
            attention: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window must be odd and positive, got {}",
                self.window
            )));
        }
        Ok(())
    }

    pub fn part_mode(&self) -> PartMode {
        if self.attention {
            PartMode::Gaze
        } else {
            PartMode::Center
        }
    }

    pub fn layout(&self, appearance_dim: usize) -> FeatureLayout {
        FeatureLayout {
            window: self.window,
            position_dim: if self.channels.uses_position() { POSITION_DIM } else { 0 },
            appearance_dim: if self.channels.uses_appearance() {
                appearance_dim
            } else {
                0
            },
        }
    }
}

/// Where each channel sits inside a feature vector. Slots are laid out in
/// temporal order; inside a slot position precedes appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub window: usize,
    /// 0 when the position channel is inactive.
    pub position_dim: usize,
    /// 0 when the appearance channel is inactive.
    pub appearance_dim: usize,
}

impl FeatureLayout {
    pub fn slot_dim(&self) -> usize {
        self.position_dim + self.appearance_dim
    }

    pub fn len(&self) -> usize {
        self.window * self.slot_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position_range(&self, slot: usize) -> Option<std::ops::Range<usize>> {
        (self.position_dim > 0).then(|| {
            let start = slot * self.slot_dim();
            start..start + self.position_dim
        })
    }

    pub fn appearance_range(&self, slot: usize) -> Option<std::ops::Range<usize>> {
        (self.appearance_dim > 0).then(|| {
            let start = slot * self.slot_dim() + self.position_dim;
            start..start + self.appearance_dim
        })
    }

    /// Slot of the center frame.
    pub fn center_slot(&self) -> usize {
        (self.window - 1) / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Center frame.
    pub t: u64,
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

/// Concatenates the channel descriptors of the `config.window` frames centered
/// on frame `t`. Returns `None` if any slot of the window has no image part or
/// lacks an active channel (e.g. position untracked).
pub fn assemble_feature(
    stream: &Stream,
    parts: &[Option<ImagePart>],
    t: u64,
    config: &FeatureConfig,
) -> Result<Option<FeatureVector>> {
    config.validate()?;
    if stream.index_of(t).is_none() {
        return Err(Error::FrameOutOfRange(t));
    }
    let layout = config.layout(stream.header.appearance_dim);
    let half = (config.window - 1) as u64 / 2;
    if t < half {
        return Ok(None);
    }
    let mut values = Vec::with_capacity(layout.len());
    for frame in (t - half)..=(t + half) {
        let Some(idx) = stream.index_of(frame) else {
            return Ok(None);
        };
        if parts.get(idx).copied().flatten().is_none() {
            return Ok(None);
        }
        let record = &stream.records[idx];
        if layout.position_dim > 0 {
            let Some(p) = record.position else {
                return Ok(None);
            };
            values.extend_from_slice(&p);
        }
        if layout.appearance_dim > 0 {
            values.extend_from_slice(&record.appearance);
        }
    }
    Ok(Some(FeatureVector { t, values, layout }))
}

/// Assembles a feature for every frame of the stream where one exists.
/// Returned alongside each feature is the record index of its center frame.
pub fn assemble_stream(
    stream: &Stream,
    parts: &[Option<ImagePart>],
    config: &FeatureConfig,
) -> Result<Vec<(usize, FeatureVector)>> {
    let mut out = Vec::new();
    for (idx, part) in parts.iter().enumerate() {
        if part.is_none() {
            continue;
        }
        if let Some(f) = assemble_feature(stream, parts, stream.records[idx].t, config)? {
            out.push((idx, f));
        }
    }
    Ok(out)
}

/// Per-dimension standardization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Variances at or below this are treated as zero; such dimensions are only centered.
pub const VARIANCE_FLOOR: f64 = 1e-12;

impl ChannelScaler {
    pub fn fit(rows: &[&[f64]]) -> Result<ChannelScaler> {
        if rows.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: rows.len(),
            });
        }
        let dim = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let v = s / (n - 1.0);
                if v > VARIANCE_FLOOR {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(ChannelScaler { mean, scale })
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Inverse of [`apply`](Self::apply) restricted to `range`.
    pub fn restore(&self, values: &[f64], range: std::ops::Range<usize>) -> Vec<f64> {
        values
            .iter()
            .zip(&self.mean[range.clone()])
            .zip(&self.scale[range])
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// Standardizes every feature dimension to zero mean and unit sample variance.
/// The fitted scaler is returned so later points can be mapped identically.
pub fn normalize_channels(points: &[FeatureVector]) -> Result<(Vec<FeatureVector>, ChannelScaler)> {
    let rows: Vec<&[f64]> = points.iter().map(|p| p.values.as_slice()).collect();
    let scaler = ChannelScaler::fit(&rows)?;
    let normalized = points
        .iter()
        .map(|p| FeatureVector {
            t: p.t,
            values: scaler.apply(&p.values),
            layout: p.layout,
        })
        .collect();
    Ok((normalized, scaler))
}
