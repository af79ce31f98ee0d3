use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{fmt_g9, header_value, join_g9, read, Lines};
use crate::assist::Recommendation;
use crate::error::{Error, Result};
use crate::eval::{Box3, TroScore};
use crate::experiment::EvalReport;
use crate::graph::InteractionGraph;
use crate::models::{AppearanceStore, KnowledgeBase, LocationModel, ObjectModel, UsageSnippet, View};
use crate::moi::{MoiCluster, MoiCurvePoint};
use crate::offline::{KChoice, OfflineConfig, OfflineDiscovery};
use crate::online::{DiscoveryEvent, GaussianComponent};
use crate::stream::{FrameRecord, Stream, StreamHeader, POSITION_DIM};
use crate::synth::{Glance, GroundTruth, GtObject, GtStream, Visit};

fn opt<const N: usize>(v: Option<[f64; N]>) -> String {
    match v {
        Some(a) => join_g9(&a),
        None => vec!["nan"; N].join(" "),
    }
}

fn read_opt<const N: usize>(lines: &Lines<'_>, tokens: &[&str]) -> Result<Option<[f64; N]>> {
    let v = lines.reals(tokens)?;
    if v.iter().all(|x| x.is_nan()) {
        return Ok(None);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(lines.err("partially missing vector"));
    }
    Ok(Some(std::array::from_fn(|i| v[i])))
}

pub const STREAM_MAGIC: &str = "tro-stream";

/// One header line then one line per frame:
/// `t operator gx gy fixation px py pz a1..aD m1..mE`.
pub fn write_stream(stream: &Stream) -> String {
    let h = &stream.header;
    let mut out = format!(
        "{STREAM_MAGIC} 1 appearance_dim={} motion_dim={} fps={} deg_per_px={} width={} height={}\n",
        h.appearance_dim,
        h.motion_dim,
        fmt_g9(h.fps),
        fmt_g9(h.deg_per_px),
        fmt_g9(h.width),
        fmt_g9(h.height)
    );
    for r in &stream.records {
        let _ = write!(
            out,
            "{} {} {} {} {}",
            r.t,
            r.operator,
            opt(r.gaze),
            u8::from(r.fixation),
            opt(r.position)
        );
        for v in r.appearance.iter().chain(&r.motion) {
            out.push(' ');
            out.push_str(&fmt_g9(*v));
        }
        out.push('\n');
    }
    out
}

pub fn parse_stream(path: &Path, text: &str) -> Result<Stream> {
    let mut lines = Lines::new(path, text);
    let head = lines.expect(STREAM_MAGIC)?;
    if head.first() != Some(&"1") {
        return Err(lines.err("unsupported stream version"));
    }
    let field = |key: &str| header_value(&head, key).ok_or_else(|| lines.err(format!("header lacks '{key}'")));
    let header = StreamHeader {
        appearance_dim: lines.int(field("appearance_dim")?)?,
        motion_dim: lines.int(field("motion_dim")?)?,
        fps: lines.f64(field("fps")?)?,
        deg_per_px: lines.f64(field("deg_per_px")?)?,
        width: lines.f64(field("width")?)?,
        height: lines.f64(field("height")?)?,
    };
    let (d, e) = (header.appearance_dim, header.motion_dim);
    let mut records = Vec::new();
    while let Some(tok) = lines.next_tokens() {
        lines.count(&tok, 8 + d + e)?;
        let fixation = match tok[4] {
            "0" => false,
            "1" => true,
            other => return Err(lines.err(format!("fixation flag must be 0 or 1, found '{other}'"))),
        };
        let values = lines.reals(&tok[8..])?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(lines.err("descriptors must be finite"));
        }
        records.push(FrameRecord {
            t: lines.int(tok[0])?,
            operator: lines.int(tok[1])?,
            gaze: read_opt::<2>(&lines, &tok[2..4])?,
            fixation,
            position: read_opt::<3>(&lines, &tok[5..8])?,
            appearance: values[..d].to_vec(),
            motion: values[d..].to_vec(),
        });
    }
    Stream::new(header, records).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn read_stream(path: &Path) -> Result<Stream> {
    parse_stream(path, &read(path)?)
}

pub const STREAM_EXT: &str = "stream";
/// File listing the streams of a directory in recording order.
pub const STREAM_INDEX: &str = "streams.txt";

/// Writes each stream as `NAME.stream` plus an index of the names in order.
pub fn write_stream_dir(dir: &Path, streams: &[(String, Stream)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::new();
    for (name, s) in streams {
        std::fs::write(dir.join(format!("{name}.{STREAM_EXT}")), write_stream(s))?;
        index.push_str(name);
        index.push('\n');
    }
    std::fs::write(dir.join(STREAM_INDEX), index)?;
    Ok(())
}

/// Streams of a directory, in index order when an index exists and by file
/// name otherwise.
pub fn read_stream_dir(dir: &Path) -> Result<Vec<(String, Stream)>> {
    let index = dir.join(STREAM_INDEX);
    let names: Vec<String> = if index.exists() {
        read(&index)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else {
        let mut n: Vec<String> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == STREAM_EXT))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        n.sort();
        n
    };
    if names.is_empty() {
        return Err(Error::InvalidInput(format!("no streams in {}", dir.display())));
    }
    names
        .into_iter()
        .map(|n| {
            let s = read_stream(&dir.join(format!("{n}.{STREAM_EXT}")))?;
            Ok((n, s))
        })
        .collect()
}

fn box_line(key: &str, b: &Box3) -> String {
    format!("{key} {} {}\n", join_g9(&b.min), join_g9(&b.max))
}

fn read_box(lines: &Lines<'_>, tok: &[&str]) -> Result<Box3> {
    lines.count(tok, 6)?;
    let v = lines.reals(tok)?;
    Box3::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]).map_err(|e| lines.err(e.to_string()))
}

pub const GT_MAGIC: &str = "tro-gt";

pub fn write_ground_truth(gt: &GroundTruth) -> String {
    let mut out = format!("{GT_MAGIC} 1\nseparation {}\n", fmt_g9(gt.prototype_separation));
    for o in &gt.objects {
        let _ = writeln!(out, "object {} sites {} mois {}", o.id, o.sites.len(), o.mois);
        for b in &o.sites {
            out.push_str(&box_line("site", b));
        }
    }
    for (i, s) in gt.streams.iter().enumerate() {
        let _ = writeln!(out, "stream {i} {} operator {} frames {}", s.name, s.operator, s.frames);
    }
    for v in &gt.visits {
        let _ = writeln!(
            out,
            "visit {} {} {} {} {} {}",
            v.stream, v.start, v.end, v.object, v.site, v.moi
        );
    }
    for g in &gt.glances {
        let _ = writeln!(out, "glance {} {} {}", g.stream, g.start, g.end);
    }
    let _ = writeln!(out, "script {}", gt.script.len());
    for row in &gt.script {
        let _ = writeln!(out, "row {}", join_g9(row));
    }
    out
}

pub fn parse_ground_truth(path: &Path, text: &str) -> Result<GroundTruth> {
    let mut lines = Lines::new(path, text);
    lines.expect(GT_MAGIC)?;
    let sep = lines.expect("separation")?;
    lines.count(&sep, 1)?;
    let mut gt = GroundTruth {
        objects: Vec::new(),
        streams: Vec::new(),
        visits: Vec::new(),
        glances: Vec::new(),
        script: Vec::new(),
        prototype_separation: lines.f64(sep[0])?,
    };
    while let Some(key) = lines.peek_key() {
        let tok = lines.next_tokens().expect("peeked");
        let tok = &tok[1..];
        match key {
            "object" => {
                lines.count(tok, 5)?;
                let id = lines.int(tok[0])?;
                let sites: usize = lines.int(tok[2])?;
                let mois = lines.int(tok[4])?;
                if id != gt.objects.len() {
                    return Err(lines.err("object ids must be consecutive from 0"));
                }
                let mut boxes = Vec::new();
                for _ in 0..sites {
                    let t = lines.expect("site")?;
                    boxes.push(read_box(&lines, &t)?);
                }
                gt.objects.push(GtObject { id, sites: boxes, mois });
            }
            "stream" => {
                lines.count(tok, 6)?;
                gt.streams.push(GtStream {
                    name: tok[1].to_string(),
                    operator: lines.int(tok[3])?,
                    frames: lines.int(tok[5])?,
                });
            }
            "visit" => {
                lines.count(tok, 6)?;
                gt.visits.push(Visit {
                    stream: lines.int(tok[0])?,
                    start: lines.int(tok[1])?,
                    end: lines.int(tok[2])?,
                    object: lines.int(tok[3])?,
                    site: lines.int(tok[4])?,
                    moi: lines.int(tok[5])?,
                });
            }
            "glance" => {
                lines.count(tok, 3)?;
                gt.glances.push(Glance {
                    stream: lines.int(tok[0])?,
                    start: lines.int(tok[1])?,
                    end: lines.int(tok[2])?,
                });
            }
            "script" => {
                lines.count(tok, 1)?;
                let k: usize = lines.int(tok[0])?;
                for _ in 0..k {
                    let r = lines.expect("row")?;
                    gt.script.push(lines.reals(&r)?);
                }
            }
            other => return Err(lines.err(format!("unknown record '{other}'"))),
        }
    }
    Ok(gt)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    parse_ground_truth(path, &read(path)?)
}

pub const BOXES_MAGIC: &str = "tro-boxes";

/// Discovered objects as box sets: `object ID N` followed by N `box` lines.
pub fn write_boxes(objects: &[(usize, Vec<Box3>)]) -> String {
    let mut out = format!("{BOXES_MAGIC} 1\n");
    for (id, boxes) in objects {
        let _ = writeln!(out, "object {id} {}", boxes.len());
        for b in boxes {
            out.push_str(&box_line("box", b));
        }
    }
    out
}

pub fn parse_boxes(path: &Path, text: &str) -> Result<Vec<(usize, Vec<Box3>)>> {
    let mut lines = Lines::new(path, text);
    lines.expect(BOXES_MAGIC)?;
    let mut out = Vec::new();
    while lines.peek_key().is_some() {
        let tok = lines.expect("object")?;
        lines.count(&tok, 2)?;
        let id = lines.int(tok[0])?;
        let n: usize = lines.int(tok[1])?;
        let mut boxes = Vec::with_capacity(n);
        for _ in 0..n {
            let b = lines.expect("box")?;
            boxes.push(read_box(&lines, &b)?);
        }
        out.push((id, boxes));
    }
    Ok(out)
}

pub fn read_boxes(path: &Path) -> Result<Vec<(usize, Vec<Box3>)>> {
    parse_boxes(path, &read(path)?)
}

pub const MODEL_MAGIC: &str = "tro-model";

fn write_component(out: &mut String, c: &GaussianComponent) {
    let _ = writeln!(
        out,
        "component {} {} {} {}",
        fmt_g9(c.weight),
        c.count,
        join_g9(c.mean.as_slice()),
        join_g9(c.covariance.as_slice())
    );
}

/// Versioned model file: the stream list, then per object its location
/// mixture (θ, count, μ, flattened Σ), appearance views and snippet index.
pub fn write_model(kb: &KnowledgeBase, stream_names: &[String]) -> String {
    let mut out = format!("{MODEL_MAGIC} 1\n");
    let _ = writeln!(out, "streams {}", kb.streams.as_deref().unwrap_or("-"));
    for (i, n) in stream_names.iter().enumerate() {
        let _ = writeln!(out, "stream {i} {n}");
    }
    let _ = writeln!(out, "objects {}", kb.objects.len());
    for o in &kb.objects {
        let _ = writeln!(out, "object {}", o.id);
        let _ = writeln!(out, "location {}", o.location.components.len());
        for c in &o.location.components {
            write_component(&mut out, c);
        }
        let dim = o.appearance.dim().unwrap_or(0);
        let _ = writeln!(
            out,
            "appearance {} {} {dim}",
            fmt_g9(o.appearance.match_threshold),
            o.appearance.views.len()
        );
        for v in &o.appearance.views {
            let _ = writeln!(out, "view {} {} {}", v.stream, v.t, join_g9(&v.descriptor));
        }
        let _ = writeln!(out, "snippets {}", o.snippets.len());
        for s in &o.snippets {
            let _ = writeln!(
                out,
                "snippet {} {} {} {} {}",
                s.stream,
                s.operator,
                s.start,
                s.end,
                join_g9(&s.first_appearance)
            );
        }
    }
    out
}

/// A model file with the names of the streams it was learned from.
pub struct ModelFile {
    pub kb: KnowledgeBase,
    pub stream_names: Vec<String>,
}

pub fn parse_model(path: &Path, text: &str) -> Result<ModelFile> {
    let mut lines = Lines::new(path, text);
    let v = lines.expect(MODEL_MAGIC)?;
    if v.first() != Some(&"1") {
        return Err(lines.err("unsupported model version"));
    }
    let s = lines.expect("streams")?;
    lines.count(&s, 1)?;
    let streams = (s[0] != "-").then(|| s[0].to_string());
    let mut stream_names = Vec::new();
    while lines.peek_key() == Some("stream") {
        let t = lines.expect("stream")?;
        lines.count(&t, 2)?;
        stream_names.push(t[1].to_string());
    }
    let n = lines.expect("objects")?;
    lines.count(&n, 1)?;
    let n: usize = lines.int(n[0])?;
    let mut objects = Vec::with_capacity(n);
    for _ in 0..n {
        let id = lines.expect("object")?;
        lines.count(&id, 1)?;
        let id: usize = lines.int(id[0])?;
        let l = lines.expect("location")?;
        lines.count(&l, 1)?;
        let l: usize = lines.int(l[0])?;
        let mut components = Vec::with_capacity(l);
        for _ in 0..l {
            let c = lines.expect("component")?;
            let d = POSITION_DIM;
            lines.count(&c, 2 + d + d * d)?;
            components.push(GaussianComponent {
                weight: lines.f64(c[0])?,
                count: lines.int(c[1])?,
                mean: DVector::from_vec(lines.reals(&c[2..2 + d])?),
                covariance: DMatrix::from_vec(d, d, lines.reals(&c[2 + d..])?),
            });
        }
        let a = lines.expect("appearance")?;
        lines.count(&a, 3)?;
        let threshold = lines.f64(a[0])?;
        let nv: usize = lines.int(a[1])?;
        let dim: usize = lines.int(a[2])?;
        let mut views = Vec::with_capacity(nv);
        for _ in 0..nv {
            let v = lines.expect("view")?;
            lines.count(&v, 2 + dim)?;
            views.push(View {
                stream: lines.int(v[0])?,
                t: lines.int(v[1])?,
                descriptor: lines.reals(&v[2..])?,
            });
        }
        let ns = lines.expect("snippets")?;
        lines.count(&ns, 1)?;
        let ns: usize = lines.int(ns[0])?;
        let mut snippets = Vec::with_capacity(ns);
        for _ in 0..ns {
            let s = lines.expect("snippet")?;
            if s.len() < 4 {
                return Err(lines.err("snippet needs stream, operator, start and end"));
            }
            snippets.push(UsageSnippet {
                object: id,
                stream: lines.int(s[0])?,
                operator: lines.int(s[1])?,
                start: lines.int(s[2])?,
                end: lines.int(s[3])?,
                frames: Vec::new(),
                first_appearance: lines.reals(&s[4..])?,
            });
        }
        objects.push(ObjectModel {
            id,
            location: LocationModel { components },
            appearance: AppearanceStore {
                object: id,
                views,
                match_threshold: threshold,
            },
            snippets,
        });
    }
    lines.done()?;
    Ok(ModelFile {
        kb: KnowledgeBase { streams, objects },
        stream_names,
    })
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    parse_model(path, &read(path)?)
}

fn k_choice(k: &KChoice) -> String {
    match k {
        KChoice::Known(k) => format!("known {k}"),
        KChoice::DbRange(a, b) => format!("db {a} {b}"),
    }
}

/// Key-value clustering report of an offline run.
pub fn write_clustering_report(d: &OfflineDiscovery, config: &OfflineConfig) -> String {
    let mut out = String::from("tro-clustering 1\n");
    let _ = writeln!(out, "method {}", config.method.name());
    let _ = writeln!(out, "channels {}", config.features.channels.name());
    let _ = writeln!(out, "window {}", config.features.window);
    let _ = writeln!(out, "attention {}", config.features.attention);
    let _ = writeln!(out, "k {}", k_choice(&config.k));
    let _ = writeln!(out, "seed {}", config.seed);
    let _ = writeln!(out, "beta {}", fmt_g9(config.beta));
    let _ = writeln!(out, "points {}", d.points);
    let _ = writeln!(out, "stride {}", d.stride);
    if let Some(c) = &d.curve {
        for (k, v) in &c.entries {
            let _ = writeln!(out, "curve {k} {}", fmt_g9(*v));
        }
        let _ = writeln!(out, "chosen {}", c.chosen);
    }
    for o in &d.objects {
        let _ = writeln!(out, "cluster {} size {} p {}", o.id, o.size, fmt_g9(o.probability));
        let _ = writeln!(out, "mean {}", join_g9(&o.mean));
        let retained: Vec<String> = o.retained.iter().map(|r| format!("{}:{}", r.stream, r.index)).collect();
        let _ = writeln!(out, "retained {}", retained.join(" "));
    }
    out
}

/// Event log: `t kind ids...`, with a comment line whenever the stream changes.
pub fn write_events(events: &[DiscoveryEvent], stream_names: &[String]) -> String {
    let mut out = String::from("# tro-events 1\n");
    let mut current = None;
    for e in events {
        if current != Some(e.stream) {
            current = Some(e.stream);
            let name = stream_names.get(e.stream).map_or("?", String::as_str);
            let _ = writeln!(out, "# stream {} {name}", e.stream);
        }
        let _ = writeln!(out, "{e}");
    }
    out
}

/// MOI report of one object.
pub fn write_moi_object(
    out: &mut String,
    object: usize,
    snippets: &[UsageSnippet],
    clusters: &[MoiCluster],
    lambda: f64,
) {
    let _ = writeln!(
        out,
        "object {object} snippets {} lambda {}",
        snippets.len(),
        fmt_g9(lambda)
    );
    for (j, c) in clusters.iter().enumerate() {
        let r = &snippets[c.representative];
        let _ = writeln!(
            out,
            "moi {j} size {} p {} representative {}:{}-{} common {}",
            c.members.len(),
            fmt_g9(c.confidence),
            r.stream,
            r.start,
            r.end,
            u8::from(c.confidence >= lambda)
        );
    }
}

pub fn write_moi_curve(points: &[MoiCurvePoint]) -> String {
    let mut out = String::from("lambda,recall,precision\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", fmt_g9(p.lambda), fmt_g9(p.recall), fmt_g9(p.precision));
    }
    out
}

pub const GRAPH_MAGIC: &str = "tro-graph";

/// `K α`, node ids, K weight rows, then the edge list heaviest first.
pub fn write_graph(g: &InteractionGraph) -> String {
    let mut out = format!("{GRAPH_MAGIC} 1\ngraph {} {}\n", g.len(), fmt_g9(g.alpha));
    let ids: Vec<String> = g.ids.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(out, "ids {}", ids.join(" "));
    for row in &g.weights {
        let _ = writeln!(out, "row {}", join_g9(row));
    }
    for (a, b, w) in g.edges() {
        let _ = writeln!(out, "edge {a} {b} {}", fmt_g9(w));
    }
    out
}

pub fn parse_graph(path: &Path, text: &str) -> Result<InteractionGraph> {
    let mut lines = Lines::new(path, text);
    lines.expect(GRAPH_MAGIC)?;
    let h = lines.expect("graph")?;
    lines.count(&h, 2)?;
    let k: usize = lines.int(h[0])?;
    let alpha = lines.f64(h[1])?;
    let ids = lines.expect("ids")?;
    lines.count(&ids, k)?;
    let ids = ids.iter().map(|t| lines.int(t)).collect::<Result<Vec<usize>>>()?;
    let mut weights = Vec::with_capacity(k);
    for _ in 0..k {
        let r = lines.expect("row")?;
        lines.count(&r, k)?;
        weights.push(lines.reals(&r)?);
    }
    while lines.peek_key() == Some("edge") {
        lines.next_tokens();
    }
    lines.done()?;
    Ok(InteractionGraph { ids, alpha, weights })
}

pub fn read_graph(path: &Path) -> Result<InteractionGraph> {
    parse_graph(path, &read(path)?)
}

pub fn write_assist_log(recs: &[Recommendation]) -> String {
    let mut out = String::from("# t object recognizer help_snippet next_object lx ly lz\n");
    for r in recs {
        let _ = writeln!(out, "{r}");
    }
    out
}

/// Key-value TRO score.
pub fn write_score(score: &TroScore) -> String {
    let mut out = String::from("tro-score 1\n");
    let _ = writeln!(out, "discovered {}", score.discovered);
    let _ = writeln!(out, "ground_truth {}", score.ground_truth);
    let _ = writeln!(out, "true_positives {}", score.true_positives);
    let _ = writeln!(out, "false_positives {}", score.false_positives);
    let _ = writeln!(out, "recall {}", fmt_g9(score.recall));
    let _ = writeln!(out, "precision {}", fmt_g9(score.precision));
    let _ = writeln!(out, "f1 {}", fmt_g9(score.f1));
    for (d, g, iou) in &score.matches {
        let _ = writeln!(out, "match {d} {g} {}", fmt_g9(*iou));
    }
    out
}

/// Experiment report: the configuration echoed as comments, one line per
/// cell, then one line per parameter setting pooled over seeds.
pub fn write_eval_report(report: &EvalReport, config_echo: &str) -> String {
    let mut out = String::from("# tro-report 1\n");
    for l in config_echo.lines() {
        let _ = writeln!(out, "# {l}");
    }
    let opt = |v: Option<f64>| v.map_or("-".to_string(), fmt_g9);
    for c in &report.cells {
        let s = &c.score;
        let _ = writeln!(
            out,
            "cell seed={} mode={} {} discovered={} tp={} recall={} precision={} f1={} successor={}",
            c.seed,
            c.mode,
            c.params,
            s.discovered,
            s.true_positives,
            fmt_g9(s.recall),
            fmt_g9(s.precision),
            fmt_g9(s.f1),
            opt(c.successor_recovery)
        );
    }
    for (mode, params, s) in &report.pooled {
        let _ = writeln!(
            out,
            "pooled mode={mode} {params} discovered={} tp={} recall={} precision={} f1={}",
            s.discovered,
            s.true_positives,
            fmt_g9(s.recall),
            fmt_g9(s.precision),
            fmt_g9(s.f1)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SnippetFrame;

    fn sample_stream() -> Stream {
        let records = (0..4)
            .map(|t| FrameRecord {
                t: t * 2,
                operator: 3,
                gaze: if t == 1 { None } else { Some([100.5, 1.0 / 3.0]) },
                fixation: t != 1,
                position: if t == 2 { None } else { Some([0.1, -2.0, 1e-7]) },
                appearance: vec![1.0 / 7.0, 2.0],
                motion: vec![-0.25],
            })
            .collect();
        Stream::new(
            StreamHeader {
                appearance_dim: 2,
                motion_dim: 1,
                ..Default::default()
            },
            records,
        )
        .unwrap()
    }

    #[test]
    fn stream_text_round_trip() {
        let text = write_stream(&sample_stream());
        let back = parse_stream(Path::new("s"), &text).unwrap();
        assert_eq!(write_stream(&back), text);
        assert_eq!(back.records[1].gaze, None);
        assert_eq!(back.records[2].position, None);
        assert_eq!(back.records[0].t, 0);
    }

    #[test]
    fn stream_parse_errors() {
        let text = write_stream(&sample_stream());
        let bad = text.replacen("0 3 100.5", "0 3 100.5 7", 1);
        assert!(matches!(
            parse_stream(Path::new("s"), &bad),
            Err(Error::Parse { line: 2, .. })
        ));
        let swapped: Vec<&str> = text.lines().collect();
        let reordered = [swapped[0], swapped[2], swapped[1]].join("\n");
        assert!(parse_stream(Path::new("s"), &reordered).is_err());
        assert!(parse_stream(Path::new("s"), "tro-stream 1 appearance_dim=2\n").is_err());
    }

    #[test]
    fn model_round_trip() {
        let kb = KnowledgeBase {
            streams: Some("dir".into()),
            objects: vec![ObjectModel {
                id: 4,
                location: LocationModel {
                    components: vec![GaussianComponent {
                        weight: 1.0,
                        mean: DVector::from_vec(vec![1.0, 2.0, 3.0]),
                        covariance: DMatrix::from_fn(3, 3, |r, c| if r == c { 0.5 } else { 0.1 }),
                        count: 12,
                    }],
                },
                appearance: AppearanceStore {
                    object: 4,
                    views: vec![View {
                        descriptor: vec![0.25, -1.0],
                        stream: 1,
                        t: 40,
                    }],
                    match_threshold: f64::INFINITY,
                },
                snippets: vec![UsageSnippet {
                    object: 4,
                    stream: 1,
                    operator: 0,
                    start: 30,
                    end: 80,
                    frames: vec![SnippetFrame {
                        t: 30,
                        gaze: None,
                        position: None,
                        appearance: vec![],
                        motion: vec![],
                        interpolated: false,
                    }],
                    first_appearance: vec![0.25, -1.0],
                }],
            }],
        };
        let names = vec!["a".to_string(), "b".to_string()];
        let text = write_model(&kb, &names);
        let back = parse_model(Path::new("m"), &text).unwrap();
        assert_eq!(back.stream_names, names);
        assert_eq!(write_model(&back.kb, &back.stream_names), text);
        assert_eq!(back.kb.objects[0].location, kb.objects[0].location);
    }

    #[test]
    fn graph_and_boxes_round_trip() {
        let g = crate::graph::build_graph(&[vec![1, 2, 3, 1]], &[1, 2, 3], 0.05).unwrap();
        let text = write_graph(&g);
        assert_eq!(write_graph(&parse_graph(Path::new("g"), &text).unwrap()), text);
        let boxes = vec![(0, vec![Box3::new([0.0; 3], [1.0; 3]).unwrap()]), (3, vec![])];
        let text = write_boxes(&boxes);
        assert_eq!(parse_boxes(Path::new("b"), &text).unwrap(), boxes);
    }

    #[test]
    fn ground_truth_round_trip() {
        let spec = crate::synth::ScenarioSpec {
            operators: 1,
            ..Default::default()
        };
        let (_, gt) = crate::synth::generate_scenario(&spec).unwrap();
        let text = write_ground_truth(&gt);
        let back = parse_ground_truth(Path::new("gt"), &text).unwrap();
        assert_eq!(write_ground_truth(&back), text);
        assert_eq!(back.visits, gt.visits);
        assert_eq!(back.objects.len(), 20);
    }
}
