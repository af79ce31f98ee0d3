//! Subcommands of the `tro` binary. [`run`] parses arguments and executes one
//! command; all results go to files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tro_core::assist::{default_lambda, AssistSession, Recognizer};
use tro_core::eval::evaluate_tros;
use tro_core::experiment::{run_grid, run_offline, run_online, ExperimentGrid, DEFAULT_MIN_SUPPORT};
use tro_core::graph::{build_graph, DEFAULT_ALPHA};
use tro_core::io;
use tro_core::models::{reload_snippet, KnowledgeBase};
use tro_core::moi::{discover_mois, evaluate_mois, MoiConfig, MoiCurvePoint};
use tro_core::offline::{KChoice, Method, OfflineConfig};
use tro_core::online::{MixtureMode, OnlineConfig};
use tro_core::stream::{ChannelMode, FeatureConfig, Stream};
use tro_core::synth::{generate_scenario, GroundTruth, ScenarioSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error(transparent)]
    Core(#[from] tro_core::Error),
}

impl CliError {
    /// 2 for invalid arguments or inputs, 1 for I/O failures, 0 for help output.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::Usage(_) => 2,
            CliError::Core(tro_core::Error::Io(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tro",
    version,
    about = "Task-relevant object discovery from egocentric feature streams"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario: one stream file per sequence plus ground truth.
    Simulate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Batch discovery over every stream of a directory.
    DiscoverOffline(OfflineArgs),
    /// Single-pass discovery over the streams in order.
    DiscoverOnline(OnlineArgs),
    /// Modes of interaction of every object of a model.
    Moi {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        /// Stream directory; defaults to the one recorded in the model.
        #[arg(long)]
        streams: Option<PathBuf>,
        /// Ground truth for a recall-precision curve.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interaction graph of a model.
    Graph {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a stream and log recommendations.
    Assist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, value_parser = parse_recognizer)]
        recognizer: Recognizer,
        #[arg(long)]
        lambda: Option<f64>,
        /// Graph file; built from the model when absent.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score discovered boxes against ground truth.
    Evaluate {
        #[arg(long)]
        discovered: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        iou: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment grid.
    Experiment {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct OfflineArgs {
    #[arg(long)]
    pub streams: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, value_parser = parse_channels)]
    pub channels: ChannelMode,
    #[arg(long)]
    pub attention: bool,
    #[arg(long)]
    pub window: usize,
    #[arg(long, conflicts_with = "db_range")]
    pub known_k: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub db_range: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    #[arg(long)]
    pub streams: PathBuf,
    #[arg(long)]
    pub eps1: f64,
    #[arg(long)]
    pub eps2: f64,
    #[arg(long)]
    pub eps3: f64,
    #[arg(long)]
    pub xi: usize,
    #[arg(long, default_value = "both", value_parser = parse_channels)]
    pub channels: ChannelMode,
    /// Combine component distances by weighted sum or by nearest component.
    #[arg(long, default_value = "weighted", value_parser = parse_mixture)]
    pub mixture: MixtureMode,
    #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
    pub min_support: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "spectral" => Ok(Method::Spectral),
        "kmeans" => Ok(Method::KMeans),
        other => Err(format!("unknown method '{other}'")),
    }
}

fn parse_mixture(s: &str) -> Result<MixtureMode, String> {
    s.parse().map_err(|e: tro_core::Error| e.to_string())
}

fn parse_channels(s: &str) -> Result<ChannelMode, String> {
    s.parse().map_err(|e: tro_core::Error| e.to_string())
}

fn parse_recognizer(s: &str) -> Result<Recognizer, String> {
    s.parse().map_err(|e: tro_core::Error| e.to_string())
}

/// File names written into output directories.
pub mod names {
    pub const GROUND_TRUTH: &str = "ground_truth.gt";
    pub const CLUSTERING: &str = "clustering.txt";
    pub const EVENTS: &str = "events.log";
    pub const MODEL: &str = "model.tro";
    pub const BOXES: &str = "boxes.txt";
    pub const MOI: &str = "moi.txt";
    pub const MOI_CURVE: &str = "moi_curve.csv";
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(tro_core::Error::Io)?;
    }
    std::fs::write(path, text).map_err(tro_core::Error::Io)?;
    Ok(())
}

fn streams_of(dir: &Path) -> Result<(Vec<String>, Vec<Stream>), CliError> {
    let named = io::read_stream_dir(dir)?;
    Ok(named.into_iter().unzip())
}

fn save_model(
    out: &Path,
    mut kb: KnowledgeBase,
    streams: &Path,
    names: &[String],
    boxes: &[Vec<tro_core::eval::Box3>],
) -> Result<(), CliError> {
    kb.streams = Some(streams.display().to_string());
    write(&out.join(names::MODEL), &io::write_model(&kb, names))?;
    let ids = kb
        .objects
        .iter()
        .map(|o| o.id)
        .zip(boxes.iter().cloned())
        .collect::<Vec<_>>();
    write(&out.join(names::BOXES), &io::write_boxes(&ids))
}

fn simulate(spec: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut spec = match spec {
        Some(p) => ScenarioSpec::from_toml(&std::fs::read_to_string(p).map_err(tro_core::Error::Io)?)?,
        None => ScenarioSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (streams, gt) = generate_scenario(&spec)?;
    io::write_stream_dir(out, &streams)?;
    write(&out.join(names::GROUND_TRUTH), &io::write_ground_truth(&gt))
}

fn discover_offline(a: &OfflineArgs) -> Result<(), CliError> {
    let k = match (a.known_k, &a.db_range) {
        (Some(k), None) => KChoice::Known(k),
        (None, Some(r)) => KChoice::DbRange(r[0], r[1]),
        _ => return Err(tro_core::Error::Config("give exactly one of --known-k and --db-range".into()).into()),
    };
    let config = OfflineConfig {
        features: FeatureConfig {
            channels: a.channels,
            window: a.window,
            attention: a.attention,
        },
        method: a.method,
        k,
        seed: a.seed,
        ..Default::default()
    };
    let (names, streams) = streams_of(&a.streams)?;
    let run = run_offline(&streams, &config)?;
    write(
        &a.out.join(names::CLUSTERING),
        &io::write_clustering_report(&run.discovery, &config),
    )?;
    save_model(&a.out, run.kb, &a.streams, &names, &run.boxes)
}

fn discover_online(a: &OnlineArgs) -> Result<(), CliError> {
    let config = OnlineConfig {
        eps1: a.eps1,
        eps2: a.eps2,
        eps3: a.eps3,
        xi: a.xi,
        mixture: a.mixture,
        ..Default::default()
    };
    let features = FeatureConfig {
        channels: a.channels,
        window: 1,
        attention: true,
    };
    let (names, streams) = streams_of(&a.streams)?;
    let run = run_online(&streams, &features, &config, a.min_support)?;
    write(&a.out.join(names::EVENTS), &io::write_events(&run.events, &names))?;
    save_model(&a.out, run.kb, &a.streams, &names, &run.boxes)
}

/// Ground-truth interaction mode of a snippet: that of the visit covering its middle frame.
fn moi_label(gt: &GroundTruth, stream: usize, start: u64, end: u64) -> usize {
    gt.visit_at(stream, start + (end - start) / 2)
        .map_or(usize::MAX, |v| v.object * 16 + v.moi)
}

fn moi(
    model: &Path,
    lambda: f64,
    streams: Option<&Path>,
    gt: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let file = io::read_model(model)?;
    let dir = match (streams, &file.kb.streams) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => {
            return Err(tro_core::Error::Config("model names no stream directory; pass --streams".into()).into())
        }
    };
    let (_, all) = streams_of(&dir)?;
    let gt = gt.map(io::read_ground_truth).transpose()?;
    let config = MoiConfig {
        lambda,
        seed,
        ..Default::default()
    };
    let lambdas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let mut pooled = vec![(0usize, 0usize); lambdas.len()];
    let mut total = 0;
    let mut report = format!("tro-moi 1\nlambda {}\n", io::fmt_g9(lambda));
    for o in &file.kb.objects {
        let snippets = o
            .snippets
            .iter()
            .map(|s| {
                let stream = all.get(s.stream).ok_or_else(|| {
                    tro_core::Error::InvalidInput(format!("model refers to missing stream {}", s.stream))
                })?;
                reload_snippet(stream, s)
            })
            .collect::<tro_core::Result<Vec<_>>>()?;
        if snippets.is_empty() {
            continue;
        }
        let (_, clusters) = discover_mois(&snippets, &config)?;
        io::write_moi_object(&mut report, o.id, &snippets, &clusters, lambda);
        if let Some(gt) = &gt {
            let labels: Vec<usize> = snippets
                .iter()
                .map(|s| moi_label(gt, s.stream, s.start, s.end))
                .collect();
            let mut distinct = labels.clone();
            distinct.sort_unstable();
            distinct.dedup();
            total += distinct.len();
            for (acc, p) in pooled.iter_mut().zip(evaluate_mois(&clusters, &labels, &lambdas)) {
                acc.0 += p.true_positives;
                acc.1 += p.retained;
            }
        }
    }
    write(&out.join(names::MOI), &report)?;
    if gt.is_some() {
        let curve: Vec<MoiCurvePoint> = lambdas
            .iter()
            .zip(&pooled)
            .map(|(&lambda, &(tp, retained))| MoiCurvePoint {
                lambda,
                recall: if total == 0 { 0.0 } else { tp as f64 / total as f64 },
                precision: if retained == 0 {
                    1.0
                } else {
                    tp as f64 / retained as f64
                },
                retained,
                true_positives: tp,
            })
            .collect();
        write(&out.join(names::MOI_CURVE), &io::write_moi_curve(&curve))?;
    }
    Ok(())
}

fn graph_of(kb: &KnowledgeBase, alpha: f64) -> tro_core::Result<tro_core::graph::InteractionGraph> {
    let ids: Vec<usize> = kb.objects.iter().map(|o| o.id).collect();
    build_graph(&kb.interaction_sequences(), &ids, alpha)
}

fn assist(
    model: &Path,
    stream: &Path,
    recognizer: Recognizer,
    lambda: Option<f64>,
    graph: Option<&Path>,
    alpha: f64,
    out: &Path,
) -> Result<(), CliError> {
    let file = io::read_model(model)?;
    let stream = io::read_stream(stream)?;
    let graph = match graph {
        Some(p) => io::read_graph(p)?,
        None => graph_of(&file.kb, alpha)?,
    };
    let mut session = AssistSession::new(&file.kb, &graph, recognizer, lambda.unwrap_or_else(default_lambda));
    let mut recs = Vec::new();
    for r in &stream.records {
        if let Some(rec) = session.assist_step(r)? {
            recs.push(rec);
        }
    }
    write(out, &io::write_assist_log(&recs))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { spec, seed, out } => simulate(spec.as_deref(), *seed, out),
        Command::DiscoverOffline(a) => discover_offline(a),
        Command::DiscoverOnline(a) => discover_online(a),
        Command::Moi {
            model,
            lambda,
            streams,
            gt,
            seed,
            out,
        } => moi(model, *lambda, streams.as_deref(), gt.as_deref(), *seed, out),
        Command::Graph { model, alpha, out } => {
            let file = io::read_model(model)?;
            write(out, &io::write_graph(&graph_of(&file.kb, *alpha)?))
        }
        Command::Assist {
            model,
            stream,
            recognizer,
            lambda,
            graph,
            alpha,
            out,
        } => assist(model, stream, *recognizer, *lambda, graph.as_deref(), *alpha, out),
        Command::Evaluate {
            discovered,
            gt,
            iou,
            out,
        } => {
            if !(*iou > 0.0 && *iou <= 1.0) {
                return Err(tro_core::Error::Config(format!("--iou must be in (0, 1], got {iou}")).into());
            }
            let boxes: Vec<_> = io::read_boxes(discovered)?.into_iter().map(|b| b.1).collect();
            let gt = io::read_ground_truth(gt)?;
            write(out, &io::write_score(&evaluate_tros(&boxes, &gt.boxes(), *iou)))
        }
        Command::Experiment { grid, out } => {
            let text = std::fs::read_to_string(grid).map_err(tro_core::Error::Io)?;
            let grid = ExperimentGrid::from_toml(&text)?;
            write(out, &io::write_eval_report(&run_grid(&grid)?, &text))
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(&cli)
}
