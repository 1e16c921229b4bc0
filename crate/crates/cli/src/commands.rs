//! Subcommand definitions and their implementations.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fillerkit_annotate::AppState;
use fillerkit_core::annotation::AnnotationStore;
use fillerkit_core::candidates::{export_candidate_clips, generate_candidates, read_candidate_manifest, write_candidate_manifest, CandidateClip, CandidateStatus};
use fillerkit_core::classifier::{
    event_examples, resolve_label, split_validation, train_event_classifier, ClassifierModel, ClassifierTrainConfig,
    FeatureInput, Variant,
};
use fillerkit_core::eval::{evaluate, pr_curve, ConfusionMatrix, EvalConfig, MetricsReport, Scores};
use fillerkit_core::event::{load_events, save_events, Event};
use fillerkit_core::pipeline::{classify_spans, detect_avc_from, detect_vc_from, DetectConfig, DetectionResult, EpisodeFeatures, Mode};
use fillerkit_core::signal::{features, load_feature_file, load_wav, save_feature_file, FrameSeries, MelConfig};
use fillerkit_core::synth::{
    check_leakage, generate_corpus, read_manifest, read_source_manifest, CorpusConfig, EpisodeConfig, FrameLabels,
    SourcePools, Split, SyntheticSourceConfig,
};
use fillerkit_core::transcripts::{parse_transcript, Transcript, TranscriptFormat};
use fillerkit_core::vad::{activations_to_intervals, train_vad, vad_infer, VadExample, VadModel, VadTrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{self, opt, patch};
use crate::experiment::{
    ablate_vad_threshold, compare_backbones, oracle_label, prepare, read_episodes, synth_episodes, train_classifier,
    vad_precision_recall, write_episodes, FeatureSource,
};
use crate::{par_map, CliError};

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fillerkit", version, about = "Filler-word detection toolkit")]
pub struct Cli {
    /// TOML file whose `[<command>]` tables override built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-file work; output order does not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mix speech and noise sources into a labelled VAD corpus.
    Mix(MixArgs),
    /// Synthesise episodes with transcripts and reference filler events.
    Episodes(EpisodesArgs),
    /// Train the voice activity detector on a mixed corpus.
    TrainVad(TrainVadArgs),
    /// Train an event or frame classifier.
    TrainClf(TrainClfArgs),
    /// Extract candidate gaps and write context clips for annotation.
    Candidates(CandidatesArgs),
    /// Detect fillers with the AVC or VC pipeline.
    Detect(DetectArgs),
    /// Score predicted events against references.
    Evaluate(EvaluateArgs),
    /// Frame-level precision/recall over likelihood thresholds.
    PrCurve(PrCurveArgs),
    /// Confusion matrix of a classifier on labelled candidate clips.
    Confusion(ConfusionArgs),
    /// VAD-threshold sweep or backbone comparison.
    Ablate(AblateArgs),
    /// Run the annotation server.
    Serve(ServeArgs),
    /// Write log-mel feature files.
    Features(FeaturesArgs),
    /// Write resolved annotations as a labelled candidate manifest.
    ExportLabels(ExportLabelsArgs),
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Output directory for mixtures, label files and `manifest.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Source manifest (path,role,split); synthetic sources when absent.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Mixture length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EpisodesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub prefix: Option<String>,
    /// Episode length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    pub patience: Option<usize>,
}

impl TrainArgs {
    fn patch_entries(&self, seed: Option<u64>) -> Vec<(&'static str, Option<Value>)> {
        vec![
            ("train.epochs", opt(&self.epochs)),
            ("train.batch_size", opt(&self.batch_size)),
            ("train.learning_rate", opt(&self.learning_rate)),
            ("train.patience", opt(&self.patience)),
            ("train.seed", opt(&seed)),
        ]
    }
}

#[derive(Debug, Args)]
pub struct TrainVadArgs {
    /// `manifest.csv` written by `mix`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Fraction of training mixtures held out for early stopping.
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainClfArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long)]
    pub out: PathBuf,
    /// Episode directory written by `episodes`.
    #[arg(long, conflicts_with = "candidates")]
    pub episodes: Option<PathBuf>,
    /// Labelled candidate manifest (event classifier only).
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// VAD model; needed to extract candidates from episodes.
    #[arg(long)]
    pub vad_model: Option<PathBuf>,
    /// Directory of `<name>.feat` files replacing log-mel features.
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
    #[arg(long)]
    pub label_set: Option<String>,
    /// VAD threshold for candidate extraction.
    #[arg(long)]
    pub vad_threshold: Option<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct DetectFlags {
    #[arg(long)]
    pub vad_threshold: Option<f64>,
    #[arg(long)]
    pub clf_threshold: Option<f64>,
    #[arg(long)]
    pub min_gap: Option<f64>,
    #[arg(long)]
    pub min_speech: Option<f64>,
    #[arg(long)]
    pub candidate_min: Option<f64>,
    #[arg(long)]
    pub candidate_max: Option<f64>,
    #[arg(long)]
    pub vc_hop: Option<f64>,
    #[arg(long)]
    pub min_event_dur: Option<f64>,
}

impl DetectFlags {
    fn patch(&self) -> Value {
        patch(&[
            ("vad_threshold", opt(&self.vad_threshold)),
            ("clf_threshold", opt(&self.clf_threshold)),
            ("min_gap_s", opt(&self.min_gap)),
            ("min_speech_s", opt(&self.min_speech)),
            ("candidate_min_s", opt(&self.candidate_min)),
            ("candidate_max_s", opt(&self.candidate_max)),
            ("vc_hop_s", opt(&self.vc_hop)),
            ("min_event_dur", opt(&self.min_event_dur)),
        ])
    }
}

/// A single recording, or every episode of an `episodes` directory.
#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, conflicts_with = "episodes")]
    pub audio: Option<PathBuf>,
    /// Transcript (`.jsonl` or `.ctm`) for `--audio`.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Episode name for `--audio`; defaults to the file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub vad_model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fill labels from the reference events of each episode.
    #[arg(long)]
    pub oracle_labels: bool,
    #[command(flatten)]
    pub detect: DetectFlags,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Mode,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub vad_model: PathBuf,
    #[arg(long)]
    pub clf_model: PathBuf,
    /// Classifier feature file for `--audio`, or directory of
    /// `<name>.feat` files for `--episodes`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Events CSV for `--audio`; output directory for `--episodes`.
    #[arg(long)]
    pub out: PathBuf,
    /// 10 Hz filler likelihood CSV for `--audio`.
    #[arg(long)]
    pub likelihoods: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectFlags,
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    #[arg(long)]
    pub collar: Option<f64>,
    #[arg(long)]
    pub segment_len: Option<f64>,
    /// `optimal` or `greedy`.
    #[arg(long)]
    pub matching: Option<String>,
    #[arg(long)]
    pub total_dur: Option<f64>,
}

impl EvalFlags {
    fn patch(&self) -> Value {
        patch(&[
            ("collar", opt(&self.collar)),
            ("segment_len", opt(&self.segment_len)),
            ("matching", opt(&self.matching)),
            ("total_dur", opt(&self.total_dur)),
        ])
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// JSON report; a per-label CSV is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Only score these labels (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct PrCurveArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub likelihoods: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Reference labels counted as positive.
    #[arg(long, value_delimiter = ',', default_value = "filler,uh,um")]
    pub positive: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ConfusionArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub clf_model: PathBuf,
    /// Directory of `<candidate id>.feat` clip feature files.
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateKind {
    VadThreshold,
    Backbones,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(value_enum)]
    pub kind: AblateKind,
    /// Test episodes.
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub vad_model: PathBuf,
    /// Event classifier (vad-threshold).
    #[arg(long)]
    pub clf_model: Option<PathBuf>,
    /// Frame classifier for the VC columns (vad-threshold).
    #[arg(long)]
    pub frame_model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Training episodes (backbones).
    #[arg(long)]
    pub train_episodes: Option<PathBuf>,
    /// External training features (backbones).
    #[arg(long, requires = "features_test")]
    pub features_train: Option<PathBuf>,
    /// External test features (backbones).
    #[arg(long, requires = "features_train")]
    pub features_test: Option<PathBuf>,
    /// JSON results; a CSV summary is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    /// Append-only annotation log, replayed on start.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Built annotation UI to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Accept only these annotator ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub annotators: Option<Vec<String>>,
    #[arg(long)]
    pub lease_timeout_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Feature file for `--audio`; directory for `--episodes`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_mels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportLabelsArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    /// Manifest of resolved candidates; agreement statistics go beside it.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: fillerkit_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: fillerkit_core::Error| e.to_string())
}

/// Settings shared by every command.
struct Ctx {
    file: Value,
    seed: Option<u64>,
    jobs: usize,
}

impl Ctx {
    fn resolve<T: Serialize + serde::de::DeserializeOwned + Default>(&self, section: &str, flags: &Value) -> CliResult<T> {
        config::resolve(&self.file, section, flags)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let file = config::load_file(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: config::global_seed(&file, cli.seed),
        jobs: cli.jobs.or_else(|| file.get("jobs").and_then(Value::as_u64).map(|j| j as usize)).unwrap_or(1),
        file,
    };
    if ctx.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    match cli.command {
        Command::Mix(a) => mix(&ctx, a),
        Command::Episodes(a) => episodes(&ctx, a),
        Command::TrainVad(a) => train_vad_cmd(&ctx, a),
        Command::TrainClf(a) => train_clf(&ctx, a),
        Command::Candidates(a) => candidates(&ctx, a),
        Command::Detect(a) => detect(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::PrCurve(a) => pr_curve_cmd(&ctx, a),
        Command::Confusion(a) => confusion(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Features(a) => features_cmd(&ctx, a),
        Command::ExportLabels(a) => export_labels(a),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("reports serialise");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// `<file>` -> `<file>.<suffix>`.
fn beside(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Records the fully resolved settings of a run next to its output.
fn write_resolved(out: &Path, is_dir: bool, command: &str, config: Value) -> CliResult<()> {
    let path = if is_dir { out.join("config.json") } else { beside(out, "config.json") };
    write_json(
        &path,
        &json!({"command": command, "version": env!("CARGO_PKG_VERSION"), "config": config}),
    )
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("configs serialise")
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct MixConfig {
    #[serde(flatten)]
    corpus: CorpusConfig,
    /// Pool sizes when no source manifest is given.
    synthetic_sources: SyntheticSourceConfig,
}

fn mix(ctx: &Ctx, a: MixArgs) -> CliResult<()> {
    let flags = patch(&[
        ("n_train", opt(&a.n_train)),
        ("n_test", opt(&a.n_test)),
        ("duration_s", opt(&a.duration)),
        ("seed", opt(&ctx.seed)),
    ]);
    let cfg: MixConfig = ctx.resolve("mix", &flags)?;
    let (train, test) = match &a.sources {
        Some(manifest) => {
            let root = parent_dir(manifest);
            let entries = read_source_manifest(manifest)?;
            check_leakage(&entries, &root)?;
            (
                SourcePools::load(&entries, &root, Split::Train)?,
                SourcePools::load(&entries, &root, Split::Test)?,
            )
        }
        None => (
            SourcePools::synthetic(&cfg.synthetic_sources, Split::Train, cfg.corpus.seed),
            SourcePools::synthetic(&cfg.synthetic_sources, Split::Test, cfg.corpus.seed),
        ),
    };
    create_dir(&a.out)?;
    let rows = generate_corpus(&cfg.corpus, &train, &test, &a.out)?;
    log::info!("wrote {} mixtures to {}", rows.len(), a.out.display());
    let mut c = to_value(&cfg);
    c["sources"] = json!(a.sources);
    write_resolved(&a.out, true, "mix", c)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct EpisodesConfig {
    count: usize,
    prefix: String,
    seed: u64,
    episode: EpisodeConfig,
}

impl Default for EpisodesConfig {
    fn default() -> Self {
        Self {
            count: 20,
            prefix: "ep".into(),
            seed: 11,
            episode: EpisodeConfig::default(),
        }
    }
}

fn episodes(ctx: &Ctx, a: EpisodesArgs) -> CliResult<()> {
    let flags = patch(&[
        ("count", opt(&a.count)),
        ("prefix", opt(&a.prefix)),
        ("episode.duration_s", opt(&a.duration)),
        ("seed", opt(&ctx.seed)),
    ]);
    let cfg: EpisodesConfig = ctx.resolve("episodes", &flags)?;
    let eps = synth_episodes(&cfg.prefix, cfg.count, &cfg.episode, cfg.seed)?;
    write_episodes(&a.out, &eps)?;
    log::info!("wrote {} episodes to {}", eps.len(), a.out.display());
    write_resolved(&a.out, true, "episodes", to_value(&cfg))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainVadConfig {
    #[serde(flatten)]
    vad: VadTrainConfig,
    val_fraction: f64,
    /// Threshold at which the test split is scored in the report.
    report_threshold: f64,
}

impl Default for TrainVadConfig {
    fn default() -> Self {
        Self {
            vad: VadTrainConfig::default(),
            val_fraction: 0.1,
            report_threshold: 0.5,
        }
    }
}

fn train_vad_cmd(ctx: &Ctx, a: TrainVadArgs) -> CliResult<()> {
    let mut entries = a.train.patch_entries(ctx.seed);
    entries.push(("val_fraction", opt(&a.val_fraction)));
    let cfg: TrainVadConfig = ctx.resolve("train_vad", &patch(&entries))?;
    let root = parent_dir(&a.manifest);
    let rows = read_manifest(&a.manifest)?;
    let mel = MelConfig::default();
    let examples: Vec<VadExample> = par_map(&rows, ctx.jobs, |r| -> fillerkit_core::Result<VadExample> {
        Ok(VadExample {
            features: features(&load_wav(root.join(&r.path))?, &mel)?,
            labels: FrameLabels::read(&root.join(&r.label_path))?,
        })
    })
    .into_iter()
    .collect::<fillerkit_core::Result<_>>()?;
    let (train_rows, test): (Vec<_>, Vec<_>) = rows.iter().zip(examples).partition(|(r, _)| r.split == Split::Train);
    let train_set: Vec<VadExample> = train_rows.into_iter().map(|(_, e)| e).collect();
    let test: Vec<VadExample> = test.into_iter().map(|(_, e)| e).collect();
    let (tr, va) = split_validation(&train_set, cfg.val_fraction, cfg.vad.train.seed);
    let (vad, report) = train_vad(&tr, &va, &cfg.vad)?;
    vad.save(&a.out)?;
    let test_pr = if test.is_empty() {
        Value::Null
    } else {
        let (p, r) = vad_precision_recall(&vad, &test, cfg.report_threshold)?;
        json!({"threshold": cfg.report_threshold, "precision": p, "recall": r, "clips": test.len()})
    };
    log::info!("VAD trained, best epoch {}; test {test_pr}", report.best_epoch);
    write_json(
        &beside(&a.out, "report.json"),
        &json!({"train": report, "train_clips": tr.len(), "val_clips": va.len(), "test": test_pr}),
    )?;
    let mut c = to_value(&cfg);
    c["manifest"] = json!(a.manifest);
    write_resolved(&a.out, false, "train_vad", c)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainClfConfig {
    #[serde(flatten)]
    clf: ClassifierTrainConfig,
    vad_threshold: f64,
}

impl Default for TrainClfConfig {
    fn default() -> Self {
        Self {
            clf: ClassifierTrainConfig::default(),
            vad_threshold: DetectConfig::default().vad_threshold,
        }
    }
}

fn train_clf_config(ctx: &Ctx, train: &TrainArgs, extra: &[(&'static str, Option<Value>)]) -> CliResult<TrainClfConfig> {
    let mut entries = train.patch_entries(ctx.seed);
    entries.extend_from_slice(extra);
    ctx.resolve("train_clf", &patch(&entries))
}

fn train_clf(ctx: &Ctx, a: TrainClfArgs) -> CliResult<()> {
    let mut cfg = train_clf_config(
        ctx,
        &a.train,
        &[("label_set", opt(&a.label_set)), ("vad_threshold", opt(&a.vad_threshold))],
    )?;
    if a.features_dir.is_some() {
        cfg.clf.input = FeatureInput::External;
    }
    let (model, report) = match (&a.episodes, &a.candidates) {
        (Some(dir), None) => {
            let vad = a.vad_model.as_deref().map(VadModel::load).transpose()?;
            if a.variant == Variant::Event && vad.is_none() {
                return Err(CliError::Usage("an event classifier trained on episodes needs --vad-model".into()));
            }
            let mut prepared = prepare(read_episodes(dir)?, vad.as_ref(), ctx.jobs)?;
            if let Some(fdir) = &a.features_dir {
                crate::experiment::use_external_features(&mut prepared, fdir)?;
            }
            train_classifier(&prepared, a.variant, &cfg.clf, cfg.vad_threshold)?
        }
        (None, Some(manifest)) => {
            if a.variant != Variant::Event {
                return Err(CliError::Usage(
                    "candidate clips carry one label each; train a frame classifier from --episodes".into(),
                ));
            }
            let rows: Vec<CandidateClip> = read_candidate_manifest(manifest)?
                .into_iter()
                .filter(|c| !c.label.is_empty())
                .collect();
            let root = parent_dir(manifest);
            let per_clip = par_map(&rows, ctx.jobs, |c| -> fillerkit_core::Result<_> {
                let f = clip_features(&root, c, a.features_dir.as_deref())?;
                let e = Event::new(c.highlight_start_s, c.highlight_end_s, c.label.clone(), 1.0);
                event_examples(&f, &[e], cfg.clf.label_set)
            });
            let mut set = Vec::new();
            for r in per_clip {
                set.extend(r?);
            }
            let (tr, va) = split_validation(&set, 0.1, cfg.clf.train.seed);
            train_event_classifier(&tr, &va, &cfg.clf)?
        }
        _ => return Err(CliError::Usage("give exactly one of --episodes or --candidates".into())),
    };
    model.save(&a.out)?;
    write_json(
        &beside(&a.out, "report.json"),
        &json!({"train": report, "parameters": model.model.param_count()}),
    )?;
    let mut c = to_value(&cfg);
    c["variant"] = to_value(&a.variant);
    c["episodes"] = json!(a.episodes);
    c["candidates"] = json!(a.candidates);
    c["features_dir"] = json!(a.features_dir);
    write_resolved(&a.out, false, "train_clf", c)
}

/// Log-mel features of a candidate clip, or `<dir>/<id>.feat`.
fn clip_features(root: &Path, c: &CandidateClip, external: Option<&Path>) -> fillerkit_core::Result<FrameSeries> {
    match external {
        Some(dir) => load_feature_file(dir.join(format!("{}.feat", c.id))),
        None => features(&load_wav(root.join(&c.clip_path))?, &MelConfig::default()),
    }
}

/// One recording to process, with its episode name.
struct Item {
    name: String,
    audio: PathBuf,
    transcript: Option<PathBuf>,
    events: Option<PathBuf>,
}

fn input_items(input: &InputArgs, name: Option<&str>) -> CliResult<Vec<Item>> {
    match (&input.audio, &input.episodes) {
        (Some(audio), None) => Ok(vec![Item {
            name: name
                .map(str::to_string)
                .or_else(|| audio.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "episode".into()),
            audio: audio.clone(),
            transcript: input.transcript.clone(),
            events: None,
        }]),
        (None, Some(dir)) => {
            if input.transcript.is_some() {
                return Err(CliError::Usage("--transcript applies to --audio only".into()));
            }
            let index = dir.join("episodes.csv");
            let mut r = csv::Reader::from_path(&index).map_err(|e| io_err(&index, e))?;
            let rows: Vec<crate::experiment::EpisodeRow> =
                r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(&index, e))?;
            Ok(rows
                .into_iter()
                .map(|row| Item {
                    audio: dir.join(&row.audio),
                    transcript: Some(dir.join(&row.transcript)),
                    events: Some(dir.join(&row.events)),
                    name: row.name,
                })
                .collect())
        }
        _ => Err(CliError::Usage("give exactly one of --audio or --episodes".into())),
    }
}

fn load_transcript(path: &Path) -> fillerkit_core::Result<Transcript> {
    let format = TranscriptFormat::from_path(path).ok_or_else(|| {
        fillerkit_core::Error::Invalid(format!("{}: unknown transcript format", path.display()))
    })?;
    parse_transcript(path, format)
}

fn candidates(ctx: &Ctx, a: CandidatesArgs) -> CliResult<()> {
    let cfg: DetectConfig = ctx.resolve("detect", &a.detect.patch())?;
    let items = input_items(&a.input, a.name.as_deref())?;
    if a.oracle_labels && items.iter().any(|i| i.events.is_none()) {
        return Err(CliError::Usage("--oracle-labels needs --episodes".into()));
    }
    let vad = VadModel::load(&a.vad_model)?;
    create_dir(&a.out)?;
    let per_item = par_map(&items, ctx.jobs, |item| -> fillerkit_core::Result<Vec<CandidateClip>> {
        let audio = load_wav(&item.audio)?;
        let transcript = match &item.transcript {
            Some(t) => load_transcript(t)?,
            None => return Err(fillerkit_core::Error::Invalid("candidate extraction needs a transcript".into())),
        };
        let act = vad_infer(&vad, &features(&audio, &vad.mel)?)?;
        let speech = activations_to_intervals(&act, cfg.vad_threshold, cfg.min_gap_s, cfg.min_speech_s)?
            .clamp(0.0, audio.duration());
        let gaps = generate_candidates(&speech, &transcript, cfg.candidate_min_s, cfg.candidate_max_s);
        let mut rows = export_candidate_clips(&item.name, &audio, &gaps, &a.out)?;
        if a.oracle_labels {
            let events = load_events(item.events.as_ref().expect("checked above"))?;
            for r in &mut rows {
                if let Some(l) = oracle_label((r.gap_start_s, r.gap_end_s), &events) {
                    r.label = l;
                    r.status = CandidateStatus::Labeled;
                }
            }
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_item {
        rows.extend(r?);
    }
    write_candidate_manifest(&a.out.join("candidates.csv"), &rows)?;
    log::info!("{} candidates from {} recordings", rows.len(), items.len());
    let mut c = to_value(&cfg);
    c["vad_model"] = json!(a.vad_model);
    c["oracle_labels"] = json!(a.oracle_labels);
    write_resolved(&a.out, true, "candidates", c)
}

#[derive(Serialize)]
struct LikelihoodRow {
    start_s: f64,
    end_s: f64,
    likelihood: f32,
}

fn write_likelihoods(path: &Path, lik: &FrameSeries) -> CliResult<()> {
    let rows: Vec<LikelihoodRow> = (0..lik.frames())
        .map(|f| LikelihoodRow {
            start_s: lik.time_of(f),
            end_s: lik.time_of(f + 1),
            likelihood: lik.get(f, 0),
        })
        .collect();
    write_csv(path, &rows)
}

fn read_likelihoods(path: &Path) -> CliResult<FrameSeries> {
    #[derive(Deserialize)]
    struct Row {
        start_s: f64,
        end_s: f64,
        likelihood: f32,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let rows: Vec<Row> = r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(path, e))?;
    let Some(first) = rows.first() else {
        return Err(CliError::Data(format!("{}: no likelihood frames", path.display())));
    };
    let rate = 1.0 / (first.end_s - first.start_s);
    let series = FrameSeries::new(rows.iter().map(|r| r.likelihood).collect(), rows.len(), 1, rate)?;
    Ok(series.with_origin(first.start_s))
}

fn detect_one(
    item: &Item,
    mode: Mode,
    external: Option<&Path>,
    vad: &VadModel,
    clf: &ClassifierModel,
    cfg: &DetectConfig,
) -> fillerkit_core::Result<DetectionResult> {
    let audio = load_wav(&item.audio)?;
    let feats = match external {
        Some(path) => EpisodeFeatures::with_external(&audio, vad, load_feature_file(path)?)?,
        None => EpisodeFeatures::compute(&audio, vad, clf)?,
    };
    let act = vad_infer(vad, &feats.vad)?;
    match mode {
        Mode::Avc => {
            let path = item.transcript.as_ref().ok_or_else(|| {
                fillerkit_core::Error::Invalid("AVC detection needs a transcript; use --mode vc without one".into())
            })?;
            detect_avc_from(&feats, &act, &load_transcript(path)?, clf, cfg)
        }
        Mode::Vc => detect_vc_from(&feats, &act, clf, cfg),
    }
}

fn detect(ctx: &Ctx, a: DetectArgs) -> CliResult<()> {
    let cfg: DetectConfig = ctx.resolve("detect", &a.detect.patch())?;
    let items = input_items(&a.input, None)?;
    let batch = a.input.episodes.is_some();
    if batch && a.likelihoods.is_some() {
        return Err(CliError::Usage("--likelihoods applies to --audio; batches write them per episode".into()));
    }
    let vad = VadModel::load(&a.vad_model)?;
    let clf = ClassifierModel::load(&a.clf_model)?;
    let external = |item: &Item| -> Option<PathBuf> {
        a.features.as_ref().map(|f| if batch { f.join(format!("{}.feat", item.name)) } else { f.clone() })
    };
    let results = par_map(&items, ctx.jobs, |item| {
        detect_one(item, a.mode, external(item).as_deref(), &vad, &clf, &cfg)
    });
    if batch {
        create_dir(&a.out)?;
    }
    for (item, r) in items.iter().zip(results) {
        let r = r?;
        let (events, lik) = if batch {
            (
                a.out.join(format!("{}.events.csv", item.name)),
                Some(a.out.join(format!("{}.likelihood.csv", item.name))),
            )
        } else {
            (a.out.clone(), a.likelihoods.clone())
        };
        save_events(&events, &r.events)?;
        if let Some(lik) = lik {
            write_likelihoods(&lik, &r.frame_likelihoods)?;
        }
        log::info!("{}: {} events", item.name, r.events.len());
    }
    let mut c = to_value(&cfg);
    c["mode"] = to_value(&a.mode);
    c["vad_model"] = json!(a.vad_model);
    c["clf_model"] = json!(a.clf_model);
    c["features"] = json!(a.features);
    write_resolved(&a.out, batch, "detect", c)
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    kind: &'a str,
    label: &'a str,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl<'a> ScoreRow<'a> {
    fn new(kind: &'a str, label: &'a str, s: &Scores) -> Self {
        Self {
            kind,
            label,
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        }
    }
}

fn score_rows(report: &MetricsReport) -> Vec<ScoreRow<'_>> {
    let mut rows = Vec::new();
    for (kind, ls) in [("segment", &report.segment), ("event", &report.event)] {
        for (label, s) in &ls.per_label {
            rows.push(ScoreRow::new(kind, label, s));
        }
        rows.push(ScoreRow::new(kind, "overall", &ls.overall));
    }
    rows
}

fn evaluate_cmd(ctx: &Ctx, a: EvaluateArgs) -> CliResult<()> {
    let cfg: EvalConfig = ctx.resolve("evaluate", &a.eval.patch())?;
    let keep = |mut ev: Vec<Event>| {
        if let Some(labels) = &a.labels {
            ev.retain(|e| labels.contains(&e.label));
        }
        ev
    };
    let refs = keep(load_events(&a.reference)?);
    let pred = keep(load_events(&a.pred)?);
    let report = evaluate(&refs, &pred, &cfg)?;
    write_json(&a.out, &report)?;
    write_csv(&beside(&a.out, "csv"), &score_rows(&report))?;
    println!(
        "event F1 {:.4} (P {:.4} R {:.4}); segment F1 {:.4}",
        report.event.overall.f1, report.event.overall.precision, report.event.overall.recall, report.segment.overall.f1
    );
    let mut c = to_value(&cfg);
    c["labels"] = json!(a.labels);
    write_resolved(&a.out, false, "evaluate", c)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct PrConfig {
    thresholds: Vec<f64>,
}

impl Default for PrConfig {
    fn default() -> Self {
        Self {
            thresholds: crate::experiment::PR_THRESHOLDS.to_vec(),
        }
    }
}

fn pr_curve_cmd(ctx: &Ctx, a: PrCurveArgs) -> CliResult<()> {
    let cfg: PrConfig = ctx.resolve("pr_curve", &patch(&[("thresholds", opt(&a.thresholds))]))?;
    let refs = load_events(&a.reference)?;
    let lik = read_likelihoods(&a.likelihoods)?;
    let positive: Vec<&str> = a.positive.iter().map(String::as_str).collect();
    let points = pr_curve(&refs, &lik, &positive, &cfg.thresholds)?;
    write_json(&a.out, &points)?;
    write_csv(&beside(&a.out, "csv"), &points)?;
    let mut c = to_value(&cfg);
    c["positive"] = json!(a.positive);
    write_resolved(&a.out, false, "pr_curve", c)
}

fn confusion(ctx: &Ctx, a: ConfusionArgs) -> CliResult<()> {
    let clf = ClassifierModel::load(&a.clf_model)?;
    let root = parent_dir(&a.candidates);
    let mut clips = Vec::new();
    for c in read_candidate_manifest(&a.candidates)?.into_iter().filter(|c| !c.label.is_empty()) {
        if let Some(l) = resolve_label(&c.label, clf.label_set)? {
            clips.push((c, l));
        }
    }
    if clips.is_empty() {
        return Err(CliError::Data("no candidate carries a label the classifier knows".into()));
    }
    let labels = clf.labels();
    let predicted = par_map(&clips, ctx.jobs, |(c, _)| -> fillerkit_core::Result<&'static str> {
        let f = clip_features(&root, c, a.features_dir.as_deref())?;
        let p = classify_spans(&clf, &f, &[(c.highlight_start_s, c.highlight_end_s)])?.remove(0);
        let best = (0..p.len()).max_by(|&x, &y| p[x].total_cmp(&p[y]).then(y.cmp(&x))).expect("non-empty posterior");
        Ok(labels[best])
    })
    .into_iter()
    .collect::<fillerkit_core::Result<Vec<_>>>()?;
    let reference: Vec<&str> = clips.iter().map(|(_, l)| *l).collect();
    let m = ConfusionMatrix::new(&labels, &reference, &predicted)?;
    write_json(
        &a.out,
        &json!({"labels": m.labels, "counts": m.counts, "row_normalized": m.row_normalized(), "accuracy": m.accuracy()}),
    )?;
    let csv_path = beside(&a.out, "csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let mut header = vec!["reference".to_string()];
    header.extend(m.labels.iter().cloned());
    w.write_record(&header).map_err(|e| io_err(&csv_path, e))?;
    for (label, row) in m.labels.iter().zip(&m.counts) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec).map_err(|e| io_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| io_err(&csv_path, e))?;
    println!("accuracy {:.4} on {} clips", m.accuracy(), clips.len());
    write_resolved(
        &a.out,
        false,
        "confusion",
        json!({"candidates": a.candidates, "clf_model": a.clf_model, "features_dir": a.features_dir}),
    )
}

#[derive(Serialize)]
struct AblationCsvRow {
    setting: String,
    pipeline: &'static str,
    event_f1: f64,
    event_precision: f64,
    event_recall: f64,
    segment_f1: f64,
    candidate_count: Option<usize>,
    candidate_duration_s: Option<f64>,
}

fn ablate(ctx: &Ctx, a: AblateArgs) -> CliResult<()> {
    let det: DetectConfig = ctx.resolve("detect", &Value::Null)?;
    let eval: EvalConfig = ctx.resolve("evaluate", &Value::Null)?;
    let vad = VadModel::load(&a.vad_model)?;
    let mut test = prepare(read_episodes(&a.episodes)?, Some(&vad), ctx.jobs)?;
    let row = |setting: String, pipeline, s: &crate::experiment::PipelineScores, cands: Option<(usize, f64)>| AblationCsvRow {
        setting,
        pipeline,
        event_f1: s.event.f1,
        event_precision: s.event.precision,
        event_recall: s.event.recall,
        segment_f1: s.segment.f1,
        candidate_count: cands.map(|c| c.0),
        candidate_duration_s: cands.map(|c| c.1),
    };
    let mut csv_rows = Vec::new();
    let (results, mut c) = match a.kind {
        AblateKind::VadThreshold => {
            #[derive(Debug, Serialize, Deserialize)]
            #[serde(default)]
            struct SweepConfig {
                thresholds: Vec<f64>,
            }
            impl Default for SweepConfig {
                fn default() -> Self {
                    Self {
                        thresholds: vec![0.1, 0.3, 0.5, 0.7, 0.9],
                    }
                }
            }
            let sweep: SweepConfig = ctx.resolve("ablate", &patch(&[("thresholds", opt(&a.thresholds))]))?;
            let clf_path = a
                .clf_model
                .as_ref()
                .ok_or_else(|| CliError::Usage("vad-threshold needs --clf-model".into()))?;
            let event_clf = ClassifierModel::load(clf_path)?;
            let frame_clf = a.frame_model.as_deref().map(ClassifierModel::load).transpose()?;
            let rows = ablate_vad_threshold(&test, &sweep.thresholds, &event_clf, frame_clf.as_ref(), &det, &eval)?;
            for r in &rows {
                let cands = Some((r.candidate_count, r.candidate_duration_s));
                csv_rows.push(row(r.vad_threshold.to_string(), "avc", &r.avc, cands));
                if let Some(vc) = &r.vc {
                    csv_rows.push(row(r.vad_threshold.to_string(), "vc", vc, cands));
                }
            }
            (to_value(&rows), json!({"thresholds": sweep.thresholds, "clf_model": a.clf_model, "frame_model": a.frame_model}))
        }
        AblateKind::Backbones => {
            let train_dir = a
                .train_episodes
                .as_ref()
                .ok_or_else(|| CliError::Usage("backbones needs --train-episodes".into()))?;
            let cfg = train_clf_config(ctx, &a.train, &[])?;
            let mut train = prepare(read_episodes(train_dir)?, Some(&vad), ctx.jobs)?;
            let mut sources = vec![FeatureSource::LogMel];
            if let (Some(tr), Some(te)) = (&a.features_train, &a.features_test) {
                sources.push(FeatureSource::External {
                    train_dir: tr.clone(),
                    test_dir: te.clone(),
                });
            }
            let det = DetectConfig {
                vad_threshold: cfg.vad_threshold,
                ..det.clone()
            };
            let rows = compare_backbones(&mut train, &mut test, &sources, &cfg.clf, &det, &eval)?;
            for r in &rows {
                let setting = format!("{}/{}", to_value(&r.variant).as_str().unwrap_or_default(), r.features);
                csv_rows.push(row(setting.clone(), "avc", &r.avc, None));
                csv_rows.push(row(setting, "vc", &r.vc, None));
            }
            let mut c = to_value(&cfg);
            c["train_episodes"] = json!(train_dir);
            c["features_train"] = json!(a.features_train);
            c["features_test"] = json!(a.features_test);
            (to_value(&rows), c)
        }
    };
    write_json(&a.out, &results)?;
    write_csv(&beside(&a.out, "csv"), &csv_rows)?;
    c["kind"] = json!(format!("{:?}", a.kind));
    c["episodes"] = json!(a.episodes);
    c["vad_model"] = json!(a.vad_model);
    c["detect"] = to_value(&det);
    c["evaluate"] = to_value(&eval);
    write_resolved(&a.out, false, "ablate", c)
}

fn serve(ctx: &Ctx, a: ServeArgs) -> CliResult<()> {
    let candidates = read_candidate_manifest(&a.candidates)?;
    let mut store = AnnotationStore::open(candidates, &a.log)?;
    if let Some(ids) = a.annotators {
        store = store.with_allowlist(ids);
    }
    if let Some(ms) = a.lease_timeout_ms {
        store = store.with_lease_timeout(ms);
    }
    let state = AppState::new(store, parent_dir(&a.candidates));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.jobs.max(1))
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(format!("runtime: {e}")))?;
    rt.block_on(fillerkit_annotate::serve(a.addr, state, a.static_dir))
        .map_err(|e| CliError::Data(format!("server on {}: {e}", a.addr)))
}

fn features_cmd(ctx: &Ctx, a: FeaturesArgs) -> CliResult<()> {
    let mel: MelConfig = ctx.resolve("features", &patch(&[("n_mels", opt(&a.n_mels))]))?;
    mel.validate()?;
    let items = input_items(&a.input, None)?;
    let batch = a.input.episodes.is_some();
    if batch {
        create_dir(&a.out)?;
    }
    let out_of = |item: &Item| if batch { a.out.join(format!("{}.feat", item.name)) } else { a.out.clone() };
    for r in par_map(&items, ctx.jobs, |item| -> fillerkit_core::Result<()> {
        save_feature_file(out_of(item), &features(&load_wav(&item.audio)?, &mel)?)
    }) {
        r?;
    }
    write_resolved(&a.out, batch, "features", to_value(&mel))
}

fn export_labels(a: ExportLabelsArgs) -> CliResult<()> {
    let store = AnnotationStore::open(read_candidate_manifest(&a.candidates)?, &a.log)?;
    let stats = store.export_labeled_dataset(&a.out)?;
    println!(
        "{} resolved, {} unresolved, {} open of {}",
        stats.resolved,
        stats.unresolved,
        stats.needs_first + stats.needs_second + stats.needs_third,
        stats.total
    );
    write_json(&beside(&a.out, "stats.json"), &stats)
}
