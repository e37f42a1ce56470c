//! Operator entry point: one binary, seven subcommands, JSON run configs.
//!
//! A run is governed by a single config document plus a seed; every
//! subcommand derives its randomness from that seed through named substreams,
//! so re-running any stage reproduces its outputs byte for byte. Outputs are
//! never silently overwritten; pass `--force` to replace them.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::metrics::{
    arrival_index, arrival_score_pct, distance_report, exact_match, parent_child_report,
    EvalReport, MetricsError, TaskEval,
};
use crate::model::{
    check_gradients, forward, generate, GenerateOpts, GeoDecoderConfig, GeoDecoderParams,
    ModelError, SequenceInput,
};
use crate::numerics::Tape;
use crate::render::Raster;
use crate::taskgen::{
    build_dataset, default_mix, load_manifest, make_sample, Manifest, ManifestRow, Split,
    TaskGenError, TaskKind, Truth, ViewPolicy,
};
use crate::textcodec::{TextCodecError, Vocab, EOS, PAD};
use crate::trainer::{
    load_checkpoint, train, ItemImage, OptimizerState, TrainHyper, TrainItem, TrainerError,
};
use crate::worldgen::{generate_world, MapWorld, WorldConfig, WorldGenError};
use crate::{geo, stablehash::mix2};

/// Named substreams of the run seed; every stage draws from its own.
const WORLD_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 4;
const RENDER_STREAM: u64 = 5;
const GRADCHECK_STREAM: u64 = 6;

/// Worker-pool cap honored by every parallel stage.
pub const THREADS_VAR: &str = "GEODECODER_THREADS";

/// Largest relative gradient error the `gradcheck` subcommand accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Everything a run needs: world recipe, task mix, model shape, optimization
/// hyperparameters, artifact locations, and the seed all randomness flows
/// from. Every field has a default, so `{}` is a valid document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldConfig,
    /// Dataset recipe as (task, sample count) pairs.
    pub mix: Vec<(TaskKind, usize)>,
    pub view: ViewPolicy,
    pub model: GeoDecoderConfig,
    pub train: TrainHyper,
    pub paths: RunPaths,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig::default(),
            mix: default_mix(),
            view: ViewPolicy::default(),
            model: GeoDecoderConfig::default(),
            train: TrainHyper::default(),
            paths: RunPaths::default(),
            seed: 0,
        }
    }
}

/// Where the pipeline stages read and write, unless `--out` says otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub world: PathBuf,
    pub data: PathBuf,
    pub run: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        RunPaths { world: "world.json".into(), data: "data".into(), run: "run".into() }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Validation(format!("model: {e}")))?;
        self.train.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        for &(kind, count) in &self.mix {
            if count == 0 {
                return Err(CliError::Validation(format!(
                    "mix: {} has a zero sample count",
                    kind.name()
                )));
            }
        }
        if self.view.image_px == 0 {
            return Err(CliError::Validation("view.image_px: must be positive".into()));
        }
        if self.view.image_px as usize != self.model.image_size {
            return Err(CliError::Validation(format!(
                "view.image_px {} does not match model.image_size {}",
                self.view.image_px, self.model.image_size
            )));
        }
        if self.view.max_attempts == 0 {
            return Err(CliError::Validation("view.max_attempts: must be positive".into()));
        }
        Ok(())
    }
}

/// Parses a config file, fills defaults for absent fields, and validates.
/// Errors name the offending field.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let config: RunConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io { .. } => 2,
        }
    }
}

/// Domain errors split by root cause: broken files and filesystem failures
/// exit 2, everything else is a validation failure.
impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TaskGenError> for CliError {
    fn from(e: TaskGenError) -> Self {
        match e {
            TaskGenError::Io { path, source } => CliError::Io { path: path.into(), source },
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<WorldGenError> for CliError {
    fn from(e: WorldGenError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TextCodecError> for CliError {
    fn from(e: TextCodecError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "geodecoder",
    about = "Synthetic map worlds, rendered tasks, and a small multimodal transformer",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run config (JSON); defaults apply for absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic world and write it as JSON.
    Worldgen {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to the config's world path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing output.
        #[arg(long)]
        force: bool,
    },
    /// Build a dataset: manifest, vocabulary, and one PPM per sample.
    Datagen {
        #[command(flatten)]
        common: Common,
        /// Output directory; defaults to the config's data path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train on the dataset's train split; writes checkpoints and logs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run directory; defaults to the config's run path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint over a manifest split; writes a JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to model.ckpt in the config's run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_split, default_value = "val")]
        split: Split,
        /// Report directory; defaults to the config's run path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Generate text for one image and prompt.
    Infer {
        /// Checkpoint written by train (vocab.txt must sit next to it).
        #[arg(long)]
        checkpoint: PathBuf,
        /// PPM image to condition on.
        image: PathBuf,
        /// Input text.
        prompt: String,
    },
    /// Compare tape gradients against central differences on the configured
    /// model; fails when the worst relative error exceeds 1e-4.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Render one task sample to PPM and print its text pair.
    Render {
        #[command(flatten)]
        common: Common,
        /// Task to draw, e.g. tag_id.
        #[arg(long, value_parser = parse_kind, default_value = "element_id")]
        kind: TaskKind,
        /// Output directory; defaults to the config's run path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("{s:?} is not one of train, val, test")),
    }
}

fn parse_kind(s: &str) -> Result<TaskKind, String> {
    TaskKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("{s:?} is not a known task kind"))
}

pub fn main() -> ExitCode {
    run(std::env::args_os())
}

/// Full CLI entry: parses argv, runs the subcommand, maps errors to exit
/// codes (1 validation, 2 I/O). Usage errors print help text and exit 1.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match init_threads().and_then(|()| dispatch(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Applies the GEODECODER_THREADS cap to the global worker pool. The first
/// initialization in a process wins; later runs keep the existing pool.
fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = raw.parse().map_err(|_| {
        CliError::Validation(format!("{THREADS_VAR}={raw:?} is not a thread count"))
    })?;
    if n == 0 {
        return Err(CliError::Validation(format!("{THREADS_VAR} must be at least 1")));
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Worldgen { common, out, force } => {
            let config = common.load()?;
            let out = out.unwrap_or_else(|| config.paths.world.clone());
            cmd_worldgen(&config, &out, force)
        }
        Cmd::Datagen { common, out, force } => {
            let config = common.load()?;
            let out = out.unwrap_or_else(|| config.paths.data.clone());
            cmd_datagen(&config, &out, force)
        }
        Cmd::Train { common, out, force } => {
            let config = common.load()?;
            let out = out.unwrap_or_else(|| config.paths.run.clone());
            cmd_train(&config, &out, force)
        }
        Cmd::Eval { common, checkpoint, split, out, force } => {
            let config = common.load()?;
            let checkpoint = checkpoint.unwrap_or_else(|| config.paths.run.join("model.ckpt"));
            let out = out.unwrap_or_else(|| config.paths.run.clone());
            cmd_eval(&config, &checkpoint, split, &out, force)
        }
        Cmd::Infer { checkpoint, image, prompt } => cmd_infer(&checkpoint, &image, &prompt),
        Cmd::Gradcheck { common } => {
            let config = common.load()?;
            cmd_gradcheck(&config)
        }
        Cmd::Render { common, kind, out, force } => {
            let config = common.load()?;
            let out = out.unwrap_or_else(|| config.paths.run.clone());
            cmd_render(&config, kind, &out, force)
        }
    }
}

fn guard_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Validation(format!(
            "{} already exists; pass --force to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.into(), source })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.into(), source })
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })
}

/// The world every stage of a run agrees on.
fn run_world(config: &RunConfig) -> Result<MapWorld, CliError> {
    Ok(generate_world(&config.world, mix2(config.seed, WORLD_STREAM))?)
}

fn cmd_worldgen(config: &RunConfig, out: &Path, force: bool) -> Result<(), CliError> {
    guard_overwrite(out, force)?;
    let world = run_world(config)?;
    write_file(out, world.to_json()?.as_bytes())?;
    println!(
        "world with {} roads, {} areas, {} places -> {}",
        world.roads.len(),
        world.aois.len(),
        world.pois.len(),
        out.display()
    );
    Ok(())
}

fn cmd_datagen(config: &RunConfig, out: &Path, force: bool) -> Result<(), CliError> {
    guard_overwrite(&out.join("manifest.jsonl"), force)?;
    let world = run_world(config)?;
    let manifest =
        build_dataset(&world, &config.mix, &config.view, mix2(config.seed, DATA_STREAM), out)?;
    let counts = |s: Split| manifest.split(s).count();
    println!(
        "{} samples ({} train / {} val / {} test) -> {}",
        manifest.rows.len(),
        counts(Split::Train),
        counts(Split::Val),
        counts(Split::Test),
        out.display()
    );
    Ok(())
}

/// Encodes one manifest row for the trainer; targets end with `<eos>`.
fn train_item(row: &ManifestRow, data_dir: &Path, vocab: &Vocab) -> Result<TrainItem, CliError> {
    let input_ids = vocab.encode(&row.input_text)?;
    let mut target_ids = vocab.encode(&row.target_text)?;
    target_ids.push(EOS);
    Ok(TrainItem {
        image: ItemImage::OnDisk(data_dir.join(&row.image)),
        input_ids,
        target_ids,
    })
}

fn load_dataset(config: &RunConfig) -> Result<(Manifest, Vocab), CliError> {
    let manifest = load_manifest(&config.paths.data.join("manifest.jsonl"))?;
    let vocab = Vocab::load(&config.paths.data.join("vocab.txt"))?;
    Ok((manifest, vocab))
}

fn cmd_train(config: &RunConfig, out: &Path, force: bool) -> Result<(), CliError> {
    guard_overwrite(&out.join("model.ckpt"), force)?;
    let (manifest, vocab) = load_dataset(config)?;
    if vocab.len() > config.model.vocab_size {
        return Err(CliError::Validation(format!(
            "model.vocab_size {} is smaller than the dataset vocabulary ({} ids)",
            config.model.vocab_size,
            vocab.len()
        )));
    }
    let items: Vec<TrainItem> = manifest
        .split(Split::Train)
        .map(|row| train_item(row, &config.paths.data, &vocab))
        .collect::<Result<_, _>>()?;

    let mut params =
        GeoDecoderParams::<f32>::init(&config.model, mix2(config.seed, INIT_STREAM))?;
    let mut opt = OptimizerState::new(&params);
    let mut hyper = config.train.clone();
    hyper.seed = mix2(config.seed, TRAIN_STREAM);

    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.into(), source })?;
    // Keep the tokenizer with the weights so eval and infer are
    // self-contained given a run directory.
    write_file(&out.join("vocab.txt"), vocab.to_text().as_bytes())?;
    let report = train(&mut params, &mut opt, &items, &hyper, Some(out), None)?;
    println!(
        "trained {} steps over {} items; final loss {:.4} -> {}",
        report.steps_run,
        items.len(),
        report.final_loss.unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// Mean negative log-likelihood of `target_ids` under the model, times the
/// token count; lower ranks better.
fn sequence_nll(
    params: &GeoDecoderParams<f32>,
    raster: Option<&Raster>,
    input_ids: &[usize],
    target_ids: &[usize],
) -> Result<f64, CliError> {
    let mut tape = Tape::<f32>::new();
    let bound = params.bind(&mut tape)?;
    let input = SequenceInput { raster, input_ids, output_ids: target_ids };
    let acts = forward(&mut tape, params.config(), &bound, &input, 0.0)?;
    let logits = acts.logits.expect("non-empty targets imply logits");
    let loss = tape
        .cross_entropy_mean(logits, target_ids, PAD)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(tape.data(loss)[0] as f64 * target_ids.len() as f64)
}

/// Tasks whose answers form a small closed set worth ranking exhaustively.
fn label_task(kind: TaskKind) -> bool {
    matches!(
        kind,
        TaskKind::ElementId
            | TaskKind::TagId
            | TaskKind::PoiId
            | TaskKind::AoiId
            | TaskKind::RoadId
            | TaskKind::ParentChild
    )
}

struct ScoredRow<'m> {
    row: &'m ManifestRow,
    pred: String,
}

fn eval_task(
    kind: TaskKind,
    rows: &[ScoredRow],
    params: &GeoDecoderParams<f32>,
    vocab: &Vocab,
    data_dir: &Path,
    world: &mut Option<MapWorld>,
    config: &RunConfig,
) -> Result<TaskEval, CliError> {
    let n = rows.len();
    let em = rows.iter().map(|s| exact_match(&s.pred, &s.row.target_text) as usize).sum::<usize>();
    let mut eval = TaskEval {
        kind: kind.name().to_string(),
        n,
        exact_match_pct: Some(100.0 * em as f64 / n as f64),
        label_accuracy_pct: None,
        distance: None,
        arrival_index_pct: None,
        parent_child: None,
    };

    if label_task(kind) {
        let mut labels: Vec<&str> = rows.iter().map(|s| s.row.target_text.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        let encoded: Vec<Vec<usize>> = labels
            .iter()
            .map(|l| {
                let mut ids = vocab.encode(l)?;
                ids.push(EOS);
                Ok::<_, CliError>(ids)
            })
            .collect::<Result<_, _>>()?;
        let mut hits = 0usize;
        for s in rows {
            let raster = s.row.load_image(data_dir)?;
            let input_ids = vocab.encode(&s.row.input_text)?;
            let mut best = (f64::INFINITY, 0usize);
            for (c, ids) in encoded.iter().enumerate() {
                let nll = sequence_nll(params, Some(&raster), &input_ids, ids)?;
                if nll < best.0 {
                    best = (nll, c);
                }
            }
            hits += usize::from(labels[best.1] == s.row.target_text);
        }
        eval.label_accuracy_pct = Some(100.0 * hits as f64 / n as f64);
    }

    if matches!(kind, TaskKind::ParentChild) {
        let preds: Vec<&str> = rows.iter().map(|s| s.pred.as_str()).collect();
        let labels: Vec<&str> = rows.iter().map(|s| s.row.target_text.as_str()).collect();
        eval.parent_child = Some(parent_child_report(&preds, &labels)?);
    }

    if matches!(kind, TaskKind::CoordGen | TaskKind::Geocoding) {
        // Distance over the predictions that parse; the exact-match rate
        // already exposes the rest.
        let mut errors = Vec::new();
        for s in rows {
            let Truth::Coord { lng, lat } = s.row.truth else { continue };
            if let Ok(p) = crate::textcodec::parse_coord(&s.pred) {
                errors.push(geo::haversine_m(p, geo::GeoPoint { lng, lat }));
            }
        }
        if !errors.is_empty() {
            eval.distance = Some(distance_report(&errors)?);
        }
    }

    if matches!(kind, TaskKind::PoiCoordGen) {
        let mut errors = Vec::new();
        for s in rows {
            let Truth::Pixel { lng, lat, view, .. } = s.row.truth else { continue };
            if let Ok((px, py)) = crate::textcodec::parse_pixel(&s.pred) {
                let p = geo::unproject(&view, px as f64, py as f64);
                errors.push(geo::haversine_m(p, geo::GeoPoint { lng, lat }));
            }
        }
        if !errors.is_empty() {
            eval.distance = Some(distance_report(&errors)?);
        }
    }

    if matches!(kind, TaskKind::ArrivalPoint) {
        if world.is_none() {
            *world = Some(run_world(config)?);
        }
        let world = world.as_ref().expect("just filled");
        let mut credits = Vec::with_capacity(n);
        for s in rows {
            let Truth::Arrival { lng, lat, road, view, .. } = s.row.truth else {
                return Err(CliError::Validation(format!(
                    "{}: arrival task with a non-arrival truth",
                    s.row.id
                )));
            };
            let credit = match crate::textcodec::parse_pixel(&s.pred) {
                Ok((px, py)) => {
                    let p = geo::unproject(&view, px as f64, py as f64);
                    arrival_index(p, geo::GeoPoint { lng, lat }, road, world)
                }
                Err(_) => 0.0,
            };
            credits.push(credit);
        }
        eval.arrival_index_pct = Some(arrival_score_pct(&credits)?);
    }

    Ok(eval)
}

fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    split: Split,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let split_name = match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    };
    let report_path = out.join(format!("eval-{split_name}.json"));
    guard_overwrite(&report_path, force)?;

    let (params, _step) = load_checkpoint(checkpoint)?;
    let (manifest, vocab) = load_dataset(config)?;
    let data_dir = &config.paths.data;
    let opts = GenerateOpts::from_config(params.config());

    let mut scored: Vec<ScoredRow> = Vec::new();
    for row in manifest.split(split) {
        let raster = row.load_image(data_dir)?;
        let input_ids = vocab.encode(&row.input_text)?;
        let ids = generate(&params, Some(&raster), &input_ids, &opts)?;
        scored.push(ScoredRow { row, pred: vocab.decode_lossy(&ids) });
    }
    if scored.is_empty() {
        return Err(CliError::Validation(format!("the {split_name} split has no samples")));
    }

    let mut world = None;
    let mut tasks = Vec::new();
    for kind in TaskKind::ALL {
        let rows: Vec<ScoredRow> = scored
            .iter()
            .filter(|s| s.row.kind == kind)
            .map(|s| ScoredRow { row: s.row, pred: s.pred.clone() })
            .collect();
        if rows.is_empty() {
            continue;
        }
        tasks.push(eval_task(kind, &rows, &params, &vocab, data_dir, &mut world, config)?);
    }

    let report = EvalReport {
        split: split_name.to_string(),
        checkpoint: checkpoint.display().to_string(),
        n_total: scored.len(),
        tasks,
    };
    write_file(&report_path, report.to_json().as_bytes())?;
    for task in &report.tasks {
        let mut parts = vec![format!("{}: n={}", task.kind, task.n)];
        if let Some(v) = task.exact_match_pct {
            parts.push(format!("exact {v:.1}%"));
        }
        if let Some(v) = task.label_accuracy_pct {
            parts.push(format!("label {v:.1}%"));
        }
        if let Some(d) = &task.distance {
            parts.push(format!("median {:.0} m", d.median_m));
        }
        if let Some(v) = task.arrival_index_pct {
            parts.push(format!("arrival {v:.1}%"));
        }
        println!("{}", parts.join("  "));
    }
    println!("report -> {}", report_path.display());
    Ok(())
}

fn cmd_infer(checkpoint: &Path, image: &Path, prompt: &str) -> Result<(), CliError> {
    let (params, _) = load_checkpoint(checkpoint)?;
    let vocab_path = checkpoint
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("vocab.txt"), |d| d.join("vocab.txt"));
    let vocab = Vocab::load(&vocab_path)?;
    let raster = Raster::from_ppm(&read_file(image)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", image.display())))?;
    let ids = generate(&params, Some(&raster), &vocab.encode(prompt)?, &GenerateOpts::from_config(params.config()))?;
    println!("{}", vocab.decode_lossy(&ids));
    Ok(())
}

fn cmd_gradcheck(config: &RunConfig) -> Result<(), CliError> {
    let report = check_gradients::<f64>(
        &config.model,
        mix2(config.seed, GRADCHECK_STREAM),
        20,
    )?;
    println!(
        "max relative gradient error {:.3e} over {} coordinates",
        report.max_rel_err, report.coords_checked
    );
    if report.max_rel_err > GRADCHECK_TOLERANCE {
        return Err(CliError::Validation(format!(
            "max relative gradient error {:.3e} exceeds {GRADCHECK_TOLERANCE:.0e}",
            report.max_rel_err
        )));
    }
    Ok(())
}

fn cmd_render(config: &RunConfig, kind: TaskKind, out: &Path, force: bool) -> Result<(), CliError> {
    let path = out.join(format!("{}-{}.ppm", kind.name(), config.seed));
    guard_overwrite(&path, force)?;
    let world = run_world(config)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(mix2(
        config.seed,
        RENDER_STREAM,
    ));
    let sample = make_sample(&world, kind, &config.view, &mut rng)?;
    write_file(&path, &sample.raster.to_ppm())?;
    println!("input:  {}", sample.input_text);
    println!("target: {}", sample.target_text);
    println!("image -> {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::split_of;
    use crate::trainer::save_checkpoint;
    use std::sync::Mutex;

    /// Serializes tests that touch the process environment or cwd-relative
    /// defaults.
    static ENV_LOCK: Mutex<()> = Mutex::new(());

    fn env_lock() -> std::sync::MutexGuard<'static, ()> {
        ENV_LOCK.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn run_line(line: &str) -> ExitCode {
        run(line.split_whitespace())
    }

    fn tiny_config(dir: &Path) -> RunConfig {
        RunConfig {
            world: WorldConfig::tiny(),
            mix: vec![(TaskKind::TagId, 8)],
            paths: RunPaths {
                world: dir.join("world.json"),
                data: dir.join("data"),
                run: dir.join("run"),
            },
            seed: 5,
            ..RunConfig::default()
        }
    }

    fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
        path
    }

    #[test]
    fn empty_config_is_the_default_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        fs::write(&path, "{}").unwrap();
        let config = load_config(&path).unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.train.batch_size, 64);
        assert_eq!(config.train.epochs, 20);
        assert_eq!(config.seed, 0);
    }

    #[test]
    fn config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.train.batch_size = 3;
        config.model.n_layers = 1;
        let path = write_config(dir.path(), &config);
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded, config);
        let again: RunConfig =
            serde_json::from_str(&serde_json::to_string(&loaded).unwrap()).unwrap();
        assert_eq!(again, loaded);
    }

    #[test]
    fn negative_batch_size_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"train": {"batch_size": -4}}"#).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        assert!(err.to_string().contains("batch_size"), "{err}");
    }

    #[test]
    fn zero_batch_size_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"train": {"batch_size": 0}}"#).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
    }

    #[test]
    fn mismatched_image_sizes_fail_validation() {
        let mut config = RunConfig::default();
        config.view.image_px = 128;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("image_px"), "{err}");
    }

    #[test]
    fn unknown_subcommand_and_flag_exit_one() {
        let _guard = env_lock();
        assert_eq!(run_line("geodecoder frobnicate"), ExitCode::from(1));
        assert_eq!(run_line("geodecoder worldgen --frobnicate"), ExitCode::from(1));
        assert_eq!(run_line("geodecoder"), ExitCode::from(1));
        assert_eq!(run_line("geodecoder --help"), ExitCode::from(0));
    }

    #[test]
    fn missing_config_file_is_an_io_error() {
        let _guard = env_lock();
        assert_eq!(run_line("geodecoder worldgen --config /no/such/config.json"), ExitCode::from(2));
    }

    #[test]
    fn worldgen_is_reproducible_and_respects_force() {
        let _guard = env_lock();
        let dir = tempfile::tempdir().unwrap();
        let config = write_config(dir.path(), &tiny_config(dir.path()));
        let out = dir.path().join("world.json");
        let line = format!(
            "geodecoder worldgen --config {} --out {}",
            config.display(),
            out.display()
        );
        assert_eq!(run_line(&line), ExitCode::SUCCESS);
        let first = fs::read(&out).unwrap();

        // Second run refuses to overwrite, leaving the file untouched.
        assert_eq!(run_line(&line), ExitCode::from(1));
        assert_eq!(fs::read(&out).unwrap(), first);

        assert_eq!(run_line(&format!("{line} --force")), ExitCode::SUCCESS);
        assert_eq!(fs::read(&out).unwrap(), first, "same seed, same world");

        let reseeded = format!("{line} --seed 9 --force");
        assert_eq!(run_line(&reseeded), ExitCode::SUCCESS);
        assert_ne!(fs::read(&out).unwrap(), first, "new seed, new world");
    }

    #[test]
    fn datagen_writes_a_loadable_dataset() {
        let _guard = env_lock();
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let config_path = write_config(dir.path(), &config);
        let line = format!("geodecoder datagen --config {}", config_path.display());
        assert_eq!(run_line(&line), ExitCode::SUCCESS);
        assert_eq!(run_line(&line), ExitCode::from(1), "refuses to overwrite");

        let manifest = load_manifest(&config.paths.data.join("manifest.jsonl")).unwrap();
        assert_eq!(manifest.rows.len(), 8);
        assert!(manifest.rows.iter().all(|r| r.kind == TaskKind::TagId));
        for row in &manifest.rows {
            assert_eq!(row.split, split_of(&row.id));
            row.load_image(&config.paths.data).unwrap();
        }
        Vocab::load(&config.paths.data.join("vocab.txt")).unwrap();
    }

    /// End-to-end desk run: datagen, a few train steps, eval, infer, render.
    #[test]
    fn pipeline_runs_end_to_end() {
        let _guard = env_lock();
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.mix = vec![(TaskKind::TagId, 10)];
        config.model = GeoDecoderConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ffn: 32,
            vocab_size: 96,
            ..GeoDecoderConfig::default()
        };
        config.train = TrainHyper {
            batch_size: 4,
            steps: Some(2),
            warmup_steps: 1,
            log_every: 1,
            ..TrainHyper::default()
        };
        let config_path = write_config(dir.path(), &config);
        let cfg = config_path.display();

        assert_eq!(run_line(&format!("geodecoder datagen --config {cfg}")), ExitCode::SUCCESS);
        assert_eq!(run_line(&format!("geodecoder train --config {cfg}")), ExitCode::SUCCESS);
        let ckpt = config.paths.run.join("model.ckpt");
        assert!(ckpt.exists());
        assert!(config.paths.run.join("vocab.txt").exists());
        assert!(config.paths.run.join("train_log.jsonl").exists());
        assert_eq!(
            run_line(&format!("geodecoder train --config {cfg}")),
            ExitCode::from(1),
            "checkpoints are not silently replaced"
        );

        // The tiny split may lack val rows; evaluating train always works.
        assert_eq!(
            run_line(&format!("geodecoder eval --config {cfg} --split train")),
            ExitCode::SUCCESS
        );
        let report: EvalReport = serde_json::from_str(
            &fs::read_to_string(config.paths.run.join("eval-train.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report.split, "train");
        assert_eq!(report.tasks.len(), 1);
        assert_eq!(report.tasks[0].kind, "tag_id");
        assert!(report.n_total > 0);
        assert!(report.tasks[0].label_accuracy_pct.is_some());

        let manifest = load_manifest(&config.paths.data.join("manifest.jsonl")).unwrap();
        let image = config.paths.data.join(&manifest.rows[0].image);
        let line = format!(
            "geodecoder infer --checkpoint {} {} prompt",
            ckpt.display(),
            image.display()
        );
        // Argv splitting in these tests breaks on spaces, so the prompt is a
        // single word; unknown characters must fail cleanly.
        let code = run_line(&line);
        assert!(code == ExitCode::SUCCESS || code == ExitCode::from(1));
        let known = format!(
            "geodecoder infer --checkpoint {} {} what",
            ckpt.display(),
            image.display()
        );
        assert_eq!(run_line(&known), ExitCode::SUCCESS);

        assert_eq!(
            run_line(&format!("geodecoder render --config {cfg} --kind tag_id")),
            ExitCode::SUCCESS
        );
        let ppm = config.paths.run.join("tag_id-5.ppm");
        assert!(ppm.exists());
        Raster::from_ppm(&fs::read(&ppm).unwrap()).unwrap();
    }

    #[test]
    fn datagen_twice_is_byte_identical() {
        let _guard = env_lock();
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.mix = vec![(TaskKind::CoordGen, 5)];
        let config_path = write_config(dir.path(), &config);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        for out in [&a, &b] {
            let line = format!(
                "geodecoder datagen --config {} --out {}",
                config_path.display(),
                out.display()
            );
            assert_eq!(run_line(&line), ExitCode::SUCCESS);
        }
        assert_eq!(
            fs::read(a.join("manifest.jsonl")).unwrap(),
            fs::read(b.join("manifest.jsonl")).unwrap()
        );
        assert_eq!(fs::read(a.join("vocab.txt")).unwrap(), fs::read(b.join("vocab.txt")).unwrap());
    }

    #[test]
    fn gradcheck_passes_on_a_small_model() {
        let _guard = env_lock();
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::default();
        config.model = GeoDecoderConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ffn: 16,
            vocab_size: 64,
            image_size: 32,
            patch_size: 16,
            ..GeoDecoderConfig::default()
        };
        config.view.image_px = 32;
        let config_path = write_config(dir.path(), &config);
        let line = format!("geodecoder gradcheck --config {}", config_path.display());
        assert_eq!(run_line(&line), ExitCode::SUCCESS);
    }

    #[test]
    fn untrained_tag_id_scores_near_chance() {
        let _guard = env_lock();
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.mix = vec![(TaskKind::TagId, 48)];
        config.model = GeoDecoderConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ffn: 32,
            vocab_size: 96,
            ..GeoDecoderConfig::default()
        };
        let config_path = write_config(dir.path(), &config);
        let cfg = config_path.display();
        assert_eq!(run_line(&format!("geodecoder datagen --config {cfg}")), ExitCode::SUCCESS);

        // An untrained checkpoint: freshly initialized weights, step 0.
        let params =
            GeoDecoderParams::<f32>::init(&config.model, mix2(config.seed, INIT_STREAM)).unwrap();
        fs::create_dir_all(&config.paths.run).unwrap();
        save_checkpoint(&config.paths.run.join("model.ckpt"), &params, 0).unwrap();
        let vocab = Vocab::load(&config.paths.data.join("vocab.txt")).unwrap();
        fs::write(config.paths.run.join("vocab.txt"), vocab.to_text()).unwrap();

        assert_eq!(
            run_line(&format!("geodecoder eval --config {cfg} --split train")),
            ExitCode::SUCCESS
        );
        let report: EvalReport = serde_json::from_str(
            &fs::read_to_string(config.paths.run.join("eval-train.json")).unwrap(),
        )
        .unwrap();
        let task = &report.tasks[0];
        // Chance over the tag label set is 1/8; with a fresh model the
        // closed-set pick is arbitrary, so the rate sits near that, far from
        // certainty. Free-form generation matches nothing.
        let acc = task.label_accuracy_pct.unwrap();
        assert!(acc < 50.0, "untrained accuracy {acc}% looks informed");
        assert_eq!(task.exact_match_pct, Some(0.0));
    }

    #[test]
    fn thread_cap_rejects_garbage() {
        let _guard = env_lock();
        std::env::set_var(THREADS_VAR, "many");
        let code = run_line("geodecoder worldgen");
        std::env::remove_var(THREADS_VAR);
        assert_eq!(code, ExitCode::from(1));
    }

    #[test]
    fn task_kind_and_split_flags_parse() {
        for kind in TaskKind::ALL {
            assert_eq!(parse_kind(kind.name()).unwrap(), kind);
        }
        assert!(parse_kind("tags").is_err());
        assert_eq!(parse_split("test").unwrap(), Split::Test);
        assert!(parse_split("holdout").is_err());
    }
}
