//! Implementation of the `moegeom` command line.
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or input error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use moegeom_core::interchange::{
    captures_from_container, captures_to_container, read_dump_file, read_index, read_report_file, write_plot_csv,
    write_report_file, ComparisonFile, Dtype, DumpContainer, DumpHeader, InterchangeError, ReportFile,
};
use moegeom_core::pipeline::{
    analyze_layer, compare_routing, AnalysisOptions, LayerCapture, PipelineError, Provenance,
};
use moegeom_core::{PcaMode, Scalar};
use moegeom_model::checkpoint::{checkpoint_config, from_container, to_container};
use moegeom_model::train::train_with_progress;
use moegeom_model::{capture_corpus, CaptureOptions, ModelConfig, ModelError, MoeTransformer, RouterKind};
use serde_json::{json, Map, Value};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const OUT_DIR_ENV: &str = "MOEGEOM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "moegeom",
    version,
    about = "Geometric diagnostics for Mixture-of-Experts layers"
)]
pub struct Cli {
    /// Seed for training; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
    /// Print progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the controlled MoE transformer on a byte corpus.
    Train(TrainArgs),
    /// Compute Jacobian-alignment and subspace-geometry reports.
    Analyze(AnalyzeArgs),
    /// Compare two reports layer by layer.
    Compare(CompareArgs),
    /// Print the header and section table of an MGT1 file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("precision must be f32 or f64, got '{s}'")),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON model config; missing fields take the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub steps: usize,
    /// `topk:K` or `soft`.
    #[arg(long)]
    pub router: Option<RouterKind>,
    /// Checkpoint path [default: <out-dir>/checkpoint.mgt]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a capture dump of the trained model.
    #[arg(long)]
    pub capture: Option<PathBuf>,
    /// Tokens read by the capture pass.
    #[arg(long, default_value_t = CaptureOptions::default().tokens)]
    pub capture_tokens: usize,
    /// Loss trace [default: checkpoint path with extension .loss.csv]
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelection {
    All,
    One(usize),
}

impl FromStr for LayerSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(LayerSelection::All);
        }
        s.parse()
            .map(LayerSelection::One)
            .map_err(|_| format!("layer must be 'all' or an index, got '{s}'"))
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, conflicts_with_all = ["checkpoint", "corpus"], required_unless_present = "checkpoint")]
    pub dump: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub layer: LayerSelection,
    #[arg(long, default_value_t = moegeom_core::DEFAULT_COMPONENTS)]
    pub components: usize,
    /// `row-scaled` or `sample-weighted` [default: the dump's weighting mode;
    /// sample-weighted for checkpoints]
    #[arg(long)]
    pub mode: Option<PcaMode>,
    /// Tokens read when capturing from a checkpoint.
    #[arg(long, default_value_t = CaptureOptions::default().tokens)]
    pub capture_tokens: usize,
    /// Report path [default: <out-dir>/report.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for CSV plot panels.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// [default: <out-dir>/comparison.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dump: PathBuf,
}

/// A failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_)
            | ModelError::CorpusTooShort { .. }
            | ModelError::InvalidToken { .. }
            | ModelError::SequenceTooLong { .. }
            | ModelError::Checkpoint(_) => Failure::input(e.to_string()),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Malformed(_) | PipelineError::Incompatible(_) | PipelineError::LayerNotFound(_) => {
                Failure::input(e.to_string())
            }
            _ => Failure::runtime(e.to_string()),
        }
    }
}

fn read_input(path: &Path, what: &str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::input(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_dump(path: &Path) -> Result<DumpContainer, Failure> {
    read_dump_file(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Creates the parent directory of an output path.
fn prepare_output(path: &Path) -> Result<(), Failure> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir)
            .map_err(|e| Failure::input(format!("cannot create output directory {}: {e}", dir.display()))),
        None => Ok(()),
    }
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    prepare_output(path)?;
    std::fs::write(path, bytes).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn interchange_failure(path: &Path, e: InterchangeError) -> Failure {
    Failure::runtime(format!("{}: {e}", path.display()))
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::Analyze(a) => cmd_analyze(&cli, a),
        Command::Compare(a) => cmd_compare(&cli, a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

/// Header fields shared by every file a run writes.
fn run_metadata(config: &ModelConfig, corpus: &Path, extra: &[(&str, Value)]) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("toolkit_version".into(), json!(VERSION));
    m.insert("seed".into(), json!(config.seed));
    m.insert("corpus".into(), json!(corpus.display().to_string()));
    for (k, v) in extra {
        m.insert((*k).into(), v.clone());
    }
    m
}

fn resolve_config(cli: &Cli, a: &TrainArgs) -> Result<ModelConfig, Failure> {
    let mut config = match &a.config {
        Some(p) => {
            let text = String::from_utf8(read_input(p, "config")?)
                .map_err(|_| Failure::input(format!("config {} is not UTF-8", p.display())))?;
            moegeom_core::interchange::parse_json::<ModelConfig>(&text)
                .map_err(|e| Failure::input(format!("config {}: {e}", p.display())))?
        }
        None => ModelConfig::default(),
    };
    if let Some(r) = a.router {
        config.router = r;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), Failure> {
    let config = resolve_config(cli, a)?;
    let corpus = read_input(&a.corpus, "corpus")?;
    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join("checkpoint.mgt"));
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| out.with_extension("loss.csv"));
    for p in [Some(&out), Some(&loss_path), a.capture.as_ref()].into_iter().flatten() {
        prepare_output(p)?;
    }
    match a.precision {
        Precision::F32 => train_typed::<f32>(cli, a, config, &corpus, &out, &loss_path),
        Precision::F64 => train_typed::<f64>(cli, a, config, &corpus, &out, &loss_path),
    }
}

fn train_typed<T: Scalar>(
    cli: &Cli,
    a: &TrainArgs,
    config: ModelConfig,
    corpus: &[u8],
    out: &Path,
    loss_path: &Path,
) -> Result<(), Failure> {
    let verbose = cli.verbose > 0;
    let started = std::time::Instant::now();
    let outcome = train_with_progress::<T>(&config, corpus, a.steps, |step, loss| {
        if verbose && (step % 50 == 0 || step + 1 == a.steps) {
            eprintln!(
                "step {step:>6}  loss {loss:.4}  {:.1}s",
                started.elapsed().as_secs_f64()
            );
        }
    })?;
    let meta = run_metadata(&config, &a.corpus, &[("steps", json!(a.steps))]);

    let ckpt = to_container(&outcome.model, &format!("moegeom {VERSION}"), meta.clone());
    write_output(out, &ckpt.to_bytes().map_err(|e| interchange_failure(out, e))?)?;

    let mut csv = String::from("step,loss,seed,router,toolkit_version\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l},{},{},{VERSION}\n", config.seed, config.router));
    }
    write_output(loss_path, csv.as_bytes())?;

    if let Some(path) = &a.capture {
        let opts = CaptureOptions {
            tokens: a.capture_tokens,
        };
        let layers = capture_layers(&outcome.model, corpus, opts)?;
        let header = capture_header(&config, meta, opts);
        let dump = captures_to_container(header, &layers, Dtype::F64).map_err(|e| interchange_failure(path, e))?;
        write_output(path, &dump.to_bytes().map_err(|e| interchange_failure(path, e))?)?;
    }
    let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} for {} steps (seed {}): final loss {last:.4}; checkpoint {}",
        config.router,
        a.steps,
        config.seed,
        out.display()
    );
    Ok(())
}

fn capture_layers<T: Scalar>(
    model: &MoeTransformer<T>,
    corpus: &[u8],
    opts: CaptureOptions,
) -> Result<Vec<LayerCapture>, Failure> {
    let buf = capture_corpus(model, corpus, opts)?;
    Ok(buf.to_layer_captures(model)?)
}

fn capture_header(config: &ModelConfig, mut meta: Map<String, Value>, opts: CaptureOptions) -> DumpHeader {
    meta.insert("kind".into(), json!("capture"));
    meta.insert(
        "config".into(),
        serde_json::to_value(config).expect("config serialises"),
    );
    meta.insert("capture_tokens".into(), json!(opts.tokens));
    DumpHeader {
        model: "moe-transformer".into(),
        // the controlled model weights routed PCA by sample
        weighting_mode: PcaMode::SampleWeighted,
        creator: format!("moegeom {VERSION}"),
        extra: meta,
        ..Default::default()
    }
}

/// Provenance for reports, shared by the dump and checkpoint routes so that
/// both yield identical reports for the same run.
fn provenance_from_header(h: &DumpHeader) -> Provenance {
    let get = |k: &str| h.extra.get(k);
    let mut config = get("config").cloned().unwrap_or(Value::Null);
    if let (Value::Object(m), Some(t)) = (&mut config, get("capture_tokens")) {
        m.insert("capture_tokens".into(), t.clone());
    }
    Provenance {
        source: get("corpus")
            .and_then(Value::as_str)
            .map_or_else(|| h.model.clone(), |c| format!("{} on {c}", h.model)),
        toolkit_version: VERSION.into(),
        seed: get("seed").and_then(Value::as_u64),
        config,
    }
}

fn cmd_analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<(), Failure> {
    let (header, captures, default_mode) = match (&a.dump, &a.checkpoint, &a.corpus) {
        (Some(dump), None, None) => {
            let c = load_dump(dump)?;
            let captures =
                captures_from_container(&c).map_err(|e| Failure::input(format!("{}: {e}", dump.display())))?;
            let mode = c.header.weighting_mode;
            (c.header, captures, mode)
        }
        (None, Some(ckpt), Some(corpus)) => {
            let c = load_dump(ckpt)?;
            let config = checkpoint_config(&c)?;
            let text = read_input(corpus, "corpus")?;
            let opts = CaptureOptions {
                tokens: a.capture_tokens,
            };
            let captures = if c.header.dtype == "f64" {
                capture_layers(&from_container::<f64>(&c)?, &text, opts)?
            } else {
                capture_layers(&from_container::<f32>(&c)?, &text, opts)?
            };
            let mut meta = run_metadata(&config, corpus, &[]);
            for k in ["steps", "seed"] {
                if let Some(v) = c.header.extra.get(k) {
                    meta.insert(k.into(), v.clone());
                }
            }
            (capture_header(&config, meta, opts), captures, PcaMode::SampleWeighted)
        }
        _ => {
            return Err(Failure::input(
                "give exactly one source: --dump, or --checkpoint with --corpus",
            ))
        }
    };

    let selected: Vec<&LayerCapture> = match a.layer {
        LayerSelection::All => captures.iter().collect(),
        LayerSelection::One(id) => vec![moegeom_core::pipeline::find_layer(&captures, id)?],
    };
    let opts = AnalysisOptions {
        n_components: a.components,
        mode: a.mode.unwrap_or(default_mode),
    };
    let provenance = provenance_from_header(&header);
    let reports = selected
        .into_iter()
        .map(|c| analyze_layer(c, opts, provenance.clone()))
        .collect::<Result<Vec<_>, _>>()?;

    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join("report.json"));
    let file = ReportFile::new(reports);
    write_output(&out, write_report_file(&file).as_bytes())?;
    if let Some(dir) = &a.csv {
        for r in &file.reports {
            write_plot_csv(r, dir).map_err(|e| interchange_failure(dir, e))?;
        }
    }
    for r in &file.reports {
        let j = r.jacobian.as_ref().map_or("n/a".to_string(), |j| j.stats.display());
        println!(
            "layer {}: jacobian {j}  grassmann {}",
            r.layer_id,
            r.grassmann.stats.display()
        );
    }
    Ok(())
}

fn read_reports(path: &Path) -> Result<ReportFile, Failure> {
    let bytes = read_input(path, "report")?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::input(format!("{} is not UTF-8", path.display())))?;
    read_report_file(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn cmd_compare(cli: &Cli, a: &CompareArgs) -> Result<(), Failure> {
    let ra = read_reports(&a.a)?;
    let rb = read_reports(&a.b)?;
    let mut layers = Vec::new();
    for x in &ra.reports {
        let y = rb
            .reports
            .iter()
            .find(|y| y.layer_id == x.layer_id)
            .ok_or_else(|| Failure::input(format!("layer {} missing from {}", x.layer_id, a.b.display())))?;
        layers.push(compare_routing(x, y)?);
    }
    let provenance = [&ra, &rb]
        .iter()
        .filter_map(|f| f.reports.first().map(|r| r.provenance.clone()))
        .collect();
    let file = ComparisonFile {
        schema: moegeom_core::pipeline::SCHEMA_VERSION,
        a: a.a.display().to_string(),
        b: a.b.display().to_string(),
        toolkit_version: VERSION.into(),
        provenance,
        layers,
    };
    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join("comparison.json"));
    write_output(
        &out,
        serde_json::to_string_pretty(&file)
            .expect("comparison serialises")
            .as_bytes(),
    )?;
    for l in &file.layers {
        println!(
            "layer {}: grassmann delta {:+.4}  jacobian |mean| delta {}  sharper separation: {}",
            l.layer_id,
            l.grassmann_delta,
            l.jacobian_abs_delta.map_or("n/a".into(), |d| format!("{d:+.4}")),
            l.sharper_separation
        );
    }
    Ok(())
}

/// Renders the header and section table of a container.
pub fn describe(bytes: &[u8]) -> Result<String, InterchangeError> {
    let (header, index) = read_index(bytes)?;
    // decoding validates the payload as well
    DumpContainer::from_bytes(bytes)?;
    let mut s = String::new();
    s.push_str(&serde_json::to_string_pretty(&header).expect("header serialises"));
    s.push('\n');
    s.push_str(&format!("{} tensor sections\n", index.len()));
    if !index.is_empty() {
        s.push_str(&format!(
            "{:<36} {:<5} {:<20} {:>12} {:>12}\n",
            "name", "dtype", "shape", "offset", "bytes"
        ));
    }
    for e in &index {
        let shape = format!("{:?}", e.shape);
        s.push_str(&format!(
            "{:<36} {:<5} {:<20} {:>12} {:>12}\n",
            e.name,
            e.dtype.name(),
            shape,
            e.offset,
            e.length
        ));
    }
    for (l, n) in header.layers.iter().zip(&header.token_counts) {
        s.push_str(&format!("layer {l}: {n} tokens\n"));
    }
    Ok(s)
}

fn cmd_inspect(a: &InspectArgs) -> Result<(), Failure> {
    let bytes = read_input(&a.dump, "dump")?;
    let text = describe(&bytes).map_err(|e| Failure::input(format!("{}: {e}", a.dump.display())))?;
    print!("{text}");
    Ok(())
}
