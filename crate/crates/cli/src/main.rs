//! `gaze-audit`: batch front end for the synthetic-gaze privacy audit.
//!
//! Exit status: 0 on success, 1 for data and I/O errors, 2 for usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use gaze_audit::diffusion::{read_model, train, write_model, DiffusionModel, TrainingConfig};
use gaze_audit::events::EventParams;
use gaze_audit::features::{read_feature_table, write_feature_table, FeatureCatalog};
use gaze_audit::gaze::{read_ratings, recording_files, write_manifest, write_ratings, Task};
use gaze_audit::pipeline::{self, Corpus, MANIFEST_FILE, RATINGS_FILE};
use gaze_audit::sim::{corpus_files, simulate_cohort, CohortConfig, SimConfig};
use gaze_audit::stats::{
    read_matrices_csv, render_heatmap, summary_json, write_matrices_csv, CorrelationMatrix, SessionPooling,
};

const OUT_ENV: &str = "GAZE_AUDIT_OUT";

#[derive(Parser, Debug)]
#[command(name = "gaze-audit", version, about = "Synthetic-gaze privacy audit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled simulator corpus.
    Simulate(SimulateArgs),
    /// Train the reference diffusion model on a corpus.
    Train(TrainArgs),
    /// Sample one synthetic window per corpus window.
    Synthesize(SynthesizeArgs),
    /// Segment windows and write the feature table.
    Extract(ExtractArgs),
    /// Spearman matrices of a feature table against ratings.
    Correlate(CorrelateArgs),
    /// Quality metrics and correlation heatmaps.
    Report(ReportArgs),
    /// Full real-versus-synthetic correlation comparison.
    Audit(AuditArgs),
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory (default: $GAZE_AUDIT_OUT).
    #[arg(long, env = OUT_ENV)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(skip)]
    out: OutArg,
    /// Restrict to these tasks (repeatable; default all).
    #[arg(long = "task")]
    tasks: Vec<Task>,
    #[arg(long, default_value_t = 10)]
    subjects: u32,
    #[arg(long, default_value_t = 1)]
    sessions: u32,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    rounds: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    windows_per_record: u32,
    /// State-coupling gain g in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    coupling: f64,
    #[arg(long, default_value_t = 0.5)]
    rating_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent gaze stream sharing the same subjects and ratings.
    #[arg(long, default_value_t = 0)]
    stream: u64,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    out: OutArg,
    #[arg(long)]
    corpus: PathBuf,
    /// JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "task")]
    tasks: Vec<Task>,
}

#[derive(Args, Debug, Serialize)]
struct SynthesizeArgs {
    #[command(flatten)]
    #[serde(skip)]
    out: OutArg,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "task")]
    tasks: Vec<Task>,
}

#[derive(Args, Debug, Serialize)]
struct ExtractArgs {
    #[command(flatten)]
    #[serde(skip)]
    out: OutArg,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "v1")]
    catalog: String,
    #[arg(long = "task")]
    tasks: Vec<Task>,
}

#[derive(Args, Debug, Serialize)]
struct CorrelateArgs {
    #[command(flatten)]
    #[serde(skip)]
    out: OutArg,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, default_value = "v1")]
    catalog: String,
    /// `separate` or `mean`.
    #[arg(long, default_value = "separate")]
    sessions: SessionPooling,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    #[command(flatten)]
    #[serde(skip)]
    out: OutArg,
    /// Corpus with targets (the real recordings).
    #[arg(long)]
    corpus: PathBuf,
    /// Synthetic corpus paired window-by-window with `--corpus`.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Correlation CSV to render as heatmaps.
    #[arg(long)]
    correlations: Option<PathBuf>,
    #[arg(long = "task")]
    tasks: Vec<Task>,
}

#[derive(Args, Debug, Serialize)]
struct AuditArgs {
    #[command(flatten)]
    #[serde(skip)]
    out: OutArg,
    #[arg(long)]
    real: PathBuf,
    /// Pre-generated synthetic corpus.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    synthetic: Option<PathBuf>,
    /// Diffusion model used to synthesize from the real corpus.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "v1")]
    catalog: String,
    #[arg(long, default_value = "separate")]
    sessions: SessionPooling,
    #[arg(long = "task")]
    tasks: Vec<Task>,
}

/// Output collector: artifacts are staged in memory and written atomically,
/// followed by `run_manifest.json`.
struct Run {
    command: &'static str,
    seed: u64,
    config_json: serde_json::Value,
    config_hash: String,
    out: PathBuf,
    artifacts: Vec<(PathBuf, Vec<u8>)>,
}

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    catalog_version: &'a str,
    command: &'static str,
    seed: u64,
    config_hash: &'a str,
    config: &'a serde_json::Value,
    artifacts: Vec<ArtifactEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl Run {
    fn new(command: &'static str, seed: u64, config: &impl Serialize, out: &Path) -> anyhow::Result<Self> {
        let config_json = serde_json::to_value(config)?;
        let config_hash = sha256_hex(serde_json::to_string(&config_json)?.as_bytes());
        Ok(Self {
            command,
            seed,
            config_json,
            config_hash,
            out: out.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn header(&self) -> String {
        format!(
            "# gaze-audit {} {} seed={} config_sha256={}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.seed,
            self.config_hash
        )
    }

    /// CSV with the run header as leading comment lines.
    fn csv(&mut self, rel: impl Into<PathBuf>, body: Vec<u8>) {
        let mut bytes = self.header().into_bytes();
        bytes.extend(body);
        self.artifacts.push((rel.into(), bytes));
    }

    /// JSON object with `seed` and `config_sha256` fields prepended.
    fn json(&mut self, rel: impl Into<PathBuf>, value: serde_json::Value) -> anyhow::Result<()> {
        let mut obj = serde_json::Map::new();
        obj.insert("seed".into(), self.seed.into());
        obj.insert("config_sha256".into(), self.config_hash.clone().into());
        match value {
            serde_json::Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("data".into(), other);
            }
        }
        let mut bytes = serde_json::to_vec_pretty(&serde_json::Value::Object(obj))?;
        bytes.push(b'\n');
        self.artifacts.push((rel.into(), bytes));
        Ok(())
    }

    fn svg(&mut self, rel: impl Into<PathBuf>, body: String) {
        let comment = format!(
            "<!-- gaze-audit {} seed={} config_sha256={} -->\n",
            self.command, self.seed, self.config_hash
        );
        self.artifacts.push((rel.into(), (comment + &body).into_bytes()));
    }

    fn raw(&mut self, rel: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.artifacts.push((rel.into(), bytes));
    }

    fn finish(self, catalog_version: &str) -> anyhow::Result<()> {
        let mut entries = Vec::new();
        for (rel, bytes) in &self.artifacts {
            write_atomic(&self.out.join(rel), bytes)?;
            entries.push(ArtifactEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = RunManifest {
            tool: "gaze-audit",
            version: env!("CARGO_PKG_VERSION"),
            catalog_version,
            command: self.command,
            seed: self.seed,
            config_hash: &self.config_hash,
            config: &self.config_json,
            artifacts: entries,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.out.join("run_manifest.json"), &bytes)?;
        log::info!("wrote {} artifacts to {}", self.artifacts.len(), self.out.display());
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn check_dir(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_dir() {
        bail!("{what} {} is not a directory", path.display());
    }
    Ok(())
}

fn check_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("{what} {} not found", path.display());
    }
    Ok(())
}

fn load(dir: &Path, tasks: &[Task]) -> anyhow::Result<Corpus> {
    check_dir(dir, "corpus")?;
    let mut corpus = pipeline::load_corpus(dir)?;
    if !tasks.is_empty() {
        let all = std::mem::take(&mut corpus);
        let mut kept = Corpus { load: all.load.clone(), ..Default::default() };
        for &t in tasks {
            let mut c = all.clone();
            c.filter_task(t);
            kept.windows.extend(c.windows);
            kept.reports.extend(c.reports);
            kept.targets.extend(c.targets);
        }
        kept.windows.sort_by_key(|w| *w.key());
        kept.reports.sort_by_key(|r| r.key);
        corpus = kept;
    }
    log::info!(
        "{}: {} windows from {} files ({} dropped, {} rejected)",
        dir.display(),
        corpus.windows.len(),
        corpus.load.files,
        corpus.load.dropped_invalid,
        corpus.load.rejected_gaps
    );
    Ok(corpus)
}

fn matrices_artifacts(run: &mut Run, prefix: &str, matrices: &[CorrelationMatrix]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_matrices_csv(&mut buf, matrices)?;
    run.csv(format!("{prefix}correlations.csv"), buf);
    let summary: serde_json::Value = serde_json::from_str(&summary_json(matrices)?)?;
    run.json(format!("{prefix}correlation_summary.json"), summary)?;
    Ok(())
}

fn heatmap_artifacts(run: &mut Run, prefix: &str, matrices: &[CorrelationMatrix]) {
    for m in matrices {
        run.svg(format!("{prefix}heatmaps/{}_{}.svg", m.task, m.pooling), render_heatmap(m));
    }
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let cfg = CohortConfig {
        subjects: args.subjects,
        sessions: args.sessions,
        rounds: args.rounds.clone(),
        tasks: if args.tasks.is_empty() { Task::ALL.to_vec() } else { args.tasks.clone() },
        windows_per_record: args.windows_per_record,
        rating_noise: args.rating_noise,
        seed: args.seed,
        stream: args.stream,
        sim: SimConfig {
            coupling: args.coupling,
            ..Default::default()
        },
    };
    let mut run = Run::new("simulate", args.seed, &cfg, &args.out.out)?;
    let cohort = simulate_cohort(&cfg)?;
    for (rel, bytes) in corpus_files(&cohort)? {
        run.csv(rel, bytes);
    }
    let fatigue: Vec<serde_json::Value> = cohort
        .records
        .iter()
        .map(|r| serde_json::json!({ "record": r.key.to_string(), "fatigue": r.fatigue }))
        .collect();
    run.json(
        "truth.json",
        serde_json::json!({ "config": cfg, "latents": cohort.latents, "records": fatigue }),
    )?;
    run.finish(FeatureCatalog::v1().version())
}

fn train_cmd(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<TrainingConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainingConfig::default(),
    };
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    let corpus = load(&args.corpus, &args.tasks)?;
    #[derive(Serialize)]
    struct Config<'a> {
        corpus: &'a Path,
        tasks: &'a [Task],
        training: &'a TrainingConfig,
    }
    let mut run = Run::new(
        "train",
        cfg.rng_seed,
        &Config { corpus: &args.corpus, tasks: &args.tasks, training: &cfg },
        &args.out.out,
    )?;
    let outcome = train(&corpus.windows, &cfg)?;
    let mut buf = Vec::new();
    write_model(&mut buf, &outcome.model)?;
    run.raw("model.gdm", buf);
    let mut trace = String::from("epoch,mean_loss\n");
    for (e, l) in outcome.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{},{l}\n", e + 1));
    }
    run.csv("loss_trace.csv", trace.into_bytes());
    run.finish(FeatureCatalog::v1().version())
}

fn read_model_file(path: &Path) -> anyhow::Result<DiffusionModel> {
    check_file(path, "model")?;
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_model(std::io::BufReader::new(f))?)
}

fn synthesize_cmd(args: SynthesizeArgs) -> anyhow::Result<()> {
    let model = read_model_file(&args.model)?;
    let corpus = load(&args.corpus, &args.tasks)?;
    let mut run = Run::new("synthesize", args.seed, &args, &args.out.out)?;
    let synth = pipeline::synthesize(&model, &corpus.windows, args.seed)?;
    let (files, manifest) = recording_files(&synth)?;
    for (rel, bytes) in files {
        run.csv(rel, bytes);
    }
    let mut buf = Vec::new();
    write_manifest(&mut buf, &manifest)?;
    run.csv(MANIFEST_FILE, buf);
    let mut buf = Vec::new();
    write_ratings(&mut buf, &corpus.reports)?;
    run.csv(RATINGS_FILE, buf);
    run.finish(FeatureCatalog::v1().version())
}

fn extract_cmd(args: ExtractArgs) -> anyhow::Result<()> {
    let catalog = FeatureCatalog::by_version(&args.catalog)?;
    let corpus = load(&args.corpus, &args.tasks)?;
    let mut run = Run::new("extract", 0, &args, &args.out.out)?;
    let table = if corpus.windows.is_empty() {
        gaze_audit::features::feature_table(&catalog, Vec::new())?
    } else {
        pipeline::features_for(&catalog, &corpus.windows, &EventParams::default())?
    };
    let mut buf = Vec::new();
    write_feature_table(&mut buf, &table)?;
    run.csv("features.csv", buf);
    run.finish(catalog.version())
}

fn correlate_cmd(args: CorrelateArgs) -> anyhow::Result<()> {
    let catalog = FeatureCatalog::by_version(&args.catalog)?;
    check_file(&args.features, "feature table")?;
    check_file(&args.ratings, "ratings file")?;
    let table = read_feature_table(&args.features, &catalog)?;
    let reports = read_ratings(&args.ratings)?;
    let mut run = Run::new("correlate", 0, &args, &args.out.out)?;
    let matrices = pipeline::correlate(&table, &reports, args.sessions)?;
    matrices_artifacts(&mut run, "", &matrices)?;
    run.finish(catalog.version())
}

fn report_cmd(args: ReportArgs) -> anyhow::Result<()> {
    let corpus = load(&args.corpus, &args.tasks)?;
    let synthetic = args.synthetic.as_deref().map(|d| load(d, &args.tasks)).transpose()?;
    let correlations = match &args.correlations {
        Some(p) => {
            check_file(p, "correlation CSV")?;
            Some(read_matrices_csv(p)?)
        }
        None => None,
    };
    let mut run = Run::new("report", 0, &args, &args.out.out)?;
    let params = EventParams::default();
    let quality = match &synthetic {
        Some(s) => pipeline::quality_report(&s.windows, &corpus.targets, Some(&corpus.windows), &params)?,
        None => pipeline::quality_report(&corpus.windows, &corpus.targets, None, &params)?,
    };
    let tasks: serde_json::Map<String, serde_json::Value> = quality
        .into_iter()
        .map(|(t, q)| Ok((t.to_string(), serde_json::to_value(q)?)))
        .collect::<anyhow::Result<_>>()?;
    run.json(
        "quality.json",
        serde_json::json!({
            "evaluated": if synthetic.is_some() { "synthetic" } else { "corpus" },
            "units": "deg",
            "tasks": tasks,
        }),
    )?;
    if let Some(m) = &correlations {
        heatmap_artifacts(&mut run, "", m);
    }
    run.finish(FeatureCatalog::v1().version())
}

fn audit_cmd(args: AuditArgs) -> anyhow::Result<()> {
    let catalog = FeatureCatalog::by_version(&args.catalog)?;
    let real = load(&args.real, &args.tasks)?;
    if real.reports.is_empty() {
        log::warn!("{} has no ratings; every matrix will be masked", args.real.display());
    }
    let synthetic = match (&args.synthetic, &args.model) {
        (Some(dir), _) => load(dir, &args.tasks)?.windows,
        (None, Some(model)) => pipeline::synthesize(&read_model_file(model)?, &real.windows, args.seed)?,
        (None, None) => unreachable!("clap requires one of --synthetic and --model"),
    };
    let mut run = Run::new("audit", args.seed, &args, &args.out.out)?;
    let params = EventParams::default();
    let out = pipeline::audit(&catalog, &real.windows, &synthetic, &real.reports, &params, args.sessions)?;
    matrices_artifacts(&mut run, "real/", &out.real)?;
    matrices_artifacts(&mut run, "synthetic/", &out.synthetic)?;
    heatmap_artifacts(&mut run, "real/", &out.real);
    heatmap_artifacts(&mut run, "synthetic/", &out.synthetic);
    run.json("comparison.json", serde_json::to_value(&out.comparison)?)?;
    run.finish(catalog.version())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Synthesize(a) => synthesize_cmd(a),
        Command::Extract(a) => extract_cmd(a),
        Command::Correlate(a) => correlate_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Audit(a) => audit_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // Help and version go to stdout with status 0, usage errors exit 2.
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
