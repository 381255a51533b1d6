use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use buggin_core::corpus::{self, CorpusFormat, RemoteClient};
use buggin_core::exec::{configure_threads, Exec};
use buggin_core::io::write_atomic;
use buggin_core::learners::{Family, ModelConfig};
use buggin_core::metrics::MetricName;
use buggin_core::pipeline::{
    self, render_markdown, EmbeddedData, EmbeddingSource, EvalReport, FitScope, RunConfig, TrainingRecord,
};
use buggin_core::textprep::TextField;
use buggin_core::Corpus;

#[derive(Parser)]
#[command(
    name = "buggin",
    version,
    about = "Classify bug reports as intrinsic or non-intrinsic"
)]
struct Cli {
    /// Worker threads for grid search and prediction (1 runs sequentially).
    #[arg(long, global = true, env = "BUGGIN_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus, or build one from a remote tracker, and write it out.
    Ingest(IngestArgs),
    /// Write the preprocessed token documents as JSONL.
    Preprocess(PreprocessArgs),
    /// Split and embed a corpus; writes the feature data for `train`.
    Embed(EmbedArgs),
    /// Grid search and refit on embedded data.
    Train(TrainArgs),
    /// Score trained models on the holdout split and write the report.
    Evaluate(EvaluateArgs),
    /// Every stage end to end.
    Run(RunArgs),
    /// Render one or more JSON reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// csv or jsonl; guessed from the extension when omitted.
    #[arg(long, value_parser = parse_format)]
    format: Option<CorpusFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Title,
    Description,
}

impl From<FieldArg> for TextField {
    fn from(f: FieldArg) -> Self {
        match f {
            FieldArg::Title => TextField::Title,
            FieldArg::Description => TextField::Description,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbeddingArg {
    Tfidf,
    Dense,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Full,
    Train,
}

#[derive(Args)]
struct PrepArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum, default_value = "title")]
    text_field: FieldArg,
    /// Known project names, one per line (added to the built-in list).
    #[arg(long)]
    projects_file: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[command(flatten)]
    prep: PrepArgs,
    #[arg(long, value_enum, default_value = "tfidf")]
    embedding: EmbeddingArg,
    /// Manifest of a dense embedding export (with --embedding dense).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    fit_scope: ScopeArg,
    /// Fraction of reports kept for training.
    #[arg(long, default_value_t = 0.8)]
    holdout_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TuneArgs {
    /// svm, lr, dt, rf, knn or all; comma-separated for several.
    #[arg(long, default_value = "all", value_parser = parse_families)]
    family: Families,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 5)]
    smote_k: usize,
    /// Oversample inside each training fold instead of once before CV.
    #[arg(long)]
    smote_per_fold: bool,
    #[arg(long, default_value = "f1", value_parser = parse_metric)]
    select_metric: MetricName,
    /// JSON array of model configs replacing the built-in grids.
    #[arg(long)]
    grid_override: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Local corpus to validate and convert.
    #[arg(long, conflicts_with = "remote_base", required_unless_present = "remote_base")]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<CorpusFormat>,
    /// Tracker base URL; reports are fetched from `<base>/bugs/<id>`.
    #[arg(long, requires = "ids")]
    remote_base: Option<String>,
    /// CSV with columns bug_id,project,is_bug,has_bic naming the reports to fetch.
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    /// Output corpus; the format follows the extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    prep: PrepArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Output of `embed`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    tune: TuneArgs,
    /// Overrides the seed recorded in the embedded data.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for training.json and models/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// training.json written by `train`.
    #[arg(long)]
    training: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tune: TuneArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json files; markdown output gets one section per input.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: ReportFormat,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct Families(Vec<Family>);

fn parse_families(s: &str) -> Result<Families, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Families(Family::ALL.to_vec()));
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let f: Family = part.parse().map_err(|e| format!("{e}"))?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err("no family given".into());
    }
    Ok(Families(out))
}

fn parse_metric(s: &str) -> Result<MetricName, String> {
    match s.to_ascii_lowercase().as_str() {
        "f1" => Ok(MetricName::F1),
        "auc" | "auc-roc" => Ok(MetricName::Auc),
        other => Err(format!("selection metric must be f1 or auc, got {other:?}")),
    }
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn exec_for(jobs: Option<usize>) -> Exec {
    configure_threads(jobs);
    if jobs == Some(1) {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_grid(path: &Path) -> Result<Vec<ModelConfig>> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing grid override {}", path.display()))
}

fn base_config(prep: &PrepArgs, out: &Path, exec: Exec, jobs: Option<usize>) -> RunConfig {
    let mut config = RunConfig::new(&prep.corpus.corpus, out);
    config.format = prep.corpus.format;
    config.text_field = prep.text_field.into();
    config.projects_file = prep.projects_file.clone();
    config.exec = exec;
    config.jobs = jobs;
    config
}

fn apply_data(config: &mut RunConfig, data: &DataArgs) -> Result<()> {
    config.embedding = match (data.embedding, &data.manifest) {
        (EmbeddingArg::Tfidf, None) => EmbeddingSource::Tfidf,
        (EmbeddingArg::Tfidf, Some(_)) => bail!("--manifest only applies to --embedding dense"),
        (EmbeddingArg::Dense, Some(m)) => EmbeddingSource::Dense { manifest: m.clone() },
        (EmbeddingArg::Dense, None) => bail!("--embedding dense requires --manifest"),
    };
    config.fit_scope = match data.fit_scope {
        ScopeArg::Full => FitScope::Full,
        ScopeArg::Train => FitScope::Train,
    };
    config.holdout_ratio = data.holdout_ratio;
    config.seed = data.seed;
    Ok(())
}

fn apply_tune(config: &mut RunConfig, tune: &TuneArgs) -> Result<()> {
    config.families = tune.family.0.clone();
    config.folds = tune.folds;
    config.smote_k = tune.smote_k;
    config.smote_per_fold = tune.smote_per_fold;
    config.select_metric = tune.select_metric;
    config.grid_override = tune.grid_override.as_deref().map(load_grid).transpose()?;
    Ok(())
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let corpus = match (&args.corpus, &args.remote_base, &args.ids) {
        (Some(path), _, _) => pipeline::load_corpus(path, args.format)?,
        (None, Some(base), Some(ids)) => fetch_remote(base, ids, Duration::from_secs(args.timeout))?,
        _ => bail!("give --corpus, or --remote-base with --ids"),
    };
    let format = CorpusFormat::from_path(&args.out);
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    corpus::save_corpus(&corpus, &args.out, format)?;
    let (neg, pos) = corpus.class_counts();
    println!(
        "{} reports ({pos} intrinsic, {neg} non-intrinsic), fingerprint {}",
        corpus.len(),
        corpus.fingerprint()
    );
    Ok(())
}

#[derive(serde::Deserialize)]
struct IdRow {
    bug_id: String,
    project: String,
    is_bug: u8,
    has_bic: u8,
}

fn fetch_remote(base: &str, ids: &Path, timeout: Duration) -> Result<Corpus> {
    let client = RemoteClient::new(base, timeout);
    let mut reader = csv::Reader::from_path(ids).with_context(|| format!("reading {}", ids.display()))?;
    let mut reports = Vec::new();
    for row in reader.deserialize() {
        let row: IdRow = row.with_context(|| format!("parsing {}", ids.display()))?;
        if row.is_bug > 1 || row.has_bic > 1 {
            bail!("{}: is_bug and has_bic must be 0 or 1", row.bug_id);
        }
        let fetched = client
            .fetch(&row.bug_id)
            .with_context(|| format!("fetching {}", row.bug_id))?;
        reports.push(fetched.into_report(&row.project, row.is_bug == 1, row.has_bic == 1));
    }
    Ok(Corpus::from_reports(reports)?)
}

fn preprocess(args: &PreprocessArgs, exec: Exec) -> Result<()> {
    let config = base_config(&args.prep, Path::new("."), exec, None);
    let corpus = pipeline::load_corpus(&config.corpus, config.format)?;
    let pre = pipeline::preprocessor_for(&corpus, config.projects_file.as_deref())?;
    let docs = pipeline::preprocess_corpus(&corpus, config.text_field, &pre, config.cache_dir.as_deref(), exec)?;
    let mut out = String::new();
    for d in &docs {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    write(&args.out, out.as_bytes())?;
    println!("{} documents", docs.len());
    Ok(())
}

fn embed(args: &EmbedArgs, exec: Exec) -> Result<()> {
    let mut config = base_config(&args.data.prep, Path::new("."), exec, None);
    apply_data(&mut config, &args.data)?;
    config.validate()?;
    let data = pipeline::prepare_data(&config)?;
    write(&args.out, data.to_json().as_bytes())?;
    println!(
        "{} features, {} train / {} test",
        data.matrix.n_cols(),
        data.split.train_indices.len(),
        data.split.test_indices.len()
    );
    Ok(())
}

fn load_data(path: &Path) -> Result<EmbeddedData> {
    EmbeddedData::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn train(args: &TrainArgs, exec: Exec, jobs: Option<usize>) -> Result<()> {
    let data = load_data(&args.data)?;
    let mut config = data.config.clone();
    config.exec = exec;
    config.jobs = jobs;
    config.out = args.out.clone();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    apply_tune(&mut config, &args.tune)?;
    let record = pipeline::train_stage(&config, &data)?;
    write(&args.out.join("training.json"), record.to_json().as_bytes())?;
    for f in &record.families {
        let path = args
            .out
            .join(pipeline::MODELS_DIR)
            .join(format!("{}.json", f.model.model.family()));
        write(&path, f.model.to_json().as_bytes())?;
        println!("{}: {}", f.grid.family, f.grid.best_config().summary());
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs, exec: Exec) -> Result<()> {
    let data = load_data(&args.data)?;
    let mut record = TrainingRecord::from_json(&read(&args.training)?)
        .with_context(|| format!("parsing {}", args.training.display()))?;
    record.config.exec = exec;
    let output = pipeline::evaluate_stage(&data, &record)?;
    pipeline::write_outputs(&args.out, &output)?;
    print!("{}", render_markdown(&output.report));
    Ok(())
}

fn run(args: &RunArgs, exec: Exec, jobs: Option<usize>) -> Result<()> {
    let mut config = base_config(&args.data.prep, &args.out, exec, jobs);
    apply_data(&mut config, &args.data)?;
    apply_tune(&mut config, &args.tune)?;
    let output = pipeline::run_to_dir(&config).with_context(|| {
        format!(
            "partial outputs are under {}",
            args.out.join(pipeline::QUARANTINE_DIR).display()
        )
    })?;
    print!("{}", render_markdown(&output.report));
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let reports = args
        .inputs
        .iter()
        .map(|p| EvalReport::from_json(&read(p)?).with_context(|| format!("parsing {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let text = match args.format {
        ReportFormat::Markdown => pipeline::render_markdown_many(&reports),
        ReportFormat::Json => {
            if reports.len() != 1 {
                bail!("json output takes exactly one input");
            }
            reports[0].to_json()
        }
    };
    match &args.out {
        Some(path) => write(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = exec_for(cli.jobs);
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Preprocess(a) => preprocess(a, exec),
        Command::Embed(a) => embed(a, exec),
        Command::Train(a) => train(a, exec, cli.jobs),
        Command::Evaluate(a) => evaluate(a, exec),
        Command::Run(a) => run(a, exec, cli.jobs),
        Command::Report(a) => report(a),
    }
}
