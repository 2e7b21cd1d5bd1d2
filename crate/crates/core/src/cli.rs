//! Command-line entry point. Every subcommand that writes a file also writes
//! `<output>.manifest.json` (or `run.manifest.json` inside an output
//! directory) with the resolved settings and input/output checksums.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, layered, PipelineConfig};
use crate::corpus::{self, LengthCaps, UnderstandingRecord, Variant};
use crate::datasets::{self, DatasetName, FsaDataset, Split};
use crate::eval::{self, Prediction, Subset, SubsetPolicy, ZeroshotPrediction};
use crate::jsonl::{read_jsonl, sha256_file, sha256_hex, write_jsonl};
use crate::llm_client::{
    self, BatchConfig, Backend, EndpointConfig, GenRequest, GenResult, GenStatus, HttpBackend,
    OfflineBackend, ResponseCache, RetryPolicy, TeacherTag,
};
use crate::parser::{self, FailureReason, PredPair, Task};
use crate::prompts::{default_demo_count, Demo, ModelFamily, PromptKind, TemplateSet};
use crate::report::{align, opt_count, pct};
use crate::sampler::{self, RawReview, SamplingScheme};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "fsa-distill", version, about = "Sentiment-understanding distillation pipeline and FSA benchmark tools")]
pub struct Cli {
    /// Pipeline config file (TOML). Defaults to $FSA_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a star-stratified review sample.
    Sample(SampleArgs),
    /// Run generation requests against the teacher endpoint (or cache).
    Generate(GenerateArgs),
    /// Build ICL or zero-shot requests for a benchmark split.
    Requests(RequestsArgs),
    /// Parse generation results into records or predictions.
    Parse(ParseArgs),
    /// Assemble pretraining pairs into a sharded corpus.
    BuildCorpus(BuildCorpusArgs),
    /// Dataset statistics, or corpus statistics with --corpus.
    Stats(StatsArgs),
    /// Convert SemEval XML into the canonical JSONL layout.
    Convert(ConvertArgs),
    /// Micro F1 of extraction predictions.
    Evaluate(EvaluateArgs),
    /// Accuracy of zero-shot predictions.
    ZeroshotEval(ZeroshotEvalArgs),
    /// Aggregate two-annotator human evaluation scores.
    HumanevalAggregate(HumanevalArgs),
    /// Error-type proportions over sampled wrong predictions.
    ErrorReport(ErrorReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub reviews: Option<PathBuf>,
    /// Sampling scheme, e.g. R12421.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(short = 'n', long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Allow repeats once a star bucket is exhausted.
    #[arg(long)]
    pub refill: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GenPrompt {
    Analysis,
    Rewriting,
}

impl GenPrompt {
    fn kind(self) -> PromptKind {
        match self {
            GenPrompt::Analysis => PromptKind::Analysis,
            GenPrompt::Rewriting => PromptKind::Rewriting,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Reviews to render analysis/rewriting prompts for.
    #[arg(long, conflicts_with = "requests")]
    pub reviews: Option<PathBuf>,
    /// Pre-built requests (from `requests`).
    #[arg(long)]
    pub requests: Option<PathBuf>,
    #[arg(long = "prompt", value_enum)]
    pub prompts: Vec<GenPrompt>,
    #[arg(long)]
    pub teacher: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Template directory with a MANIFEST; defaults to the bundled templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Serve from the cache only; misses fail without network traffic.
    #[arg(long)]
    pub offline: bool,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    #[arg(long)]
    pub temperature: Option<f32>,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestMode {
    Icl,
    Zeroshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Chat,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl SplitArg {
    fn split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    #[arg(long)]
    pub dataset: DatasetName,
    /// Canonical dataset directory; defaults to <paths.datasets>/<dataset>.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Hard-set directory to merge into the test split; defaults to
    /// <paths.datasets>/<hard set> when it exists.
    #[arg(long)]
    pub hard_dir: Option<PathBuf>,
    /// Do not merge the hard set.
    #[arg(long)]
    pub no_hard: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RequestsArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum)]
    pub mode: RequestMode,
    #[arg(long, value_enum, default_value = "chat")]
    pub family: FamilyArg,
    /// Number of ICL demonstrations drawn from train.
    #[arg(long)]
    pub demos: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub teacher: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f32>,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ParseArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Needed for ASA ICL results (category space).
    #[arg(long)]
    pub dataset: Option<DatasetName>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Write one line per failed or partial parse here.
    #[arg(long)]
    pub failures: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildCorpusArgs {
    #[arg(long, required = true)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub reviews: Option<PathBuf>,
    #[arg(long)]
    pub variant: Variant,
    #[arg(long)]
    pub teacher: Option<String>,
    #[arg(long, default_value_t = corpus::SHARD_SIZE)]
    pub shard_size: usize,
    #[arg(long, default_value_t = corpus::INPUT_CAP)]
    pub input_cap: usize,
    #[arg(long, default_value_t = corpus::OUTPUT_CAP)]
    pub output_cap: usize,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    pub dataset: Option<DatasetName>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub hard_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_hard: bool,
    /// Corpus directory (written by build-corpus).
    #[arg(long, conflicts_with = "dataset")]
    pub corpus: Option<PathBuf>,
    /// JSON report path; the text table always goes to stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    #[arg(long)]
    pub dataset: DatasetName,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Opinion-word annotations, JSONL of {sentence_id, first, opinion_words}.
    #[arg(long)]
    pub opinions: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// One prediction file per run; several are averaged.
    #[arg(long = "preds", required = true)]
    pub preds: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "all,imp,mul")]
    pub subset: Vec<Subset>,
    #[arg(long, default_value = "sentence")]
    pub policy: SubsetPolicy,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ZeroshotEvalArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long = "preds", required = true)]
    pub preds: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "all,imp,mul")]
    pub subset: Vec<Subset>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct HumanevalArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ErrorReportArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of wrong predictions sampled for labeling.
    #[arg(long)]
    pub total: usize,
    /// Row label for the text table.
    #[arg(long, default_value = "model")]
    pub setting: String,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub settings: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: serde_json::Value,
}

/// Checksum of a file, or of a directory as the hash of its sorted
/// `relative-path checksum` listing.
fn digest(path: &Path) -> Result<FileDigest> {
    let sha256 = if path.is_dir() {
        let mut entries = Vec::new();
        collect_files(path, path, &mut entries)?;
        entries.sort();
        sha256_hex(entries.join("\n").as_bytes())
    } else {
        sha256_file(path).with_context(|| format!("reading {}", path.display()))?
    };
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256,
    })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST) {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            out.push(format!("{} {}", rel.display(), sha256_file(&path)?));
        }
    }
    Ok(())
}

pub const RUN_MANIFEST: &str = "run.manifest.json";

pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join(RUN_MANIFEST)
    } else {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }
}

fn write_manifest(
    command: &str,
    settings: &impl Serialize,
    inputs: &[&Path],
    outputs: &[&Path],
    summary: serde_json::Value,
) -> Result<()> {
    let Some(primary) = outputs.first() else {
        return Ok(());
    };
    let manifest = RunManifest {
        tool: TOOL.to_string(),
        version: VERSION.to_string(),
        command: command.to_string(),
        settings: serde_json::to_value(settings)?,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
        summary,
    };
    let path = manifest_path(primary);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn distinct_output(output: &Path, inputs: &[&Path]) -> Result<()> {
    if inputs.contains(&output) {
        bail!("output {} is also an input", output.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parses `argv` and runs the command; returns the process exit code
/// (0 ok, 1 validation or data error, 2 usage error).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            // Most error types already quote their source; print each cause once.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg.push_str(": ");
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::discover(cli.config.as_deref())?;
    match cli.command {
        Command::Sample(a) => cmd_sample(a, &cfg),
        Command::Generate(a) => cmd_generate(a, &cfg),
        Command::Requests(a) => cmd_requests(a, &cfg),
        Command::Parse(a) => cmd_parse(a, &cfg),
        Command::BuildCorpus(a) => cmd_build_corpus(a, &cfg),
        Command::Stats(a) => cmd_stats(a, &cfg),
        Command::Convert(a) => cmd_convert(a),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg),
        Command::ZeroshotEval(a) => cmd_zeroshot_eval(a, &cfg),
        Command::HumanevalAggregate(a) => cmd_humaneval(a),
        Command::ErrorReport(a) => cmd_error_report(a),
    }
}

fn required<T>(v: Option<T>, what: &str) -> Result<T> {
    v.with_context(|| format!("{what} not set (flag, environment or config file)"))
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn cmd_sample(mut a: SampleArgs, cfg: &PipelineConfig) -> Result<()> {
    a.reviews = a.reviews.or_else(|| cfg.paths.reviews.clone());
    a.scheme = a.scheme.or_else(|| cfg.scheme.clone());
    a.n = a.n.or(cfg.n);
    a.seed = layered(a.seed, config::ENV_SEED, cfg.seed)?;
    let reviews_path = required(a.reviews.clone(), "--reviews")?;
    let scheme: SamplingScheme = required(a.scheme.clone(), "--scheme")?.parse()?;
    let n = required(a.n, "-n")?;
    let seed = required(a.seed, "--seed")?;
    distinct_output(&a.output, &[&reviews_path])?;

    let pool: Vec<RawReview> = read_jsonl(&reviews_path)?;
    sampler::validate_pool(&pool)?;
    let outcome = if a.refill {
        sampler::stratified_sample_with_refill(&pool, &scheme, n, seed)?
    } else {
        sampler::stratified_sample(&pool, &scheme, n, seed)?
    };
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    write_jsonl(&a.output, &outcome.reviews)?;
    let hist = sampler::star_histogram(&outcome.reviews);
    println!(
        "sampled {} of {} reviews with {scheme}; stars 1-5: {:?}",
        outcome.reviews.len(),
        pool.len(),
        hist
    );
    write_manifest(
        "sample",
        &a,
        &[&reviews_path],
        &[&a.output],
        json!({"pool": pool.len(), "sampled": outcome.reviews.len(), "star_histogram": hist, "warnings": outcome.warnings}),
    )
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct GenerateSettings<'a> {
    #[serde(flatten)]
    args: &'a GenerateArgs,
    teacher: String,
    model: String,
    templates: Option<String>,
}

fn decode_params(temperature: Option<f32>, max_new_tokens: Option<u32>, cfg: &PipelineConfig) -> (f32, u32) {
    (
        temperature
            .or(cfg.temperature)
            .unwrap_or(llm_client::DEFAULT_TEMPERATURE),
        max_new_tokens
            .or(cfg.max_new_tokens)
            .unwrap_or(llm_client::DEFAULT_MAX_NEW_TOKENS),
    )
}

fn load_templates(dir: Option<&Path>) -> Result<TemplateSet> {
    Ok(match dir {
        Some(d) => TemplateSet::load_dir(d)?,
        None => TemplateSet::bundled()?,
    })
}

fn cmd_generate(mut a: GenerateArgs, cfg: &PipelineConfig) -> Result<()> {
    let teacher: TeacherTag = required(
        layered(a.teacher.clone(), config::ENV_TEACHER, cfg.teacher.clone())?,
        "--teacher",
    )?
    .parse()
    .unwrap_or_else(|e| match e {});
    let model = layered(a.model.clone(), config::ENV_MODEL, cfg.model.clone())?
        .unwrap_or_else(|| teacher.to_string());
    a.cache = layered(a.cache.clone(), config::ENV_CACHE, cfg.paths.cache.clone())?;
    a.endpoint = layered(a.endpoint.clone(), config::ENV_ENDPOINT, cfg.endpoint.url.clone())?;
    a.budget = layered(a.budget, config::ENV_BUDGET, cfg.budget)?;
    a.max_in_flight = layered(a.max_in_flight, config::ENV_MAX_IN_FLIGHT, cfg.max_in_flight)?;
    let (temperature, max_new_tokens) = decode_params(a.temperature, a.max_new_tokens, cfg);
    a.temperature = Some(temperature);
    a.max_new_tokens = Some(max_new_tokens);
    let api_key = layered(None, config::ENV_API_KEY, cfg.endpoint.api_key.clone())?;

    if a.endpoint.is_none() && !a.offline {
        bail!("no endpoint configured; pass --endpoint (or set {}) or run with --offline", config::ENV_ENDPOINT);
    }
    let mut fingerprint = None;
    let requests: Vec<GenRequest> = match (&a.reviews, &a.requests) {
        (Some(path), None) => {
            if a.prompts.is_empty() {
                bail!("--prompt analysis and/or --prompt rewriting is required with --reviews");
            }
            let templates = load_templates(a.templates.as_deref())?;
            fingerprint = Some(templates.fingerprint.clone());
            let reviews: Vec<RawReview> = read_jsonl(path)?;
            sampler::validate_pool(&reviews)?;
            let mut out = Vec::with_capacity(reviews.len() * a.prompts.len());
            for p in &a.prompts {
                let kind = p.kind();
                for r in &reviews {
                    out.push(GenRequest {
                        request_id: format!("{}:{}", kind.tag(), r.id),
                        prompt: templates.render_generation(kind, &r.text)?,
                        model: model.clone(),
                        max_new_tokens,
                        temperature,
                        teacher_tag: teacher.clone(),
                        review_id: Some(r.id.clone()),
                        prompt_kind: Some(kind),
                        instance: None,
                    });
                }
            }
            out
        }
        (None, Some(path)) => read_jsonl(path)?,
        _ => bail!("exactly one of --reviews or --requests is required"),
    };

    let batch = BatchConfig {
        max_in_flight: a.max_in_flight.unwrap_or(8),
        retry: RetryPolicy {
            max_attempts: a.max_attempts.or(cfg.max_attempts).unwrap_or(4),
            base_backoff: Duration::from_millis(a.backoff_ms.or(cfg.backoff_ms).unwrap_or(500)),
        },
        budget: a.budget,
    };
    let cache = a
        .cache
        .as_deref()
        .map(ResponseCache::open)
        .transpose()?;
    let inputs: Vec<PathBuf> = a.reviews.iter().chain(a.requests.iter()).cloned().collect();
    distinct_output(&a.output, &inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    let progress = |r: &GenResult| log::debug!("{} {:?}", r.request_id, r.status);
    let mut results = match (&a.endpoint, a.offline) {
        (Some(url), false) => {
            let backend = HttpBackend::new(&EndpointConfig {
                url: url.clone(),
                api_key,
                timeout_secs: cfg.endpoint.timeout_secs.unwrap_or(120),
            })?;
            rt.block_on(run_batch(&backend, &requests, &batch, cache.as_ref(), progress))?
        }
        _ => rt.block_on(run_batch(&OfflineBackend, &requests, &batch, cache.as_ref(), progress))?,
    };
    llm_client::sort_by_requests(&mut results, &requests);
    write_jsonl(&a.output, &results)?;

    let count = |s: GenStatus| results.iter().filter(|r| r.status == s).count();
    let cached = results.iter().filter(|r| r.cached).count();
    let summary = json!({
        "requests": requests.len(),
        "ok": count(GenStatus::Ok),
        "failed_after_retries": count(GenStatus::FailedAfterRetries),
        "over_budget": count(GenStatus::OverBudget),
        "cached": cached,
        "offline": a.offline,
        "issued": if a.offline { 0 } else { results.iter().filter(|r| !r.cached && r.status != GenStatus::OverBudget).count() },
    });
    println!("{summary}");
    if count(GenStatus::FailedAfterRetries) > 0 {
        log::warn!("{} request(s) failed; see the error field in {}", count(GenStatus::FailedAfterRetries), a.output.display());
    }
    let settings = GenerateSettings {
        args: &a,
        teacher: teacher.to_string(),
        model,
        templates: fingerprint,
    };
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest("generate", &settings, &input_refs, &[&a.output], summary)
}

async fn run_batch<B: Backend>(
    backend: &B,
    requests: &[GenRequest],
    batch: &BatchConfig,
    cache: Option<&ResponseCache>,
    progress: impl FnMut(&GenResult),
) -> Result<Vec<GenResult>> {
    Ok(llm_client::generate_batch(backend, requests, batch, cache, progress).await?)
}

// ---------------------------------------------------------------------------
// datasets helpers
// ---------------------------------------------------------------------------

fn dataset_dir(name: DatasetName, explicit: Option<&Path>, cfg: &PipelineConfig) -> Result<PathBuf> {
    match (explicit, &cfg.paths.datasets) {
        (Some(d), _) => Ok(d.to_path_buf()),
        (None, Some(root)) => Ok(root.join(name.as_str())),
        (None, None) => bail!("--data-dir not set and no paths.datasets in the config"),
    }
}

/// Loads a dataset with its hard set merged when one is available. Returns
/// the dataset and the directories read.
fn load_for_eval(d: &DatasetArgs, cfg: &PipelineConfig) -> Result<(FsaDataset, Vec<PathBuf>)> {
    let dir = dataset_dir(d.dataset, d.data_dir.as_deref(), cfg)?;
    let mut read = vec![dir.clone()];
    let base = datasets::load_dataset(&dir, d.dataset)
        .with_context(|| format!("loading {} from {}", d.dataset, dir.display()))?;
    if d.no_hard {
        return Ok((base, read));
    }
    let hard_dir = match (&d.hard_dir, d.dataset.hard_set(), &cfg.paths.datasets) {
        (Some(h), _, _) => Some(h.clone()),
        (None, Some(hs), Some(root)) if root.join(hs.as_str()).is_dir() => Some(root.join(hs.as_str())),
        _ => None,
    };
    match (hard_dir, d.dataset.hard_set()) {
        (Some(hd), Some(hs)) => {
            let hard = datasets::load_dataset(&hd, hs)
                .with_context(|| format!("loading {hs} from {}", hd.display()))?;
            read.push(hd);
            Ok((datasets::merge_hard(&base, &hard)?, read))
        }
        _ => Ok((base, read)),
    }
}

// ---------------------------------------------------------------------------
// requests
// ---------------------------------------------------------------------------

fn icl_demo(sample: &datasets::FsaSample, task: Task) -> Demo {
    let pairs: Vec<(String, parser::Polarity)> = sample
        .pairs
        .iter()
        .filter(|p| !(task == Task::Tsa && p.is_null_target()))
        .map(|p| (p.first.clone(), p.polarity))
        .collect();
    Demo {
        review: sample.sentence.clone(),
        completion: parser::format_pair_list(&pairs),
    }
}

fn cmd_requests(mut a: RequestsArgs, cfg: &PipelineConfig) -> Result<()> {
    let teacher: TeacherTag = required(
        layered(a.teacher.clone(), config::ENV_TEACHER, cfg.teacher.clone())?,
        "--teacher",
    )?
    .parse()
    .unwrap_or_else(|e| match e {});
    let model = layered(a.model.clone(), config::ENV_MODEL, cfg.model.clone())?
        .unwrap_or_else(|| teacher.to_string());
    a.seed = layered(a.seed, config::ENV_SEED, cfg.seed)?;
    let (temperature, max_new_tokens) = decode_params(a.temperature, a.max_new_tokens, cfg);
    let templates = load_templates(a.templates.as_deref())?;
    let (ds, read) = load_for_eval(&a.data, cfg)?;
    let task = ds.task();
    let samples = ds.split(a.split.split());

    let mut requests = Vec::new();
    let make = |id: String, prompt: String, kind: PromptKind, sid: &str, instance: Option<String>| GenRequest {
        request_id: id,
        prompt,
        model: model.clone(),
        max_new_tokens,
        temperature,
        teacher_tag: teacher.clone(),
        review_id: Some(sid.to_string()),
        prompt_kind: Some(kind),
        instance,
    };
    match a.mode {
        RequestMode::Icl => {
            let k = a.demos.unwrap_or_else(|| default_demo_count(ds.name));
            let seed = required(a.seed, "--seed")?;
            let demos: Vec<Demo> = sampler::choose_demos(&ds.train, k, seed)
                .iter()
                .map(|s| icl_demo(s, task))
                .collect();
            if demos.len() < k {
                log::warn!("only {} training samples available for {k} demonstrations", demos.len());
            }
            let kind = match task {
                Task::Tsa => PromptKind::IclTsa,
                Task::Asa => PromptKind::IclAsa,
            };
            let space = (task == Task::Asa).then_some(ds.category_space.as_slice());
            for s in samples {
                let prompt = templates.render_icl(task, &s.sentence, &demos, space)?;
                requests.push(make(format!("{}:{}", kind.tag(), s.sentence_id), prompt, kind, &s.sentence_id, None));
            }
        }
        RequestMode::Zeroshot => {
            let family = match a.family {
                FamilyArg::Chat => ModelFamily::ChatApi,
                FamilyArg::Open => ModelFamily::OpenLm,
            };
            let kind = match task {
                Task::Tsa => PromptKind::ZeroshotTsa,
                Task::Asa => PromptKind::ZeroshotAsa,
            };
            for s in samples {
                let mut seen = std::collections::HashSet::new();
                for p in &s.pairs {
                    if task == Task::Tsa && p.is_null_target() {
                        continue;
                    }
                    if !seen.insert(p.key()) {
                        continue;
                    }
                    let prompt = templates.render_zeroshot(task, &s.sentence, &p.first, family)?;
                    let id = format!("{}:{}:{}", kind.tag(), s.sentence_id, seen.len() - 1);
                    requests.push(make(id, prompt, kind, &s.sentence_id, Some(p.first.clone())));
                }
            }
        }
    }
    write_jsonl(&a.output, &requests)?;
    println!("{} requests for {} {}", requests.len(), ds.name, a.split.split().as_str());
    let refs: Vec<&Path> = read.iter().map(PathBuf::as_path).collect();
    write_manifest(
        "requests",
        &json!({"args": &a, "teacher": teacher, "model": model, "templates": templates.fingerprint}),
        &refs,
        &[&a.output],
        json!({"requests": requests.len()}),
    )
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureLine {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_id: Option<String>,
    pub reason: String,
    pub salvaged: usize,
    pub detail: String,
    pub raw_text: String,
}

#[derive(Debug, Default, Serialize)]
struct ParseSummary {
    results: usize,
    not_generated: usize,
    parsed: usize,
    salvaged_partial: usize,
    failed: usize,
    reasons: BTreeMap<String, usize>,
}

fn reason_name(r: FailureReason) -> &'static str {
    match r {
        FailureReason::NoStructureFound => "no_structure_found",
        FailureReason::BadLabel => "bad_label",
        FailureReason::Truncated => "truncated",
        FailureReason::SalvagePartial => "salvage_partial",
    }
}

fn cmd_parse(a: ParseArgs, cfg: &PipelineConfig) -> Result<()> {
    distinct_output(&a.output, &[&a.results])?;
    let results: Vec<GenResult> = read_jsonl(&a.results)?;
    let kinds: std::collections::BTreeSet<PromptKind> =
        results.iter().filter_map(|r| r.prompt_kind).collect();
    let generation = kinds
        .iter()
        .all(|k| matches!(k, PromptKind::Analysis | PromptKind::Rewriting));
    let icl = kinds.iter().all(|k| matches!(k, PromptKind::IclTsa | PromptKind::IclAsa));
    let zeroshot = kinds
        .iter()
        .all(|k| matches!(k, PromptKind::ZeroshotTsa | PromptKind::ZeroshotAsa));
    if results.iter().any(|r| r.prompt_kind.is_none()) {
        bail!("{}: results without prompt_kind cannot be parsed", a.results.display());
    }
    if !(generation || icl || zeroshot) {
        bail!("{}: mixed prompt kinds {kinds:?}", a.results.display());
    }

    let mut summary = ParseSummary {
        results: results.len(),
        ..Default::default()
    };
    let mut failures = Vec::new();
    let mut inputs: Vec<PathBuf> = vec![a.results.clone()];
    let mut note_failure = |r: &GenResult, reason: FailureReason, salvaged: usize, detail: String, summary: &mut ParseSummary| {
        *summary.reasons.entry(reason_name(reason).to_string()).or_default() += 1;
        failures.push(FailureLine {
            request_id: r.request_id.clone(),
            review_id: r.review_id.clone(),
            reason: reason_name(reason).to_string(),
            salvaged,
            detail,
            raw_text: r.text.clone().unwrap_or_default(),
        });
    };

    let category_space: Option<Vec<String>> = match (a.dataset, kinds.contains(&PromptKind::IclAsa)) {
        (Some(name), true) => {
            let dir = dataset_dir(name, a.data_dir.as_deref(), cfg)?;
            inputs.push(dir.clone());
            Some(datasets::load_dataset(&dir, name)?.category_space)
        }
        (None, true) => {
            log::warn!("no --dataset given; ASA predictions are not checked against a category space");
            None
        }
        _ => None,
    };

    let written: usize;
    if generation {
        let mut records = Vec::new();
        for r in &results {
            let (Some(text), Some(kind), Some(review_id)) = (&r.text, r.prompt_kind, &r.review_id) else {
                summary.not_generated += 1;
                continue;
            };
            let rec = |quadruples, rewrite| UnderstandingRecord {
                review_id: review_id.clone(),
                teacher: r.teacher_tag.clone(),
                prompt_kind: kind,
                quadruples,
                rewrite,
            };
            match kind {
                PromptKind::Analysis => match parser::parse_analysis(text) {
                    Ok(q) => {
                        summary.parsed += 1;
                        records.push(rec(Some(q), None));
                    }
                    Err(f) => {
                        let n = f.salvaged.len();
                        note_failure(r, f.reason, n, f.detail.clone(), &mut summary);
                        if n > 0 {
                            summary.salvaged_partial += 1;
                            records.push(rec(Some(f.salvaged), None));
                        } else {
                            summary.failed += 1;
                        }
                    }
                },
                _ => match parser::clean_rewrite(text) {
                    Some(t) => {
                        summary.parsed += 1;
                        records.push(rec(None, Some(t)));
                    }
                    None => {
                        summary.failed += 1;
                        note_failure(r, FailureReason::NoStructureFound, 0, "empty rewrite".into(), &mut summary);
                    }
                },
            }
        }
        write_jsonl(&a.output, &records)?;
        written = records.len();
    } else if icl {
        let mut preds = Vec::new();
        for r in &results {
            let sid = r.review_id.clone().unwrap_or_else(|| r.request_id.clone());
            let task = match r.prompt_kind {
                Some(PromptKind::IclAsa) => Task::Asa,
                _ => Task::Tsa,
            };
            let pairs = match &r.text {
                None => {
                    summary.not_generated += 1;
                    Vec::new()
                }
                Some(text) => match parser::parse_pair_list(text, task, category_space.as_deref()) {
                    Ok(p) => {
                        summary.parsed += 1;
                        p
                    }
                    Err(f) => {
                        let n = f.salvaged.len();
                        note_failure(r, f.reason, n, f.detail.clone(), &mut summary);
                        if n > 0 {
                            summary.salvaged_partial += 1;
                        } else {
                            summary.failed += 1;
                        }
                        f.salvaged
                    }
                },
            };
            preds.push(Prediction { sentence_id: sid, pairs });
        }
        write_jsonl(&a.output, &preds)?;
        written = preds.len();
    } else {
        let mut preds = Vec::new();
        for r in &results {
            let task = match r.prompt_kind {
                Some(PromptKind::ZeroshotAsa) => Task::Asa,
                _ => Task::Tsa,
            };
            let (Some(text), Some(sid), Some(first)) = (&r.text, &r.review_id, &r.instance) else {
                summary.not_generated += 1;
                continue;
            };
            match parser::parse_label(text, task) {
                Some(polarity) => {
                    summary.parsed += 1;
                    preds.push(ZeroshotPrediction {
                        sentence_id: sid.clone(),
                        first: first.clone(),
                        polarity,
                    });
                }
                None => {
                    summary.failed += 1;
                    note_failure(r, FailureReason::BadLabel, 0, "no label found".into(), &mut summary);
                }
            }
        }
        write_jsonl(&a.output, &preds)?;
        written = preds.len();
    }

    let mut outputs: Vec<&Path> = vec![&a.output];
    if let Some(fp) = &a.failures {
        write_jsonl(fp, &failures)?;
        outputs.push(fp);
    }
    println!(
        "{} results: {} parsed, {} partially salvaged, {} failed, {} not generated; {written} lines written",
        summary.results, summary.parsed, summary.salvaged_partial, summary.failed, summary.not_generated
    );
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest("parse", &a, &refs, &outputs, serde_json::to_value(&summary)?)
}

// ---------------------------------------------------------------------------
// build-corpus
// ---------------------------------------------------------------------------

fn cmd_build_corpus(mut a: BuildCorpusArgs, cfg: &PipelineConfig) -> Result<()> {
    a.reviews = a.reviews.or_else(|| cfg.paths.reviews.clone());
    a.output = a.output.or_else(|| cfg.paths.corpus.clone());
    let reviews_path = required(a.reviews.clone(), "--reviews")?;
    let out = required(a.output.clone(), "--output")?;
    let mut inputs: Vec<&Path> = a.records.iter().map(PathBuf::as_path).collect();
    inputs.push(&reviews_path);
    distinct_output(&out, &inputs)?;
    let teacher: Option<TeacherTag> = a.teacher.as_deref().map(|t| t.parse().unwrap_or_else(|e| match e {}));

    let reviews: Vec<RawReview> = read_jsonl(&reviews_path)?;
    let index = sampler::index_by_id(&reviews);
    let mut records: Vec<UnderstandingRecord> = Vec::new();
    for p in &a.records {
        records.extend(read_jsonl::<UnderstandingRecord>(p)?);
    }
    let caps = LengthCaps {
        input: a.input_cap,
        output: a.output_cap,
    };
    let (pairs, build) = corpus::build_pairs(&records, &index, a.variant, teacher.as_ref(), caps);
    if out.join(RUN_MANIFEST).exists() || out.join(corpus::MANIFEST_FILE).exists() {
        // Stale shards from a bigger earlier build would survive otherwise.
        for entry in std::fs::read_dir(&out)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("shard-") && name.ends_with(".jsonl") {
                std::fs::remove_file(&path)?;
            }
        }
    }
    let manifest = corpus::write_corpus(&pairs, &out, a.shard_size, a.variant, teacher, caps, build)?;
    print!("{}", corpus::format_stats_table(&manifest.stats));
    println!(
        "{} pairs in {} shard(s); truncated x {}, u {}; skipped: {} missing review, {} empty",
        manifest.total_pairs,
        manifest.shards.len(),
        manifest.build.truncated_x,
        manifest.build.truncated_u,
        manifest.build.missing_review,
        manifest.build.empty_output
    );
    write_manifest(
        "build-corpus",
        &a,
        &inputs,
        &[&out],
        json!({"pairs": manifest.total_pairs, "build": manifest.build}),
    )
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

fn stats_rows(st: &datasets::DatasetStats) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "Split".to_string(),
        "#Sent".to_string(),
        "#Trg".to_string(),
        "#Asp".to_string(),
        "#Imp".to_string(),
        "#Mul".to_string(),
    ]];
    let mut push = |label: &str, s: &datasets::SplitStats| {
        rows.push(vec![
            label.to_string(),
            s.sentences.to_string(),
            opt_count(s.targets),
            opt_count(s.aspects),
            opt_count(s.implicit),
            s.multiple.to_string(),
        ]);
    };
    if st.train.sentences > 0 {
        push("Train", &st.train);
    }
    if st.dev.sentences > 0 {
        push("Dev", &st.dev);
    }
    match (&st.test_original, &st.test_hard) {
        (Some(o), Some(h)) => {
            push("Test (original)", o);
            push("Test (hard)", h);
            push("Test (merged)", &st.test);
        }
        _ => push("Test", &st.test),
    }
    rows
}

fn cmd_stats(a: StatsArgs, cfg: &PipelineConfig) -> Result<()> {
    if let Some(dir) = &a.corpus {
        let (manifest, pairs) = corpus::read_corpus(dir)?;
        let stats = corpus::corpus_stats(&pairs);
        print!("{}", corpus::format_stats_table(&stats));
        println!("total {} pairs ({} variant)", stats.total, manifest.variant);
        if let Some(out) = &a.output {
            write_json(out, &stats)?;
            write_manifest("stats", &a, &[dir], &[out], json!({"pairs": stats.total}))?;
        }
        return Ok(());
    }
    let name = required(a.dataset, "dataset name or --corpus")?;
    let d = DatasetArgs {
        dataset: name,
        data_dir: a.data_dir.clone(),
        hard_dir: a.hard_dir.clone(),
        no_hard: a.no_hard || name.is_hard(),
    };
    let (ds, read) = load_for_eval(&d, cfg)?;
    let st = datasets::dataset_stats(&ds);
    println!("{}", name.title());
    print!("{}", align(&stats_rows(&st)));
    if let Some(pairs) = st.test.implicit_pairs {
        println!(
            "implicit test pairs: {pairs} (sample-level #Imp counts {})",
            opt_count(st.test.implicit)
        );
    }
    if st.test.null_targets > 0 {
        println!("pairs without an explicit target in test: {}", st.test.null_targets);
    }
    let diffs = datasets::discrepancies(&st);
    for d in &diffs {
        println!("discrepancy: {d}");
    }
    if let Some(out) = &a.output {
        write_json(out, &json!({"stats": st, "discrepancies": diffs}))?;
        let refs: Vec<&Path> = read.iter().map(PathBuf::as_path).collect();
        write_manifest("stats", &a, &refs, &[out], json!({"discrepancies": diffs.len()}))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convert
// ---------------------------------------------------------------------------

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let mut splits = Vec::new();
    for (split, path) in [(Split::Train, &a.train), (Split::Dev, &a.dev), (Split::Test, &a.test)] {
        if let Some(p) = path {
            splits.push((split, p.clone()));
        }
    }
    if splits.is_empty() {
        bail!("at least one of --train, --dev, --test is required");
    }
    let ds = datasets::convert_semeval(a.dataset, &splits, a.opinions.as_deref())?;
    std::fs::create_dir_all(&a.output)?;
    datasets::save_dataset(&ds, &a.output)?;
    // Reload to apply the same validation as any other consumer.
    let back = datasets::load_dataset(&a.output, a.dataset)?;
    let st = datasets::dataset_stats(&back);
    print!("{}", align(&stats_rows(&st)));
    let mut inputs: Vec<&Path> = splits.iter().map(|(_, p)| p.as_path()).collect();
    if let Some(o) = &a.opinions {
        inputs.push(o);
    }
    write_manifest("convert", &a, &inputs, &[&a.output], serde_json::to_value(&st)?)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum PredLine {
    Pairs(Prediction),
    Completion { sentence_id: String, completion: String },
}

/// Reads extraction predictions; raw completions are parsed, and a completion
/// that yields nothing counts as an empty prediction.
fn read_predictions(path: &Path, task: Task, space: Option<&[String]>) -> Result<(Vec<Prediction>, usize)> {
    let lines: Vec<PredLine> = read_jsonl(path)?;
    let mut failed = 0;
    let preds = lines
        .into_iter()
        .map(|l| match l {
            PredLine::Pairs(p) => p,
            PredLine::Completion { sentence_id, completion } => {
                let pairs: Vec<PredPair> = match parser::parse_pair_list(&completion, task, space) {
                    Ok(p) => p,
                    Err(f) => {
                        failed += 1;
                        f.salvaged
                    }
                };
                Prediction { sentence_id, pairs }
            }
        })
        .collect();
    Ok((preds, failed))
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &PipelineConfig) -> Result<()> {
    let (ds, read) = load_for_eval(&a.data, cfg)?;
    let task = ds.task();
    let gold = ds.split(a.split.split());
    let space = (task == Task::Asa).then_some(ds.category_space.as_slice());
    let mut runs = Vec::new();
    let mut table = Vec::new();
    for path in &a.preds {
        let (preds, parse_failures) = read_predictions(path, task, space)?;
        let reports = a
            .subset
            .iter()
            .map(|s| eval::pair_f1(&preds, gold, task, *s, a.policy))
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("scoring {}", path.display()))?;
        table.push((path.display().to_string(), reports.clone()));
        runs.push(json!({"preds": path.display().to_string(), "parse_failures": parse_failures, "reports": reports}));
    }
    let mut aggregate = BTreeMap::new();
    for (i, s) in a.subset.iter().enumerate() {
        let f1s: Vec<f64> = table.iter().map(|(_, r)| r[i].score.f1).collect();
        aggregate.insert(s.as_str(), eval::aggregate_runs(&f1s)?);
    }
    if table.len() > 1 {
        let mean_row: Vec<eval::F1Report> = a
            .subset
            .iter()
            .map(|s| {
                let mut r = table[0].1.iter().find(|r| r.subset == *s).cloned().expect("subset scored");
                r.score.f1 = aggregate[s.as_str()].mean;
                r
            })
            .collect();
        table.push((format!("mean of {}", a.preds.len()), mean_row));
    }
    println!("{} {} (subset policy: {:?})", ds.name.title(), a.split.split().as_str(), a.policy);
    print!("{}", eval::format_f1_table(&table));
    let report = json!({
        "dataset": ds.name,
        "split": a.split.split().as_str(),
        "task": task,
        "policy": a.policy,
        "runs": runs,
        "aggregate": aggregate,
    });
    if let Some(out) = &a.output {
        write_json(out, &report)?;
        let mut inputs: Vec<&Path> = read.iter().map(PathBuf::as_path).collect();
        inputs.extend(a.preds.iter().map(PathBuf::as_path));
        write_manifest("evaluate", &a, &inputs, &[out], json!({"runs": a.preds.len()}))?;
    }
    Ok(())
}

fn cmd_zeroshot_eval(a: ZeroshotEvalArgs, cfg: &PipelineConfig) -> Result<()> {
    let (ds, read) = load_for_eval(&a.data, cfg)?;
    let task = ds.task();
    let gold = ds.split(a.split.split());
    let mut runs = Vec::new();
    let mut per_subset: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut rows = vec![std::iter::once("Preds".to_string())
        .chain(a.subset.iter().map(|s| s.as_str().to_string()))
        .collect::<Vec<_>>()];
    for path in &a.preds {
        let preds: Vec<ZeroshotPrediction> = read_jsonl(path)?;
        let reports = a
            .subset
            .iter()
            .map(|s| eval::zeroshot_accuracy(&preds, gold, task, *s))
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("scoring {}", path.display()))?;
        let mut row = vec![path.display().to_string()];
        for r in &reports {
            per_subset.entry(r.subset.as_str()).or_default().push(r.accuracy);
            row.push(pct(r.accuracy));
        }
        rows.push(row);
        runs.push(json!({"preds": path.display().to_string(), "reports": reports}));
    }
    let aggregate: BTreeMap<&str, eval::RunSummary> = per_subset
        .iter()
        .map(|(k, v)| Ok((*k, eval::aggregate_runs(v)?)))
        .collect::<Result<_, eval::EvalError>>()?;
    println!("{} {} zero-shot accuracy", ds.name.title(), a.split.split().as_str());
    print!("{}", align(&rows));
    if let Some(out) = &a.output {
        write_json(out, &json!({"dataset": ds.name, "task": task, "runs": runs, "aggregate": aggregate}))?;
        let mut inputs: Vec<&Path> = read.iter().map(PathBuf::as_path).collect();
        inputs.extend(a.preds.iter().map(PathBuf::as_path));
        write_manifest("zeroshot-eval", &a, &inputs, &[out], json!({"runs": a.preds.len()}))?;
    }
    Ok(())
}

fn cmd_humaneval(a: HumanevalArgs) -> Result<()> {
    let records: Vec<eval::HumanEvalRecord> = read_jsonl(&a.records)?;
    let rows = eval::humaneval_aggregate(&records)?;
    print!("{}", eval::format_humaneval_table(&rows));
    if let Some(out) = &a.output {
        distinct_output(out, &[&a.records])?;
        write_json(out, &rows)?;
        write_manifest("humaneval-aggregate", &a, &[&a.records], &[out], json!({"cells": rows.len()}))?;
    }
    Ok(())
}

fn cmd_error_report(a: ErrorReportArgs) -> Result<()> {
    let labels: Vec<eval::ErrorLabel> = read_jsonl(&a.labels)?;
    let report = eval::error_report(&labels, a.total)?;
    print!("{}", eval::format_error_table(&a.setting, &report));
    if let Some(out) = &a.output {
        distinct_output(out, &[&a.labels])?;
        let percentages: Vec<String> = report.proportions.iter().map(|p| pct(*p)).collect();
        write_json(out, &json!({"report": report, "percentages": percentages}))?;
        write_manifest("error-report", &a, &[&a.labels], &[out], json!({"labels": labels.len()}))?;
    }
    Ok(())
}
