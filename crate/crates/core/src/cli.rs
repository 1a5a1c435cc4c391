//! Command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::context::EnvironmentState;
use crate::eval::{self, EvalOptions, SuiteSpec, Verifier};
use crate::index::{build_index, load_cache, save_cache, FileEdit, IndexConfig, IndexSnapshot};
use crate::llm::{build_backend, BackendConfig, Generator};
use crate::params::{LearnedParams, TrainingMeta};
use crate::pipeline::{build_prompt, ModelConfig, PipelineOptions, PromptRequest, DEFAULT_BUDGET};
use crate::prompt::{ComponentKind, Dialect, PromptPayload, Tokenizer};
use crate::retrieval::{retrieve_with, CandidateScope, FusionWeights, RetrievalOptions, DEFAULT_K};
use crate::train::{self, TrainConfig, TrainingExample, DEFAULT_MAX_COMPONENTS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Relative location of the index cache inside a repository.
pub const DEFAULT_CACHE: &str = ".camp/index.bin";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_FAILURE,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn runtime(m: impl std::fmt::Display) -> CliError {
    CliError::Runtime(m.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSection {
    pub k: usize,
    pub fusion: FusionWeights,
    pub tau_c: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            fusion: FusionWeights::default(),
            tau_c: crate::context::DEFAULT_TAU_C,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSection {
    pub budget: usize,
    pub dialect: Dialect,
    pub chars_per_token: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            dialect: Dialect::ChatMessages,
            chars_per_token: Tokenizer::default().chars_per_token,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    /// Defaults to `<repo>/.camp/index.bin`.
    pub index_cache: Option<PathBuf>,
    pub params_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub n: usize,
    pub ks: Vec<usize>,
    pub workers: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalOptions::default();
        Self {
            n: d.n,
            ks: d.ks,
            workers: d.workers,
        }
    }
}

/// Engine configuration file (TOML). Relative paths resolve against the
/// file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub index: IndexConfig,
    pub retrieval: RetrievalSection,
    pub prompt: PromptSection,
    pub training: TrainConfig,
    pub backend: Option<BackendConfig>,
    pub paths: PathsSection,
    pub eval: EvalSection,
}

impl EngineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let mut cfg: EngineConfig = toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.paths.index_cache.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.paths.params_file.as_mut() {
            fix(p);
        }
        if let Some(BackendConfig::Mock { rules }) = cfg.backend.as_mut() {
            fix(rules);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.index.validate().map_err(usage)?;
        self.training.validate().map_err(usage)?;
        if self.retrieval.k == 0 || self.retrieval.tau_c == 0 {
            return Err(usage("retrieval.k and retrieval.tau_c must be at least 1"));
        }
        if self.prompt.budget == 0 || self.prompt.chars_per_token == 0 {
            return Err(usage("prompt.budget and prompt.chars_per_token must be positive"));
        }
        let f = &self.retrieval.fusion;
        if [f.input, f.context, f.user_query].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(usage("fusion weights must be finite and non-negative"));
        }
        Ok(())
    }

    fn pipeline(&self) -> PipelineOptions {
        PipelineOptions {
            k: self.retrieval.k,
            budget: self.prompt.budget,
            dialect: self.prompt.dialect,
            tokenizer: Tokenizer::new(self.prompt.chars_per_token),
            fusion: self.retrieval.fusion,
            tau_c: self.retrieval.tau_c,
            ..PipelineOptions::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "camp", version, about = "Context-aware retrieval-augmented prompting for code")]
struct Cli {
    /// Engine configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or refresh the index cache of a repository.
    Index(IndexArgs),
    /// Rank indexed units for a query.
    Retrieve(RetrieveArgs),
    /// Assemble the prompt for a query.
    Prompt(PromptArgs),
    /// Learn retrieval parameters or the prompt ordering.
    Train(TrainArgs),
    /// Run the Pass@K benchmark.
    Eval(EvalArgs),
    /// Check one sample against a verifier.
    Verify(VerifyArgs),
    /// Write the synthetic benchmark suite.
    Suite(SuiteArgs),
}

#[derive(Debug, Args)]
struct IndexArgs {
    repo: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Rebuild from disk and compare with the cache; exit 0 iff equal.
    #[arg(long)]
    verify: bool,
    /// Apply a JSON list of edits to the cached index.
    #[arg(long)]
    edit: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Environment state file (JSON).
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    query: String,
    /// Code to retrieve for; defaults to the lines above the cursor.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[command(flatten)]
    q: QueryArgs,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct PromptArgs {
    #[command(flatten)]
    q: QueryArgs,
    #[arg(long, default_value = "camp")]
    model: ModelConfig,
    /// chat or flat
    #[arg(long)]
    dialect: Option<Dialect>,
    #[arg(long)]
    budget: Option<usize>,
    /// JSON list of earlier messages, oldest first.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training examples (JSONL).
    #[arg(long, required_unless_present_any = ["planted", "ordering"])]
    data: Option<PathBuf>,
    /// Repository the examples refer to; defaults to the first example's root.
    #[arg(long)]
    repo: Option<PathBuf>,
    /// Train on a synthetic planted-matrix problem instead of examples.
    #[arg(long)]
    planted: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    nuclear_weight: Option<f64>,
    /// Output parameter file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss history CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Learn the prompt ordering on a held-out benchmark manifest.
    #[arg(long)]
    ordering: bool,
    #[arg(long, requires = "ordering")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Benchmark manifest (JSONL).
    #[arg(long)]
    manifest: PathBuf,
    /// Repeatable; defaults to all four configurations.
    #[arg(long)]
    model: Vec<ModelConfig>,
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated list, e.g. 1,5,10.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    params: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Mock rules file; overrides the configured backend.
    #[arg(long)]
    mock: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Verifier as JSON, e.g. {"kind":"needle_match","needle":"f"}.
    #[arg(long)]
    verifier: String,
    #[arg(long, default_value = ".")]
    fixture: PathBuf,
    /// Sample file; stdin when absent.
    #[arg(long)]
    sample: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SuiteArgs {
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    tasks_per_level: usize,
    #[arg(long, default_value_t = crate::llm::DEFAULT_BASE_RATE)]
    base_rate: f64,
}

struct Ctx {
    cfg: EngineConfig,
    seed: u64,
    json: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}\n\nRun `camp --help` for usage."),
                CliError::Runtime(m) => eprintln!("error: {m}"),
            }
            e.code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    let ctx = Ctx {
        cfg,
        seed: cli.seed,
        json: cli.json,
    };
    match cli.command {
        Command::Index(a) => cmd_index(&ctx, a),
        Command::Retrieve(a) => cmd_retrieve(&ctx, a),
        Command::Prompt(a) => cmd_prompt(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
        Command::Suite(a) => cmd_suite(&ctx, a),
    }
}

/// Exclusive writer lock held while the cache file is replaced.
struct CacheLock {
    path: PathBuf,
}

impl CacheLock {
    fn acquire(cache: &Path) -> CliResult<Self> {
        let mut name = cache.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        }
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| runtime(format!("index cache is locked by another writer ({}): {e}", path.display())))?;
        Ok(Self { path })
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn cache_path(ctx: &Ctx, flag: Option<&PathBuf>, repo: &Path) -> PathBuf {
    flag.cloned()
        .or_else(|| ctx.cfg.paths.index_cache.clone())
        .unwrap_or_else(|| repo.join(DEFAULT_CACHE))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn cmd_index(ctx: &Ctx, a: IndexArgs) -> CliResult<()> {
    if !a.repo.is_dir() {
        return Err(usage(format!("{} is not a directory", a.repo.display())));
    }
    let cache = cache_path(ctx, a.cache.as_ref(), &a.repo);
    let report = |snap: &IndexSnapshot, status: &str| {
        for d in snap.diagnostics() {
            eprintln!("warning: {}: {}", d.path, d.message);
        }
        if ctx.json {
            print_json(&serde_json::json!({
                "status": status,
                "symbols": snap.records().len(),
                "units": snap.doc_units().len(),
                "content_hash": snap.content_hash_hex(),
                "cache": cache.display().to_string(),
            }));
        } else {
            println!("{status}: {} symbols, {} units", snap.records().len(), snap.doc_units().len());
            println!("content_hash {}", snap.content_hash_hex());
        }
    };

    if a.verify {
        let cached = load_cache(&cache).map_err(runtime)?;
        let fresh = build_index(&a.repo, &cached.config().clone()).map_err(runtime)?;
        let equal = cached.content_hash() == fresh.content_hash();
        if ctx.json {
            print_json(&serde_json::json!({
                "cached": cached.content_hash_hex(),
                "rebuilt": fresh.content_hash_hex(),
                "equal": equal,
            }));
        } else {
            println!("cached  {}\nrebuilt {}\n{}", cached.content_hash_hex(), fresh.content_hash_hex(), if equal { "match" } else { "MISMATCH" });
        }
        return if equal { Ok(()) } else { Err(runtime("cache does not match the repository")) };
    }

    if let Some(edits) = &a.edit {
        let text = std::fs::read_to_string(edits).map_err(|e| usage(format!("{}: {e}", edits.display())))?;
        let edits: Vec<FileEdit> = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", a.edit.as_ref().unwrap().display())))?;
        let _lock = CacheLock::acquire(&cache)?;
        let mut snap = load_cache(&cache).map_err(runtime)?;
        for e in &edits {
            snap = snap.apply_edit(e).map_err(runtime)?;
        }
        save_cache(&cache, &snap).map_err(runtime)?;
        report(&snap, &format!("applied {} edit(s)", edits.len()));
        return Ok(());
    }

    let snap = build_index(&a.repo, &ctx.cfg.index).map_err(runtime)?;
    if let Ok(old) = load_cache(&cache) {
        if old.content_hash() == snap.content_hash() {
            report(&old, "up-to-date");
            return Ok(());
        }
    }
    let _lock = CacheLock::acquire(&cache)?;
    save_cache(&cache, &snap).map_err(runtime)?;
    report(&snap, "indexed");
    Ok(())
}

fn load_env(path: &Path) -> CliResult<EnvironmentState> {
    let mut env = EnvironmentState::from_json_file(path).map_err(|e| usage(format!("environment file {}: {e}", path.display())))?;
    if env.repo_root.is_relative() {
        let base = path.parent().unwrap_or(Path::new(""));
        env.repo_root = base.join(&env.repo_root);
    }
    Ok(env)
}

/// Cached index when present and readable, else a fresh build.
fn open_index(ctx: &Ctx, env: &EnvironmentState, cache: Option<&PathBuf>) -> CliResult<IndexSnapshot> {
    let path = cache_path(ctx, cache, &env.repo_root);
    if path.exists() {
        return load_cache(&path).map_err(runtime);
    }
    if cache.is_some() {
        return Err(usage(format!("index cache {} not found", path.display())));
    }
    build_index(&env.repo_root, &ctx.cfg.index).map_err(runtime)
}

fn load_params(ctx: &Ctx, flag: Option<&PathBuf>, d: usize) -> CliResult<LearnedParams> {
    match flag.or(ctx.cfg.paths.params_file.as_ref()) {
        Some(p) if p.exists() || flag.is_some() => {
            let params = LearnedParams::load(p).map_err(runtime)?;
            if params.d() != d {
                return Err(usage(format!("parameters in {} have dimension {}, index has {d}", p.display(), params.d())));
            }
            Ok(params)
        }
        _ => Ok(LearnedParams::initial(d, ctx.cfg.training.init_scale)),
    }
}

fn cmd_retrieve(ctx: &Ctx, a: RetrieveArgs) -> CliResult<()> {
    let env = load_env(&a.q.env)?;
    let snap = open_index(ctx, &env, a.q.cache.as_ref())?;
    let params = load_params(ctx, a.q.params.as_ref(), snap.d_emb())?;
    let k = a.k.unwrap_or(ctx.cfg.retrieval.k);
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let (cv, diags) = crate::context::context_vector(&env, &snap, &params.eta, ctx.cfg.retrieval.tau_c);
    for d in diags {
        eprintln!("warning: {}: {}", d.path, d.message);
    }
    let cv = cv.ok();
    let preceding = crate::pipeline::preceding_lines(&snap, &env, crate::pipeline::INPUT_WINDOW);
    let input = a.q.input.as_deref().or(preceding.as_deref()).unwrap_or("");
    let opts = RetrievalOptions {
        fusion: ctx.cfg.retrieval.fusion,
        scope: CandidateScope::All,
        exclude_cursor_unit: true,
    };
    let r = retrieve_with(&snap, cv.as_ref(), input, Some(&a.q.query), &params.h, k, &opts).map_err(runtime)?;
    print_json(&r);
    Ok(())
}

fn cmd_prompt(ctx: &Ctx, a: PromptArgs) -> CliResult<()> {
    let env = load_env(&a.q.env)?;
    let snap = open_index(ctx, &env, a.q.cache.as_ref())?;
    let params = load_params(ctx, a.q.params.as_ref(), snap.d_emb())?;
    let history: Vec<String> = match &a.history {
        Some(p) => {
            let t = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&t).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => Vec::new(),
    };
    let mut opts = ctx.cfg.pipeline();
    if let Some(d) = a.dialect {
        opts.dialect = d;
    }
    if let Some(b) = a.budget {
        opts.budget = b;
    }
    let req = PromptRequest {
        environment: &env,
        query: &a.q.query,
        input_text: a.q.input.as_deref(),
        history,
    };
    let built = build_prompt(a.model, &snap, &params, &req, &opts).map_err(runtime)?;
    for d in &built.diagnostics {
        eprintln!("warning: {}: {}", d.path, d.message);
    }
    if ctx.json {
        print_json(&serde_json::json!({
            "payload": built.payload,
            "order": built.plan.kinds(),
            "total_tokens": built.plan.total_tokens,
            "budget": built.plan.budget,
            "truncations": built.plan.truncations,
        }));
    } else {
        match &built.payload {
            PromptPayload::Flat(s) => print!("{s}"),
            PromptPayload::Chat(_) => print_json(&built.payload),
        }
    }
    Ok(())
}

fn read_examples(path: &Path) -> CliResult<Vec<TrainingExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut ex: TrainingExample = serde_json::from_str(line).map_err(|e| usage(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if ex.environment.repo_root.is_relative() {
            ex.environment.repo_root = base.join(&ex.environment.repo_root);
        }
        out.push(ex);
    }
    Ok(out)
}

fn train_summary(ctx: &Ctx, out: &train::TrainOutcome, params_path: &Path, extra: serde_json::Value) {
    let decreased = out.final_loss() < out.initial_loss();
    if ctx.json {
        print_json(&serde_json::json!({
            "iterations": out.loss_history.len() - 1,
            "initial_loss": out.initial_loss(),
            "final_loss": out.final_loss(),
            "final_objective": out.loss_history.last().unwrap().objective,
            "converged": out.converged,
            "eta": out.eta,
            "params": params_path.display().to_string(),
            "final_loss_below_initial": decreased,
            "extra": extra,
        }));
    } else {
        println!("iterations {}", out.loss_history.len() - 1);
        println!("initial_loss {:.6}", out.initial_loss());
        println!("final_loss {:.6}", out.final_loss());
        println!("final_loss < initial_loss: {decreased}");
        println!("eta {:?}", out.eta);
        println!("params written to {}", params_path.display());
        if !extra.is_null() {
            println!("{extra}");
        }
    }
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> CliResult<()> {
    let mut tc = ctx.cfg.training.clone();
    if let Some(m) = a.max_iters {
        tc.max_iters = m;
    }
    if let Some(w) = a.nuclear_weight {
        tc.nuclear_weight = w;
    }
    tc.validate().map_err(usage)?;
    let out_path = a
        .out
        .clone()
        .or_else(|| ctx.cfg.paths.params_file.clone())
        .unwrap_or_else(|| PathBuf::from("params.bin"));

    if a.ordering {
        return train_ordering_cmd(ctx, &a, &out_path);
    }

    let started = Instant::now();
    let (outcome, mut params, extra) = if a.planted {
        let p = train::planted_problem(ctx.seed, 8, 50, 200);
        let out = train::train_on_problem(&p.problem, &tc).map_err(runtime)?;
        let acc = train::top1_accuracy(&p.problem, &out.h, &out.eta);
        let params = LearnedParams::initial(8, tc.init_scale);
        (out, params, serde_json::json!({ "top1_accuracy": acc }))
    } else {
        let data_path = a.data.as_ref().ok_or_else(|| usage("--data is required"))?;
        let data = read_examples(data_path)?;
        let repo = a
            .repo
            .clone()
            .or_else(|| data.first().map(|e| e.environment.repo_root.clone()))
            .ok_or_else(|| usage(format!("{} holds no examples", data_path.display())))?;
        let snap = build_index(&repo, &ctx.cfg.index).map_err(runtime)?;
        let out = train::train_retrievers(&data, &snap, &tc).map_err(|e| match e {
            train::TrainError::NonFinite { .. } => runtime(e),
            other => usage(other),
        })?;
        let mut params = load_params(ctx, None, snap.d_emb())?;
        params.meta.snapshot = Some(snap.content_hash_hex());
        params.meta.examples = data.len();
        (out, params, serde_json::Value::Null)
    };
    eprintln!("training took {:.2?}", started.elapsed());
    params.h = crate::retrieval::HeuristicMatrix::new(outcome.h.clone()).map_err(runtime)?;
    params.eta = outcome.eta.clone();
    params.meta = TrainingMeta {
        iterations: outcome.loss_history.len() - 1,
        initial_loss: Some(outcome.initial_loss()),
        final_loss: Some(outcome.final_loss()),
        nuclear_weight: Some(tc.nuclear_weight),
        seed: Some(ctx.seed),
        ..params.meta
    };
    params.save(&out_path).map_err(runtime)?;
    let csv = a.loss_csv.clone().unwrap_or_else(|| out_path.with_extension("loss.csv"));
    std::fs::write(&csv, outcome.history_csv()).map_err(|e| runtime(format!("{}: {e}", csv.display())))?;
    train_summary(ctx, &outcome, &out_path, extra);
    Ok(())
}

fn backend(ctx: &Ctx, mock: Option<&PathBuf>) -> CliResult<Box<dyn Generator>> {
    let cfg = match mock {
        Some(rules) => BackendConfig::Mock { rules: rules.clone() },
        None => ctx.cfg.backend.clone().ok_or_else(|| usage("no backend configured (set [backend] or pass --mock)"))?,
    };
    build_backend(&cfg).map_err(|e| match e {
        crate::llm::LlmError::Config(m) => usage(m),
        other => runtime(other),
    })
}

fn eval_options(ctx: &Ctx) -> EvalOptions {
    EvalOptions {
        n: ctx.cfg.eval.n,
        ks: ctx.cfg.eval.ks.clone(),
        seed: ctx.seed,
        workers: ctx.cfg.eval.workers,
        pipeline: ctx.cfg.pipeline(),
        index: ctx.cfg.index.clone(),
        ..EvalOptions::default()
    }
}

fn train_ordering_cmd(ctx: &Ctx, a: &TrainArgs, out_path: &Path) -> CliResult<()> {
    let manifest = a.manifest.as_ref().ok_or_else(|| usage("--ordering needs --manifest"))?;
    let cases = eval::load_manifest(manifest).map_err(usage)?;
    let gen = backend(ctx, None)?;
    let mut opts = eval_options(ctx);
    opts.n = 1;
    opts.ks = vec![1];
    if let Some(b) = a.budget {
        opts.pipeline.budget = b;
    }
    let mut params = match out_path.exists() {
        true => LearnedParams::load(out_path).map_err(runtime)?,
        false => LearnedParams::initial(ctx.cfg.index.d_emb, ctx.cfg.training.init_scale),
    };
    let mut calls = 0usize;
    let mut failure = None;
    let outcome = train::train_ordering(
        &ComponentKind::ALL,
        |order| {
            calls += 1;
            match eval::ordering_loss(order, &cases, gen.as_ref(), &params, &opts) {
                Ok(l) => l,
                Err(e) => {
                    failure.get_or_insert(e.to_string());
                    f64::INFINITY
                }
            }
        },
        ctx.cfg.training.epsilon,
        DEFAULT_MAX_COMPONENTS,
    );
    if let Some(f) = failure {
        return Err(runtime(f));
    }
    let outcome = outcome.map_err(runtime)?;
    params.ordering = crate::prompt::ComponentOrder::new(&outcome.order).map_err(runtime)?;
    params.save(out_path).map_err(runtime)?;
    let order: Vec<&str> = outcome.order.iter().map(|k| k.as_str()).collect();
    if ctx.json {
        print_json(&serde_json::json!({
            "order": order,
            "edges": outcome.edges.iter().map(|(x, y)| [x.as_str(), y.as_str()]).collect::<Vec<_>>(),
            "baseline_loss": outcome.baseline_loss,
            "swap_evaluations": outcome.swap_evaluations,
            "loss_evaluations": calls,
        }));
    } else {
        println!("order {}", order.join(" > "));
        println!("swap evaluations {} (loss evaluations {calls})", outcome.swap_evaluations);
        println!("params written to {}", out_path.display());
    }
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> CliResult<()> {
    let cases = eval::load_manifest(&a.manifest).map_err(|e| match e {
        eval::EvalError::Io { .. } | eval::EvalError::Manifest { .. } | eval::EvalError::EmptyManifest(_) => usage(e),
        other => runtime(other),
    })?;
    let gen = backend(ctx, a.mock.as_ref())?;
    let mut opts = eval_options(ctx);
    if let Some(n) = a.n {
        opts.n = n;
    }
    if !a.k.is_empty() {
        opts.ks = a.k.clone();
    }
    opts.validate().map_err(usage)?;
    let models = if a.model.is_empty() { ModelConfig::ALL.to_vec() } else { a.model.clone() };
    let params = load_params(ctx, a.params.as_ref(), opts.index.d_emb)?;
    let started = Instant::now();
    let report = eval::run_suite(&models, &cases, gen.as_ref(), &params, &opts).map_err(runtime)?;
    eprintln!("evaluated {} task runs in {:.2?}", report.stats.tasks_evaluated, started.elapsed());
    for s in &report.skipped {
        eprintln!("skipped {}: {}", s.task_id, s.reason);
    }
    for t in report.tasks.iter().filter(|t| t.failure.is_some()) {
        eprintln!("{} {}: {}", t.model, t.task_id, t.failure.as_deref().unwrap());
    }
    let json = report.to_json();
    if let Some(p) = &a.out {
        std::fs::write(p, &json).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, report.to_csv()).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    if ctx.json {
        print!("{json}");
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_verify(ctx: &Ctx, a: VerifyArgs) -> CliResult<()> {
    let verifier: Verifier = serde_json::from_str(&a.verifier).map_err(|e| usage(format!("--verifier: {e}")))?;
    let sample = match &a.sample {
        Some(p) => std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(runtime)?;
            s
        }
    };
    let pass = eval::verify(&sample, &verifier, &a.fixture).map_err(|e| match e {
        eval::EvalError::Verifier(_) => usage(e),
        other => runtime(other),
    })?;
    if ctx.json {
        print_json(&serde_json::json!({ "pass": pass }));
    } else {
        println!("{}", if pass { "pass" } else { "fail" });
    }
    if pass {
        Ok(())
    } else {
        Err(runtime("sample rejected"))
    }
}

fn cmd_suite(ctx: &Ctx, a: SuiteArgs) -> CliResult<()> {
    if a.tasks_per_level == 0 || !(0.0..=1.0).contains(&a.base_rate) {
        return Err(usage("--tasks-per-level must be positive and --base-rate within [0, 1]"));
    }
    let spec = SuiteSpec {
        tasks_per_level: a.tasks_per_level,
        seed: ctx.seed,
        base_rate: a.base_rate,
    };
    let s = eval::generate_suite(&a.out, &spec).map_err(runtime)?;
    if ctx.json {
        print_json(&serde_json::json!({
            "manifest": s.manifest.display().to_string(),
            "rules": s.rules.display().to_string(),
            "cases": s.cases.len(),
        }));
    } else {
        println!("{} cases\nmanifest {}\nmock rules {}", s.cases.len(), s.manifest.display(), s.rules.display());
    }
    Ok(())
}
