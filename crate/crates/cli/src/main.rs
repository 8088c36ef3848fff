use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hgmf_core::bench::{default_tiers, load_cases};
use hgmf_core::embed::LookupEmbedder;
use hgmf_core::{
    prune, run_benchmark, select, select_with_embedding, BenchConfig, ChatConfig, Embedder,
    HttpEmbedder, LlmClient, Method, MockClient, OpenAiClient, PruneConfig, Scalar, ToolCatalog,
};

/// Hierarchical Gaussian-mixture tool selection over large tool catalogs.
#[derive(Debug, Parser)]
#[command(name = "hgmf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and normalize a catalog, then print its size.
    Validate(ValidateArgs),
    /// Print the pruned candidate set for one query.
    Prune(PruneArgs),
    /// Run the full pipeline and print the chosen server and tool.
    Select(SelectArgs),
    /// Measure exact-match accuracy across catalog sample sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct CatalogArgs {
    /// Catalog JSON file.
    #[arg(long)]
    catalog: PathBuf,
    /// Tools indexed per server (first N in declared order); 0 keeps all.
    #[arg(long, default_value_t = hgmf_core::DEFAULT_TOOL_CAP)]
    cap: usize,
    /// Storage precision for embeddings.
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    catalog: PathBuf,
    /// Apply a per-server tool cap before reporting; 0 keeps all.
    #[arg(long, default_value_t = 0)]
    cap: usize,
}

#[derive(Debug, Args)]
struct PruneFlags {
    /// Server clusters kept.
    #[arg(long, default_value_t = 4)]
    ns: usize,
    /// Tool clusters kept per server.
    #[arg(long, default_value_t = 4)]
    nt: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl PruneFlags {
    fn config(&self) -> PruneConfig {
        let base = PruneConfig::default();
        PruneConfig {
            top_server_clusters: self.ns,
            top_tool_clusters: self.nt,
            gmm: base.gmm.with_seed(self.seed),
            ..base
        }
    }
}

#[derive(Debug, Args)]
struct EndpointFlags {
    /// Chat client: `openai` or `mock:<fixture.json>`.
    #[arg(long, default_value = "openai")]
    client: String,
    /// Base URL of the chat-completions API.
    #[arg(long, default_value = "http://localhost:8000/v1")]
    llm_endpoint: String,
    #[arg(long, default_value = "gpt-4o-mini")]
    llm_model: String,
    /// Embedder: `http`, `catalog` (exact description lookup) or
    /// `lookup:<table.json>`; `+`-separated specs are merged lookups.
    #[arg(long, default_value = "http")]
    embedder: String,
    #[arg(long, default_value = "http://localhost:8000/v1")]
    embed_endpoint: String,
    #[arg(long, default_value = "all-MiniLM-L6-v2")]
    embed_model: String,
    /// Per-request timeout for both endpoints.
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("query_source").required(true).multiple(true))]
struct PruneArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Query text, embedded with `--embedder`.
    #[arg(long, group = "query_source")]
    query: Option<String>,
    /// JSON file holding the query embedding (an array, or an object with
    /// `query_embedding`). Takes precedence over `--query`.
    #[arg(long, group = "query_source")]
    query_embedding: Option<PathBuf>,
    #[command(flatten)]
    prune: PruneFlags,
    #[arg(long, default_value = "http")]
    embedder: String,
    #[arg(long, default_value = "http://localhost:8000/v1")]
    embed_endpoint: String,
    #[arg(long, default_value = "all-MiniLM-L6-v2")]
    embed_model: String,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long)]
    query: String,
    /// Precomputed query embedding; otherwise the query is embedded.
    #[arg(long)]
    query_embedding: Option<PathBuf>,
    #[command(flatten)]
    prune: PruneFlags,
    #[command(flatten)]
    endpoints: EndpointFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Test-case JSON file.
    #[arg(long)]
    cases: PathBuf,
    /// Cases evaluated per tier (the first N in the file); 0 uses all.
    #[arg(long, default_value_t = hgmf_core::bench::DEFAULT_CASES_PER_TIER)]
    limit: usize,
    #[arg(long, default_value = "hgmf", value_parser = Method::from_str)]
    method: Method,
    /// Comma-separated sample sizes; defaults to the standard tiers up to
    /// the catalog size.
    #[arg(long, value_delimiter = ',')]
    tiers: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Candidate budget for sampling baselines.
    #[arg(long)]
    budget: Option<usize>,
    /// DBSCAN radius in cosine distance.
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    #[arg(long, default_value_t = 3)]
    min_pts: usize,
    #[command(flatten)]
    prune: PruneFlags,
    #[command(flatten)]
    endpoints: EndpointFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Validate(args) => cmd_validate(&args),
        Command::Prune(args) => match args.catalog.precision {
            Precision::F32 => cmd_prune::<f32>(&args),
            Precision::F64 => cmd_prune::<f64>(&args),
        },
        Command::Select(args) => match args.catalog.precision {
            Precision::F32 => cmd_select::<f32>(&args),
            Precision::F64 => cmd_select::<f64>(&args),
        },
        Command::Bench(args) => match args.catalog.precision {
            Precision::F32 => cmd_bench::<f32>(&args),
            Precision::F64 => cmd_bench::<f64>(&args),
        },
    }
}

fn load_catalog<T: Scalar>(path: &Path, cap: usize) -> anyhow::Result<ToolCatalog<T>> {
    let raw = ToolCatalog::<T>::load(path)
        .with_context(|| format!("loading catalog {}", path.display()))?;
    let capped = if cap == 0 { raw } else { raw.index_tools(cap)? };
    Ok(capped.normalize()?)
}

fn cmd_validate(args: &ValidateArgs) -> anyhow::Result<()> {
    let c = load_catalog::<f64>(&args.catalog, args.cap)?;
    println!(
        "servers={} tools={} dim={}",
        c.n_servers(),
        c.n_tools(),
        c.dimension()
    );
    Ok(())
}

fn emit(out: Option<&Path>, body: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            if !body.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn read_query_embedding<T: Scalar>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    let array = match &value {
        serde_json::Value::Array(_) => &value,
        serde_json::Value::Object(map) => map
            .get("query_embedding")
            .ok_or_else(|| anyhow!("{}: no `query_embedding` field", path.display()))?,
        _ => bail!("{}: expected an array or object", path.display()),
    };
    let floats: Vec<f64> = serde_json::from_value(array.clone())
        .with_context(|| format!("{}: embedding must be an array of numbers", path.display()))?;
    Ok(floats.into_iter().map(T::from_f64_lossy).collect())
}

fn build_embedder<T: Scalar>(
    spec: &str,
    catalog: &ToolCatalog<T>,
    endpoint: &str,
    model: &str,
    timeout: Duration,
) -> anyhow::Result<Box<dyn Embedder>> {
    if spec == "http" {
        return Ok(Box::new(HttpEmbedder::new(endpoint, model, timeout)?));
    }
    let mut table = LookupEmbedder::default();
    for part in spec.split('+') {
        match part.split_once(':') {
            None if part == "catalog" => table.merge(LookupEmbedder::from_catalog(catalog)),
            Some(("lookup", path)) => table.merge(
                LookupEmbedder::load(path).with_context(|| format!("loading lookup table {path}"))?,
            ),
            _ => bail!("unknown embedder '{part}'; expected http, catalog or lookup:<file>"),
        }
    }
    Ok(Box::new(table))
}

fn build_client(flags: &EndpointFlags) -> anyhow::Result<Box<dyn LlmClient>> {
    match flags.client.split_once(':') {
        Some(("mock", path)) => Ok(Box::new(
            MockClient::load(path).with_context(|| format!("loading mock fixture {path}"))?,
        )),
        None if flags.client == "openai" => {
            let mut cfg = ChatConfig::new(&flags.llm_endpoint, &flags.llm_model);
            cfg.timeout = Duration::from_secs(flags.timeout_secs);
            Ok(Box::new(OpenAiClient::new(cfg)?))
        }
        _ => bail!(
            "unknown client '{}'; expected openai or mock:<fixture>",
            flags.client
        ),
    }
}

fn embed_query<T: Scalar>(embedder: &dyn Embedder, query: &str) -> anyhow::Result<Vec<T>> {
    let raw = embedder
        .embed(&[query])
        .map_err(hgmf_core::Error::Embedding)?;
    Ok(raw[0].iter().map(|&x| T::from_f64_lossy(x)).collect())
}

fn cmd_prune<T: Scalar>(args: &PruneArgs) -> anyhow::Result<()> {
    let catalog = load_catalog::<T>(&args.catalog.catalog, args.catalog.cap)?;
    let query: Vec<T> = match (&args.query_embedding, &args.query) {
        (Some(path), _) => read_query_embedding(path)?,
        (None, Some(text)) => {
            let embedder = build_embedder(
                &args.embedder,
                &catalog,
                &args.embed_endpoint,
                &args.embed_model,
                Duration::from_secs(args.timeout_secs),
            )?;
            embed_query(embedder.as_ref(), text)?
        }
        (None, None) => unreachable!("clap requires a query source"),
    };
    let set = prune(&catalog, &query, &args.prune.config())?;
    emit(args.out.as_deref(), &set.to_json_string())
}

fn cmd_select<T: Scalar>(args: &SelectArgs) -> anyhow::Result<()> {
    let catalog = load_catalog::<T>(&args.catalog.catalog, args.catalog.cap)?;
    let e = &args.endpoints;
    let embedder = build_embedder(
        &e.embedder,
        &catalog,
        &e.embed_endpoint,
        &e.embed_model,
        Duration::from_secs(e.timeout_secs),
    )?;
    let client = build_client(e)?;
    let cfg = args.prune.config();
    let selection = match &args.query_embedding {
        Some(path) => {
            let q: Vec<T> = read_query_embedding(path)?;
            select_with_embedding(&args.query, &q, &catalog, &cfg, client.as_ref(), embedder.as_ref())?
        }
        None => select(&args.query, &catalog, &cfg, client.as_ref(), embedder.as_ref())?,
    };
    let body = serde_json::json!({
        "server_id": selection.best.server_id,
        "tool_id": selection.best.tool_id,
        "final_score": selection.best.final_score,
        "used_fallback": selection.used_fallback(),
        "ideal": selection.ideal.as_ref().map(|i| serde_json::json!({
            "server_description": i.server_text,
            "tool_description": i.tool_text,
        })),
        "ranking": selection.ranking,
        "candidates": selection.candidates,
        "timings": selection.timings,
    });
    emit(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&body).expect("selection serializes"),
    )
}

fn cmd_bench<T: Scalar>(args: &BenchArgs) -> anyhow::Result<()> {
    let catalog = load_catalog::<T>(&args.catalog.catalog, args.catalog.cap)?;
    let mut cases = load_cases::<T>(&args.cases)
        .with_context(|| format!("loading cases {}", args.cases.display()))?;
    if args.limit > 0 {
        cases.truncate(args.limit);
    }
    let before = cases.len();
    cases.retain(|c| catalog.tool(&c.truth_tool_id).is_some());
    if cases.len() < before {
        eprintln!(
            "warning: dropped {} case(s) whose ground-truth tool is not indexed",
            before - cases.len()
        );
    }
    let tiers = args
        .tiers
        .clone()
        .unwrap_or_else(|| default_tiers(catalog.n_tools()));

    let e = &args.endpoints;
    let embedder = build_embedder(
        &e.embedder,
        &catalog,
        &e.embed_endpoint,
        &e.embed_model,
        Duration::from_secs(e.timeout_secs),
    )?;
    let client = build_client(e)?;
    let cfg = BenchConfig {
        seed: args.prune.seed,
        prune: args.prune.config(),
        budget: args.budget,
        dbscan_eps: args.eps,
        dbscan_min_pts: args.min_pts,
        jobs: args.jobs,
        ..BenchConfig::default()
    };
    let report = run_benchmark(
        &catalog,
        &cases,
        &tiers,
        args.method,
        client.as_ref(),
        embedder.as_ref(),
        &cfg,
    )?;
    let body = match args.format {
        Format::Json => report.to_json_string(),
        Format::Csv => report.to_csv_string()?,
    };
    emit(args.out.as_deref(), &body)
}
