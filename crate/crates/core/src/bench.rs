//! Exact-match benchmark over catalog sample-size tiers.
//!
//! For each tier and each test case the catalog is resampled to the tier's
//! size (always keeping the case's ground-truth tool), the chosen method
//! produces candidates, the shared reranking stage picks one pair, and the
//! pick counts as correct only if both server and tool match.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    cluster_weighted_select, density_select, kmeans_select, mcp_zero, tokenization_select,
    BaselineKind, Method,
};
use crate::catalog::ToolCatalog;
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::gmm::{component_count, mix_seed};
use crate::llm::LlmClient;
use crate::pruner::{prune, PruneConfig};
use crate::rerank::{rerank, RankedPair, Selection};
use crate::scalar::Scalar;
use crate::vecmath::Embedding;

/// Sample-size tiers used when none are given.
pub const DEFAULT_TIERS: [usize; 10] = [1, 3, 8, 21, 41, 107, 278, 401, 1721, 2797];

/// Default number of cases per tier.
pub const DEFAULT_CASES_PER_TIER: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TestCase<T> {
    pub query: String,
    pub query_embedding: Embedding<T>,
    #[serde(rename = "server_id")]
    pub truth_server_id: String,
    #[serde(rename = "tool_id")]
    pub truth_tool_id: String,
}

/// Reads a JSON array of test cases.
pub fn load_cases<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<TestCase<T>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(crate::catalog::classify_json_error)
}

pub fn save_cases<T: Scalar>(cases: &[TestCase<T>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(cases).expect("test cases serialize");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Checks dimensions and that every ground truth exists in `catalog`.
pub fn validate_cases<T: Scalar>(cases: &[TestCase<T>], catalog: &ToolCatalog<T>) -> Result<()> {
    for (i, case) in cases.iter().enumerate() {
        if case.query_embedding.dim() != catalog.dimension() {
            return Err(Error::Schema(format!(
                "case {i} has embedding length {}, expected {}",
                case.query_embedding.dim(),
                catalog.dimension()
            )));
        }
        match catalog.tool(&case.truth_tool_id) {
            Some(t) if t.server_id == case.truth_server_id => {}
            Some(t) => {
                return Err(Error::Schema(format!(
                    "case {i}: tool '{}' belongs to '{}', not '{}'",
                    case.truth_tool_id, t.server_id, case.truth_server_id
                )))
            }
            None => {
                return Err(Error::Schema(format!(
                    "case {i}: ground-truth tool '{}' is not in the catalog",
                    case.truth_tool_id
                )))
            }
        }
    }
    Ok(())
}

/// [`DEFAULT_TIERS`] up to `n_tools`, always ending with `n_tools`.
pub fn default_tiers(n_tools: usize) -> Vec<usize> {
    let mut tiers: Vec<usize> = DEFAULT_TIERS.iter().copied().filter(|&t| t <= n_tools).collect();
    if tiers.last() != Some(&n_tools) {
        tiers.push(n_tools);
    }
    tiers
}

pub fn exact_match<T>(predicted: &RankedPair, truth: &TestCase<T>) -> bool {
    predicted.server_id == truth.truth_server_id && predicted.tool_id == truth.truth_tool_id
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles. Empty input gives zeros.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p * sorted.len() as f64).ceil() as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        LatencySummary {
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierResult {
    pub sample_size: usize,
    pub n_cases: usize,
    pub n_correct: usize,
    /// Cases whose pipeline returned an error (counted incorrect).
    pub n_failed: usize,
    pub accuracy: f64,
    /// Pruning plus reranking compute.
    pub latency: LatencySummary,
    /// LLM and embedding round trips.
    pub external_latency: LatencySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub prune: PruneConfig,
    /// Candidate budget for the sampling baselines; defaults to the size of
    /// the hierarchical candidate set for the same case.
    pub budget: Option<usize>,
    /// k-means cluster count; defaults to `⌈√N⌉` of the tier catalog.
    pub kmeans_clusters: Option<usize>,
    pub kmeans_nearest: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Worker threads for cases within a tier.
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 0,
            prune: PruneConfig::default(),
            budget: None,
            kmeans_clusters: None,
            kmeans_nearest: 4,
            dbscan_eps: 0.3,
            dbscan_min_pts: 3,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub method: Method,
    pub model: String,
    pub seed: u64,
    pub n_cases: usize,
    pub n_correct: usize,
    /// Case-weighted accuracy over all tiers.
    pub overall: f64,
    pub tiers: Vec<TierResult>,
    pub config: BenchConfig,
}

impl BenchmarkReport {
    /// Copy with every latency field zeroed, for reproducibility checks.
    pub fn without_latency(&self) -> Self {
        let mut r = self.clone();
        for t in &mut r.tiers {
            t.latency = LatencySummary::default();
            t.external_latency = LatencySummary::default();
        }
        r
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let report_err = |e: csv::Error| Error::Report(e.to_string());
        w.write_record(["method", "model", "shot", "accuracy", "p50_ms", "p95_ms"])
            .map_err(report_err)?;
        for t in &self.tiers {
            w.write_record([
                self.method.name().to_string(),
                self.model.clone(),
                t.sample_size.to_string(),
                t.accuracy.to_string(),
                format!("{:.3}", t.latency.p50_ms),
                format!("{:.3}", t.latency.p95_ms),
            ])
            .map_err(report_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(crate::catalog::classify_json_error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format '{other}'; expected json or csv"
            ))),
        }
    }
}

pub fn write_report(report: &BenchmarkReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Json => report.to_json_string(),
        ReportFormat::Csv => report.to_csv_string()?,
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Runs one method end to end on one case against an already-sampled
/// catalog.
pub fn run_case<T: Scalar>(
    catalog: &ToolCatalog<T>,
    case: &TestCase<T>,
    method: Method,
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<Selection<T>> {
    let prune_cfg = PruneConfig {
        gmm: cfg.prune.gmm.with_seed(seed),
        ..cfg.prune
    };
    let query = case.query_embedding.as_slice();
    let budget = || -> Result<usize> {
        match cfg.budget {
            Some(b) => Ok(b),
            None => prune(catalog, query, &prune_cfg).map(|c| c.len()),
        }
    };
    let k_clusters = cfg
        .kmeans_clusters
        .unwrap_or_else(|| component_count(catalog.n_tools()));

    let (candidates, prune_ms) = match method {
        Method::Hgmf => {
            let start = Instant::now();
            let c = prune(catalog, query, &prune_cfg)?;
            (c, start.elapsed().as_secs_f64() * 1e3)
        }
        Method::Baseline(kind) => {
            let budget = match kind {
                BaselineKind::McpZero | BaselineKind::Tokenization | BaselineKind::ClusterWeighted => {
                    budget()?
                }
                _ => 0,
            };
            let start = Instant::now();
            let c = match kind {
                BaselineKind::McpZero => mcp_zero(catalog, budget, seed)?,
                BaselineKind::Tokenization => tokenization_select(catalog, &case.query, budget)?,
                BaselineKind::KMeans => {
                    kmeans_select(catalog, query, k_clusters, cfg.kmeans_nearest, seed)?
                }
                BaselineKind::ClusterWeighted => cluster_weighted_select(
                    catalog,
                    query,
                    k_clusters,
                    cfg.kmeans_nearest,
                    budget,
                    seed,
                )?,
                BaselineKind::DensityBased => {
                    density_select(catalog, query, cfg.dbscan_eps, cfg.dbscan_min_pts)?
                }
            };
            (c, start.elapsed().as_secs_f64() * 1e3)
        }
    };
    let mut selection = rerank(&case.query, query, candidates, catalog, client, embedder)?;
    selection.timings.prune_ms = prune_ms;
    Ok(selection)
}

struct CaseOutcome {
    correct: bool,
    failed: bool,
    compute_ms: Option<f64>,
    external_ms: Option<f64>,
}

/// Runs `method` on every case at every tier.
///
/// Pipeline errors are counted as incorrect answers rather than aborting.
/// Results depend only on the inputs and `cfg.seed` when the client and
/// embedder are deterministic.
pub fn run_benchmark<T: Scalar>(
    catalog: &ToolCatalog<T>,
    cases: &[TestCase<T>],
    tiers: &[usize],
    method: Method,
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
    cfg: &BenchConfig,
) -> Result<BenchmarkReport> {
    if !catalog.is_normalized() {
        return Err(Error::NotNormalized("benchmarking"));
    }
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no test cases".into()));
    }
    if tiers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("tiers must be strictly ascending".into()));
    }
    if let Some(&t) = tiers.iter().find(|&&t| t == 0 || t > catalog.n_tools()) {
        return Err(Error::InvalidArgument(format!(
            "tier {t} outside 1..={}",
            catalog.n_tools()
        )));
    }
    validate_cases(cases, catalog)?;
    cfg.prune.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let mut results = Vec::with_capacity(tiers.len());
    for (tier_idx, &tier) in tiers.iter().enumerate() {
        let tier_seed = mix_seed(cfg.seed, tier_idx as u64);
        let outcomes: Vec<CaseOutcome> = pool.install(|| {
            cases
                .par_iter()
                .enumerate()
                .map(|(case_idx, case)| {
                    let seed = mix_seed(tier_seed, case_idx as u64);
                    let run = catalog
                        .subset(tier, seed, &[case.truth_tool_id.as_str()])
                        .and_then(|sub| run_case(&sub, case, method, client, embedder, cfg, seed));
                    match run {
                        Ok(sel) => CaseOutcome {
                            correct: exact_match(&sel.best, case),
                            failed: false,
                            compute_ms: Some(sel.timings.compute_ms()),
                            external_ms: Some(sel.timings.external_ms),
                        },
                        Err(_) => CaseOutcome {
                            correct: false,
                            failed: true,
                            compute_ms: None,
                            external_ms: None,
                        },
                    }
                })
                .collect()
        });
        let n_correct = outcomes.iter().filter(|o| o.correct).count();
        let compute: Vec<f64> = outcomes.iter().filter_map(|o| o.compute_ms).collect();
        let external: Vec<f64> = outcomes.iter().filter_map(|o| o.external_ms).collect();
        results.push(TierResult {
            sample_size: tier,
            n_cases: cases.len(),
            n_correct,
            n_failed: outcomes.iter().filter(|o| o.failed).count(),
            accuracy: n_correct as f64 / cases.len() as f64,
            latency: LatencySummary::from_samples(&compute),
            external_latency: LatencySummary::from_samples(&external),
        });
    }

    let n_cases: usize = results.iter().map(|t| t.n_cases).sum();
    let n_correct: usize = results.iter().map(|t| t.n_correct).sum();
    Ok(BenchmarkReport {
        method,
        model: client.model().to_string(),
        seed: cfg.seed,
        n_cases,
        n_correct,
        overall: if n_cases == 0 {
            0.0
        } else {
            n_correct as f64 / n_cases as f64
        },
        tiers: results,
        config: cfg.clone(),
    })
}
