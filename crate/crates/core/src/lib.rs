//! Hierarchical Gaussian-mixture pruning of large tool catalogs.
//!
//! A query embedding is matched against a two-level catalog (servers, each
//! owning tools). Diagonal-covariance mixtures fitted over server and then
//! tool embeddings shrink the catalog to a small candidate set; an LLM then
//! writes ideal server and tool descriptions whose embeddings rank the
//! remaining pairs.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); accumulation
//! always happens in `f64`. The aliases below fix the scalar for common use.

pub mod baselines;
pub mod bench;
pub mod catalog;
pub mod embed;
pub mod error;
pub mod gmm;
pub mod kmeans;
pub mod llm;
pub mod pruner;
pub mod rerank;
pub mod scalar;
pub mod synthetic;
pub mod vecmath;

pub use baselines::{BaselineKind, Method};
pub use bench::{
    run_benchmark, write_report, BenchConfig, BenchmarkReport, ReportFormat, TierResult, TestCase,
    DEFAULT_TIERS,
};
pub use catalog::{ServerRecord, ToolCatalog, ToolRecord, DEFAULT_TOOL_CAP};
pub use embed::{Embedder, HttpEmbedder, LookupEmbedder};
pub use error::{ClientError, Error, Result};
pub use gmm::{component_count, fit_gmm, FitConfig, GaussianComponent, GmmModel};
pub use llm::{ChatConfig, LlmClient, MockClient, MockRule, OpenAiClient};
pub use pruner::{prune, prune_servers, prune_tools, CandidateSet, PruneConfig};
pub use rerank::{final_score, rerank, select, select_with_embedding, RankedPair, Selection};
pub use scalar::Scalar;
pub use vecmath::{cosine, Embedding, Similarity};

pub type Catalog = ToolCatalog<f64>;
pub type Catalog32 = ToolCatalog<f32>;
pub type Gmm = GmmModel<f64>;
pub type Gmm32 = GmmModel<f32>;
pub type Case = TestCase<f64>;
pub type Case32 = TestCase<f32>;
pub type QuerySelection = Selection<f64>;
pub type QuerySelection32 = Selection<f32>;
