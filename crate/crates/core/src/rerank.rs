//! LLM-guided reranking of a pruned candidate set.
//!
//! The LLM sees the candidates and writes a description of the ideal server
//! and the ideal tool for the query. Both descriptions are embedded and every
//! (server, tool) candidate pair is scored by
//! `(s · t) · max(s, t)`, where `s` and `t` are the cosine similarities of the
//! server and the tool to their ideal descriptions.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::catalog::ToolCatalog;
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::pruner::{prune, CandidateSet, PruneConfig};
use crate::scalar::Scalar;
use crate::vecmath::{cosine, Embedding, Similarity};

pub const SERVER_LABEL: &str = "SERVER_DESCRIPTION:";
pub const TOOL_LABEL: &str = "TOOL_DESCRIPTION:";

const SYSTEM_PROMPT: &str = "You are a helpful assistant that matches user requests to tools. \
Given a user query and a list of candidate servers and their tools, describe the ideal server \
and the ideal tool for fulfilling the request.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// Lists every candidate server with its candidate tools, then the query,
/// then the required two-line answer format.
pub fn build_prompt<T: Scalar>(
    query: &str,
    candidates: &CandidateSet,
    catalog: &ToolCatalog<T>,
) -> Result<Prompt> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut user = String::new();
    writeln!(user, "User query:\n{query}\n").unwrap();
    writeln!(user, "Candidate servers and tools:").unwrap();
    // candidate sets are sorted by (server id, tool id)
    for server in &candidates.servers {
        let record = catalog.server(&server.server_id).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown server '{}'", server.server_id))
        })?;
        writeln!(
            user,
            "\nServer [{}] {}: {}",
            record.server_id,
            record.name,
            one_line(&record.description)
        )
        .unwrap();
        for tool in candidates
            .tools
            .iter()
            .filter(|t| t.server_id == server.server_id)
        {
            let record = catalog
                .tool(&tool.tool_id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown tool '{}'", tool.tool_id)))?;
            writeln!(
                user,
                "  - Tool [{}] {}: {}",
                record.tool_id,
                record.name,
                one_line(&record.description)
            )
            .unwrap();
        }
    }
    write!(
        user,
        "\nRespond with exactly two lines and nothing else:\n\
         {SERVER_LABEL} <description of the ideal server for this query>\n\
         {TOOL_LABEL} <description of the ideal tool for this query>\n"
    )
    .unwrap();
    Ok(Prompt {
        system: SYSTEM_PROMPT.to_string(),
        user,
    })
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Pulls the labelled server and tool descriptions out of a completion.
/// Markdown emphasis, list markers and code fences around the labels are
/// ignored.
pub fn parse_ideal(completion: &str) -> Result<(String, String)> {
    let lines: Vec<&str> = completion
        .lines()
        .map(str::trim)
        .filter(|l| !l.starts_with("```"))
        .collect();
    let server = find_label(&lines, "SERVER_DESCRIPTION").ok_or(Error::MissingLabel(SERVER_LABEL))?;
    let tool = find_label(&lines, "TOOL_DESCRIPTION").ok_or(Error::MissingLabel(TOOL_LABEL))?;
    Ok((server, tool))
}

fn strip_markup(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '_' | '`' | '#' | '>' | '-' | ':'))
}

fn is_label_line(line: &str) -> bool {
    let upper = strip_markup(line).to_ascii_uppercase();
    upper.starts_with("SERVER_DESCRIPTION") || upper.starts_with("TOOL_DESCRIPTION")
}

fn find_label(lines: &[&str], label: &str) -> Option<String> {
    for (i, line) in lines.iter().enumerate() {
        let head = line.trim_start_matches(|c: char| {
            c.is_whitespace() || matches!(c, '*' | '_' | '`' | '#' | '>' | '-')
        });
        if head.len() < label.len() || !head[..label.len()].eq_ignore_ascii_case(label) {
            continue;
        }
        let rest = &head[label.len()..];
        if !rest.is_empty() && !rest.starts_with([':', '*', '_', ' ', '`']) {
            continue;
        }
        let text = unquote(strip_markup(rest));
        if !text.is_empty() {
            return Some(text.to_string());
        }
        let next = lines[i + 1..]
            .iter()
            .find(|l| !l.is_empty())
            .filter(|l| !is_label_line(l))
            .map(|l| unquote(strip_markup(l)))
            .filter(|t| !t.is_empty());
        if let Some(text) = next {
            return Some(text.to_string());
        }
    }
    None
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

/// `(server_score × tool_score) × max(server_score, tool_score)`.
pub fn final_score(server_score: Similarity, tool_score: Similarity) -> f64 {
    let (s, t) = (server_score.get(), tool_score.get());
    (s * t) * s.max(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdealDescriptions<T> {
    pub server_text: String,
    pub tool_text: String,
    /// Unit-norm.
    pub server_embedding: Embedding<T>,
    /// Unit-norm.
    pub tool_embedding: Embedding<T>,
}

impl<T: Scalar> IdealDescriptions<T> {
    /// Validates the texts and normalizes the raw embeddings.
    pub fn new(
        server_text: String,
        tool_text: String,
        server_embedding: &[T],
        tool_embedding: &[T],
    ) -> Result<Self> {
        if server_text.trim().is_empty() || tool_text.trim().is_empty() {
            return Err(Error::InvalidArgument("ideal descriptions must be non-empty".into()));
        }
        Ok(IdealDescriptions {
            server_text,
            tool_text,
            server_embedding: Embedding::new(server_embedding.to_vec()).normalized()?,
            tool_embedding: Embedding::new(tool_embedding.to_vec()).normalized()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub server_id: String,
    pub tool_id: String,
    pub server_score: Similarity,
    pub tool_score: Similarity,
    pub final_score: f64,
}

/// Scores every candidate tool together with its owning candidate server.
/// Sorted by final score, best first; ties by (server id, tool id).
pub fn rank_candidates<T: Scalar>(
    candidates: &CandidateSet,
    ideal: &IdealDescriptions<T>,
    catalog: &ToolCatalog<T>,
) -> Result<Vec<RankedPair>> {
    rank_against(
        candidates,
        &ideal.server_embedding,
        &ideal.tool_embedding,
        catalog,
    )
}

fn rank_against<T: Scalar>(
    candidates: &CandidateSet,
    server_target: &[T],
    tool_target: &[T],
    catalog: &ToolCatalog<T>,
) -> Result<Vec<RankedPair>> {
    if !catalog.is_normalized() {
        return Err(Error::NotNormalized("ranking"));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut pairs = Vec::with_capacity(candidates.len());
    for server in &candidates.servers {
        let record = catalog.server(&server.server_id).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown server '{}'", server.server_id))
        })?;
        let server_score = cosine(server_target, &record.embedding)?;
        for tool in candidates
            .tools
            .iter()
            .filter(|t| t.server_id == server.server_id)
        {
            let tool_record = catalog
                .tool(&tool.tool_id)
                .filter(|t| t.server_id == server.server_id)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "tool '{}' is not owned by '{}' in the catalog",
                        tool.tool_id, server.server_id
                    ))
                })?;
            let tool_score = cosine(tool_target, &tool_record.embedding)?;
            pairs.push(RankedPair {
                server_id: server.server_id.clone(),
                tool_id: tool.tool_id.clone(),
                server_score,
                tool_score,
                final_score: final_score(server_score, tool_score),
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    pairs.sort_by(|a, b| {
        b.final_score
            .total_cmp(&a.final_score)
            .then_with(|| a.server_id.cmp(&b.server_id))
            .then_with(|| a.tool_id.cmp(&b.tool_id))
    });
    Ok(pairs)
}

/// Wall-clock time spent in each stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub prune_ms: f64,
    /// Prompt construction and pair scoring.
    pub rank_ms: f64,
    /// LLM round trips plus embedding of the ideal descriptions.
    pub external_ms: f64,
}

impl Timings {
    /// Time attributable to the method itself.
    pub fn compute_ms(&self) -> f64 {
        self.prune_ms + self.rank_ms
    }
}

#[derive(Debug, Clone)]
pub struct Selection<T> {
    pub best: RankedPair,
    pub ranking: Vec<RankedPair>,
    pub candidates: CandidateSet,
    /// `None` when the LLM output could not be parsed and the query
    /// embedding stood in for both ideal descriptions.
    pub ideal: Option<IdealDescriptions<T>>,
    pub timings: Timings,
}

impl<T> Selection<T> {
    pub fn used_fallback(&self) -> bool {
        self.ideal.is_none()
    }
}

fn millis(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs the LLM stage on an existing candidate set.
///
/// A completion missing either label is retried once; if the retry also
/// fails to parse, the query embedding is used in place of both ideal
/// embeddings. Transport failures are returned with the candidates attached.
pub fn rerank<T: Scalar>(
    query: &str,
    query_embedding: &[T],
    candidates: CandidateSet,
    catalog: &ToolCatalog<T>,
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
) -> Result<Selection<T>> {
    let mut timings = Timings::default();
    let start = Instant::now();
    let prompt = build_prompt(query, &candidates, catalog)?;
    timings.rank_ms += millis(start);

    let external = Instant::now();
    let mut parsed = None;
    for _attempt in 0..2 {
        let completion = match client.complete(&prompt.system, &prompt.user) {
            Ok(text) => text,
            Err(source) => {
                return Err(Error::Llm {
                    source,
                    candidates: Box::new(candidates),
                })
            }
        };
        if let Ok(texts) = parse_ideal(&completion) {
            parsed = Some(texts);
            break;
        }
    }
    let ideal = match parsed {
        Some((server_text, tool_text)) => {
            let vectors = embedder
                .embed(&[server_text.as_str(), tool_text.as_str()])
                .map_err(Error::Embedding)?;
            let to_t = |v: &[f64]| -> Result<Vec<T>> {
                if v.len() != catalog.dimension() {
                    return Err(Error::DimensionMismatch {
                        expected: catalog.dimension(),
                        actual: v.len(),
                    });
                }
                Ok(v.iter().map(|&x| T::from_f64_lossy(x)).collect())
            };
            let (sv, tv) = (to_t(&vectors[0])?, to_t(&vectors[1])?);
            Some(IdealDescriptions::new(server_text, tool_text, &sv, &tv)?)
        }
        None => None,
    };
    timings.external_ms += millis(external);

    let start = Instant::now();
    let ranking = match &ideal {
        Some(ideal) => rank_candidates(&candidates, ideal, catalog)?,
        None => rank_against(&candidates, query_embedding, query_embedding, catalog)?,
    };
    timings.rank_ms += millis(start);

    Ok(Selection {
        best: ranking[0].clone(),
        ranking,
        candidates,
        ideal,
        timings,
    })
}

/// Prune with hierarchical GMM filtering, then rerank, for a query whose
/// embedding is already known.
pub fn select_with_embedding<T: Scalar>(
    query: &str,
    query_embedding: &[T],
    catalog: &ToolCatalog<T>,
    cfg: &PruneConfig,
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
) -> Result<Selection<T>> {
    let start = Instant::now();
    let candidates = prune(catalog, query_embedding, cfg)?;
    let prune_ms = millis(start);
    let mut selection = rerank(query, query_embedding, candidates, catalog, client, embedder)?;
    selection.timings.prune_ms = prune_ms;
    Ok(selection)
}

/// Full pipeline: embed the query, prune, ask the LLM, rank, and return the
/// best pair.
pub fn select<T: Scalar>(
    query: &str,
    catalog: &ToolCatalog<T>,
    cfg: &PruneConfig,
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
) -> Result<Selection<T>> {
    let start = Instant::now();
    let raw = embedder.embed(&[query]).map_err(Error::Embedding)?;
    let q: Vec<T> = raw[0].iter().map(|&x| T::from_f64_lossy(x)).collect();
    let embed_ms = millis(start);
    let mut selection = select_with_embedding(query, &q, catalog, cfg, client, embedder)?;
    selection.timings.external_ms += embed_ms;
    Ok(selection)
}
