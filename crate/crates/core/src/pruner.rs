//! Two-level pruning: cluster servers, keep the clusters most likely to have
//! produced the query, then do the same for the tools of every kept server.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ToolCatalog;
use crate::error::{Error, Result};
use crate::gmm::{component_count, fit_gmm, FitConfig};
use crate::scalar::Scalar;
use crate::vecmath::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Server clusters kept per query.
    pub top_server_clusters: usize,
    /// Tool clusters kept per selected server.
    pub top_tool_clusters: usize,
    /// Catalogs with fewer tools skip clustering entirely.
    pub min_catalog_for_clustering: usize,
    pub gmm: FitConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            top_server_clusters: 4,
            top_tool_clusters: 4,
            min_catalog_for_clustering: 10,
            gmm: FitConfig::default(),
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_server_clusters == 0 || self.top_tool_clusters == 0 {
            return Err(Error::InvalidArgument(
                "cluster selection counts must be >= 1".into(),
            ));
        }
        self.gmm.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerCandidate {
    pub server_id: String,
    /// Query log-density of the server's cluster; absent when clustering was
    /// skipped or the candidate came from a non-GMM selector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCandidate {
    pub tool_id: String,
    pub server_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_density: Option<f64>,
}

/// Which clusters survived at each level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    /// True when the catalog was passed through without clustering.
    #[serde(default)]
    pub bypassed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub server_clusters: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tool_clusters: BTreeMap<String, Vec<usize>>,
}

/// Surviving servers and tools, sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub servers: Vec<ServerCandidate>,
    pub tools: Vec<ToolCandidate>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl CandidateSet {
    /// Sorts servers by id and tools by (server id, tool id).
    pub fn new(
        mut servers: Vec<ServerCandidate>,
        mut tools: Vec<ToolCandidate>,
        provenance: Provenance,
    ) -> Self {
        servers.sort_by(|a, b| a.server_id.cmp(&b.server_id));
        tools.sort_by(|a, b| {
            a.server_id
                .cmp(&b.server_id)
                .then_with(|| a.tool_id.cmp(&b.tool_id))
        });
        CandidateSet {
            servers,
            tools,
            provenance,
        }
    }

    /// Candidate set of the given tools, with their owners as servers.
    pub fn from_tools<T: Scalar>(
        catalog: &ToolCatalog<T>,
        tool_indices: impl IntoIterator<Item = usize>,
        method: &str,
    ) -> Self {
        let mut seen = HashSet::new();
        let mut servers = Vec::new();
        let mut tools = Vec::new();
        for i in tool_indices {
            let t = &catalog.tools()[i];
            if seen.insert(t.server_id.clone()) {
                servers.push(ServerCandidate {
                    server_id: t.server_id.clone(),
                    log_density: None,
                });
            }
            tools.push(ToolCandidate {
                tool_id: t.tool_id.clone(),
                server_id: t.server_id.clone(),
                log_density: None,
            });
        }
        tools.dedup_by(|a, b| a.tool_id == b.tool_id);
        Self::new(
            servers,
            tools,
            Provenance {
                method: method.to_string(),
                ..Provenance::default()
            },
        )
    }

    /// Every tool of the catalog.
    pub fn whole_catalog<T: Scalar>(catalog: &ToolCatalog<T>, method: &str) -> Self {
        let mut set = Self::from_tools(catalog, 0..catalog.n_tools(), method);
        set.provenance.bypassed = true;
        set
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn contains_tool(&self, tool_id: &str) -> bool {
        self.tools.iter().any(|t| t.tool_id == tool_id)
    }

    pub fn server_ids(&self) -> impl Iterator<Item = &str> {
        self.servers.iter().map(|s| s.server_id.as_str())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("candidate set serialization cannot fail")
    }
}

/// Result of the server stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerSelection {
    /// Selected servers in catalog order.
    pub servers: Vec<ServerCandidate>,
    /// Selected cluster indices, best first.
    pub clusters: Vec<usize>,
}

impl ServerSelection {
    pub fn server_ids(&self) -> Vec<&str> {
        self.servers.iter().map(|s| s.server_id.as_str()).collect()
    }
}

fn checked_query<T: Scalar>(
    catalog: &ToolCatalog<T>,
    query: &[T],
    stage: &'static str,
) -> Result<Embedding<T>> {
    if !catalog.is_normalized() {
        return Err(Error::NotNormalized(stage));
    }
    if query.len() != catalog.dimension() {
        return Err(Error::DimensionMismatch {
            expected: catalog.dimension(),
            actual: query.len(),
        });
    }
    Embedding::new(query.to_vec())
        .normalized()
        .map_err(|_| Error::ZeroVector {
            record: "query".into(),
        })
}

/// Fits a GMM with `⌈√n⌉` components and returns the members of the
/// `top` best clusters for the query, with each member's cluster
/// log-density, plus the chosen clusters.
fn select_clusters<T: Scalar, P: AsRef<[T]>>(
    points: &[P],
    query: &[T],
    top: usize,
    cfg: &FitConfig,
) -> Result<(Vec<(usize, f64)>, Vec<usize>)> {
    let model = fit_gmm(points, component_count(points.len()), cfg)?;
    let densities = model.query_log_densities(query)?;
    let ranking = model.rank_components(query)?;
    let chosen: Vec<usize> = ranking.into_iter().take(top).collect();
    let mut keep = vec![false; model.k()];
    chosen.iter().for_each(|&c| keep[c] = true);
    let members = model
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, &a)| keep[a])
        .map(|(i, &a)| (i, densities[a]))
        .collect();
    Ok((members, chosen))
}

/// Server-level stage.
pub fn prune_servers<T: Scalar>(
    catalog: &ToolCatalog<T>,
    query: &[T],
    cfg: &PruneConfig,
) -> Result<ServerSelection> {
    cfg.validate()?;
    let query = checked_query(catalog, query, "server pruning")?;
    let points: Vec<&[T]> = catalog
        .servers()
        .iter()
        .map(|s| s.embedding.as_slice())
        .collect();
    let (members, clusters) = select_clusters(&points, &query, cfg.top_server_clusters, &cfg.gmm)?;
    let servers = members
        .into_iter()
        .map(|(i, density)| ServerCandidate {
            server_id: catalog.servers()[i].server_id.clone(),
            log_density: Some(density),
        })
        .collect();
    Ok(ServerSelection { servers, clusters })
}

/// Tool-level stage over the given servers. Each server gets its own GMM;
/// fits run in parallel and are merged in server-id order.
pub fn prune_tools<T: Scalar>(
    catalog: &ToolCatalog<T>,
    servers: &[ServerCandidate],
    query: &[T],
    cfg: &PruneConfig,
) -> Result<CandidateSet> {
    cfg.validate()?;
    let query = checked_query(catalog, query, "tool pruning")?;
    if servers.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    for s in servers {
        if catalog.server(&s.server_id).is_none() {
            return Err(Error::InvalidArgument(format!(
                "server '{}' is not in the catalog",
                s.server_id
            )));
        }
    }
    let per_server = servers
        .par_iter()
        .map(|s| {
            let tools: Vec<_> = catalog.tools_of(&s.server_id).collect();
            let points: Vec<&[T]> = tools.iter().map(|t| t.embedding.as_slice()).collect();
            let (members, clusters) =
                select_clusters(&points, &query, cfg.top_tool_clusters, &cfg.gmm)?;
            let kept: Vec<ToolCandidate> = members
                .into_iter()
                .map(|(i, density)| ToolCandidate {
                    tool_id: tools[i].tool_id.clone(),
                    server_id: s.server_id.clone(),
                    log_density: Some(density),
                })
                .collect();
            Ok((s.server_id.clone(), clusters, kept))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut provenance = Provenance {
        method: "hgmf".into(),
        ..Provenance::default()
    };
    let mut tools = Vec::new();
    for (server_id, clusters, kept) in per_server {
        provenance.tool_clusters.insert(server_id, clusters);
        tools.extend(kept);
    }
    Ok(CandidateSet::new(servers.to_vec(), tools, provenance))
}

/// Full hierarchical pruning. Catalogs smaller than
/// `min_catalog_for_clustering` tools are returned whole.
pub fn prune<T: Scalar>(
    catalog: &ToolCatalog<T>,
    query: &[T],
    cfg: &PruneConfig,
) -> Result<CandidateSet> {
    cfg.validate()?;
    checked_query(catalog, query, "pruning")?;
    if catalog.n_tools() < cfg.min_catalog_for_clustering {
        return Ok(CandidateSet::whole_catalog(catalog, "hgmf"));
    }
    let selection = prune_servers(catalog, query, cfg)?;
    let mut set = prune_tools(catalog, &selection.servers, query, cfg)?;
    set.provenance.server_clusters = selection.clusters;
    Ok(set)
}
