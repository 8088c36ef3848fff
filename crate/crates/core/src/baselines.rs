//! Comparison selectors. Each produces a [`CandidateSet`] that feeds the same
//! reranking stage as hierarchical pruning.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ToolCatalog;
use crate::error::{Error, Result};
use crate::kmeans::lloyd;
use crate::pruner::CandidateSet;
use crate::scalar::Scalar;
use crate::vecmath::{cosine, dot};

/// Similarity floor for cluster-weighted sampling.
pub const WEIGHT_FLOOR: f64 = 1e-6;

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    McpZero,
    Tokenization,
    KMeans,
    ClusterWeighted,
    DensityBased,
}

/// Candidate-generation strategy. Serialized by its CLI name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    Hgmf,
    Baseline(BaselineKind),
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Hgmf,
        Method::Baseline(BaselineKind::McpZero),
        Method::Baseline(BaselineKind::Tokenization),
        Method::Baseline(BaselineKind::KMeans),
        Method::Baseline(BaselineKind::ClusterWeighted),
        Method::Baseline(BaselineKind::DensityBased),
    ];

    /// CLI name.
    pub fn name(self) -> &'static str {
        match self {
            Method::Hgmf => "hgmf",
            Method::Baseline(BaselineKind::McpZero) => "mcp-zero",
            Method::Baseline(BaselineKind::Tokenization) => "tokenize",
            Method::Baseline(BaselineKind::KMeans) => "kmeans",
            Method::Baseline(BaselineKind::ClusterWeighted) => "cluster-weighted",
            Method::Baseline(BaselineKind::DensityBased) => "density",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown method '{s}'; expected one of: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Uniform sample of `min(budget, N)` tools without replacement.
pub fn mcp_zero<T: Scalar>(catalog: &ToolCatalog<T>, budget: usize, seed: u64) -> Result<CandidateSet> {
    check_budget(budget)?;
    let n = catalog.n_tools();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, n, budget.min(n)).into_vec();
    Ok(CandidateSet::from_tools(catalog, picked, Method::Baseline(BaselineKind::McpZero).name()))
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Top `budget` tools by Jaccard overlap of query tokens with the tool's
/// name and description; ties by tool id.
pub fn tokenization_select<T: Scalar>(
    catalog: &ToolCatalog<T>,
    query: &str,
    budget: usize,
) -> Result<CandidateSet> {
    check_budget(budget)?;
    let q = tokenize(query);
    let mut scored: Vec<(f64, usize)> = catalog
        .tools()
        .iter()
        .enumerate()
        .map(|(i, t)| (jaccard(&q, &tokenize(&format!("{} {}", t.name, t.description))), i))
        .collect();
    let tools = catalog.tools();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| tools[a.1].tool_id.cmp(&tools[b.1].tool_id))
    });
    Ok(CandidateSet::from_tools(
        catalog,
        scored.into_iter().take(budget).map(|(_, i)| i),
        Method::Baseline(BaselineKind::Tokenization).name(),
    ))
}

/// Members of the `n_nearest` k-means clusters whose centroids have the
/// highest cosine to the query.
fn nearest_cluster_members<T: Scalar>(
    catalog: &ToolCatalog<T>,
    query: &[T],
    k_clusters: usize,
    n_nearest: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    check_query(catalog, query)?;
    if k_clusters == 0 || n_nearest == 0 {
        return Err(Error::InvalidArgument("cluster counts must be >= 1".into()));
    }
    let points: Vec<&[T]> = catalog.tools().iter().map(|t| t.embedding.as_slice()).collect();
    let km = lloyd(&points, k_clusters, KMEANS_MAX_ITERS, seed)?;
    let q: Vec<f64> = query.iter().map(|v| v.as_f64()).collect();
    let mut populated = vec![false; km.k()];
    km.assignments.iter().for_each(|&a| populated[a] = true);
    let mut order: Vec<(f64, usize)> = km
        .centroids
        .iter()
        .enumerate()
        .filter(|(c, _)| populated[*c])
        .map(|(c, centroid)| (cosine(&q, centroid).map(|s| s.get()).unwrap_or(-1.0), c))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let chosen: HashSet<usize> = order.into_iter().take(n_nearest).map(|(_, c)| c).collect();
    Ok((0..catalog.n_tools())
        .filter(|&i| chosen.contains(&km.assignments[i]))
        .collect())
}

pub fn kmeans_select<T: Scalar>(
    catalog: &ToolCatalog<T>,
    query: &[T],
    k_clusters: usize,
    n_nearest: usize,
    seed: u64,
) -> Result<CandidateSet> {
    let members = nearest_cluster_members(catalog, query, k_clusters, n_nearest, seed)?;
    Ok(CandidateSet::from_tools(catalog, members, Method::Baseline(BaselineKind::KMeans).name()))
}

/// Like [`kmeans_select`], then samples `budget` tools from the selected
/// clusters without replacement, with probability proportional to
/// `max(cosine(query, tool), 1e-6)`.
pub fn cluster_weighted_select<T: Scalar>(
    catalog: &ToolCatalog<T>,
    query: &[T],
    k_clusters: usize,
    n_nearest: usize,
    budget: usize,
    seed: u64,
) -> Result<CandidateSet> {
    check_budget(budget)?;
    let pool = nearest_cluster_members(catalog, query, k_clusters, n_nearest, seed)?;
    let name = Method::Baseline(BaselineKind::ClusterWeighted).name();
    if budget >= pool.len() {
        return Ok(CandidateSet::from_tools(catalog, pool, name));
    }
    let weights: Vec<f64> = pool
        .iter()
        .map(|&i| {
            cosine(query, &catalog.tools()[i].embedding)
                .map(|s| s.get())
                .unwrap_or(0.0)
                .max(WEIGHT_FLOOR)
        })
        .collect();
    // sampling stream is independent of the k-means stream
    let mut rng = ChaCha8Rng::seed_from_u64(crate::gmm::mix_seed(seed, 0xC1u64));
    let picked = index::sample_weighted(&mut rng, pool.len(), |j| weights[j], budget)
        .map_err(|e| Error::Numerical(format!("weighted sampling failed: {e}")))?;
    Ok(CandidateSet::from_tools(
        catalog,
        picked.into_iter().map(|j| pool[j]),
        name,
    ))
}

/// DBSCAN clusters over tool embeddings with distance `1 − cosine`.
/// Noise points become singleton clusters. Clusters are ordered by their
/// lowest member index.
pub fn dbscan<T: Scalar>(catalog: &ToolCatalog<T>, eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
    let tools = catalog.tools();
    let n = tools.len();
    let units: Vec<Vec<f64>> = tools
        .iter()
        .map(|t| {
            let v = t.embedding.to_f64();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| 1.0 - dot(&units[i], &units[j]) <= eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    const UNVISITED: usize = usize::MAX;
    let mut label = vec![UNVISITED; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if label[start] != UNVISITED || !core[start] {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![start];
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if label[q] == UNVISITED {
                    label[q] = id;
                    members.push(q);
                    queue.push_back(q);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    for i in 0..n {
        if label[i] == UNVISITED {
            clusters.push(vec![i]);
        }
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Member minimizing the summed `1 − cosine` distance to the other members;
/// ties by index.
fn medoid<T: Scalar>(catalog: &ToolCatalog<T>, members: &[usize]) -> usize {
    let tools = catalog.tools();
    let mut best = (f64::INFINITY, members[0]);
    for &i in members {
        let total: f64 = members
            .iter()
            .map(|&j| 1.0 - dot(&tools[i].embedding, &tools[j].embedding))
            .sum();
        if total < best.0 {
            best = (total, i);
        }
    }
    best.1
}

/// All members of the DBSCAN cluster whose medoid is most similar to the
/// query.
pub fn density_select<T: Scalar>(
    catalog: &ToolCatalog<T>,
    query: &[T],
    eps: f64,
    min_pts: usize,
) -> Result<CandidateSet> {
    check_query(catalog, query)?;
    if !(eps > 0.0 && eps < 2.0) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside (0, 2)")));
    }
    if min_pts == 0 {
        return Err(Error::InvalidArgument("min_pts must be >= 1".into()));
    }
    let clusters = dbscan(catalog, eps, min_pts);
    let mut best: Option<(f64, usize)> = None;
    for (c, members) in clusters.iter().enumerate() {
        let m = medoid(catalog, members);
        let s = cosine(query, &catalog.tools()[m].embedding)?.get();
        if best.map_or(true, |(bs, _)| s > bs) {
            best = Some((s, c));
        }
    }
    let (_, c) = best.expect("non-empty catalog yields a cluster");
    Ok(CandidateSet::from_tools(
        catalog,
        clusters[c].iter().copied(),
        Method::Baseline(BaselineKind::DensityBased).name(),
    ))
}

fn check_budget(budget: usize) -> Result<()> {
    if budget == 0 {
        Err(Error::InvalidArgument("budget must be >= 1".into()))
    } else {
        Ok(())
    }
}

fn check_query<T: Scalar>(catalog: &ToolCatalog<T>, query: &[T]) -> Result<()> {
    if !catalog.is_normalized() {
        return Err(Error::NotNormalized("baseline selection"));
    }
    if query.len() != catalog.dimension() {
        return Err(Error::DimensionMismatch {
            expected: catalog.dimension(),
            actual: query.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_catalog, random_catalog, PlantedSpec};

    fn planted() -> ToolCatalog<f64> {
        planted_catalog(&PlantedSpec {
            servers: 3,
            tools_per_server: 5,
            dimension: 16,
            ..PlantedSpec::default()
        })
        .catalog
    }

    fn ids(set: &CandidateSet) -> Vec<&str> {
        set.tools.iter().map(|t| t.tool_id.as_str()).collect()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        let err = "bogus".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("cluster-weighted") && err.contains("hgmf"));
    }

    #[test]
    fn mcp_zero_examples() {
        let c = planted();
        assert_eq!(mcp_zero(&c, 100, 1).unwrap().len(), 15);
        assert_eq!(mcp_zero(&c, 1, 1).unwrap().len(), 1);
        assert_eq!(mcp_zero(&c, 4, 9).unwrap(), mcp_zero(&c, 4, 9).unwrap());
        assert!(mcp_zero(&c, 0, 1).is_err());
    }

    #[test]
    fn mcp_zero_inclusion_is_uniform() {
        let c = random_catalog::<f64>(2, 10, 4, 3);
        let mut counts = vec![0usize; 10];
        let trials = 10_000;
        for seed in 0..trials {
            for t in mcp_zero(&c, 5, seed).unwrap().tools {
                let i = c.tools().iter().position(|x| x.tool_id == t.tool_id).unwrap();
                counts[i] += 1;
            }
        }
        for n in counts {
            let freq = n as f64 / trials as f64;
            assert!((freq - 0.5).abs() < 0.02, "{freq}");
        }
    }

    #[test]
    fn tokenization_examples() {
        let c = planted();
        let target = &c.tools()[7];
        let q = format!("{} {}", target.name, target.description);
        let set = tokenization_select(&c, &q, 1).unwrap();
        assert_eq!(ids(&set), vec![target.tool_id.as_str()]);

        let none = tokenization_select(&c, "zzz qqq", 3).unwrap();
        assert_eq!(none, tokenization_select(&c, "zzz qqq", 3).unwrap());
        // all scores zero: lowest ids win
        assert_eq!(ids(&none), vec!["srv000.tool000", "srv000.tool001", "srv000.tool002"]);
    }

    #[test]
    fn jaccard_by_hand() {
        let a = tokenize("Get the current WEATHER, please!");
        assert_eq!(
            a.iter().map(String::as_str).collect::<Vec<_>>(),
            ["current", "get", "please", "the", "weather"]
        );
        let b = tokenize("weather forecast: get tomorrow's weather");
        // {get, weather} shared; union {current, get, please, the, weather, forecast, tomorrow, s}
        assert!((jaccard(&a, &b) - 2.0 / 8.0).abs() < 1e-15);
        assert_eq!(jaccard(&tokenize(""), &tokenize("")), 0.0);
    }

    #[test]
    fn kmeans_examples() {
        let c = planted();
        let q = c.server("srv001").unwrap().embedding.as_slice().to_vec();
        assert_eq!(kmeans_select(&c, &q, 1, 1, 0).unwrap().len(), 15);
        let set = kmeans_select(&c, &q, 3, 1, 4).unwrap();
        assert!(set.tools.iter().all(|t| t.server_id == "srv001"));
        assert_eq!(set.len(), 5);
        assert_eq!(set, kmeans_select(&c, &q, 3, 1, 4).unwrap());
    }

    #[test]
    fn kmeans_with_one_point_per_cluster_is_nearest_neighbour() {
        let c = random_catalog::<f64>(4, 20, 8, 5);
        let q = crate::synthetic::random_unit(&mut ChaCha8Rng::seed_from_u64(1), 8);
        let set = kmeans_select(&c, &q, 20, 1, 2).unwrap();
        let nearest = c
            .tools()
            .iter()
            .max_by(|a, b| dot(&q, &a.embedding.to_f64()).total_cmp(&dot(&q, &b.embedding.to_f64())))
            .unwrap();
        assert_eq!(ids(&set), vec![nearest.tool_id.as_str()]);
    }

    #[test]
    fn cluster_weighted_examples() {
        let c = planted();
        let q = c.server("srv002").unwrap().embedding.as_slice().to_vec();
        let all = cluster_weighted_select(&c, &q, 3, 1, 10, 0).unwrap();
        assert_eq!(all.len(), 5);
        let some = cluster_weighted_select(&c, &q, 3, 1, 2, 0).unwrap();
        assert_eq!(some.len(), 2);
        assert!(some.tools.iter().all(|t| t.server_id == "srv002"));
    }

    #[test]
    fn cluster_weighted_favours_similar_tools() {
        // one tool aligned with the query, others nearly orthogonal
        let c = planted();
        let target = c.tools()[0].embedding.as_slice().to_vec();
        let mut counts = std::collections::HashMap::<String, usize>::new();
        for seed in 0..10_000u64 {
            for t in cluster_weighted_select(&c, &target, 1, 1, 1, seed).unwrap().tools {
                *counts.entry(t.tool_id).or_default() += 1;
            }
        }
        let top = counts["srv000.tool000"];
        assert!(counts.iter().all(|(id, &n)| id == "srv000.tool000" || n < top));
    }

    #[test]
    fn density_examples() {
        let c = planted();
        let q = c.server("srv001").unwrap().embedding.as_slice().to_vec();
        let set = density_select(&c, &q, 0.1, 2).unwrap();
        assert_eq!(set.len(), 5);
        assert!(set.tools.iter().all(|t| t.server_id == "srv001"));

        let noise = density_select(&c, &q, 0.1, 100).unwrap();
        assert_eq!(noise.len(), 1);
        let nearest = c
            .tools()
            .iter()
            .max_by(|a, b| dot(&q, &a.embedding).total_cmp(&dot(&q, &b.embedding)))
            .unwrap();
        assert_eq!(ids(&noise), vec![nearest.tool_id.as_str()]);

        let everything = density_select(&c, &q, 1.99, 1).unwrap();
        assert_eq!(everything.len(), 15);
        assert!(density_select(&c, &q, 0.0, 1).is_err());
        assert!(density_select(&c, &q, 2.0, 1).is_err());
    }

    #[test]
    fn dbscan_identical_points_form_one_cluster() {
        let c = planted();
        let same = crate::catalog::ToolCatalog::new(
            c.dimension(),
            c.servers().to_vec(),
            c.tools()
                .iter()
                .map(|t| crate::catalog::ToolRecord {
                    embedding: c.tools()[0].embedding.clone(),
                    ..t.clone()
                })
                .collect(),
        )
        .unwrap()
        .normalize()
        .unwrap();
        let clusters = dbscan(&same, 0.01, 3);
        assert_eq!(clusters.len(), 1);
        let q = same.tools()[0].embedding.as_slice().to_vec();
        assert_eq!(density_select(&same, &q, 0.01, 3).unwrap().len(), 15);
    }
}
