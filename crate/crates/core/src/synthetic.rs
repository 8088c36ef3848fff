//! Synthetic catalogs with planted structure, plus matching test cases and
//! mock LLM fixtures. Used by the test suites and for offline demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::TestCase;
use crate::catalog::{ServerRecord, ToolCatalog, ToolRecord};
use crate::llm::{MockClient, MockRule};
use crate::rerank::{SERVER_LABEL, TOOL_LABEL};
use crate::scalar::Scalar;
use crate::vecmath::{dot, l2_norm, Embedding};

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let n = l2_norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `count` unit directions: orthonormal when `count <= dim`, otherwise
/// independent random directions.
pub fn directions(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = random_unit(rng, dim);
        if count <= dim {
            for u in &out {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            let n = l2_norm(&v);
            if n < 1e-3 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
        }
        out.push(v);
    }
    out
}

fn perturb(rng: &mut impl Rng, base: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (base.len() as f64).sqrt();
    base.iter()
        .map(|b| b + scale * standard_normal(rng))
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub servers: usize,
    pub tools_per_server: usize,
    pub dimension: usize,
    /// Sub-clusters of tools inside each server.
    pub tool_groups: usize,
    /// Distance of each sub-cluster center from its server center.
    pub group_offset: f64,
    /// Approximate norm of per-tool noise.
    pub tool_spread: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            servers: 16,
            tools_per_server: 8,
            dimension: 64,
            tool_groups: 1,
            group_offset: 0.0,
            tool_spread: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted<T> {
    /// Normalized catalog.
    pub catalog: ToolCatalog<T>,
    /// Planted server centers, one per server in catalog order.
    pub server_centers: Vec<Vec<f64>>,
    /// Sub-cluster index of every tool, in catalog tool order.
    pub tool_groups: Vec<usize>,
}

pub fn server_id(s: usize) -> String {
    format!("srv{s:03}")
}

pub fn tool_id(s: usize, t: usize) -> String {
    format!("srv{s:03}.tool{t:03}")
}

/// Servers sit on (near-)orthogonal directions; tools are tight blobs around
/// their server, optionally split into sub-clusters.
pub fn planted_catalog<T: Scalar>(spec: &PlantedSpec) -> Planted<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups = spec.tool_groups.max(1);
    let dirs = directions(&mut rng, spec.servers * (1 + groups), spec.dimension);
    let (centers, offsets) = dirs.split_at(spec.servers);

    let mut servers = Vec::with_capacity(spec.servers);
    let mut tools = Vec::new();
    let mut tool_groups = Vec::new();
    for (s, center) in centers.iter().enumerate() {
        let sid = server_id(s);
        let mut tool_ids = Vec::with_capacity(spec.tools_per_server);
        for t in 0..spec.tools_per_server {
            let g = t * groups / spec.tools_per_server.max(1);
            let offset = &offsets[s * groups + g];
            let base: Vec<f64> = center
                .iter()
                .zip(offset)
                .map(|(c, o)| c + spec.group_offset * o)
                .collect();
            let tid = tool_id(s, t);
            tool_ids.push(tid.clone());
            tool_groups.push(g);
            tools.push(ToolRecord {
                tool_id: tid,
                server_id: sid.clone(),
                name: format!("tool-{s}-{t}"),
                description: format!("Operation {t} (group {g}) provided by server {s}"),
                embedding: Embedding::from_f64(&unit(perturb(&mut rng, &base, spec.tool_spread))),
            });
        }
        servers.push(ServerRecord {
            server_id: sid,
            name: format!("server-{s}"),
            description: format!("Server {s} covering planted domain {s}"),
            embedding: Embedding::from_f64(center),
            tool_ids,
        });
    }
    let catalog = ToolCatalog::new(spec.dimension, servers, tools)
        .and_then(|c| c.normalize())
        .expect("planted catalog is well formed");
    Planted {
        catalog,
        server_centers: centers.to_vec(),
        tool_groups,
    }
}

/// Test cases whose query embedding is a noisy copy of a uniformly drawn
/// tool's embedding.
pub fn planted_cases<T: Scalar>(
    catalog: &ToolCatalog<T>,
    n_cases: usize,
    query_noise: f64,
    seed: u64,
) -> Vec<TestCase<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_cases)
        .map(|i| {
            let tool = catalog.tools().choose(&mut rng).expect("non-empty catalog");
            let q = unit(perturb(&mut rng, &tool.embedding.to_f64(), query_noise));
            TestCase {
                query: format!("case {i}: I need {}", tool.name),
                query_embedding: Embedding::from_f64(&q),
                truth_server_id: tool.server_id.clone(),
                truth_tool_id: tool.tool_id.clone(),
            }
        })
        .collect()
}

/// Random Gaussian embeddings; `tools` spread as evenly as possible over
/// `servers`. Returned normalized.
pub fn random_catalog<T: Scalar>(
    servers: usize,
    tools: usize,
    dimension: usize,
    seed: u64,
) -> ToolCatalog<T> {
    assert!(servers >= 1 && tools >= servers);
    let sizes: Vec<usize> = (0..servers)
        .map(|s| tools / servers + usize::from(s < tools % servers))
        .collect();
    catalog_with_sizes(&sizes, dimension, seed)
}

/// Random Gaussian catalog with the given per-server tool counts.
pub fn catalog_with_sizes<T: Scalar>(
    sizes: &[usize],
    dimension: usize,
    seed: u64,
) -> ToolCatalog<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut servers = Vec::with_capacity(sizes.len());
    let mut tools = Vec::new();
    for (s, &count) in sizes.iter().enumerate() {
        let sid = server_id(s);
        let mut tool_ids = Vec::with_capacity(count);
        for t in 0..count {
            let tid = tool_id(s, t);
            tool_ids.push(tid.clone());
            tools.push(ToolRecord {
                tool_id: tid,
                server_id: sid.clone(),
                name: format!("tool-{s}-{t}"),
                description: format!("Random tool {t} of server {s}"),
                embedding: Embedding::from_f64(&random_unit(&mut rng, dimension)),
            });
        }
        servers.push(ServerRecord {
            server_id: sid,
            name: format!("server-{s}"),
            description: format!("Random server {s}"),
            embedding: Embedding::from_f64(&random_unit(&mut rng, dimension)),
            tool_ids,
        });
    }
    ToolCatalog::new(dimension, servers, tools)
        .and_then(|c| c.normalize())
        .expect("random catalog is well formed")
}

fn echo_completion<T: Scalar>(catalog: &ToolCatalog<T>, case: &TestCase<T>) -> String {
    let server = catalog
        .server(&case.truth_server_id)
        .expect("case truth server in catalog");
    let tool = catalog
        .tool(&case.truth_tool_id)
        .expect("case truth tool in catalog");
    format!(
        "{SERVER_LABEL} {}\n{TOOL_LABEL} {}",
        server.description, tool.description
    )
}

/// Mock client that answers every case's query with the verbatim
/// descriptions of its ground-truth server and tool.
pub fn echo_client<T: Scalar>(catalog: &ToolCatalog<T>, cases: &[TestCase<T>]) -> MockClient {
    MockClient::new(
        cases
            .iter()
            .map(|c| MockRule {
                contains: vec![query_marker(&c.query)],
                completion: echo_completion(catalog, c),
            })
            .collect(),
        None,
    )
}

/// Mock client that only echoes the ground truth when the truth tool was
/// presented in the prompt; otherwise it replies without the expected labels.
pub fn confirming_client<T: Scalar>(catalog: &ToolCatalog<T>, cases: &[TestCase<T>]) -> MockClient {
    MockClient::new(
        cases
            .iter()
            .map(|c| MockRule {
                contains: vec![
                    query_marker(&c.query),
                    format!("[{}]", c.truth_tool_id),
                ],
                completion: echo_completion(catalog, c),
            })
            .collect(),
        Some("I cannot find a suitable tool among the candidates.".into()),
    )
}

/// Substring that identifies a query inside a prompt.
fn query_marker(query: &str) -> String {
    format!("User query:\n{query}\n")
}
