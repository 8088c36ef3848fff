//! The server/tool catalog and its JSON file format.
//!
//! On disk a catalog is a single JSON object:
//!
//! ```json
//! { "dimension": 4,
//!   "servers": [ { "id": "...", "name": "...", "description": "...",
//!                  "embedding": [ ... ],
//!                  "tools": [ { "id": "...", "name": "...", "description": "...",
//!                               "embedding": [ ... ] } ] } ] }
//! ```
//!
//! Tools may carry an optional `"server_id"`; when present it must name the
//! enclosing server. Embeddings are stored raw and normalized after loading.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vecmath::{Embedding, ZERO_NORM_EPS};

/// Per-server tool cap used for retrieval.
pub const DEFAULT_TOOL_CAP: usize = 10;

/// Tolerance on `‖v‖₂ = 1` for normalized catalogs.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ToolRecord<T> {
    pub tool_id: String,
    pub server_id: String,
    pub name: String,
    pub description: String,
    pub embedding: Embedding<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerRecord<T> {
    pub server_id: String,
    pub name: String,
    pub description: String,
    pub embedding: Embedding<T>,
    /// Tools owned by this server, in declared order.
    pub tool_ids: Vec<String>,
}

/// An immutable server/tool hierarchy with embeddings.
///
/// Servers keep their declared order; `tools` is laid out server by server in
/// each server's declared tool order.
#[derive(Debug, Clone)]
pub struct ToolCatalog<T> {
    dimension: usize,
    servers: Vec<ServerRecord<T>>,
    tools: Vec<ToolRecord<T>>,
    normalized: bool,
    server_index: HashMap<String, usize>,
    tool_index: HashMap<String, usize>,
}

impl<T: Scalar> PartialEq for ToolCatalog<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension
            && self.normalized == other.normalized
            && self.servers == other.servers
            && self.tools == other.tools
    }
}

impl<T: Scalar> ToolCatalog<T> {
    /// Builds a catalog, checking every structural invariant.
    ///
    /// `tools` may be in any order; it is rearranged to follow the servers'
    /// `tool_ids`.
    pub fn new(
        dimension: usize,
        servers: Vec<ServerRecord<T>>,
        tools: Vec<ToolRecord<T>>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Schema("dimension must be positive".into()));
        }
        if servers.is_empty() {
            return Err(Error::Schema("catalog has no servers".into()));
        }
        let mut server_index = HashMap::with_capacity(servers.len());
        for (i, s) in servers.iter().enumerate() {
            check_embedding(&s.embedding, dimension, || format!("server '{}'", s.server_id))?;
            if server_index.insert(s.server_id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate server id '{}'", s.server_id)));
            }
            if s.tool_ids.is_empty() {
                return Err(Error::Schema(format!("server '{}' has no tools", s.server_id)));
            }
        }

        let mut by_id: HashMap<String, ToolRecord<T>> = HashMap::with_capacity(tools.len());
        for t in tools {
            check_embedding(&t.embedding, dimension, || format!("tool '{}'", t.tool_id))?;
            if !server_index.contains_key(&t.server_id) {
                return Err(Error::DanglingReference {
                    tool_id: t.tool_id,
                    server_id: t.server_id,
                });
            }
            if by_id.contains_key(&t.tool_id) {
                return Err(Error::Schema(format!("duplicate tool id '{}'", t.tool_id)));
            }
            by_id.insert(t.tool_id.clone(), t);
        }

        let mut ordered = Vec::with_capacity(by_id.len());
        for s in &servers {
            for id in &s.tool_ids {
                let tool = by_id.remove(id).ok_or_else(|| {
                    Error::Schema(format!("server '{}' lists unknown tool '{id}'", s.server_id))
                })?;
                if tool.server_id != s.server_id {
                    return Err(Error::Schema(format!(
                        "tool '{id}' is listed under server '{}' but owned by '{}'",
                        s.server_id, tool.server_id
                    )));
                }
                ordered.push(tool);
            }
        }
        if let Some(orphan) = by_id.keys().min() {
            return Err(Error::Schema(format!(
                "tool '{orphan}' is not listed by its server"
            )));
        }

        Ok(Self::assemble(dimension, servers, ordered, false))
    }

    fn assemble(
        dimension: usize,
        servers: Vec<ServerRecord<T>>,
        tools: Vec<ToolRecord<T>>,
        normalized: bool,
    ) -> Self {
        let server_index = servers
            .iter()
            .enumerate()
            .map(|(i, s)| (s.server_id.clone(), i))
            .collect();
        let tool_index = tools
            .iter()
            .enumerate()
            .map(|(i, t)| (t.tool_id.clone(), i))
            .collect();
        ToolCatalog {
            dimension,
            servers,
            tools,
            normalized,
            server_index,
            tool_index,
        }
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let wire: WireCatalog = serde_json::from_str(json).map_err(classify_json_error)?;
        Self::from_wire(wire)
    }

    /// Reads a catalog file. The result is not yet normalized.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    fn from_wire(wire: WireCatalog) -> Result<Self> {
        let mut servers = Vec::with_capacity(wire.servers.len());
        let mut tools = Vec::new();
        let known: HashSet<&str> = wire.servers.iter().map(|s| s.id.as_str()).collect();
        for ws in &wire.servers {
            let mut tool_ids = Vec::with_capacity(ws.tools.len());
            for wt in &ws.tools {
                let owner = match &wt.server_id {
                    Some(declared) if !known.contains(declared.as_str()) => {
                        return Err(Error::DanglingReference {
                            tool_id: wt.id.clone(),
                            server_id: declared.clone(),
                        });
                    }
                    Some(declared) => declared.clone(),
                    None => ws.id.clone(),
                };
                tool_ids.push(wt.id.clone());
                tools.push(ToolRecord {
                    tool_id: wt.id.clone(),
                    server_id: owner,
                    name: wt.name.clone(),
                    description: wt.description.clone(),
                    embedding: Embedding::from_f64(&wt.embedding),
                });
            }
            servers.push(ServerRecord {
                server_id: ws.id.clone(),
                name: ws.name.clone(),
                description: ws.description.clone(),
                embedding: Embedding::from_f64(&ws.embedding),
                tool_ids,
            });
        }
        Self::new(wire.dimension, servers, tools)
    }

    pub fn to_json_string(&self) -> String {
        let wire = WireCatalog {
            dimension: self.dimension,
            servers: self
                .servers
                .iter()
                .map(|s| WireServer {
                    id: s.server_id.clone(),
                    name: s.name.clone(),
                    description: s.description.clone(),
                    embedding: s.embedding.to_f64(),
                    tools: self
                        .tools_of_index(self.server_index[&s.server_id])
                        .map(|t| WireTool {
                            id: t.tool_id.clone(),
                            name: t.name.clone(),
                            description: t.description.clone(),
                            embedding: t.embedding.to_f64(),
                            server_id: None,
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&wire).expect("catalog serialization cannot fail")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn servers(&self) -> &[ServerRecord<T>] {
        &self.servers
    }

    pub fn tools(&self) -> &[ToolRecord<T>] {
        &self.tools
    }

    pub fn n_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn n_tools(&self) -> usize {
        self.tools.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn server(&self, server_id: &str) -> Option<&ServerRecord<T>> {
        self.server_index.get(server_id).map(|&i| &self.servers[i])
    }

    pub fn tool(&self, tool_id: &str) -> Option<&ToolRecord<T>> {
        self.tool_index.get(tool_id).map(|&i| &self.tools[i])
    }

    /// Tools owned by `server_id`, in declared order.
    pub fn tools_of<'a>(&'a self, server_id: &str) -> impl Iterator<Item = &'a ToolRecord<T>> + 'a {
        let ids: &'a [String] = self
            .server(server_id)
            .map(|s| s.tool_ids.as_slice())
            .unwrap_or(&[]);
        ids.iter().map(move |id| &self.tools[self.tool_index[id]])
    }

    fn tools_of_index(&self, server: usize) -> impl Iterator<Item = &ToolRecord<T>> + '_ {
        self.servers[server]
            .tool_ids
            .iter()
            .map(move |id| &self.tools[self.tool_index[id]])
    }

    /// Replaces every embedding by its unit-norm counterpart.
    pub fn normalize(&self) -> Result<Self> {
        let normalize = |e: &Embedding<T>, record: String| {
            if !(e.norm() > ZERO_NORM_EPS) {
                return Err(Error::ZeroVector { record });
            }
            e.normalized()
        };
        let servers = self
            .servers
            .iter()
            .map(|s| {
                Ok(ServerRecord {
                    embedding: normalize(&s.embedding, format!("server '{}'", s.server_id))?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tools = self
            .tools
            .iter()
            .map(|t| {
                Ok(ToolRecord {
                    embedding: normalize(&t.embedding, format!("tool '{}'", t.tool_id))?,
                    ..t.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(self.dimension, servers, tools, true))
    }

    /// Uniformly samples `sample_size` tools without replacement, keeping the
    /// servers that own them.
    ///
    /// Tools in `force_include` are always kept and count toward
    /// `sample_size`; the remainder is drawn from the other tools.
    pub fn subset(&self, sample_size: usize, seed: u64, force_include: &[&str]) -> Result<Self> {
        let n = self.n_tools();
        if sample_size == 0 || sample_size > n {
            return Err(Error::InvalidArgument(format!(
                "sample size {sample_size} outside 1..={n}"
            )));
        }
        let mut keep = vec![false; n];
        let mut forced = 0;
        for id in force_include {
            let &i = self
                .tool_index
                .get(*id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown tool '{id}'")))?;
            if !keep[i] {
                keep[i] = true;
                forced += 1;
            }
        }
        if forced > sample_size {
            return Err(Error::InvalidArgument(format!(
                "{forced} forced tools exceed sample size {sample_size}"
            )));
        }
        let pool: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in index::sample(&mut rng, pool.len(), sample_size - forced) {
            keep[pool[j]] = true;
        }
        Ok(self.retain(|i, _| keep[i]))
    }

    /// Keeps at most `cap` tools per server: the first `cap` in declared order.
    pub fn index_tools(&self, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument("tool cap must be positive".into()));
        }
        let allowed: HashSet<&str> = self
            .servers
            .iter()
            .flat_map(|s| s.tool_ids.iter().take(cap).map(String::as_str))
            .collect();
        Ok(self.retain(|_, t| allowed.contains(t.tool_id.as_str())))
    }

    /// Sub-catalog of the selected tools plus their owners. Servers left
    /// without tools are dropped.
    pub fn retain(&self, mut pred: impl FnMut(usize, &ToolRecord<T>) -> bool) -> Self {
        let tools: Vec<ToolRecord<T>> = self
            .tools
            .iter()
            .enumerate()
            .filter(|(i, t)| pred(*i, t))
            .map(|(_, t)| t.clone())
            .collect();
        let kept: HashSet<&str> = tools.iter().map(|t| t.tool_id.as_str()).collect();
        let servers = self
            .servers
            .iter()
            .filter_map(|s| {
                let tool_ids: Vec<String> = s
                    .tool_ids
                    .iter()
                    .filter(|id| kept.contains(id.as_str()))
                    .cloned()
                    .collect();
                (!tool_ids.is_empty()).then(|| ServerRecord {
                    tool_ids,
                    ..s.clone()
                })
            })
            .collect();
        Self::assemble(self.dimension, servers, tools, self.normalized)
    }
}

fn check_embedding<T: Scalar>(
    e: &Embedding<T>,
    dimension: usize,
    record: impl Fn() -> String,
) -> Result<()> {
    if e.dim() != dimension {
        return Err(Error::Schema(format!(
            "{} has embedding length {}, expected {dimension}",
            record(),
            e.dim()
        )));
    }
    if !e.is_finite() {
        return Err(Error::Schema(format!("{} has a non-finite embedding", record())));
    }
    Ok(())
}

pub(crate) fn classify_json_error(e: serde_json::Error) -> Error {
    match e.classify() {
        serde_json::error::Category::Data => Error::Schema(e.to_string()),
        _ => Error::Parse(e),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireCatalog {
    dimension: usize,
    servers: Vec<WireServer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireServer {
    id: String,
    name: String,
    description: String,
    embedding: Vec<f64>,
    tools: Vec<WireTool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireTool {
    id: String,
    name: String,
    description: String,
    embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    server_id: Option<String>,
}
