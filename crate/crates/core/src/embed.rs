//! Text embedding providers. The engine never embeds text itself; it asks
//! one of these.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::catalog::ToolCatalog;
use crate::error::{ClientError, Error, Result};
use crate::llm::{endpoint_url, post_json};
use crate::scalar::Scalar;

pub trait Embedder: Send + Sync {
    /// One raw (not necessarily normalized) vector per input text.
    fn embed(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ClientError>;
}

/// Environment variable holding the embeddings API key.
pub const EMBED_API_KEY_ENV: &str = "HGMF_EMBED_API_KEY";

#[derive(Debug, Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

/// Client for an OpenAI-style `POST /embeddings` endpoint.
pub struct HttpEmbedder {
    url: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, model: impl Into<String>, timeout: Duration) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpEmbedder {
            url: endpoint_url(endpoint, "embeddings"),
            model: model.into(),
            api_key: std::env::var(EMBED_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            http,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ClientError> {
        let body = EmbeddingRequest {
            model: &self.model,
            input: texts,
        };
        let resp: EmbeddingResponse =
            post_json(&self.http, &self.url, self.api_key.as_deref(), &body)?;
        if resp.data.len() != texts.len() {
            return Err(ClientError::Response(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, datum) in resp.data.into_iter().enumerate() {
            let slot = datum.index.unwrap_or(pos);
            if slot >= out.len() {
                return Err(ClientError::Response(format!("embedding index {slot} out of range")));
            }
            out[slot] = datum.embedding;
        }
        Ok(out)
    }
}

/// Exact-text lookup table. Unknown texts are an error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LookupEmbedder {
    table: HashMap<String, Vec<f64>>,
}

impl LookupEmbedder {
    pub fn new(table: HashMap<String, Vec<f64>>) -> Self {
        LookupEmbedder { table }
    }

    /// Maps every server and tool description in the catalog to its
    /// embedding.
    pub fn from_catalog<T: Scalar>(catalog: &ToolCatalog<T>) -> Self {
        let mut table = HashMap::new();
        for s in catalog.servers() {
            table.insert(s.description.clone(), s.embedding.to_f64());
        }
        for t in catalog.tools() {
            table.insert(t.description.clone(), t.embedding.to_f64());
        }
        LookupEmbedder { table }
    }

    /// Reads a JSON object mapping text to vector.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table = serde_json::from_str(&text).map_err(crate::catalog::classify_json_error)?;
        Ok(LookupEmbedder { table })
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) {
        self.table.insert(text.into(), vector);
    }

    pub fn merge(&mut self, other: LookupEmbedder) {
        self.table.extend(other.table);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Embedder for LookupEmbedder {
    fn embed(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ClientError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t.trim())
                    .cloned()
                    .ok_or_else(|| ClientError::UnknownText(t.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_embeds_known_texts() {
        let mut e = LookupEmbedder::default();
        e.insert("hello", vec![1.0, 0.0]);
        assert_eq!(e.embed(&["hello", " hello "]).unwrap().len(), 2);
        assert!(matches!(e.embed(&["bye"]), Err(ClientError::UnknownText(_))));
    }

    #[test]
    fn lookup_loads_json_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.json");
        std::fs::write(&path, r#"{"a": [1, 2], "b": [0.5, 0.5]}"#).unwrap();
        let e = LookupEmbedder::load(&path).unwrap();
        assert_eq!(e.embed(&["b"]).unwrap(), vec![vec![0.5, 0.5]]);
    }
}
