//! Embedding providers, cosine similarity, and top-k case retrieval.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::case_bank::{Case, CaseBank, CaseKind};
use crate::error::{Error, Result};

/// A finite, non-zero embedding vector as produced by a provider.
/// Vectors are stored as produced; cosine divides by norms at query time.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding);
        }
        if norm(&values) == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A case id with its similarity to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCase {
    pub case_id: String,
    pub score: f64,
}

pub trait Embedder: Sync {
    fn embed(&self, text: &str) -> Result<Embedding>;

    /// Maximum text length (in characters) the provider accepts, if any.
    /// Callers truncate to this before embedding.
    fn truncation_limit(&self) -> Option<usize> {
        None
    }
}

/// Deterministic offline embedder: hashed bag-of-words over a fixed number
/// of buckets. Same text always yields the same vector, with no seed and no
/// network, which is what the offline tests and replay runs need.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    max_chars: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder { dim: 64, max_chars: 100_000 }
    }
}

impl MockEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        MockEmbedder { dim, max_chars: 100_000 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for MockEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let truncated: String = text.chars().take(self.max_chars).collect();
        let mut values = vec![0.0; self.dim];
        for token in truncated
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let bucket = (fnv1a(token.as_bytes()) % self.dim as u64) as usize;
            values[bucket] += 1.0;
        }
        Embedding::new(values)
    }

    fn truncation_limit(&self) -> Option<usize> {
        Some(self.max_chars)
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Embedding provider reached over HTTP, accepting the de-facto embeddings
/// API shape (`{"model", "input"}` → `{"data": [{"embedding": [...]}]}`).
pub struct HttpEmbedder {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    max_chars: Option<usize>,
    seen_dim: Mutex<Option<usize>>,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        HttpEmbedder {
            agent: config.new_agent(),
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            max_chars: None,
            seen_dim: Mutex::new(None),
        }
    }

    pub fn with_truncation(mut self, max_chars: usize) -> Self {
        self.max_chars = Some(max_chars);
        self
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let truncated: String = match self.max_chars {
            Some(limit) => text.chars().take(limit).collect(),
            None => text.to_string(),
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&EmbeddingRequest { model: &self.model, input: &truncated })
            .map_err(|e| Error::Transport { attempts: 1, msg: e.to_string() })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Error::ProviderStatus { status, body });
        }
        let parsed: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::ProviderResponse(e.to_string()))?;
        let values = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| Error::ProviderResponse("empty data array".into()))?
            .embedding;
        let embedding = Embedding::new(values)?;
        let mut seen = self.seen_dim.lock().unwrap();
        match *seen {
            Some(dim) if dim != embedding.dim() => {
                return Err(Error::DimensionDrift { expected: dim, got: embedding.dim() })
            }
            _ => *seen = Some(embedding.dim()),
        }
        Ok(embedding)
    }

    fn truncation_limit(&self) -> Option<usize> {
        self.max_chars
    }
}

fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity dot(u,v)/(‖u‖‖v‖). Symmetric, within [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

/// The `min(k, |bank|)` cases most similar to the query, sorted by score
/// descending. Ties break by bank insertion order, earlier first.
pub fn top_k(query: &Embedding, bank: &CaseBank, k: usize) -> Result<Vec<ScoredCase>> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if k == 0 {
        return Err(Error::Config("top_k requires k >= 1".into()));
    }
    let mut scored: Vec<ScoredCase> = bank
        .cases()
        .iter()
        .map(|case| {
            Ok(ScoredCase {
                case_id: case.id.clone(),
                score: cosine(query.values(), &case.embedding)?,
            })
        })
        .collect::<Result<_>>()?;
    // Stable sort keeps insertion order among equal scores.
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("scores are finite"));
    scored.truncate(k);
    Ok(scored)
}

/// The solution case whose task description is most similar to the query
/// task: the argmax of sim(task, stored task) over the agent bank.
pub fn retrieve_best_pair<'a>(
    task_desc: &str,
    agent_bank: &'a CaseBank,
    embedder: &dyn Embedder,
) -> Result<&'a Case> {
    if agent_bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if let Some(bad) = agent_bank.cases().iter().find(|c| c.kind != CaseKind::Solution) {
        return Err(Error::WrongBank(format!(
            "agent bank contains non-solution case `{}`",
            bad.id
        )));
    }
    let query = embedder.embed(task_desc)?;
    let best = top_k(&query, agent_bank, 1)?;
    Ok(agent_bank.get(&best[0].case_id).expect("top_k returns ids present in the bank"))
}
