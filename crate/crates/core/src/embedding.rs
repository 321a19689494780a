//! Text embeddings and the similarity math used by consolidation and analytics.

use std::time::Duration;

use petgraph::unionfind::UnionFind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("model mismatch: `{0}` vs `{1}`")]
    Model(String, String),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_tag: String,
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
    fn model_tag(&self) -> &str;
}

/// Unit-norm Gaussian vector seeded by the SHA-256 of the text.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    tag: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        HashEmbedder {
            dim,
            tag: format!("hash-{dim}"),
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

fn seed_of(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut rng = ChaCha8Rng::from_seed(seed_of(text));
        let values: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(EmbeddingVector {
            values: normalize(values),
            model_tag: self.tag.clone(),
        })
    }

    fn model_tag(&self) -> &str {
        &self.tag
    }
}

/// Sum of per-token hash vectors, normalized. Texts sharing vocabulary get
/// correlated vectors, which makes near-duplicate detection meaningful
/// without a neural model.
#[derive(Debug, Clone)]
pub struct TokenHashEmbedder {
    inner: HashEmbedder,
    tag: String,
}

impl TokenHashEmbedder {
    pub fn new(dim: usize) -> Self {
        TokenHashEmbedder {
            inner: HashEmbedder::new(dim),
            tag: format!("token-hash-{dim}"),
        }
    }
}

impl Default for TokenHashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for TokenHashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut acc = vec![0.0; self.inner.dim];
        let mut any = false;
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
        {
            any = true;
            let v = self.inner.embed(&token)?;
            acc.iter_mut().zip(&v.values).for_each(|(a, b)| *a += b);
        }
        if !any {
            return Err(EmbeddingError::EmptyText);
        }
        Ok(EmbeddingVector {
            values: normalize(acc),
            model_tag: self.tag.clone(),
        })
    }

    fn model_tag(&self) -> &str {
        &self.tag
    }
}

/// Remote embedder: POSTs `{"model", "input"}` and accepts a bare float
/// array, `{"embedding": [...]}` or `{"data": [{"embedding": [...]}]}`.
#[derive(Debug)]
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    dim: Option<usize>,
    api_key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(url: &str, model: &str, dim: Option<usize>, api_key_env: &str) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        Ok(HttpEmbedder {
            client,
            url: url.to_string(),
            model: model.to_string(),
            dim,
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }
}

pub fn parse_embedding_response(body: &Value) -> Option<Vec<f64>> {
    let arr = body
        .as_array()
        .or_else(|| body.get("embedding").and_then(Value::as_array))
        .or_else(|| body.pointer("/data/0/embedding").and_then(Value::as_array))?;
    arr.iter().map(Value::as_f64).collect()
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut call = self
            .client
            .post(&self.url)
            .json(&serde_json::json!({"model": self.model, "input": text}));
        if let Some(k) = &self.api_key {
            call = call.bearer_auth(k);
        }
        let resp = call.send().map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbeddingError::Transport(format!("HTTP {}", resp.status())));
        }
        let body: Value = resp.json().map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let values = parse_embedding_response(&body)
            .ok_or_else(|| EmbeddingError::Transport("response holds no float array".into()))?;
        if let Some(d) = self.dim {
            if values.len() != d {
                return Err(EmbeddingError::Dimension(values.len(), d));
            }
        }
        Ok(EmbeddingVector {
            values,
            model_tag: self.model.clone(),
        })
    }

    fn model_tag(&self) -> &str {
        &self.model
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::Dimension(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity that also checks the producing model.
pub fn vector_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.model_tag != b.model_tag {
        return Err(EmbeddingError::Model(a.model_tag.clone(), b.model_tag.clone()));
    }
    cosine_similarity(&a.values, &b.values)
}

/// Connected components (size >= 2) of the graph joining pairs whose
/// similarity is at least `threshold`. Groups hold input indices, ascending,
/// ordered by their smallest member.
pub fn similar_groups_from_matrix(n: usize, sim: impl Fn(usize, usize) -> f64, threshold: f64) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if sim(i, j) >= threshold {
                uf.union(i, j);
            }
        }
    }
    let labels = uf.into_labeling();
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, root) in labels.into_iter().enumerate() {
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Memoizes another embedder by exact text.
pub struct CachedEmbedder {
    inner: Box<dyn Embedder>,
    cache: parking_lot::Mutex<std::collections::HashMap<String, EmbeddingVector>>,
}

impl CachedEmbedder {
    pub fn new(inner: Box<dyn Embedder>) -> Self {
        CachedEmbedder {
            inner,
            cache: Default::default(),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().len()
    }
}

impl Embedder for CachedEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if let Some(v) = self.cache.lock().get(text) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.cache.lock().insert(text.to_string(), v.clone());
        Ok(v)
    }

    fn model_tag(&self) -> &str {
        self.inner.model_tag()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    TokenHash,
    Http,
}

/// Which embedder the engine uses. `url` and `model` apply to `http` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub url: String,
    pub model: String,
    pub api_key_env: String,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: EmbedderKind::Hash,
            dim: DEFAULT_DIM,
            url: String::new(),
            model: String::new(),
            api_key_env: "STRATEGIST_EMBEDDING_KEY".into(),
        }
    }
}

impl EmbeddingConfig {
    /// Builds the configured embedder wrapped in a cache.
    pub fn build(&self) -> Result<CachedEmbedder, EmbeddingError> {
        let inner: Box<dyn Embedder> = match self.kind {
            EmbedderKind::Hash => Box::new(HashEmbedder::new(self.dim)),
            EmbedderKind::TokenHash => Box::new(TokenHashEmbedder::new(self.dim)),
            EmbedderKind::Http => Box::new(HttpEmbedder::new(&self.url, &self.model, Some(self.dim).filter(|d| *d > 0), &self.api_key_env)?),
        };
        Ok(CachedEmbedder::new(inner))
    }
}

/// Embeds `texts` and groups them at `threshold`.
pub fn similar_groups(embedder: &dyn Embedder, texts: &[&str], threshold: f64) -> Result<Vec<Vec<usize>>, EmbeddingError> {
    let vectors = texts.iter().map(|t| embedder.embed(t)).collect::<Result<Vec<_>, _>>()?;
    let n = vectors.len();
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = vector_similarity(&vectors[i], &vectors[j])?;
            matrix[i * n + j] = s;
            matrix[j * n + i] = s;
        }
    }
    Ok(similar_groups_from_matrix(n, |i, j| matrix[i * n + j], threshold))
}

/// Mean cosine similarity over all unordered pairs; `None` for fewer than two.
pub fn mean_pairwise_similarity(vectors: &[EmbeddingVector]) -> Result<Option<f64>, EmbeddingError> {
    let n = vectors.len();
    if n < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += vector_similarity(&vectors[i], &vectors[j])?;
        }
    }
    Ok(Some(total / (n * (n - 1) / 2) as f64))
}
