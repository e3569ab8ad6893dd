//! Text embedders.

use std::time::Duration;

use serde_json::{json, Value};

use super::KbError;
use crate::Embedding;

pub const DEFAULT_DIMENSION: usize = 256;

pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in the store header.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    /// Raw vector; callers normalize.
    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, KbError>;

    fn embed(&self, text: &str) -> Result<Embedding, KbError> {
        if text.split_whitespace().next().is_none() {
            return Err(KbError::EmptyText);
        }
        let raw = self.embed_raw(text)?;
        if raw.len() != self.dimension() {
            return Err(KbError::DimensionMismatch { expected: self.dimension(), found: raw.len() });
        }
        normalize(raw)
    }
}

pub fn normalize(mut v: Vec<f32>) -> Result<Embedding, KbError> {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(KbError::EmptyText);
    }
    for x in &mut v {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(v)
}

/// Lowercased identifier/word tokens plus the parts of snake_case and camelCase identifiers.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
        let word = word.trim_matches('_');
        if word.is_empty() {
            continue;
        }
        out.push(word.to_lowercase());
        let parts = split_identifier(word);
        if parts.len() > 1 {
            out.extend(parts.into_iter().map(|p| p.to_lowercase()));
        }
    }
    out
}

fn split_identifier(word: &str) -> Vec<String> {
    let mut parts = Vec::new();
    for chunk in word.split('_').filter(|c| !c.is_empty()) {
        let mut current = String::new();
        let mut prev_lower = false;
        for ch in chunk.chars() {
            if ch.is_uppercase() && prev_lower && !current.is_empty() {
                parts.push(std::mem::take(&mut current));
            }
            prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
            current.push(ch);
        }
        if !current.is_empty() {
            parts.push(current);
        }
    }
    parts
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic bag-of-identifiers embedder: FNV-1a bucket counts, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    pub dimension: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self { dimension: DEFAULT_DIMENSION }
    }
}

impl Embedder for HashedEmbedder {
    fn id(&self) -> String {
        format!("hashed-bag-fnv1a-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, KbError> {
        let mut v = vec![0f32; self.dimension];
        let mut toks = tokens(text);
        if toks.is_empty() {
            // punctuation-only text still gets a stable vector
            toks.push(text.trim().to_string());
        }
        for t in toks {
            v[(fnv1a(t.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        Ok(v)
    }
}

/// External embedding service: POST `{"texts": [...]}` returning `{"vectors": [[...]]}`.
pub struct HttpEmbedder {
    url: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, dimension: usize) -> Self {
        let client = reqwest::blocking::Client::builder().timeout(Duration::from_secs(60)).build().expect("http client builds");
        Self { url: url.into(), dimension, client }
    }
}

pub(crate) fn parse_vectors(body: &Value) -> Result<Vec<Vec<f32>>, KbError> {
    let rows = body.get("vectors").and_then(Value::as_array).ok_or_else(|| KbError::Embedder("response lacks `vectors`".into()))?;
    rows.iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| KbError::Embedder("vector is not an array".into()))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32).ok_or_else(|| KbError::Embedder("non-numeric component".into())))
                .collect()
        })
        .collect()
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}:{}", self.url, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>, KbError> {
        let resp = self.client.post(&self.url).json(&json!({ "texts": [text] })).send().map_err(|e| KbError::Embedder(e.to_string()))?;
        let body: Value = resp.json().map_err(|e| KbError::Embedder(e.to_string()))?;
        parse_vectors(&body)?.into_iter().next().ok_or_else(|| KbError::Embedder("empty `vectors`".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::mmr::cosine;

    fn cos(a: &str, b: &str) -> f64 {
        let e = HashedEmbedder::default();
        let x: Vec<f64> = e.embed(a).unwrap().iter().map(|v| f64::from(*v)).collect();
        let y: Vec<f64> = e.embed(b).unwrap().iter().map(|v| f64::from(*v)).collect();
        cosine(&x, &y)
    }

    #[test]
    fn identifier_splitting() {
        assert_eq!(tokens("create_edge"), ["create_edge", "create", "edge"]);
        assert_eq!(tokens("ImportManager x"), ["importmanager", "import", "manager", "x"]);
        assert!(tokens("  ...  ").is_empty());
    }

    #[test]
    fn related_text_is_closer() {
        let near = cos("create_edge get_node import graph", "import manager create_edge get_node");
        let far = cos("create_edge get_node import graph", "binary search tree rotate");
        assert!(near > far, "near={near} far={far}");
        assert!(near > 0.5);
    }

    #[test]
    fn deterministic_and_normalized() {
        let e = HashedEmbedder::default();
        let a = e.embed("What is the type of variable?").unwrap();
        assert_eq!(a, e.embed("What is the type of variable?").unwrap());
        let norm: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(a.len(), 256);
        assert!(e.embed("!!!").is_ok());
        assert!(matches!(e.embed("  \n "), Err(KbError::EmptyText)));
    }

    #[test]
    fn parses_service_vectors() {
        let v = parse_vectors(&json!({"vectors": [[1.0, 2.0]]})).unwrap();
        assert_eq!(v, vec![vec![1.0f32, 2.0]]);
        assert!(parse_vectors(&json!({"data": []})).is_err());
    }
}
