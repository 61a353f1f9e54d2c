//! POI text embeddings.
//!
//! The hash backend needs no model: it feature-hashes character n-grams of
//! each text field into a fixed-width signed vector, weighting the category
//! field above name and address, and L2-normalizes the result.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Poi;

pub const HASH_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding backend failed (retryable): {0}")]
    Retryable(String),
    #[error("embedding backend returned an invalid vector: {0}")]
    Invalid(String),
    #[error("embedding failed for POI `{poi_id}` after {attempts} attempts: {last}")]
    Exhausted { poi_id: String, attempts: usize, last: String },
}

/// Text fields of a POI in embedding order: name, category, address.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoiText {
    pub name: Option<String>,
    pub category: String,
    pub address: Option<String>,
}

impl PoiText {
    pub fn of(poi: &Poi) -> Self {
        PoiText { name: poi.name.clone(), category: poi.category.clone(), address: poi.address.clone() }
    }

    /// "name, category, address", skipping absent fields.
    pub fn joined(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(3);
        if let Some(n) = self.name.as_deref().filter(|s| !s.is_empty()) {
            parts.push(n);
        }
        parts.push(&self.category);
        if let Some(a) = self.address.as_deref().filter(|s| !s.is_empty()) {
            parts.push(a);
        }
        parts.join(", ")
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &PoiText) -> Result<Vec<f32>, EmbedError>;

    /// Identifier recorded in the codebook.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub category_weight: f32,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: HASH_DIM, seed: 17, category_weight: 3.0 }
    }
}

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        HashEmbedder { seed, ..Default::default() }
    }

    fn add_field(&self, v: &mut [f32], field: &str, weight: f32) {
        let chars: Vec<char> = format!(" {} ", field.to_lowercase()).chars().collect();
        for n in 2..=4 {
            if chars.len() < n {
                continue;
            }
            for gram in chars.windows(n) {
                let mut buf = [0u8; 16];
                let mut h = fnv1a(self.seed ^ (n as u64), &[]);
                for c in gram {
                    h = fnv1a(h, c.encode_utf8(&mut buf).as_bytes());
                }
                let idx = (h % self.dim as u64) as usize;
                let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
                v[idx] += sign * weight;
            }
        }
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed(&self, text: &PoiText) -> Result<Vec<f32>, EmbedError> {
        let mut v = vec![0f32; self.dim];
        if let Some(name) = text.name.as_deref() {
            self.add_field(&mut v, name, 1.0);
        }
        self.add_field(&mut v, &text.category, self.category_weight);
        if let Some(addr) = text.address.as_deref() {
            self.add_field(&mut v, addr, 1.0);
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }

    fn describe(&self) -> String {
        format!("hash(dim={},seed={},category_weight={})", self.dim, self.seed, self.category_weight)
    }
}

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    if h == 0 {
        h = OFFSET;
    }
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    // final avalanche so the top bit is usable as a sign
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51afd7ed558ccd);
    h ^ (h >> 33)
}

/// Posts `{"input": text}` to an embedding endpoint; accepts either
/// `{"embedding": [...]}` or OpenAI-style `{"data": [{"embedding": [...]}]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpEmbedder {
            endpoint: endpoint.into(),
            api_key: std::env::var("NEXTPOI_EMBED_API_KEY").ok(),
            model: std::env::var("NEXTPOI_EMBED_MODEL").ok(),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingBody {
    embedding: Option<Vec<f32>>,
    data: Option<Vec<EmbeddingItem>>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
}

impl EmbeddingBackend for HttpEmbedder {
    fn embed(&self, text: &PoiText) -> Result<Vec<f32>, EmbedError> {
        let mut body = serde_json::json!({ "input": text.joined() });
        if let Some(m) = &self.model {
            body["model"] = serde_json::Value::String(m.clone());
        }
        let mut req = ureq::post(&self.endpoint).timeout(self.timeout);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(|e| EmbedError::Retryable(e.to_string()))?;
        let parsed: EmbeddingBody = resp.into_json().map_err(|e| EmbedError::Invalid(e.to_string()))?;
        let v = parsed
            .embedding
            .or_else(|| parsed.data.and_then(|d| d.into_iter().next()).map(|i| i.embedding))
            .ok_or_else(|| EmbedError::Invalid("response has no embedding".into()))?;
        Ok(v)
    }

    fn describe(&self) -> String {
        format!("http:{}", self.endpoint)
    }
}

/// Embeds one POI, retrying retryable failures up to `attempts` times and
/// checking the vector is finite and of the expected width.
pub fn embed_poi_text(poi: &Poi, backend: &dyn EmbeddingBackend, attempts: usize, expected_dim: Option<usize>) -> Result<Vec<f32>, EmbedError> {
    let text = PoiText::of(poi);
    let mut last = String::new();
    for attempt in 1..=attempts.max(1) {
        match backend.embed(&text) {
            Ok(v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::Invalid(format!("non-finite or empty vector for `{}`", poi.poi_id)));
                }
                if let Some(d) = expected_dim {
                    if v.len() != d {
                        return Err(EmbedError::Invalid(format!("dimension {} != {d} for `{}`", v.len(), poi.poi_id)));
                    }
                }
                return Ok(v);
            }
            Err(EmbedError::Retryable(msg)) => {
                tracing::warn!(poi = %poi.poi_id, attempt, error = %msg, "embedding attempt failed");
                last = msg;
            }
            Err(other) => return Err(other),
        }
    }
    Err(EmbedError::Exhausted { poi_id: poi.poi_id.clone(), attempts: attempts.max(1), last })
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn poi(id: &str, cat: &str, addr: &str) -> Poi {
        Poi { poi_id: id.into(), name: None, category: cat.into(), latitude: 40.7, longitude: -74.0, address: Some(addr.into()) }
    }

    #[test]
    fn joined_text_skips_missing_fields() {
        let p = poi("x", "Coffee Shop", "1128 3rd Ave");
        assert_eq!(PoiText::of(&p).joined(), "Coffee Shop, 1128 3rd Ave");
        let named = Poi { name: Some("Joe".into()), ..p };
        assert_eq!(PoiText::of(&named).joined(), "Joe, Coffee Shop, 1128 3rd Ave");
    }

    #[test]
    fn identical_pois_identical_vectors() {
        let e = HashEmbedder::default();
        let a = embed_poi_text(&poi("a", "Bar", "1 Main St"), &e, 1, None).unwrap();
        let b = embed_poi_text(&poi("b", "Bar", "1 Main St"), &e, 1, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), HASH_DIM);
    }

    #[test]
    fn fallback_is_reproducible_across_instances() {
        let p = poi("a", "Coffee Shop", "1128 3rd Ave");
        let v1 = HashEmbedder::new(17).embed(&PoiText::of(&p)).unwrap();
        let v2 = HashEmbedder::new(17).embed(&PoiText::of(&p)).unwrap();
        assert_eq!(v1, v2);
        let norm: f32 = v1.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        let other_seed = HashEmbedder::new(18).embed(&PoiText::of(&p)).unwrap();
        assert_ne!(v1, other_seed);
    }

    /// 20-POI toy catalog: 4 categories x 5 addresses. Mean cosine over
    /// same-category pairs must exceed the mean over cross-category pairs.
    #[test]
    fn same_category_pairs_are_closer_than_cross_category_average() {
        let cats = ["Coffee Shop", "Bar", "Gym / Fitness Center", "Subway"];
        let addrs = ["1128 3rd Ave", "5 W 21st St", "599 10th Ave", "235 W 48th St", "301 Park Ave"];
        let e = HashEmbedder::default();
        let mut items = Vec::new();
        for c in cats {
            for a in addrs {
                items.push((c, e.embed(&PoiText::of(&poi("p", c, a))).unwrap()));
            }
        }
        let (mut same, mut ns, mut cross, mut nc) = (0.0f32, 0, 0.0f32, 0);
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                let s = cosine(&items[i].1, &items[j].1);
                if items[i].0 == items[j].0 {
                    same += s;
                    ns += 1;
                } else {
                    cross += s;
                    nc += 1;
                }
            }
        }
        assert_eq!((ns, nc), (40, 150));
        assert!(same / ns as f32 > cross / nc as f32);
        // every same-category pair individually beats the cross average
        let cross_avg = cross / nc as f32;
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                if items[i].0 == items[j].0 {
                    assert!(cosine(&items[i].1, &items[j].1) > cross_avg);
                }
            }
        }
    }

    struct Flaky {
        fail_first: usize,
        calls: AtomicUsize,
    }

    impl EmbeddingBackend for Flaky {
        fn embed(&self, _: &PoiText) -> Result<Vec<f32>, EmbedError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fail_first {
                Err(EmbedError::Retryable("503".into()))
            } else {
                Ok(vec![1.0, 0.0])
            }
        }
        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    #[test]
    fn retries_then_succeeds_or_exhausts() {
        let p = poi("a", "Bar", "x");
        let ok = Flaky { fail_first: 2, calls: AtomicUsize::new(0) };
        assert_eq!(embed_poi_text(&p, &ok, 3, Some(2)).unwrap(), vec![1.0, 0.0]);
        let bad = Flaky { fail_first: 5, calls: AtomicUsize::new(0) };
        assert!(matches!(embed_poi_text(&p, &bad, 3, None), Err(EmbedError::Exhausted { attempts: 3, .. })));
        let ok = Flaky { fail_first: 0, calls: AtomicUsize::new(0) };
        assert!(matches!(embed_poi_text(&p, &ok, 1, Some(3)), Err(EmbedError::Invalid(_))));
    }
}
