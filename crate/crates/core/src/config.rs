//! Pipeline configuration: a plain `key = value` file, overridable per key
//! through `NEXTPOI_<KEY>` environment variables.
//!
//! ```text
//! # comments start with '#'
//! dataset_format = foursquare-tsv
//! min_checkins = 10
//! beta = 0.4
//! eval_ks = 1,5,10,20
//! ```
//!
//! Credentials are never read from the file; backends take them from the
//! environment directly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::ingest::{DatasetFormat, PreprocessConfig};
use crate::promptgen::{HistoryMode, PromptConfig};
use crate::sid::{Branching, CodebookConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{0}` looks like a credential; set it in the environment instead")]
    Credential(String),
    #[error("invalid value for `{key}`: {value:?} ({reason})")]
    Invalid { key: String, value: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentBackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset_format: DatasetFormat,
    pub preprocess: PreprocessConfig,
    pub codebook: CodebookConfig,
    pub embed_backend: EmbedKind,
    pub embed_endpoint: Option<String>,
    pub prompt: PromptConfig,
    pub agent: AgentConfig,
    pub agent_backend: AgentBackendKind,
    pub workers: usize,
    pub eval_ks: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_format: DatasetFormat::FoursquareTsv,
            preprocess: PreprocessConfig::default(),
            codebook: CodebookConfig::default(),
            embed_backend: EmbedKind::Hash,
            embed_endpoint: None,
            prompt: PromptConfig::default(),
            agent: AgentConfig::default(),
            agent_backend: AgentBackendKind::Mock,
            workers: 8,
            eval_ks: crate::eval::DEFAULT_KS.to_vec(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset_format",
    "min_checkins",
    "gap_hours",
    "train_ratio",
    "validation_ratio",
    "test_ratio",
    "geo_coarse_level",
    "geo_fine_level",
    "branching",
    "seed",
    "embed_backend",
    "embed_endpoint",
    "beta",
    "budget",
    "top_k",
    "top_n",
    "history_mode",
    "nearby_km",
    "far_km",
    "city",
    "max_words",
    "delta_days",
    "max_rounds",
    "max_rewrite_attempts",
    "queries_per_round",
    "min_sources",
    "agent_backend",
    "workers",
    "eval_ks",
];

fn looks_like_credential(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    ["key", "secret", "token", "password", "credential"].iter().any(|w| k.contains(w))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid { key: key.into(), value: value.into(), reason: e.to_string() })
}

fn invalid(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::Invalid { key: key.into(), value: value.into(), reason: reason.into() }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|p| parse::<usize>(key, p.trim())).collect()
}

impl PipelineConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "dataset_format" => self.dataset_format = parse(key, v)?,
            "min_checkins" => self.preprocess.min_checkins = parse(key, v)?,
            "gap_hours" => self.preprocess.gap_hours = parse(key, v)?,
            "train_ratio" => self.preprocess.ratios.train = parse(key, v)?,
            "validation_ratio" => self.preprocess.ratios.validation = parse(key, v)?,
            "test_ratio" => self.preprocess.ratios.test = parse(key, v)?,
            "geo_coarse_level" => self.codebook.geo_levels.coarse = parse(key, v)?,
            "geo_fine_level" => self.codebook.geo_levels.fine = parse(key, v)?,
            "branching" => {
                let b = parse_list(key, v)?;
                let [k1, k2, k3] = b[..] else { return Err(invalid(key, v, "expected three comma-separated values")) };
                self.codebook.branching = Branching { k1, k2, k3 };
            }
            "seed" => self.codebook.seed = parse(key, v)?,
            "embed_backend" => {
                self.embed_backend = match v {
                    "hash" => EmbedKind::Hash,
                    "http" => EmbedKind::Http,
                    _ => return Err(invalid(key, v, "expected hash or http")),
                }
            }
            "embed_endpoint" => self.embed_endpoint = (!v.is_empty()).then(|| v.to_string()),
            "beta" => self.prompt.beta = parse(key, v)?,
            "budget" => self.prompt.budget = parse(key, v)?,
            "top_k" => self.prompt.top_k = parse(key, v)?,
            "top_n" => self.prompt.top_n = parse(key, v)?,
            "history_mode" => {
                self.prompt.history_mode = match v {
                    "lines" => HistoryMode::Lines,
                    "omit" => HistoryMode::Omit,
                    _ => return Err(invalid(key, v, "expected lines or omit")),
                }
            }
            "nearby_km" => self.prompt.buckets.nearby_km = parse(key, v)?,
            "far_km" => self.prompt.buckets.far_km = parse(key, v)?,
            "city" => self.agent.city = v.to_string(),
            "max_words" => self.agent.max_words = parse(key, v)?,
            "delta_days" => self.agent.delta_days = parse(key, v)?,
            "max_rounds" => self.agent.max_rounds = parse(key, v)?,
            "max_rewrite_attempts" => self.agent.max_rewrite_attempts = parse(key, v)?,
            "queries_per_round" => self.agent.queries_per_round = parse(key, v)?,
            "min_sources" => self.agent.min_sources = parse(key, v)?,
            "agent_backend" => {
                self.agent_backend = match v {
                    "mock" => AgentBackendKind::Mock,
                    "http" => AgentBackendKind::Http,
                    _ => return Err(invalid(key, v, "expected mock or http")),
                }
            }
            "workers" => self.workers = parse(key, v)?,
            "eval_ks" => self.eval_ks = parse_list(key, v)?,
            _ if looks_like_credential(key) => return Err(ConfigError::Credential(key.into())),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses file text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if looks_like_credential(k) && !KEYS.contains(&k) {
                return Err(ConfigError::Credential(k.into()));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or only defaults when `None`), then applies
    /// `NEXTPOI_<KEY>` overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                PipelineConfig::from_text(&text)?
            }
            None => PipelineConfig::default(),
        };
        for key in KEYS {
            if let Some(v) = env(&format!("NEXTPOI_{}", key.to_ascii_uppercase())) {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |k: &str, why: &str| Err(invalid(k, "", why));
        let r = &self.preprocess.ratios;
        if [r.train, r.validation, r.test].iter().any(|x| !(0.0..=1.0).contains(x)) || (r.train + r.validation + r.test - 1.0).abs() > 1e-9 {
            return fail("train_ratio", "ratios must lie in [0, 1] and sum to 1");
        }
        if self.preprocess.min_checkins == 0 {
            return fail("min_checkins", "must be positive");
        }
        if self.preprocess.gap_hours.is_nan() || self.preprocess.gap_hours <= 0.0 {
            return fail("gap_hours", "must be positive");
        }
        let g = self.codebook.geo_levels;
        if g.coarse > g.fine || g.fine > crate::s2cell::MAX_LEVEL {
            return fail("geo_fine_level", "levels must satisfy coarse <= fine <= 30");
        }
        let b = self.codebook.branching;
        if b.k1 == 0 || b.k2 == 0 || b.k3 == 0 {
            return fail("branching", "branching factors must be positive");
        }
        if !(0.0..=1.0).contains(&self.prompt.beta) {
            return fail("beta", "must lie in [0, 1]");
        }
        if self.prompt.budget == 0 || self.prompt.top_k == 0 || self.prompt.top_n == 0 {
            return fail("budget", "budget, top_k and top_n must be positive");
        }
        let d = self.prompt.buckets;
        if !(d.nearby_km > 0.0 && d.nearby_km <= d.far_km) {
            return fail("nearby_km", "need 0 < nearby_km <= far_km");
        }
        if self.workers == 0 {
            return fail("workers", "must be positive");
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return fail("eval_ks", "need at least one positive K");
        }
        if self.embed_backend == EmbedKind::Http && self.embed_endpoint.is_none() {
            return fail("embed_endpoint", "required when embed_backend = http");
        }
        let a = &self.agent;
        if a.max_words == 0 || a.max_rounds == 0 || a.queries_per_round == 0 || a.min_sources == 0 {
            return fail("max_words", "agent limits must be positive");
        }
        Ok(())
    }

    /// Every setting as `key = value`, in key order.
    pub fn render(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        let p = &self.preprocess;
        let r = p.ratios;
        let b = self.codebook.branching;
        let pr = &self.prompt;
        let a = &self.agent;
        m.insert("dataset_format", self.dataset_format.to_string());
        m.insert("min_checkins", p.min_checkins.to_string());
        m.insert("gap_hours", p.gap_hours.to_string());
        m.insert("train_ratio", r.train.to_string());
        m.insert("validation_ratio", r.validation.to_string());
        m.insert("test_ratio", r.test.to_string());
        m.insert("geo_coarse_level", self.codebook.geo_levels.coarse.to_string());
        m.insert("geo_fine_level", self.codebook.geo_levels.fine.to_string());
        m.insert("branching", format!("{},{},{}", b.k1, b.k2, b.k3));
        m.insert("seed", self.codebook.seed.to_string());
        m.insert("embed_backend", if self.embed_backend == EmbedKind::Hash { "hash" } else { "http" }.into());
        m.insert("embed_endpoint", self.embed_endpoint.clone().unwrap_or_default());
        m.insert("beta", pr.beta.to_string());
        m.insert("budget", pr.budget.to_string());
        m.insert("top_k", pr.top_k.to_string());
        m.insert("top_n", pr.top_n.to_string());
        m.insert("history_mode", if pr.history_mode == HistoryMode::Lines { "lines" } else { "omit" }.into());
        m.insert("nearby_km", pr.buckets.nearby_km.to_string());
        m.insert("far_km", pr.buckets.far_km.to_string());
        m.insert("city", a.city.clone());
        m.insert("max_words", a.max_words.to_string());
        m.insert("delta_days", a.delta_days.to_string());
        m.insert("max_rounds", a.max_rounds.to_string());
        m.insert("max_rewrite_attempts", a.max_rewrite_attempts.to_string());
        m.insert("queries_per_round", a.queries_per_round.to_string());
        m.insert("min_sources", a.min_sources.to_string());
        m.insert("agent_backend", if self.agent_backend == AgentBackendKind::Mock { "mock" } else { "http" }.into());
        m.insert("workers", self.workers.to_string());
        m.insert("eval_ks", self.eval_ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
        m.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::render`].
    pub fn hash(&self) -> String {
        sha256_hex(self.render().as_bytes())[..16].to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
