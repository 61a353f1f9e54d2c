//! Request/response surface shared by live HTTP backends, recorded-replay
//! backends and scripted mocks.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which protocol step an LLM request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Profile,
    Plan,
    Claims,
    Synthesis,
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub step: Step,
    pub round: Option<u32>,
    pub messages: Vec<ChatMessage>,
    /// Structured copy of what the messages describe. Live backends send
    /// only `messages`; scripted mocks read this instead of parsing prose.
    #[serde(default)]
    pub context: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    pub max_results: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub published: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchRequest {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchResponse {
    pub url: String,
    #[serde(default)]
    pub published: Option<NaiveDate>,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError>;
}

pub trait SearchBackend: Send + Sync {
    fn search(&self, request: &SearchRequest) -> Result<SearchResponse, BackendError>;
}

pub trait FetchBackend: Send + Sync {
    fn fetch(&self, request: &FetchRequest) -> Result<FetchResponse, BackendError>;
}

#[derive(Clone)]
pub struct BackendSet {
    pub llm: Arc<dyn LlmBackend>,
    pub search: Arc<dyn SearchBackend>,
    pub fetch: Arc<dyn FetchBackend>,
}

impl BackendSet {
    /// One object serving all three roles.
    pub fn uniform<B: LlmBackend + SearchBackend + FetchBackend + 'static>(backend: B) -> Self {
        let b = Arc::new(backend);
        BackendSet { llm: b.clone(), search: b.clone(), fetch: b }
    }
}

/// Closure-backed LLM, handy for scripting.
pub struct FnLlm<F>(pub F);

impl<F: Fn(&LlmRequest) -> Result<LlmResponse, BackendError> + Send + Sync> LlmBackend for FnLlm<F> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        (self.0)(request)
    }
}

pub struct FnSearch<F>(pub F);

impl<F: Fn(&SearchRequest) -> Result<SearchResponse, BackendError> + Send + Sync> SearchBackend for FnSearch<F> {
    fn search(&self, request: &SearchRequest) -> Result<SearchResponse, BackendError> {
        (self.0)(request)
    }
}

pub struct FnFetch<F>(pub F);

impl<F: Fn(&FetchRequest) -> Result<FetchResponse, BackendError> + Send + Sync> FetchBackend for FnFetch<F> {
    fn fetch(&self, request: &FetchRequest) -> Result<FetchResponse, BackendError> {
        (self.0)(request)
    }
}

// ---------------------------------------------------------------------------
// HTTP

fn classify(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Status(code, resp) => {
            let msg = format!("HTTP {code} from {}", resp.get_url());
            if code == 429 || code >= 500 {
                BackendError::Transient(msg)
            } else {
                BackendError::Fatal(msg)
            }
        }
        ureq::Error::Transport(t) => BackendError::Transient(t.to_string()),
    }
}

fn post_json<T: serde::de::DeserializeOwned>(endpoint: &str, key: Option<&str>, timeout: Duration, body: serde_json::Value) -> Result<T, BackendError> {
    let mut req = ureq::post(endpoint).timeout(timeout);
    if let Some(k) = key {
        req = req.set("Authorization", &format!("Bearer {k}"));
    }
    let resp = req.send_json(body).map_err(classify)?;
    resp.into_json().map_err(|e| BackendError::Fatal(format!("unreadable response from {endpoint}: {e}")))
}

fn env_required(name: &str) -> Result<String, BackendError> {
    std::env::var(name).map_err(|_| BackendError::Fatal(format!("environment variable {name} is not set")))
}

/// Chat-completions style endpoint: posts `{model, messages, temperature}`
/// and reads `choices[0].message.content`.
#[derive(Debug, Clone)]
pub struct HttpLlm {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpLlm {
    /// Reads `NEXTPOI_LLM_ENDPOINT`, `NEXTPOI_LLM_MODEL` and the optional
    /// `NEXTPOI_LLM_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        Ok(HttpLlm {
            endpoint: env_required("NEXTPOI_LLM_ENDPOINT")?,
            api_key: std::env::var("NEXTPOI_LLM_API_KEY").ok(),
            model: env_required("NEXTPOI_LLM_MODEL")?,
            timeout: Duration::from_secs(120),
        })
    }
}

#[derive(Deserialize)]
struct ChatBody {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

impl LlmBackend for HttpLlm {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let body = serde_json::json!({ "model": self.model, "messages": request.messages, "temperature": 0 });
        let parsed: ChatBody = post_json(&self.endpoint, self.api_key.as_deref(), self.timeout, body)?;
        let first = parsed.choices.into_iter().next().ok_or_else(|| BackendError::Fatal("completion has no choices".into()))?;
        Ok(LlmResponse { content: first.message.content })
    }
}

/// Search endpoint taking a [`SearchRequest`] body and answering with a
/// [`SearchResponse`].
#[derive(Debug, Clone)]
pub struct HttpSearch {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpSearch {
    /// Reads `NEXTPOI_SEARCH_ENDPOINT` and optional `NEXTPOI_SEARCH_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        Ok(HttpSearch {
            endpoint: env_required("NEXTPOI_SEARCH_ENDPOINT")?,
            api_key: std::env::var("NEXTPOI_SEARCH_API_KEY").ok(),
            timeout: Duration::from_secs(60),
        })
    }
}

impl SearchBackend for HttpSearch {
    fn search(&self, request: &SearchRequest) -> Result<SearchResponse, BackendError> {
        let body = serde_json::to_value(request).map_err(|e| BackendError::Fatal(e.to_string()))?;
        post_json(&self.endpoint, self.api_key.as_deref(), self.timeout, body)
    }
}

/// Page-extraction endpoint taking a [`FetchRequest`] body.
#[derive(Debug, Clone)]
pub struct HttpFetch {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpFetch {
    /// Reads `NEXTPOI_FETCH_ENDPOINT`; the API key is shared with search.
    pub fn from_env() -> Result<Self, BackendError> {
        Ok(HttpFetch {
            endpoint: env_required("NEXTPOI_FETCH_ENDPOINT")?,
            api_key: std::env::var("NEXTPOI_SEARCH_API_KEY").ok(),
            timeout: Duration::from_secs(60),
        })
    }
}

impl FetchBackend for HttpFetch {
    fn fetch(&self, request: &FetchRequest) -> Result<FetchResponse, BackendError> {
        let body = serde_json::to_value(request).map_err(|e| BackendError::Fatal(e.to_string()))?;
        post_json(&self.endpoint, self.api_key.as_deref(), self.timeout, body)
    }
}

// ---------------------------------------------------------------------------
// Replay

fn key_of<T: Serialize>(req: &T) -> String {
    serde_json::to_string(req).expect("request serializes")
}

type Queue<T> = Mutex<HashMap<String, VecDeque<Result<T, BackendError>>>>;

/// Answers each request with the outcome recorded for an identical request,
/// in recorded order when a request repeats.
#[derive(Default)]
pub struct ReplayBackend {
    llm: Queue<LlmResponse>,
    search: Queue<SearchResponse>,
    fetch: Queue<FetchResponse>,
}

fn pop<T>(q: &Queue<T>, key: String, what: &str) -> Result<T, BackendError> {
    let mut map = q.lock().expect("replay queue poisoned");
    map.get_mut(&key)
        .and_then(VecDeque::pop_front)
        .unwrap_or_else(|| Err(BackendError::Fatal(format!("no recorded {what} response for request {key}"))))
}

impl ReplayBackend {
    pub fn record_llm(&mut self, req: &LlmRequest, outcome: Result<LlmResponse, BackendError>) {
        self.llm.get_mut().expect("replay queue poisoned").entry(key_of(req)).or_default().push_back(outcome);
    }

    pub fn record_search(&mut self, req: &SearchRequest, outcome: Result<SearchResponse, BackendError>) {
        self.search.get_mut().expect("replay queue poisoned").entry(key_of(req)).or_default().push_back(outcome);
    }

    pub fn record_fetch(&mut self, req: &FetchRequest, outcome: Result<FetchResponse, BackendError>) {
        self.fetch.get_mut().expect("replay queue poisoned").entry(key_of(req)).or_default().push_back(outcome);
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        pop(&self.llm, key_of(request), "llm")
    }
}

impl SearchBackend for ReplayBackend {
    fn search(&self, request: &SearchRequest) -> Result<SearchResponse, BackendError> {
        pop(&self.search, key_of(request), "search")
    }
}

impl FetchBackend for ReplayBackend {
    fn fetch(&self, request: &FetchRequest) -> Result<FetchResponse, BackendError> {
        pop(&self.fetch, key_of(request), "fetch")
    }
}
