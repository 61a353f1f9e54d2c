//! World-knowledge acquisition: a three-step protocol (profile, bounded
//! retrieval with temporal verification, synthesis) run per user over
//! pluggable LLM, search and fetch backends, with a replayable transcript.

pub mod backend;
pub mod guards;
pub mod mock;
pub mod prompt;

use std::collections::{BTreeMap, HashSet};

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    BackendError, BackendSet, ChatMessage, FetchBackend, FetchRequest, FetchResponse, LlmBackend, LlmRequest, LlmResponse, ReplayBackend,
    SearchBackend, SearchHit, SearchRequest, SearchResponse, Step,
};
pub use guards::{check_format, registrable_domain, temporal_verify, truncate_words, word_count, Claim, Evidence, FormatContext, FormatViolation, TimeWindow};
pub use prompt::build_system_prompt;

use crate::ingest::{Catalog, DatasetSplit};

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub city: String,
    pub max_words: usize,
    pub max_rounds: u32,
    pub delta_days: u32,
    pub max_rewrite_attempts: u32,
    pub queries_per_round: usize,
    /// Distinct domains needed to keep a claim.
    pub min_sources: usize,
    /// Total tries per backend call when failures are transient.
    pub backend_attempts: u32,
    pub results_per_query: usize,
    /// Most recent visits shown to the model.
    pub history_lines: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            city: String::new(),
            max_words: 150,
            max_rounds: 2,
            delta_days: 30,
            max_rewrite_attempts: 1,
            queries_per_round: 6,
            min_sources: 2,
            backend_attempts: 3,
            results_per_query: 5,
            history_lines: 150,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.city.trim().is_empty() {
            return bad("city is required");
        }
        if self.max_words == 0 {
            return bad("max_words must be positive");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be positive");
        }
        if self.queries_per_round == 0 || self.results_per_query == 0 {
            return bad("queries_per_round and results_per_query must be positive");
        }
        if self.min_sources == 0 || self.backend_attempts == 0 || self.history_lines == 0 {
            return bad("min_sources, backend_attempts and history_lines must be positive");
        }
        Ok(())
    }
}

/// Which protocol stage a failure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Profile,
    Retrieval,
    Synthesis,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Profile => "profile",
            Stage::Retrieval => "retrieval",
            Stage::Synthesis => "synthesis",
        })
    }
}

fn stage_of(step: Step) -> Stage {
    match step {
        Step::Profile => Stage::Profile,
        Step::Plan | Step::Claims => Stage::Retrieval,
        Step::Synthesis | Step::Rewrite => Stage::Synthesis,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("user has no visits")]
    EmptyInput,
    #[error("retrieval round {attempted} exceeds the budget of {max} rounds")]
    BudgetExceeded { attempted: u32, max: u32 },
    #[error("{stage} stage failed: {source}")]
    Stage { stage: Stage, source: BackendError },
}

impl AgentError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            AgentError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// One visit as shown to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitLine {
    pub time: NaiveDateTime,
    pub poi_id: String,
    pub category: String,
    pub address: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl VisitLine {
    pub fn render(&self) -> String {
        format!(
            "{}, {}, {}, {}, {:.5}, {:.5}",
            self.time.format("%Y-%m-%d %H:%M"),
            self.poi_id,
            self.category,
            self.address,
            self.latitude,
            self.longitude
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInput {
    pub user_id: String,
    /// Chronological.
    pub visits: Vec<VisitLine>,
}

impl AgentInput {
    /// The latest visit time, treated as "now".
    pub fn anchor(&self) -> Option<NaiveDateTime> {
        self.visits.iter().map(|v| v.time).max()
    }
}

/// Agent inputs for every user with train check-ins: the user's most
/// recent `history_lines` train visits, users in id order.
pub fn inputs_from_split(split: &DatasetSplit, catalog: &Catalog, history_lines: usize) -> Vec<AgentInput> {
    let mut by_user: BTreeMap<&str, Vec<&crate::ingest::CheckIn>> = BTreeMap::new();
    for t in &split.train {
        by_user.entry(t.user_id.as_str()).or_default().extend(&t.checkins);
    }
    by_user
        .into_iter()
        .map(|(user, mut cs)| {
            cs.sort_by_key(|c| (c.utc_time, c.line_no));
            let skip = cs.len().saturating_sub(history_lines);
            let visits = cs[skip..]
                .iter()
                .filter_map(|c| {
                    let poi = catalog.get(&c.poi_id)?;
                    Some(VisitLine {
                        time: c.local_time,
                        poi_id: c.poi_id.clone(),
                        category: poi.category.clone(),
                        address: poi.address_or_coordinates(),
                        latitude: poi.latitude,
                        longitude: poi.longitude,
                    })
                })
                .collect();
            AgentInput { user_id: user.to_string(), visits }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotText {
    pub user_id: String,
    pub text: String,
    pub word_count: usize,
    pub anchor_time: NaiveDateTime,
    pub region: String,
    pub truncated: bool,
    pub rewrite_invocations: u32,
    pub low_evidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    WebSearch,
    WebFetch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateFilter {
    pub year: i32,
    pub month: u32,
    pub from: NaiveDate,
    pub to: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOutcome {
    Search(SearchResponse),
    Fetch(FetchResponse),
    Error(BackendError),
}

/// One tool invocation. `issued_at` is a logical tick so transcripts are
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub kind: ToolKind,
    pub round: u32,
    pub target: String,
    pub date_filter: Option<DateFilter>,
    pub issued_at: u64,
    pub request: serde_json::Value,
    pub outcome: ToolOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub request: LlmRequest,
    pub outcome: Result<LlmResponse, BackendError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum GuardEvent {
    BudgetExceeded { attempted_round: u32, max_rounds: u32 },
    QueryCap { round: u32, requested: usize, kept: usize },
    EvidenceDiscarded { url: String, reason: String },
    ClaimDiscarded { claim_id: String, reason: String },
    UnparseableResponse { step: Step, detail: String },
    FormatRejected { attempt: u32, violations: Vec<FormatViolation> },
    Rewrite { attempt: u32, words_before: usize, words_after: usize },
    Truncated { words_before: usize, max_words: usize },
    LowEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub profile: String,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundQueries {
    pub round: u32,
    pub queries: Vec<String>,
}

/// Full audit record of one user's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub version: u32,
    pub user_id: String,
    pub input: AgentInput,
    pub config: AgentConfig,
    pub anchor_time: Option<NaiveDateTime>,
    pub window: Option<TimeWindow>,
    pub profile: Option<Profile>,
    pub queries: Vec<RoundQueries>,
    pub evidence: Vec<Evidence>,
    pub claims: Vec<Claim>,
    pub retained_claims: Vec<String>,
    pub drafts: Vec<String>,
    pub exchanges: Vec<LlmExchange>,
    pub tool_calls: Vec<ToolCall>,
    pub guard_events: Vec<GuardEvent>,
    pub hotspot: Option<HotspotText>,
    pub failure: Option<String>,
}

impl AgentTranscript {
    fn new(input: &AgentInput, config: &AgentConfig) -> Self {
        AgentTranscript {
            version: TRANSCRIPT_VERSION,
            user_id: input.user_id.clone(),
            input: input.clone(),
            config: config.clone(),
            anchor_time: None,
            window: None,
            profile: None,
            queries: Vec::new(),
            evidence: Vec::new(),
            claims: Vec::new(),
            retained_claims: Vec::new(),
            drafts: Vec::new(),
            exchanges: Vec::new(),
            tool_calls: Vec::new(),
            guard_events: Vec::new(),
            hotspot: None,
            failure: None,
        }
    }

    /// Distinct retrieval rounds among search calls.
    pub fn search_rounds(&self) -> HashSet<u32> {
        self.tool_calls.iter().filter(|c| c.kind == ToolKind::WebSearch).map(|c| c.round).collect()
    }

    /// Backends answering every request exactly as recorded here.
    pub fn replay_backends(&self) -> BackendSet {
        let mut r = ReplayBackend::default();
        for x in &self.exchanges {
            r.record_llm(&x.request, x.outcome.clone());
        }
        for c in &self.tool_calls {
            match c.kind {
                ToolKind::WebSearch => {
                    if let Ok(req) = serde_json::from_value::<SearchRequest>(c.request.clone()) {
                        let out = match &c.outcome {
                            ToolOutcome::Search(s) => Ok(s.clone()),
                            ToolOutcome::Error(e) => Err(e.clone()),
                            ToolOutcome::Fetch(_) => Err(BackendError::Fatal("fetch outcome recorded for a search".into())),
                        };
                        r.record_search(&req, out);
                    }
                }
                ToolKind::WebFetch => {
                    if let Ok(req) = serde_json::from_value::<FetchRequest>(c.request.clone()) {
                        let out = match &c.outcome {
                            ToolOutcome::Fetch(f) => Ok(f.clone()),
                            ToolOutcome::Error(e) => Err(e.clone()),
                            ToolOutcome::Search(_) => Err(BackendError::Fatal("search outcome recorded for a fetch".into())),
                        };
                        r.record_fetch(&req, out);
                    }
                }
            }
        }
        BackendSet::uniform(r)
    }
}

/// A failed run with whatever the transcript captured before the failure.
#[derive(Debug, Clone)]
pub struct AgentFailure {
    pub error: AgentError,
    pub transcript: Box<AgentTranscript>,
}

struct Run<'a> {
    cfg: &'a AgentConfig,
    backends: &'a BackendSet,
    system: String,
    t: AgentTranscript,
    tick: u64,
}

fn extract_json<T: DeserializeOwned>(text: &str) -> Option<T> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

fn retry<T>(attempts: u32, mut call: impl FnMut() -> Result<T, BackendError>, mut log: impl FnMut(&Result<T, BackendError>)) -> Result<T, BackendError> {
    let mut last = None;
    for _ in 0..attempts {
        let out = call();
        log(&out);
        match out {
            Ok(v) => return Ok(v),
            Err(e) if e.is_transient() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| BackendError::Fatal("no attempts made".into())))
}

impl Run<'_> {
    fn llm(&mut self, step: Step, round: Option<u32>, user: String, context: serde_json::Value) -> Result<String, AgentError> {
        let request = LlmRequest { step, round, messages: vec![ChatMessage::system(self.system.clone()), ChatMessage::user(user)], context };
        let llm = self.backends.llm.clone();
        let exchanges = &mut self.t.exchanges;
        retry(self.cfg.backend_attempts, || llm.complete(&request), |out| exchanges.push(LlmExchange { request: request.clone(), outcome: out.clone() }))
            .map(|r| r.content)
            .map_err(|source| AgentError::Stage { stage: stage_of(step), source })
    }

    fn guard(&mut self, e: GuardEvent) {
        self.t.guard_events.push(e);
    }

    fn next_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }
}

fn period_label(d: NaiveDate) -> String {
    d.format("%B %Y").to_string()
}

/// Dispatches one round of searches concurrently, merges hits in (query
/// order, rank) order, and keeps only hits whose publication date (taken
/// from the hit, or from a follow-up fetch when the hit is undated) falls
/// inside `window`. Rounds beyond the budget are refused.
fn run_retrieval_round(run: &mut Run, queries: &[String], round: u32, window: &TimeWindow) -> Result<Vec<Evidence>, AgentError> {
    if round > run.cfg.max_rounds {
        return Err(AgentError::BudgetExceeded { attempted: round, max: run.cfg.max_rounds });
    }
    let filter = DateFilter { year: window.anchor.year(), month: window.anchor.month(), from: window.from, to: window.to };
    let requests: Vec<SearchRequest> = queries
        .iter()
        .map(|q| SearchRequest { query: q.clone(), date_from: window.from, date_to: window.to, max_results: run.cfg.results_per_query })
        .collect();

    let search = run.backends.search.clone();
    let attempts = run.cfg.backend_attempts;
    type Attempts = Vec<Result<SearchResponse, BackendError>>;
    let results: Vec<(Attempts, Result<SearchResponse, BackendError>)> = std::thread::scope(|s| {
        let handles: Vec<_> = requests
            .iter()
            .map(|req| {
                let search = search.clone();
                s.spawn(move || {
                    let mut log = Vec::new();
                    let out = retry(attempts, || search.search(req), |o| log.push(o.clone()));
                    (log, out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("search worker panicked")).collect()
    });

    let mut hits = Vec::new();
    let mut failure = None;
    for (req, (log, out)) in requests.iter().zip(results) {
        for attempt in log {
            let tick = run.next_tick();
            run.t.tool_calls.push(ToolCall {
                kind: ToolKind::WebSearch,
                round,
                target: req.query.clone(),
                date_filter: Some(filter.clone()),
                issued_at: tick,
                request: serde_json::to_value(req).expect("request serializes"),
                outcome: match attempt {
                    Ok(r) => ToolOutcome::Search(r),
                    Err(e) => ToolOutcome::Error(e),
                },
            });
        }
        match out {
            Ok(r) => hits.extend(r.hits.into_iter().take(run.cfg.results_per_query)),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    if let Some(source) = failure {
        return Err(AgentError::Stage { stage: Stage::Retrieval, source });
    }

    let mut evidence = Vec::new();
    for hit in hits {
        let mut date = hit.published;
        let mut excerpt = hit.snippet.clone();
        if date.is_none() {
            let req = FetchRequest { url: hit.url.clone() };
            let fetch = run.backends.fetch.clone();
            let mut log = Vec::new();
            let out = retry(attempts, || fetch.fetch(&req), |o| log.push(o.clone()));
            for attempt in log {
                let tick = run.next_tick();
                run.t.tool_calls.push(ToolCall {
                    kind: ToolKind::WebFetch,
                    round,
                    target: req.url.clone(),
                    date_filter: None,
                    issued_at: tick,
                    request: serde_json::to_value(&req).expect("request serializes"),
                    outcome: match attempt {
                        Ok(r) => ToolOutcome::Fetch(r),
                        Err(e) => ToolOutcome::Error(e),
                    },
                });
            }
            match out {
                Ok(page) => {
                    date = page.published;
                    if excerpt.is_empty() {
                        excerpt = page.text.chars().take(500).collect();
                    }
                }
                Err(e) => {
                    run.guard(GuardEvent::EvidenceDiscarded { url: hit.url.clone(), reason: format!("fetch failed: {e}") });
                    continue;
                }
            }
        }
        match date {
            None => run.guard(GuardEvent::EvidenceDiscarded { url: hit.url.clone(), reason: "undated".into() }),
            Some(d) if !window.contains(d) => {
                run.guard(GuardEvent::EvidenceDiscarded { url: hit.url.clone(), reason: format!("dated {d}, outside {}..{}", window.from, window.to) })
            }
            Some(d) => evidence.push(Evidence {
                id: 0,
                domain: registrable_domain(&hit.url),
                source_url: hit.url,
                publication_date: Some(d),
                title: hit.title,
                excerpt,
                round,
                supports_claim_ids: Vec::new(),
            }),
        }
    }
    Ok(evidence)
}

#[derive(Deserialize)]
struct PlanReply {
    #[serde(default)]
    queries: Vec<String>,
}

#[derive(Deserialize)]
struct ClaimsReply {
    #[serde(default)]
    claims: Vec<Claim>,
}

/// Result of the word-budget cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Finalized {
    pub text: String,
    pub truncated: bool,
    pub rewrite_invocations: u32,
}

/// Rewrites a draft that breaks the format or exceeds `max_words`, at most
/// `max_rewrite_attempts` times, then flattens and hard-truncates whatever
/// remains.
fn word_budget_cascade(run: &mut Run, draft: String, fmt: &FormatContext) -> Result<Finalized, AgentError> {
    let m = run.cfg.max_words;
    let mut text = draft;
    let mut rewrites = 0;
    loop {
        let violations = check_format(&text, fmt);
        let words = word_count(&text);
        if violations.is_empty() && words <= m {
            break;
        }
        if !violations.is_empty() {
            run.guard(GuardEvent::FormatRejected { attempt: rewrites, violations });
        }
        if rewrites >= run.cfg.max_rewrite_attempts {
            break;
        }
        rewrites += 1;
        let ctx = serde_json::json!({ "draft": text, "max_words": m });
        let next = run.llm(Step::Rewrite, None, prompt::rewrite_message(&text, m), ctx)?;
        run.guard(GuardEvent::Rewrite { attempt: rewrites, words_before: words, words_after: word_count(&next) });
        run.t.drafts.push(next.clone());
        text = next;
    }
    let flat = guards::sanitize(&text, fmt);
    let before = word_count(&flat);
    let (text, truncated) = truncate_words(&flat, m);
    if truncated {
        run.guard(GuardEvent::Truncated { words_before: before, max_words: m });
    }
    Ok(Finalized { text, truncated, rewrite_invocations: rewrites })
}

/// Exposed for direct testing of the cascade against a scripted rewriter.
pub fn finalize_draft(draft: &str, config: &AgentConfig, llm: std::sync::Arc<dyn LlmBackend>, fmt: &FormatContext) -> Result<(Finalized, Vec<GuardEvent>), AgentError> {
    let backends = BackendSet { llm, search: std::sync::Arc::new(mock::NoTools), fetch: std::sync::Arc::new(mock::NoTools) };
    let input = AgentInput { user_id: String::new(), visits: Vec::new() };
    let mut run = Run { cfg: config, backends: &backends, system: String::new(), t: AgentTranscript::new(&input, config), tick: 0 };
    let out = word_budget_cascade(&mut run, draft.to_string(), fmt)?;
    Ok((out, run.t.guard_events))
}

/// Runs the full protocol for one user.
pub fn run_agent(input: &AgentInput, config: &AgentConfig, backends: &BackendSet) -> Result<(HotspotText, AgentTranscript), AgentFailure> {
    let mut run = Run { cfg: config, backends, system: String::new(), t: AgentTranscript::new(input, config), tick: 0 };
    match drive(&mut run, input) {
        Ok(h) => {
            run.t.hotspot = Some(h.clone());
            Ok((h, run.t))
        }
        Err(error) => {
            run.t.failure = Some(error.to_string());
            Err(AgentFailure { error, transcript: Box::new(run.t) })
        }
    }
}

fn drive(run: &mut Run, input: &AgentInput) -> Result<HotspotText, AgentError> {
    run.system = build_system_prompt(run.cfg)?;
    let anchor = input.anchor().ok_or(AgentError::EmptyInput)?;
    let window = TimeWindow::around(anchor.date(), run.cfg.delta_days);
    run.t.anchor_time = Some(anchor);
    run.t.window = Some(window);
    let lines: Vec<String> = input.visits.iter().map(VisitLine::render).collect();

    // profile
    let anchor_text = anchor.format("%Y-%m-%d %H:%M").to_string();
    let ctx = serde_json::json!({ "anchor": anchor_text, "visits": input.visits, "city": run.cfg.city });
    let reply = run.llm(Step::Profile, None, prompt::profile_message(&anchor_text, &lines), ctx)?;
    let profile = extract_json::<Profile>(&reply).unwrap_or_else(|| {
        run.guard(GuardEvent::UnparseableResponse { step: Step::Profile, detail: "using the raw reply as the profile".into() });
        Profile { profile: reply.trim().to_string(), region: run.cfg.city.clone() }
    });
    run.t.profile = Some(profile.clone());

    // retrieval
    let period = period_label(anchor.date());
    let mut evidence: Vec<Evidence> = Vec::new();
    let mut seen_urls: HashSet<String> = HashSet::new();
    let mut round = 1;
    loop {
        let msg = prompt::plan_message(round, run.cfg.max_rounds, run.cfg.queries_per_round, &period, &profile.profile, &profile.region, evidence.len());
        let ctx = serde_json::json!({
            "round": round, "max_rounds": run.cfg.max_rounds, "period": period,
            "profile": profile.profile, "region": profile.region, "evidence": evidence.len(),
        });
        let reply = run.llm(Step::Plan, Some(round), msg, ctx)?;
        let mut queries = match extract_json::<PlanReply>(&reply) {
            Some(p) => p.queries,
            None => {
                run.guard(GuardEvent::UnparseableResponse { step: Step::Plan, detail: "no query list; ending retrieval".into() });
                Vec::new()
            }
        };
        queries.retain(|q| !q.trim().is_empty());
        if queries.is_empty() {
            break;
        }
        if queries.len() > run.cfg.queries_per_round {
            run.guard(GuardEvent::QueryCap { round, requested: queries.len(), kept: run.cfg.queries_per_round });
            queries.truncate(run.cfg.queries_per_round);
        }
        for q in &mut queries {
            if !q.contains(&period) {
                *q = format!("{} {period}", q.trim());
            }
        }
        match run_retrieval_round(run, &queries, round, &window) {
            Ok(found) => {
                run.t.queries.push(RoundQueries { round, queries });
                for mut e in found {
                    if seen_urls.insert(e.source_url.clone()) {
                        e.id = evidence.len();
                        evidence.push(e);
                    }
                }
            }
            Err(AgentError::BudgetExceeded { attempted, max }) => {
                run.guard(GuardEvent::BudgetExceeded { attempted_round: attempted, max_rounds: max });
                break;
            }
            Err(e) => return Err(e),
        }
        round += 1;
    }

    // corroboration
    let mut retained = Vec::new();
    if !evidence.is_empty() {
        let ctx = serde_json::json!({ "evidence": evidence });
        let reply = run.llm(Step::Claims, None, prompt::claims_message(&evidence), ctx)?;
        let claims = match extract_json::<ClaimsReply>(&reply) {
            Some(c) => c.claims,
            None => {
                run.guard(GuardEvent::UnparseableResponse { step: Step::Claims, detail: "no claim list".into() });
                Vec::new()
            }
        };
        let v = temporal_verify(&claims, &evidence, &window, run.cfg.min_sources);
        for (c, reason) in &v.discarded {
            run.guard(GuardEvent::ClaimDiscarded { claim_id: c.id.clone(), reason: reason.clone() });
        }
        for c in &v.retained {
            for &i in &c.evidence {
                if let Some(e) = evidence.get_mut(i) {
                    e.supports_claim_ids.push(c.id.clone());
                }
            }
        }
        run.t.claims = claims;
        run.t.retained_claims = v.retained.iter().map(|c| c.id.clone()).collect();
        retained = v.retained;
    }
    run.t.evidence = evidence;
    let low_evidence = retained.is_empty();
    if low_evidence {
        run.guard(GuardEvent::LowEvidence);
    }

    // synthesis
    let m = run.cfg.max_words;
    let ctx = serde_json::json!({ "profile": profile.profile, "region": profile.region, "claims": retained, "max_words": m });
    let draft = run.llm(Step::Synthesis, None, prompt::synthesis_message(&profile.profile, &profile.region, &retained, m), ctx)?;
    run.t.drafts.push(draft.clone());
    let fmt = FormatContext { profile: &profile.profile, input_lines: &lines };
    let fin = word_budget_cascade(run, draft, &fmt)?;

    Ok(HotspotText {
        user_id: input.user_id.clone(),
        word_count: word_count(&fin.text),
        text: fin.text,
        anchor_time: anchor,
        region: profile.region,
        truncated: fin.truncated,
        rewrite_invocations: fin.rewrite_invocations,
        low_evidence,
    })
}

/// Re-runs a recorded transcript against its own recorded responses.
pub fn replay(transcript: &AgentTranscript) -> Result<(HotspotText, AgentTranscript), AgentFailure> {
    run_agent(&transcript.input, &transcript.config, &transcript.replay_backends())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub user_id: String,
    pub stage: Option<Stage>,
    pub error: String,
}

pub enum UserOutcome {
    Done(HotspotText, Box<AgentTranscript>),
    Failed(Quarantined, Box<AgentTranscript>),
}

/// Runs every user on a pool of `workers` threads. A failing user is
/// quarantined; the others proceed. Output order follows `inputs`.
pub fn run_batch<F>(inputs: &[AgentInput], config: &AgentConfig, workers: usize, backends_for: F) -> Result<Vec<UserOutcome>, AgentError>
where
    F: Fn(&AgentInput) -> Result<BackendSet, BackendError> + Sync,
{
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AgentError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                let backends = match backends_for(input) {
                    Ok(b) => b,
                    Err(e) => {
                        let t = AgentTranscript { failure: Some(e.to_string()), ..AgentTranscript::new(input, config) };
                        return UserOutcome::Failed(Quarantined { user_id: input.user_id.clone(), stage: None, error: e.to_string() }, Box::new(t));
                    }
                };
                match run_agent(input, config, &backends) {
                    Ok((h, t)) => UserOutcome::Done(h, Box::new(t)),
                    Err(f) => UserOutcome::Failed(
                        Quarantined { user_id: input.user_id.clone(), stage: f.error.stage(), error: f.error.to_string() },
                        f.transcript,
                    ),
                }
            })
            .collect()
    }))
}
