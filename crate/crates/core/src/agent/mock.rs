//! Offline backends: a deterministic scripted agent for hermetic runs, and
//! a toolbox that refuses every call.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde_json::{json, Value};

use super::backend::*;
use super::guards::truncate_words;

/// Refuses all tool calls.
pub struct NoTools;

impl SearchBackend for NoTools {
    fn search(&self, _: &SearchRequest) -> Result<SearchResponse, BackendError> {
        Err(BackendError::Fatal("search is disabled".into()))
    }
}

impl FetchBackend for NoTools {
    fn fetch(&self, _: &FetchRequest) -> Result<FetchResponse, BackendError> {
        Err(BackendError::Fatal("fetch is disabled".into()))
    }
}

/// Deterministic stand-in for the LLM and the web toolbox. Answers depend
/// only on the request, so runs are reproducible and replayable.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    /// Retrieval rounds the planner asks for before declaring itself done.
    pub rounds: u32,
    pub queries_per_round: usize,
    /// Pad the first draft to this many words, if set.
    pub draft_words: Option<usize>,
}

impl Default for ScriptedAgent {
    fn default() -> Self {
        ScriptedAgent { rounds: 1, queries_per_round: 2, draft_words: None }
    }
}

const TOPICS: [&str; 6] = ["nightlife", "food festival", "concerts", "sports", "exhibitions", "street markets"];

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn str_at<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

fn top_categories(visits: &Value) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for v in visits.as_array().into_iter().flatten() {
        *counts.entry(str_at(v, "category").to_string()).or_default() += 1;
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(2).map(|(c, _)| c).collect()
}

impl ScriptedAgent {
    fn reply(&self, req: &LlmRequest) -> String {
        let ctx = &req.context;
        match req.step {
            Step::Profile => {
                let cats = top_categories(&ctx["visits"]);
                let profile = format!("Regular visitor of {} venues with a steady weekly routine", cats.join(" and "));
                json!({ "profile": profile, "region": str_at(ctx, "city") }).to_string()
            }
            Step::Plan => {
                let round = req.round.unwrap_or(1);
                let queries: Vec<String> = if round <= self.rounds {
                    (0..self.queries_per_round)
                        .map(|i| format!("{} {} round {round}", str_at(ctx, "region"), TOPICS[i % TOPICS.len()]))
                        .collect()
                } else {
                    Vec::new()
                };
                json!({ "queries": queries }).to_string()
            }
            Step::Claims => {
                let evidence = ctx["evidence"].as_array().cloned().unwrap_or_default();
                let claims: Vec<Value> = evidence
                    .chunks(2)
                    .filter(|pair| pair.len() == 2)
                    .enumerate()
                    .map(|(i, pair)| {
                        json!({
                            "id": format!("c{i}"),
                            "text": format!("{} drew crowds", str_at(&pair[0], "title")),
                            "evidence": [pair[0]["id"].clone(), pair[1]["id"].clone()],
                        })
                    })
                    .collect();
                json!({ "claims": claims }).to_string()
            }
            Step::Synthesis => {
                let region = str_at(ctx, "region");
                let claims: Vec<&str> = ctx["claims"].as_array().into_iter().flatten().map(|c| str_at(c, "text")).collect();
                let context = if claims.is_empty() { "no verified events stood out".to_string() } else { claims.join(", while ") };
                let mut text = format!(
                    "Recent visits show a settled routine in {region}, and around that time {context}. \
                     The user is likely to look for similar venues close to their recent stops next."
                );
                if let Some(n) = self.draft_words {
                    let mut words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
                    let mut i = 0;
                    while words.len() < n {
                        words.push(format!("filler{i}"));
                        i += 1;
                    }
                    text = words.join(" ");
                }
                text
            }
            Step::Rewrite => {
                let m = ctx["max_words"].as_u64().unwrap_or(150) as usize;
                truncate_words(str_at(ctx, "draft"), m.saturating_sub(5).max(1)).0
            }
        }
    }
}

impl LlmBackend for ScriptedAgent {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        Ok(LlmResponse { content: self.reply(request) })
    }
}

fn midpoint(from: NaiveDate, to: NaiveDate) -> NaiveDate {
    from + Duration::days((to - from).num_days() / 2)
}

impl SearchBackend for ScriptedAgent {
    fn search(&self, req: &SearchRequest) -> Result<SearchResponse, BackendError> {
        let mid = midpoint(req.date_from, req.date_to);
        let slug = format!("{:x}", fnv(&req.query));
        let offsets = [Some(-3), Some(2), None];
        let hits = offsets
            .iter()
            .enumerate()
            .take(req.max_results)
            .map(|(k, off)| SearchHit {
                // undated hits carry the day their page reports, for fetch to find
                url: match off {
                    Some(_) => format!("https://news.example{k}.com/{slug}"),
                    None => format!("https://news.example{k}.com/{slug}?d={mid}"),
                },
                title: format!("{} ({k})", req.query),
                snippet: format!("Coverage of {}", req.query),
                published: off.map(|d| mid + Duration::days(d)),
            })
            .collect();
        Ok(SearchResponse { hits })
    }
}

impl FetchBackend for ScriptedAgent {
    fn fetch(&self, req: &FetchRequest) -> Result<FetchResponse, BackendError> {
        let parsed = url::Url::parse(&req.url).map_err(|e| BackendError::Fatal(e.to_string()))?;
        let published = parsed.query_pairs().find(|(k, _)| k == "d").and_then(|(_, v)| v.parse().ok());
        Ok(FetchResponse { url: req.url.clone(), published, text: format!("Page text for {}", req.url) })
    }
}
