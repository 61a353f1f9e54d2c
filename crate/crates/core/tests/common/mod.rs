//! Independent reference implementations and scripted fixtures shared by the
//! integration tests and the acceptance runner.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, TimeZone, Utc, Weekday};
use nextpoi_core::agent::backend::{FnFetch, FnLlm, FnSearch};
use nextpoi_core::agent::mock::ScriptedAgent;
use nextpoi_core::agent::{
    registrable_domain, AgentInput, BackendSet, FetchResponse, LlmBackend, LlmResponse, SearchHit, SearchResponse, Step, VisitLine,
};
use nextpoi_core::ingest::{CheckIn, Trajectory};
use nextpoi_core::promptgen::{PromptParts, Visit};
use nextpoi_core::sid::parse_sid;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

// ---------------------------------------------------------------------------
// distance

/// Great-circle distance by the spherical law of cosines.
pub fn cosine_law_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
    6371.0 * c.acos()
}

// ---------------------------------------------------------------------------
// S2

pub fn s2_cell(lat: f64, lon: f64, level: u64) -> u64 {
    let ll = s2::latlng::LatLng::from_degrees(lat, lon);
    s2::cellid::CellID::from(ll).parent(level).0
}

// ---------------------------------------------------------------------------
// priors

pub fn checkin(user: &str, poi: &str, t: NaiveDateTime, line_no: usize) -> CheckIn {
    CheckIn { user_id: user.into(), poi_id: poi.into(), utc_time: Utc.from_utc_datetime(&t), local_time: t, line_no, trajectory_id: 0 }
}

/// Chronological random history over `n_pois` POIs, cut into trajectories
/// wherever the gap exceeds a day.
pub fn random_history(rng: &mut ChaCha8Rng, len: usize, n_pois: usize) -> (Vec<CheckIn>, Vec<Trajectory>) {
    let mut t = NaiveDate::from_ymd_opt(2012, 4, 1).unwrap().and_hms_opt(8, 0, 0).unwrap();
    let mut history = Vec::new();
    for i in 0..len {
        t += Duration::hours(rng.gen_range(1..60));
        history.push(checkin("u", &format!("p{}", rng.gen_range(0..n_pois)), t, i + 1));
    }
    let mut trajs: Vec<Trajectory> = Vec::new();
    for (i, c) in history.iter().enumerate() {
        let new = i == 0 || c.local_time - history[i - 1].local_time > Duration::hours(24);
        if new {
            trajs.push(Trajectory { trajectory_id: trajs.len() as u64, user_id: "u".into(), checkins: Vec::new() });
        }
        let mut c = c.clone();
        c.trajectory_id = trajs.len() as u64 - 1;
        trajs.last_mut().unwrap().checkins.push(c);
    }
    for (i, tr) in trajs.iter().enumerate() {
        for c in &tr.checkins {
            history[c.line_no - 1].trajectory_id = i as u64;
        }
    }
    (history, trajs)
}

/// Repeatedly extracts the best remaining item under `better`.
fn select_sorted<T: Clone>(mut items: Vec<T>, better: impl Fn(&T, &T) -> bool, take: usize) -> Vec<T> {
    let mut out = Vec::new();
    while !items.is_empty() && out.len() < take {
        let mut best = 0;
        for i in 1..items.len() {
            if better(&items[i], &items[best]) {
                best = i;
            }
        }
        out.push(items.remove(best));
    }
    out
}

/// (poi, count)
pub fn frequency_reference(history: &[CheckIn], top_n: usize) -> Vec<(String, u32)> {
    let mut pois: Vec<String> = history.iter().map(|c| c.poi_id.clone()).collect();
    pois.sort();
    pois.dedup();
    let rows: Vec<(String, u32, usize)> = pois
        .into_iter()
        .map(|p| {
            let count = history.iter().filter(|c| c.poi_id == p).count() as u32;
            let last = history.iter().rposition(|c| c.poi_id == p).unwrap();
            (p, count, last)
        })
        .collect();
    select_sorted(rows, |a, b| a.1 > b.1 || (a.1 == b.1 && (a.2 > b.2 || (a.2 == b.2 && a.0 < b.0))), top_n)
        .into_iter()
        .map(|(p, n, _)| (p, n))
        .collect()
}

/// (from, to, count)
pub fn transition_reference(trajs: &[Trajectory], last_poi: &str, k: usize) -> Vec<(String, String, u32)> {
    let mut rows: Vec<(String, String, u32)> = Vec::new();
    for t in trajs {
        for i in 0..t.checkins.len().saturating_sub(1) {
            let (a, b) = (&t.checkins[i].poi_id, &t.checkins[i + 1].poi_id);
            match rows.iter_mut().find(|r| &r.0 == a && &r.1 == b) {
                Some(r) => r.2 += 1,
                None => rows.push((a.clone(), b.clone(), 1)),
            }
        }
    }
    let conditioned: Vec<_> = rows.iter().filter(|r| r.0 == last_poi).cloned().collect();
    let pool = if conditioned.is_empty() { rows } else { conditioned };
    select_sorted(pool, |a, b| a.2 > b.2 || (a.2 == b.2 && (&a.0, &a.1) < (&b.0, &b.1)), k)
}

/// Indices chosen for a periodic selection with beta = `beta_tenths` / 10.
pub fn periodic_reference(history: &[CheckIn], budget: usize, beta_tenths: usize, dow: Weekday) -> (Vec<usize>, usize, usize) {
    let quota = beta_tenths * budget / 10;
    let mut periodic = Vec::new();
    for i in (0..history.len()).rev() {
        if periodic.len() < quota && history[i].local_time.weekday() == dow {
            periodic.push(i);
        }
    }
    let mut recent = Vec::new();
    for i in (0..history.len()).rev() {
        if recent.len() + periodic.len() < budget && !periodic.contains(&i) {
            recent.push(i);
        }
    }
    let mut all: Vec<usize> = periodic.iter().chain(&recent).copied().collect();
    all.sort();
    (all, periodic.len(), recent.len())
}

// ---------------------------------------------------------------------------
// metrics

/// (hit, gain) at cutoff `k` by scanning the first `k` candidates.
pub fn brute_force_scores(cases: &[(String, Vec<String>)], k: usize) -> (f64, f64) {
    let mut hits = 0.0;
    let mut gain = 0.0;
    for (truth, cands) in cases {
        let truth = parse_sid(truth).unwrap();
        for (i, c) in cands.iter().enumerate().take(k) {
            if parse_sid(c).map(|s| s == truth).unwrap_or(false) {
                hits += 1.0;
                gain += 1.0 / ((i + 2) as f64).log2();
                break;
            }
        }
    }
    let n = cases.len() as f64;
    (hits / n, gain / n)
}

// ---------------------------------------------------------------------------
// agent

pub fn random_agent_input(rng: &mut ChaCha8Rng, user: &str) -> AgentInput {
    let day = NaiveDate::from_ymd_opt(2012, 4, 1).unwrap() + Duration::days(rng.gen_range(0..300));
    let mut t = day.and_hms_opt(7, 0, 0).unwrap();
    let cats = ["Bar", "Coffee Shop", "Gym", "Park", "Office"];
    let visits = (0..rng.gen_range(3..15))
        .map(|i| {
            t += Duration::minutes(rng.gen_range(30..600));
            VisitLine {
                time: t,
                poi_id: format!("v{i}"),
                category: cats[rng.gen_range(0..cats.len())].into(),
                address: format!("{} Main St", rng.gen_range(1..500)),
                latitude: 40.7 + rng.gen_range(0.0..0.1),
                longitude: -74.0 + rng.gen_range(0.0..0.1),
            }
        })
        .collect();
    AgentInput { user_id: user.into(), visits }
}

fn seed_of(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

const DOMAINS: [&str; 6] = ["https://a.metro.com", "https://www.metro.com", "https://citynews.org", "https://events.example.net", "https://blog.bbc.co.uk", "https://news.bbc.co.uk"];

#[derive(Deserialize)]
struct EvidenceRef {
    id: usize,
}

/// Search results with dates scattered up to `spread` days around the
/// request window, across domains some of which share a registrable part;
/// claims cite random evidence subsets. Every answer is a function of the
/// request, so runs replay exactly.
pub fn scattered_backends(spread: i64) -> BackendSet {
    let scripted = Arc::new(ScriptedAgent { rounds: 2, queries_per_round: 3, draft_words: None });
    let llm_inner = scripted.clone();
    let llm = FnLlm(move |req: &nextpoi_core::agent::LlmRequest| {
        if req.step != Step::Claims {
            return llm_inner.complete(req);
        }
        let ev: Vec<EvidenceRef> = serde_json::from_value(req.context["evidence"].clone()).unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&req.context.to_string()));
        let claims: Vec<_> = (0..ev.len().min(6))
            .map(|i| {
                let n = rng.gen_range(1..=3.min(ev.len()));
                let ids: Vec<usize> = ev.choose_multiple(&mut rng, n).map(|e| e.id).collect();
                json!({ "id": format!("k{i}"), "text": format!("event {i}"), "evidence": ids })
            })
            .collect();
        Ok(LlmResponse { content: json!({ "claims": claims }).to_string() })
    });
    let search = FnSearch(move |req: &nextpoi_core::agent::SearchRequest| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&req.query));
        let mid = req.date_from + Duration::days((req.date_to - req.date_from).num_days() / 2);
        let hits = (0..req.max_results)
            .map(|k| {
                let base = DOMAINS[rng.gen_range(0..DOMAINS.len())];
                let dated = rng.gen_bool(0.7);
                let off = rng.gen_range(-spread..=spread);
                SearchHit {
                    url: format!("{base}/{:x}/{k}?off={off}", seed_of(&req.query)),
                    title: format!("{} #{k}", req.query),
                    snippet: String::new(),
                    published: dated.then(|| mid + Duration::days(off)),
                }
            })
            .collect();
        Ok(SearchResponse { hits })
    });
    let fetch = FnFetch(move |req: &nextpoi_core::agent::FetchRequest| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&req.url));
        // half of the pages report a date derived from the URL, mostly outside any window
        let off: Option<i64> = url::Url::parse(&req.url).ok().and_then(|u| u.query_pairs().find(|(k, _)| k == "off").and_then(|(_, v)| v.parse().ok()));
        let anchor_guess = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
        let published = if rng.gen_bool(0.5) { off.map(|o| anchor_guess + Duration::days(o)) } else { None };
        Ok(FetchResponse { url: req.url.clone(), published, text: "page".into() })
    });
    BackendSet { llm: Arc::new(llm), search: Arc::new(search), fetch: Arc::new(fetch) }
}

pub fn distinct_domains<'a>(urls: impl IntoIterator<Item = &'a str>) -> usize {
    urls.into_iter().map(registrable_domain).collect::<BTreeSet<_>>().len()
}

// ---------------------------------------------------------------------------
// prompt fixture

#[derive(Deserialize)]
struct FixtureEntry {
    category: String,
    sid: String,
    count: u32,
}

#[derive(Deserialize)]
struct FixtureTransition {
    from: String,
    to: String,
    count: u32,
}

#[derive(Deserialize)]
struct FixtureVisit {
    time: NaiveDateTime,
    category: String,
    address: String,
    sid: String,
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct Fixture {
    frequency: Vec<FixtureEntry>,
    transitions: Vec<FixtureTransition>,
    preference: Option<String>,
    sequence: Vec<FixtureVisit>,
    target_time: NaiveDateTime,
    output: String,
}

pub fn fixtures_dir() -> PathBuf {
    // resolves from both the core crate and the acceptance crate
    Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().join("core/tests/fixtures")
}

/// The transcribed prompt example: (parts, expected input text, output SID).
pub fn prompt_example() -> (PromptParts, String, String) {
    let dir = fixtures_dir();
    let fx: Fixture = serde_json::from_str(&std::fs::read_to_string(dir.join("prompt_example.json")).unwrap()).unwrap();
    let expected = std::fs::read_to_string(dir.join("prompt_example_input.txt")).unwrap();
    let sid = |s: &str| parse_sid(s).unwrap();
    let parts = PromptParts {
        frequency: fx.frequency.iter().map(|e| (e.category.clone(), sid(&e.sid), e.count)).collect(),
        transitions: fx.transitions.iter().map(|t| (sid(&t.from), sid(&t.to), t.count)).collect(),
        preference: fx.preference,
        sequence: fx
            .sequence
            .iter()
            .map(|v| Visit { time: v.time, category: v.category.clone(), address: v.address.clone(), sid: sid(&v.sid), lat: v.lat, lon: v.lon })
            .collect(),
        target_time: fx.target_time,
    };
    (parts, expected, fx.output)
}
