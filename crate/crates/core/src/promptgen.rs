//! Prompt serialization: renders frequency stats, transitions, the
//! hotspot paragraph and the visit sequence into the instruction-tuning
//! layout, and writes one JSON record per prediction target.
//!
//! Input layout (blocks separated by a blank line, list lines indented by
//! four spaces, no trailing newline):
//!
//! ```text
//! <user_poi_stats>
//! User frequently visits:
//!     Bar at <m_1><n_2><a_3><b_4><c_0> (2 times),
//!     Hotel at <m_1><n_5><a_0><b_1><c_0> (1 times).
//! </user_poi_stats>
//!
//! <transition_patterns>
//! User transition patterns:
//!     <m_..>..<c_0> → <m_..>..<c_0> (1 times).
//! </transition_patterns>
//!
//! <user_preference>
//! One paragraph.
//! </user_preference>
//!
//! Given user behavior sequence:
//! April 13th, 2012, Friday, 09:11, visit Bar at 599 10th Ave <m_..>..<c_0>.
//! April 13th, 2012, Friday, 12:45, visit Bar at 235 W 48th St <m_..>..<c_0>, distance is Nearby.
//! At April 14th, 2012, Saturday, 07:15, user will visit
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ArtifactError;
use crate::geo::haversine_km;
use crate::ingest::{Catalog, CheckIn, DatasetSplit, SplitTag, Trajectory};
use crate::priors::{self, FrequencyEntry, TransitionEntry};
use crate::sid::{parse_sid, SemanticId, SidCodebook};

pub const INSTRUCTION: &str = "Here is a record of a user's POI accesses, your task is based on the history to predict the POI that the user is likely to access at the specified time.";

/// How many check-ins before the target count as "recent" for the
/// easy/hard partition.
pub const RECENT_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("POI `{0}` is not in the catalog")]
    UnknownPoi(String),
    #[error("POI `{0}` has no semantic ID in the codebook")]
    MissingSid(String),
    #[error("current trajectory is empty")]
    EmptyCurrent,
    #[error("malformed prompt: {0}")]
    Malformed(String),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBuckets {
    pub nearby_km: f64,
    pub far_km: f64,
}

impl Default for DistanceBuckets {
    fn default() -> Self {
        DistanceBuckets { nearby_km: 2.0, far_km: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceLabel {
    Nearby,
    Medium,
    Far,
}

impl DistanceLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceLabel::Nearby => "Nearby",
            DistanceLabel::Medium => "Medium",
            DistanceLabel::Far => "Far",
        }
    }
}

impl DistanceBuckets {
    pub fn label_km(&self, km: f64) -> DistanceLabel {
        if km < self.nearby_km {
            DistanceLabel::Nearby
        } else if km <= self.far_km {
            DistanceLabel::Medium
        } else {
            DistanceLabel::Far
        }
    }
}

pub fn distance_bucket(prev: (f64, f64), next: (f64, f64), buckets: &DistanceBuckets) -> DistanceLabel {
    buckets.label_km(haversine_km(prev.0, prev.1, next.0, next.1))
}

fn ordinal_suffix(day: u32) -> &'static str {
    match (day % 10, day % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    }
}

/// "April 13th, 2012, Friday, 09:11".
pub fn format_time(t: &NaiveDateTime) -> String {
    format!(
        "{} {}{}, {}, {}, {:02}:{:02}",
        t.format("%B"),
        t.day(),
        ordinal_suffix(t.day()),
        t.year(),
        t.format("%A"),
        t.hour(),
        t.minute()
    )
}

/// Whether the periodic history is rendered as sequence lines ahead of
/// the current trajectory, or left out of the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryMode {
    #[default]
    Lines,
    Omit,
}

/// One rendered visit: everything needed for a sequence line.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub time: NaiveDateTime,
    pub category: String,
    pub address: String,
    pub sid: SemanticId,
    pub lat: f64,
    pub lon: f64,
}

/// The five prompt components, already resolved against catalog and codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptParts {
    pub frequency: Vec<(String, SemanticId, u32)>,
    pub transitions: Vec<(SemanticId, SemanticId, u32)>,
    pub preference: Option<String>,
    pub sequence: Vec<Visit>,
    pub target_time: NaiveDateTime,
}

fn push_list(out: &mut String, lines: &[String]) {
    for (i, l) in lines.iter().enumerate() {
        let end = if i + 1 == lines.len() { "." } else { "," };
        let _ = writeln!(out, "    {l}{end}");
    }
}

/// Renders the prompt input. Consecutive sequence lines carry a distance
/// label relative to the previous line; the first line has none.
pub fn render_prompt(parts: &PromptParts, buckets: &DistanceBuckets) -> String {
    let mut out = String::new();
    out.push_str("<user_poi_stats>\nUser frequently visits:\n");
    let freq: Vec<String> = parts.frequency.iter().map(|(cat, sid, n)| format!("{cat} at {sid} ({n} times)")).collect();
    push_list(&mut out, &freq);
    out.push_str("</user_poi_stats>\n\n<transition_patterns>\nUser transition patterns:\n");
    let trans: Vec<String> = parts.transitions.iter().map(|(a, b, n)| format!("{a} → {b} ({n} times)")).collect();
    push_list(&mut out, &trans);
    out.push_str("</transition_patterns>\n\n");
    if let Some(p) = &parts.preference {
        let _ = write!(out, "<user_preference>\n{p}\n</user_preference>\n\n");
    }
    out.push_str("Given user behavior sequence:\n");
    let mut prev: Option<&Visit> = None;
    for v in &parts.sequence {
        let _ = write!(out, "{}, visit {} at {} {}", format_time(&v.time), v.category, v.address, v.sid);
        if let Some(p) = prev {
            let label = distance_bucket((p.lat, p.lon), (v.lat, v.lon), buckets);
            let _ = write!(out, ", distance is {}", label.as_str());
        }
        out.push_str(".\n");
        prev = Some(v);
    }
    let _ = write!(out, "At {}, user will visit", format_time(&parts.target_time));
    out
}

/// Components recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPrompt {
    pub frequency: Vec<(String, SemanticId, u32)>,
    pub transitions: Vec<(SemanticId, SemanticId, u32)>,
    pub preference: Option<String>,
    /// (time text, category, address, sid, distance label)
    pub sequence: Vec<(String, String, String, SemanticId, Option<String>)>,
    pub target_time: String,
}

fn malformed(msg: impl Into<String>) -> PromptError {
    PromptError::Malformed(msg.into())
}

fn strip_list_line(line: &str) -> Result<&str, PromptError> {
    let body = line.strip_prefix("    ").ok_or_else(|| malformed(format!("list line not indented: {line}")))?;
    body.strip_suffix(',').or_else(|| body.strip_suffix('.')).ok_or_else(|| malformed(format!("list line lacks terminator: {line}")))
}

fn split_count(body: &str) -> Result<(&str, u32), PromptError> {
    let open = body.rfind(" (").ok_or_else(|| malformed(format!("missing count: {body}")))?;
    let n = body[open + 2..]
        .strip_suffix(" times)")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| malformed(format!("bad count: {body}")))?;
    Ok((&body[..open], n))
}

fn sid_at_end(s: &str) -> Result<(&str, SemanticId), PromptError> {
    let start = s.rfind("<m_").ok_or_else(|| malformed(format!("missing SID: {s}")))?;
    let sid = parse_sid(&s[start..]).map_err(|e| malformed(e.to_string()))?;
    Ok((s[..start].trim_end(), sid))
}

/// Parses text produced by [`render_prompt`].
pub fn parse_prompt(input: &str) -> Result<ParsedPrompt, PromptError> {
    let lines: Vec<&str> = input.split('\n').collect();
    let mut i = 0;
    let expect = |i: &mut usize, want: &str| -> Result<(), PromptError> {
        if lines.get(*i) != Some(&want) {
            return Err(malformed(format!("expected `{want}` at line {}", *i + 1)));
        }
        *i += 1;
        Ok(())
    };
    expect(&mut i, "<user_poi_stats>")?;
    expect(&mut i, "User frequently visits:")?;
    let mut frequency = Vec::new();
    while lines.get(i).is_some_and(|l| l.starts_with("    ")) {
        let (head, n) = split_count(strip_list_line(lines[i])?)?;
        let (cat, sid) = sid_at_end(head)?;
        let cat = cat.strip_suffix(" at").ok_or_else(|| malformed("frequency line lacks `at`"))?;
        frequency.push((cat.to_string(), sid, n));
        i += 1;
    }
    expect(&mut i, "</user_poi_stats>")?;
    expect(&mut i, "")?;
    expect(&mut i, "<transition_patterns>")?;
    expect(&mut i, "User transition patterns:")?;
    let mut transitions = Vec::new();
    while lines.get(i).is_some_and(|l| l.starts_with("    ")) {
        let (head, n) = split_count(strip_list_line(lines[i])?)?;
        let (a, b) = head.split_once(" → ").ok_or_else(|| malformed("transition lacks arrow"))?;
        let a = parse_sid(a).map_err(|e| malformed(e.to_string()))?;
        let b = parse_sid(b).map_err(|e| malformed(e.to_string()))?;
        transitions.push((a, b, n));
        i += 1;
    }
    expect(&mut i, "</transition_patterns>")?;
    expect(&mut i, "")?;
    let mut preference = None;
    if lines.get(i) == Some(&"<user_preference>") {
        i += 1;
        let text = lines.get(i).ok_or_else(|| malformed("unterminated preference"))?;
        preference = Some(text.to_string());
        i += 1;
        expect(&mut i, "</user_preference>")?;
        expect(&mut i, "")?;
    }
    expect(&mut i, "Given user behavior sequence:")?;
    let mut sequence = Vec::new();
    while i + 1 < lines.len() {
        let line = lines[i].strip_suffix('.').ok_or_else(|| malformed("sequence line lacks period"))?;
        let (head, label) = match line.rsplit_once(", distance is ") {
            Some((h, l)) => (h, Some(l.to_string())),
            None => (line, None),
        };
        let (head, sid) = sid_at_end(head)?;
        let (time, rest) = head.split_once(", visit ").ok_or_else(|| malformed("sequence line lacks `visit`"))?;
        let (cat, addr) = rest.split_once(" at ").ok_or_else(|| malformed("sequence line lacks `at`"))?;
        sequence.push((time.to_string(), cat.to_string(), addr.to_string(), sid, label));
        i += 1;
    }
    let last = lines.get(i).ok_or_else(|| malformed("missing target line"))?;
    let target_time = last
        .strip_prefix("At ")
        .and_then(|s| s.strip_suffix(", user will visit"))
        .ok_or_else(|| malformed("bad target line"))?;
    Ok(ParsedPrompt { frequency, transitions, preference, sequence, target_time: target_time.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub record_id: String,
    pub user_id: String,
    pub split: SplitTag,
    pub trajectory_id: u64,
    pub target_time: NaiveDateTime,
    pub target_poi: String,
    pub config_hash: String,
    pub distance_buckets: DistanceBuckets,
    pub has_preference: bool,
    pub history_mode: HistoryMode,
    /// POIs of the check-ins immediately preceding the target in the
    /// user's full chronological history, oldest first.
    pub recent_poi_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub meta: RecordMeta,
}

pub fn record_id(split: SplitTag, trajectory_id: u64) -> String {
    format!("{split}-{trajectory_id}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub top_n: usize,
    pub top_k: usize,
    pub beta: f64,
    pub budget: usize,
    pub buckets: DistanceBuckets,
    pub history_mode: HistoryMode,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            top_n: priors::DEFAULT_TOP_N,
            top_k: priors::DEFAULT_TOP_K,
            beta: priors::DEFAULT_BETA,
            budget: priors::DEFAULT_BUDGET,
            buckets: DistanceBuckets::default(),
            history_mode: HistoryMode::Lines,
        }
    }
}

/// Shared lookups for record construction.
pub struct PromptContext<'a> {
    pub catalog: &'a Catalog,
    pub codebook: &'a SidCodebook,
    pub split: &'a DatasetSplit,
    pub preferences: &'a HashMap<String, String>,
    pub config: &'a PromptConfig,
    pub config_hash: &'a str,
}

impl PromptContext<'_> {
    fn sid(&self, poi: &str) -> Result<SemanticId, PromptError> {
        self.codebook.sid_of(poi).ok_or_else(|| PromptError::MissingSid(poi.to_string()))
    }

    fn visit(&self, c: &CheckIn) -> Result<Visit, PromptError> {
        let poi = self.catalog.get(&c.poi_id).ok_or_else(|| PromptError::UnknownPoi(c.poi_id.clone()))?;
        Ok(Visit {
            time: c.local_time,
            category: poi.category.clone(),
            address: poi.address_or_coordinates(),
            sid: self.sid(&c.poi_id)?,
            lat: poi.latitude,
            lon: poi.longitude,
        })
    }
}

/// Per-user chronological views used while emitting records.
struct UserView<'a> {
    /// Train trajectories sorted by start time.
    train: Vec<&'a Trajectory>,
    /// Every check-in of the user across splits, chronological.
    full: Vec<&'a CheckIn>,
}

fn user_views(split: &DatasetSplit) -> BTreeMap<&str, UserView<'_>> {
    let mut views: BTreeMap<&str, UserView> = BTreeMap::new();
    for t in &split.train {
        views.entry(t.user_id.as_str()).or_insert_with(|| UserView { train: Vec::new(), full: Vec::new() }).train.push(t);
    }
    for t in split.all() {
        views.entry(t.user_id.as_str()).or_insert_with(|| UserView { train: Vec::new(), full: Vec::new() }).full.extend(&t.checkins);
    }
    for v in views.values_mut() {
        v.train.sort_by_key(|t| (t.start().utc_time, t.trajectory_id));
        v.full.sort_by_key(|c| (c.utc_time, c.line_no));
    }
    views
}

/// Builds the record whose target is the last check-in of `traj`, with the
/// earlier check-ins as the current sequence and features drawn from the
/// user's train trajectories that ended before `traj` began.
fn build_record(ctx: &PromptContext, view: &UserView, tag: SplitTag, traj: &Trajectory) -> Result<PromptRecord, PromptError> {
    let (target, current) = traj.checkins.split_last().ok_or(PromptError::EmptyCurrent)?;
    if current.is_empty() {
        return Err(PromptError::EmptyCurrent);
    }
    let cfg = ctx.config;
    let begin = traj.start().utc_time;
    let earlier: Vec<&Trajectory> =
        view.train.iter().copied().filter(|t| t.trajectory_id != traj.trajectory_id && t.end().utc_time < begin).collect();
    let history: Vec<CheckIn> = earlier.iter().flat_map(|t| t.checkins.iter().cloned()).collect();

    let frequency = priors::frequency_prior(&history, ctx.catalog, cfg.top_n)
        .into_iter()
        .map(|FrequencyEntry { poi_id, category, count }| Ok((category, ctx.sid(&poi_id)?, count)))
        .collect::<Result<Vec<_>, PromptError>>()?;
    let last = &current[current.len() - 1].poi_id;
    let transitions = if earlier.is_empty() { Vec::new() } else { priors::transition_prior(earlier.iter().copied(), last, cfg.top_k) };
    let transitions = transitions
        .into_iter()
        .map(|TransitionEntry { from_poi, to_poi, count }| Ok((ctx.sid(&from_poi)?, ctx.sid(&to_poi)?, count)))
        .collect::<Result<Vec<_>, PromptError>>()?;

    let mut sequence = Vec::new();
    if cfg.history_mode == HistoryMode::Lines && !history.is_empty() {
        let sel = priors::periodic_select(&history, cfg.budget, cfg.beta, target.weekday());
        for c in &sel.selected {
            sequence.push(ctx.visit(c)?);
        }
    }
    for c in current {
        sequence.push(ctx.visit(c)?);
    }

    let preference = ctx.preferences.get(&traj.user_id).cloned();
    let parts = PromptParts { frequency, transitions, preference, sequence, target_time: target.local_time };
    let input = render_prompt(&parts, &cfg.buckets);
    let output = ctx.sid(&target.poi_id)?.to_string();

    let pos = view
        .full
        .iter()
        .position(|c| c.line_no == target.line_no && c.utc_time == target.utc_time)
        .ok_or_else(|| malformed("target missing from user history"))?;
    let recent_poi_ids = view.full[pos.saturating_sub(RECENT_WINDOW)..pos].iter().map(|c| c.poi_id.clone()).collect();

    Ok(PromptRecord {
        instruction: INSTRUCTION.to_string(),
        input,
        output,
        meta: RecordMeta {
            record_id: record_id(tag, traj.trajectory_id),
            user_id: traj.user_id.clone(),
            split: tag,
            trajectory_id: traj.trajectory_id,
            target_time: target.local_time,
            target_poi: target.poi_id.clone(),
            config_hash: ctx.config_hash.to_string(),
            distance_buckets: cfg.buckets,
            has_preference: parts.preference.is_some(),
            history_mode: cfg.history_mode,
            recent_poi_ids,
        },
    })
}

/// One record per trajectory of `tag` with at least two check-ins, ordered
/// by user id then trajectory start.
pub fn build_records(ctx: &PromptContext, tag: SplitTag) -> Result<Vec<PromptRecord>, PromptError> {
    let views = user_views(ctx.split);
    let mut by_user: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in ctx.split.part(tag) {
        if t.len() >= 2 {
            by_user.entry(t.user_id.as_str()).or_default().push(t);
        }
    }
    let per_user: Vec<Result<Vec<PromptRecord>, PromptError>> = by_user
        .into_par_iter()
        .map(|(user, mut trajs)| {
            trajs.sort_by_key(|t| (t.start().utc_time, t.trajectory_id));
            let view = &views[user];
            trajs.into_iter().map(|t| build_record(ctx, view, tag, t)).collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_user {
        out.extend(r?);
    }
    Ok(out)
}

pub fn emit_records(ctx: &PromptContext, tag: SplitTag, out: &Path) -> Result<usize, PromptError> {
    let records = build_records(ctx, tag)?;
    Ok(crate::jsonl::write_jsonl(out, &records)?)
}
