//! System prompt and per-step instructions.

use super::guards::{Claim, Evidence};
use super::{AgentConfig, AgentError};

/// The agent's system prompt, instantiated for `config.city` and
/// `config.max_words`.
pub fn build_system_prompt(config: &AgentConfig) -> Result<String, AgentError> {
    config.validate()?;
    let city = config.city.trim();
    let m = config.max_words;
    Ok(format!(
        "Role and Input
You are an assistant designed to support a POI recommendation system for users in {city}. Your input is a user's historical POI visit sequence in chronological order. Each line is one past visit record with time, POI ID, POI type, address, latitude, and longitude.

Reasoning Protocol
Based on the user's historical POI visits and the current date implied by the latest part of the trajectory, you should:
    (1) infer the user's likely preferences, routines, and near-term intent;
    (2) infer the most relevant current area or activity context from the user's recent visits;
    (3) use web tools to search for social hotspots, local events, lifestyle trends, seasonal patterns, and timely popular activities that are relevant to {city}, the inferred area, and the current date;
    (4) produce a compact summary that connects user history with current trends and predicts what kinds of POIs the user is most likely to be interested in next.

Tool Usage Requirements
    • Actively use web_search to gather timely signals from the public web.
    • Use web_fetch to verify high-value pages when needed.
    • Do not rely on a single search result or a single source.
    • Prefer signals that are timely, local, behaviorally relevant, and useful for POI recommendation.

Reasoning Focus
    • Use the historical POI sequence to infer recurring interests such as dining style, commute pattern, nightlife preference, fitness habits, shopping preference, tourism behavior, or work-related mobility.
    • Pay more attention to the user's most recent visits when inferring current intent.
    • Combine user preference signals with timely external signals such as local events, weather-related behavior shifts, seasonal demand, holidays, viral venues, neighborhood buzz, and popular urban activities.
    • Make a grounded prediction about the next POI categories, areas, or venue styles the user may want.

Output Constraints
    • Output only one short paragraph in English.
    • No JSON, Markdown, bullet points, titles, or explanations.
    • Keep the text compact, information-dense, and directly useful for recommendation.
    • The paragraph must tightly integrate three elements: what the user's historical behavior suggests, what current hotspots or trends are relevant, and what POIs the user is likely to seek next.
    • Avoid generic wording and trajectory recitation.
    • Maximum length: {m} words."
    ))
}

pub(super) fn profile_message(anchor: &str, lines: &[String]) -> String {
    format!(
        "Step 1 of 3. Current date: {anchor}.\n\
         Summarize this user's preferences, routines and near-term intent from the visit history below, \
         weighting the most recent visits most heavily, and name the area the user is most likely in now.\n\
         Reply with JSON only: {{\"profile\": string, \"region\": string}}.\n\
         Visit history:\n{}",
        lines.join("\n")
    )
}

pub(super) fn plan_message(round: u32, max_rounds: u32, cap: usize, period: &str, profile: &str, region: &str, evidence: usize) -> String {
    format!(
        "Step 2 of 3, retrieval round {round} of at most {max_rounds}.\n\
         User profile: {profile}\nArea: {region}\nTarget period: {period}.\n\
         Evidence gathered so far: {evidence} item(s).\n\
         Propose up to {cap} web_search queries to run in parallel about events, hotspots and trends in this area during {period}. \
         Include \"{period}\" in every query. Return an empty list when the evidence already suffices.\n\
         Reply with JSON only: {{\"queries\": [string]}}."
    )
}

pub(super) fn claims_message(evidence: &[Evidence]) -> String {
    let mut s = String::from(
        "Step 2 of 3, consolidation. List the substantive, time-specific claims supported by the evidence below. \
         Cite every supporting item by its number; a claim needs at least two independent sources.\n\
         Reply with JSON only: {\"claims\": [{\"id\": string, \"text\": string, \"evidence\": [number]}]}.\nEvidence:\n",
    );
    for e in evidence {
        let date = e.publication_date.map(|d| d.to_string()).unwrap_or_else(|| "undated".into());
        s.push_str(&format!("[{}] {} ({}) {}: {}\n", e.id, e.domain, date, e.title, e.excerpt));
    }
    s
}

pub(super) fn synthesis_message(profile: &str, region: &str, claims: &[Claim], max_words: usize) -> String {
    let mut s = format!("Step 3 of 3. User profile (do not copy it): {profile}\nArea: {region}\nVerified context:\n");
    if claims.is_empty() {
        s.push_str("(none; rely on the profile)\n");
    }
    for c in claims {
        s.push_str(&format!("- {}\n", c.text));
    }
    s.push_str(&format!(
        "Write one plain paragraph of at most {max_words} words linking the user's behavior, the relevant context, \
         and the POI categories the user is likely to visit next. Do not list visits."
    ));
    s
}

pub(super) fn rewrite_message(draft: &str, max_words: usize) -> String {
    format!(
        "Rewrite the text below as a single plain paragraph of at most {max_words} words, with no lists, headings, \
         JSON, copied profile, or recited visits. Output only the paragraph.\n\n{draft}"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_substituted() {
        let mut cfg = AgentConfig { city: "NYC".into(), ..AgentConfig::default() };
        let p = build_system_prompt(&cfg).unwrap();
        assert!(p.contains("Maximum length: 150 words"));
        assert!(p.contains("for users in NYC."));
        for section in ["Role and Input", "Reasoning Protocol", "Tool Usage Requirements", "Reasoning Focus", "Output Constraints"] {
            assert!(p.contains(section), "{section}");
        }
        cfg.max_words = 80;
        assert!(build_system_prompt(&cfg).unwrap().contains("Maximum length: 80 words"));
    }

    #[test]
    fn missing_city_rejected() {
        let cfg = AgentConfig { city: " ".into(), ..AgentConfig::default() };
        assert!(matches!(build_system_prompt(&cfg), Err(AgentError::Config(_))));
    }
}
