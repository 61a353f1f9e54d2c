//! Quality guards applied to retrieved evidence and synthesized text.

use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

/// Dates within `delta_days` of the anchor, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub anchor: NaiveDate,
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl TimeWindow {
    pub fn around(anchor: NaiveDate, delta_days: u32) -> Self {
        let d = Duration::days(delta_days as i64);
        TimeWindow { anchor, from: anchor - d, to: anchor + d }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.from <= date && date <= self.to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub id: usize,
    pub source_url: String,
    pub domain: String,
    pub publication_date: Option<NaiveDate>,
    pub title: String,
    pub excerpt: String,
    pub round: u32,
    #[serde(default)]
    pub supports_claim_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    /// Indices into the evidence list.
    #[serde(default)]
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Verification {
    pub retained: Vec<Claim>,
    pub discarded: Vec<(Claim, String)>,
}

/// Keeps claims backed by in-window evidence from at least `min_sources`
/// distinct registrable domains. Undated evidence never counts.
pub fn temporal_verify(claims: &[Claim], evidence: &[Evidence], window: &TimeWindow, min_sources: usize) -> Verification {
    let mut out = Verification::default();
    for claim in claims {
        let domains: BTreeSet<&str> = claim
            .evidence
            .iter()
            .filter_map(|&i| evidence.get(i))
            .filter(|e| e.publication_date.is_some_and(|d| window.contains(d)))
            .map(|e| e.domain.as_str())
            .collect();
        if domains.len() >= min_sources {
            out.retained.push(claim.clone());
        } else {
            let reason = format!("{} in-window source domain(s), {} required", domains.len(), min_sources);
            out.discarded.push((claim.clone(), reason));
        }
    }
    out
}

const MULTI_PART_SUFFIXES: &[&str] = &[
    "co.uk", "org.uk", "ac.uk", "gov.uk", "com.au", "net.au", "org.au", "co.jp", "ne.jp", "or.jp", "ac.jp", "co.nz", "com.br", "com.cn", "com.tw",
    "co.kr", "co.in", "com.mx", "com.sg", "com.hk",
];

/// Host reduced to its registrable part (`news.bbc.co.uk` → `bbc.co.uk`).
/// Unparseable input falls back to the lowercased text.
pub fn registrable_domain(raw_url: &str) -> String {
    let host = match url::Url::parse(raw_url) {
        Ok(u) => match u.host() {
            Some(url::Host::Domain(d)) => d.to_ascii_lowercase(),
            Some(other) => return other.to_string(),
            None => return raw_url.to_ascii_lowercase(),
        },
        Err(_) => return raw_url.to_ascii_lowercase(),
    };
    let labels: Vec<&str> = host.trim_end_matches('.').split('.').collect();
    if labels.len() <= 2 {
        return labels.join(".");
    }
    let last_two = labels[labels.len() - 2..].join(".");
    let keep = if MULTI_PART_SUFFIXES.contains(&last_two.as_str()) { 3 } else { 2 };
    labels[labels.len() - keep.min(labels.len())..].join(".")
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// First `max_words` whitespace-delimited words joined by single spaces.
pub fn truncate_words(text: &str, max_words: usize) -> (String, bool) {
    let words: Vec<&str> = text.split_whitespace().collect();
    let cut = words.len() > max_words;
    (words[..words.len().min(max_words)].join(" "), cut)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatViolation {
    Empty,
    BlankLine,
    ListMarker,
    Heading,
    Json,
    ProfileCopied,
    Recitation,
}

/// What the synthesized text must not echo back.
#[derive(Debug, Clone, Default)]
pub struct FormatContext<'a> {
    pub profile: &'a str,
    pub input_lines: &'a [String],
}

fn is_list_line(line: &str) -> bool {
    let t = line.trim_start();
    if ["- ", "* ", "• ", "+ "].iter().any(|m| t.starts_with(m)) {
        return true;
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    digits > 0 && (t[digits..].starts_with(". ") || t[digits..].starts_with(") "))
}

fn starts_with_timestamp(line: &str) -> bool {
    // YYYY-MM-DD HH:MM
    let b = line.trim_start().as_bytes();
    let pattern = b"dddd-dd-dd dd:dd";
    b.len() >= pattern.len()
        && pattern.iter().zip(b).all(|(p, c)| if *p == b'd' { c.is_ascii_digit() } else { p == c })
}

fn is_checkin_line(line: &str, ctx: &FormatContext) -> bool {
    let t = line.trim();
    !t.is_empty() && (starts_with_timestamp(t) || ctx.input_lines.iter().any(|l| l.trim() == t))
}

pub fn check_format(text: &str, ctx: &FormatContext) -> Vec<FormatViolation> {
    let mut v = Vec::new();
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return vec![FormatViolation::Empty];
    }
    let lines: Vec<&str> = trimmed.lines().collect();
    if lines.iter().any(|l| l.trim().is_empty()) {
        v.push(FormatViolation::BlankLine);
    }
    if lines.iter().any(|l| is_list_line(l)) {
        v.push(FormatViolation::ListMarker);
    }
    if lines.iter().any(|l| l.trim_start().starts_with('#')) {
        v.push(FormatViolation::Heading);
    }
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        v.push(FormatViolation::Json);
    }
    let profile = ctx.profile.trim();
    if !profile.is_empty() && trimmed.contains(profile) {
        v.push(FormatViolation::ProfileCopied);
    }
    let mut run = 0;
    for l in &lines {
        run = if is_checkin_line(l, ctx) { run + 1 } else { 0 };
        if run >= 3 {
            v.push(FormatViolation::Recitation);
            break;
        }
    }
    v
}

/// Forces text into one plain paragraph: drops headings and recited
/// check-in lines, strips list markers, removes a copied profile, and
/// collapses whitespace.
pub fn sanitize(text: &str, ctx: &FormatContext) -> String {
    let mut kept = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || is_checkin_line(t, ctx) {
            continue;
        }
        let t = if is_list_line(t) {
            let digits = t.chars().take_while(char::is_ascii_digit).count();
            let skip = if digits > 0 { digits + 2 } else { t.chars().next().map_or(0, char::len_utf8) + 1 };
            t[skip..].trim_start()
        } else {
            t
        };
        kept.push(t.to_string());
    }
    let mut joined = kept.join(" ");
    let profile = ctx.profile.trim();
    if !profile.is_empty() {
        joined = joined.replace(profile, " ");
    }
    joined.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn ev(id: usize, url: &str, date: Option<NaiveDate>) -> Evidence {
        Evidence {
            id,
            source_url: url.into(),
            domain: registrable_domain(url),
            publication_date: date,
            title: String::new(),
            excerpt: String::new(),
            round: 1,
            supports_claim_ids: vec![],
        }
    }

    fn claim(ids: &[usize]) -> Claim {
        Claim { id: "c".into(), text: "x".into(), evidence: ids.to_vec() }
    }

    #[test]
    fn window_arithmetic() {
        let w = TimeWindow::around(d(2012, 4, 14), 30);
        assert!(w.contains(d(2012, 3, 15)));
        assert!(w.contains(d(2012, 5, 14)));
        assert!(!w.contains(d(2012, 5, 15)));
        assert!(!w.contains(d(2012, 6, 1)));
    }

    #[test]
    fn two_domains_in_window_retained() {
        let w = TimeWindow::around(d(2012, 4, 14), 30);
        let e = vec![ev(0, "https://a.example.com/x", Some(d(2012, 4, 4))), ev(1, "https://www.other.org/y", Some(d(2012, 4, 19)))];
        let v = temporal_verify(&[claim(&[0, 1])], &e, &w, 2);
        assert_eq!(v.retained.len(), 1);
    }

    #[test]
    fn single_source_or_same_domain_discarded() {
        let w = TimeWindow::around(d(2012, 4, 14), 30);
        let e = vec![
            ev(0, "https://a.example.com/x", Some(d(2012, 4, 4))),
            ev(1, "https://b.example.com/y", Some(d(2012, 4, 5))),
            ev(2, "https://c.net/z", Some(d(2012, 6, 1))),
            ev(3, "https://d.net/z", None),
        ];
        let v = temporal_verify(&[claim(&[0]), claim(&[0, 1]), claim(&[0, 2]), claim(&[0, 3]), claim(&[0, 9])], &e, &w, 2);
        assert!(v.retained.is_empty());
        assert_eq!(v.discarded.len(), 5);
    }

    #[test]
    fn registrable_domains() {
        assert_eq!(registrable_domain("https://news.bbc.co.uk/a"), "bbc.co.uk");
        assert_eq!(registrable_domain("http://www.nytimes.com/2012/04"), "nytimes.com");
        assert_eq!(registrable_domain("https://example.com"), "example.com");
        assert_eq!(registrable_domain("http://127.0.0.1:8080/x"), "127.0.0.1");
    }

    #[test]
    fn truncation_at_word_boundary() {
        let (t, cut) = truncate_words("a  b\nc d", 3);
        assert_eq!((t.as_str(), cut), ("a b c", true));
        let (t, cut) = truncate_words("a b", 3);
        assert_eq!((t.as_str(), cut), ("a b", false));
    }

    #[test]
    fn format_checks() {
        let ctx = FormatContext { profile: "likes bars at night", input_lines: &[] };
        assert_eq!(check_format("One paragraph here.", &ctx), vec![]);
        assert!(check_format("- a\n- b", &ctx).contains(&FormatViolation::ListMarker));
        assert!(check_format("1. first", &ctx).contains(&FormatViolation::ListMarker));
        assert!(check_format("# Title\ntext", &ctx).contains(&FormatViolation::Heading));
        assert!(check_format("a\n\nb", &ctx).contains(&FormatViolation::BlankLine));
        assert!(check_format("The user likes bars at night.", &ctx).contains(&FormatViolation::ProfileCopied));
        assert!(check_format("{\"a\":1}", &ctx).contains(&FormatViolation::Json));
        let recited = "2012-04-13 09:11, p1, Bar\n2012-04-13 10:11, p2, Bar\n2012-04-13 11:11, p3, Bar";
        assert!(check_format(recited, &ctx).contains(&FormatViolation::Recitation));
        assert!(!check_format(&recited.lines().take(2).collect::<Vec<_>>().join("\n"), &ctx).contains(&FormatViolation::Recitation));
        assert_eq!(check_format("  ", &ctx), vec![FormatViolation::Empty]);
    }

    #[test]
    fn sanitize_flattens() {
        let ctx = FormatContext { profile: "PROFILE", input_lines: &[] };
        let s = sanitize("# Head\n- first point\n\n2. second PROFILE\n2012-04-13 09:11, p1", &ctx);
        assert_eq!(s, "first point second");
        assert!(check_format(&s, &ctx).is_empty());
    }
}
