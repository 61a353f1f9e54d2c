use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::RawCheckIn;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Passes executed; the last pass removes nothing.
    pub iterations: usize,
    pub removed_users: usize,
    pub removed_pois: usize,
    pub removed_checkins: usize,
}

/// Repeatedly drops users, then POIs, with fewer than `threshold`
/// check-ins until neither removal changes anything.
pub fn filter_min_activity(mut records: Vec<RawCheckIn>, threshold: usize) -> (Vec<RawCheckIn>, FilterReport) {
    let mut report = FilterReport::default();
    let initial = records.len();
    loop {
        report.iterations += 1;
        let users = sparse_keys(&records, threshold, |r| &r.user_id);
        records.retain(|r| !users.contains_key(r.user_id.as_str()));
        let pois = sparse_keys(&records, threshold, |r| &r.venue_id);
        records.retain(|r| !pois.contains_key(r.venue_id.as_str()));
        report.removed_users += users.len();
        report.removed_pois += pois.len();
        if users.is_empty() && pois.is_empty() {
            break;
        }
    }
    report.removed_checkins = initial - records.len();
    (records, report)
}

fn sparse_keys<'a>(records: &'a [RawCheckIn], threshold: usize, key: impl Fn(&'a RawCheckIn) -> &'a String) -> HashMap<String, usize> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *counts.entry(key(r).as_str()).or_default() += 1;
    }
    counts.into_iter().filter(|&(_, n)| n < threshold).map(|(k, n)| (k.to_string(), n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use std::collections::BTreeSet;

    fn rec(user: &str, poi: &str, i: usize) -> RawCheckIn {
        RawCheckIn {
            user_id: user.into(),
            venue_id: poi.into(),
            category_name: "Bar".into(),
            latitude: 40.0,
            longitude: -74.0,
            utc_time: Utc.with_ymd_and_hms(2012, 4, 1, 0, 0, 0).unwrap() + chrono::Duration::minutes(i as i64),
            tz_offset_minutes: 0,
            address: None,
            name: None,
            line_no: i + 1,
        }
    }

    fn build(spec: &[(&str, &str, usize)]) -> Vec<RawCheckIn> {
        let mut out = Vec::new();
        for &(u, p, n) in spec {
            for _ in 0..n {
                let i = out.len();
                out.push(rec(u, p, i));
            }
        }
        out
    }

    #[test]
    fn sparse_user_removed() {
        let input = build(&[("u1", "p1", 9), ("u2", "p1", 10)]);
        let (out, report) = filter_min_activity(input, 10);
        assert!(out.iter().all(|r| r.user_id == "u2"));
        assert_eq!(out.len(), 10);
        assert_eq!(report.removed_users, 1);
    }

    #[test]
    fn identity_when_dense() {
        let input = build(&[("u1", "p1", 10), ("u2", "p2", 12)]);
        let (out, report) = filter_min_activity(input.clone(), 10);
        assert_eq!(out, input);
        assert_eq!(report.iterations, 1);
    }

    /// Hand-enumerated chain, threshold 10:
    ///   u1: p1x6 p2x6 (12)   u2: p1x5 p2x5 (10)   u3: p3x4 p1x6 (10)
    /// pass 1: every user has >= 10; POI counts p1=17 p2=11 p3=4 -> drop p3
    /// pass 2: u3 falls to 6 -> drop u3; p1=11 p2=11 survive
    /// pass 3: no change. Fixpoint {u1,u2} x {p1,p2}, 22 records.
    #[test]
    fn chained_removal_reaches_hand_computed_fixpoint() {
        let input = build(&[
            ("u1", "p1", 6),
            ("u1", "p2", 6),
            ("u2", "p1", 5),
            ("u2", "p2", 5),
            ("u3", "p3", 4),
            ("u3", "p1", 6),
        ]);
        let (out, report) = filter_min_activity(input, 10);
        let users: BTreeSet<_> = out.iter().map(|r| r.user_id.as_str()).collect();
        let pois: BTreeSet<_> = out.iter().map(|r| r.venue_id.as_str()).collect();
        assert_eq!(users, BTreeSet::from(["u1", "u2"]));
        assert_eq!(pois, BTreeSet::from(["p1", "p2"]));
        assert_eq!(out.len(), 22);
        assert_eq!(report.iterations, 3);
        assert_eq!(report.removed_users, 1);
        assert_eq!(report.removed_pois, 1);
        assert_eq!(report.removed_checkins, 10);
    }

    #[test]
    fn fixpoint_is_idempotent() {
        let input = build(&[("a", "x", 3), ("a", "y", 1), ("b", "x", 2), ("b", "y", 2), ("c", "y", 3)]);
        let (once, _) = filter_min_activity(input, 3);
        let (twice, report) = filter_min_activity(once.clone(), 3);
        assert_eq!(once, twice);
        assert_eq!(report.iterations, 1);
    }
}
