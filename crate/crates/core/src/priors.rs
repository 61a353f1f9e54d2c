//! Behavioral priors computed from a user's train-split history: visit
//! frequencies, within-trajectory transitions, and the periodic
//! (same-weekday) history selection.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::Weekday;
use serde::{Deserialize, Serialize};

use crate::ingest::{Catalog, CheckIn, Trajectory};

pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_BETA: f64 = 0.4;
pub const DEFAULT_BUDGET: usize = 150;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyEntry {
    pub poi_id: String,
    pub category: String,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub from_poi: String,
    pub to_poi: String,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSelection {
    /// Chosen check-ins in chronological order.
    pub selected: Vec<CheckIn>,
    pub n_periodic: usize,
    pub n_recent: usize,
    pub beta: f64,
    pub budget: usize,
    pub target_dow: Weekday,
}

/// Top-`top_n` visited POIs by count; ties go to the more recently visited
/// POI, then the smaller id. `history` is chronological.
pub fn frequency_prior<'a>(history: impl IntoIterator<Item = &'a CheckIn>, catalog: &Catalog, top_n: usize) -> Vec<FrequencyEntry> {
    let mut stats: HashMap<&str, (u32, usize)> = HashMap::new();
    for (i, c) in history.into_iter().enumerate() {
        let e = stats.entry(c.poi_id.as_str()).or_insert((0, 0));
        e.0 += 1;
        e.1 = i;
    }
    let mut entries: Vec<(&str, u32, usize)> = stats.into_iter().map(|(p, (n, last))| (p, n, last)).collect();
    entries.sort_by_key(|&(p, n, last)| (Reverse(n), Reverse(last), p));
    entries
        .into_iter()
        .take(top_n)
        .map(|(p, count, _)| FrequencyEntry {
            poi_id: p.to_string(),
            category: catalog.get(p).map(|poi| poi.category.clone()).unwrap_or_default(),
            count,
        })
        .collect()
}

/// Full transition table: consecutive pairs within each trajectory.
pub fn transition_counts<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> BTreeMap<(String, String), u32> {
    let mut counts = BTreeMap::new();
    for t in trajectories {
        for w in t.checkins.windows(2) {
            *counts.entry((w[0].poi_id.clone(), w[1].poi_id.clone())).or_insert(0) += 1;
        }
    }
    counts
}

fn ranked(counts: impl IntoIterator<Item = ((String, String), u32)>, k: usize) -> Vec<TransitionEntry> {
    let mut v: Vec<TransitionEntry> = counts.into_iter().map(|((from_poi, to_poi), count)| TransitionEntry { from_poi, to_poi, count }).collect();
    // stable sort keeps (from, to) order among equal counts
    v.sort_by_key(|e| Reverse(e.count));
    v.truncate(k);
    v
}

/// Top-`k` transitions out of `last_poi`; when `last_poi` has no recorded
/// successor, the user's overall top-`k` transitions instead. Ties are
/// broken by (from, to) order.
pub fn transition_prior<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>, last_poi: &str, k: usize) -> Vec<TransitionEntry> {
    assert!(k >= 1, "k must be at least 1");
    let counts = transition_counts(trajectories);
    let conditioned: Vec<_> = counts.iter().filter(|((from, _), _)| from == last_poi).map(|(key, n)| (key.clone(), *n)).collect();
    if conditioned.is_empty() {
        ranked(counts, k)
    } else {
        ranked(conditioned, k)
    }
}

/// Number of same-weekday slots reserved out of `budget`.
pub fn periodic_quota(beta: f64, budget: usize) -> usize {
    // the epsilon absorbs products such as 0.4 * 150 landing just below an integer
    ((beta * budget as f64) + 1e-9).floor() as usize
}

/// Reserves `floor(beta * budget)` slots for the most recent entries falling
/// on `target_dow`, and fills the rest with the most recent entries not yet
/// chosen (which may include older same-weekday entries). `history` is
/// chronological; the result is too.
pub fn periodic_select(history: &[CheckIn], budget: usize, beta: f64, target_dow: Weekday) -> PeriodicSelection {
    assert!((0.0..=1.0).contains(&beta), "beta must lie in [0, 1]");
    assert!(budget >= 1, "budget must be at least 1");
    let quota = periodic_quota(beta, budget);
    let mut chosen: HashSet<usize> = HashSet::new();
    let periodic: Vec<usize> = (0..history.len()).rev().filter(|&i| history[i].weekday() == target_dow).take(quota).collect();
    chosen.extend(&periodic);
    let recent_slots = budget - periodic.len();
    let recent: Vec<usize> = (0..history.len()).rev().filter(|i| !chosen.contains(i)).take(recent_slots).collect();
    chosen.extend(&recent);
    let mut idx: Vec<usize> = chosen.into_iter().collect();
    idx.sort_unstable();
    PeriodicSelection {
        selected: idx.into_iter().map(|i| history[i].clone()).collect(),
        n_periodic: periodic.len(),
        n_recent: recent.len(),
        beta,
        budget,
        target_dow,
    }
}

/// Per-user summary written alongside processed data for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPriors {
    pub user_id: String,
    pub frequency: Vec<FrequencyEntry>,
    pub transitions: Vec<TransitionEntry>,
}

/// Priors over each user's complete train history, users in id order.
pub fn user_priors(train: &[Trajectory], catalog: &Catalog, top_n: usize) -> Vec<UserPriors> {
    let mut by_user: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in train {
        by_user.entry(t.user_id.as_str()).or_default().push(t);
    }
    by_user
        .into_iter()
        .map(|(user, mut trajs)| {
            trajs.sort_by_key(|t| (t.start().local_time, t.trajectory_id));
            let frequency = frequency_prior(trajs.iter().flat_map(|t| &t.checkins), catalog, top_n);
            let counts = transition_counts(trajs.iter().copied());
            UserPriors { user_id: user.to_string(), frequency, transitions: ranked(counts, usize::MAX) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Poi;
    use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc};

    fn ci(poi: &str, day: i64, traj: u64) -> CheckIn {
        // 2012-04-02 is a Monday
        let local = NaiveDate::from_ymd_opt(2012, 4, 2).unwrap().and_hms_opt(9, 0, 0).unwrap() + Duration::days(day);
        CheckIn { user_id: "u".into(), poi_id: poi.into(), utc_time: Utc.from_utc_datetime(&local), local_time: local, line_no: 0, trajectory_id: traj }
    }

    fn traj(id: u64, pois: &[&str]) -> Trajectory {
        Trajectory { trajectory_id: id, user_id: "u".into(), checkins: pois.iter().map(|p| ci(p, id as i64, id)).collect() }
    }

    fn catalog(ids: &[&str]) -> Catalog {
        Catalog::from_pois(ids.iter().map(|id| Poi { poi_id: (*id).into(), name: None, category: format!("cat-{id}"), latitude: 0.0, longitude: 0.0, address: None }))
    }

    #[test]
    fn frequency_counts() {
        let h = vec![ci("A", 0, 0), ci("A", 1, 0), ci("B", 2, 0)];
        let f = frequency_prior(&h, &catalog(&["A", "B"]), 10);
        assert_eq!(f.iter().map(|e| (e.poi_id.as_str(), e.count)).collect::<Vec<_>>(), vec![("A", 2), ("B", 1)]);
        assert_eq!(f[0].category, "cat-A");
    }

    #[test]
    fn frequency_ties_prefer_recent_then_id() {
        let h = vec![ci("B", 0, 0), ci("C", 1, 0), ci("A", 2, 0)];
        let f = frequency_prior(&h, &catalog(&[]), 10);
        assert_eq!(f.iter().map(|e| e.poi_id.as_str()).collect::<Vec<_>>(), ["A", "C", "B"]);
    }

    #[test]
    fn frequency_truncates_to_top_n() {
        let h: Vec<CheckIn> = (0..12).map(|i| ci(&format!("p{i}"), i, 0)).collect();
        assert_eq!(frequency_prior(&h, &catalog(&[]), 10).len(), 10);
        assert!(frequency_prior(&[], &catalog(&[]), 10).is_empty());
    }

    #[test]
    fn transitions_conditioned_on_last() {
        let ts = vec![traj(0, &["A", "B"]), traj(1, &["A", "B"]), traj(2, &["A", "C"])];
        let t = transition_prior(&ts, "A", 2);
        let got: Vec<_> = t.iter().map(|e| (e.from_poi.as_str(), e.to_poi.as_str(), e.count)).collect();
        assert_eq!(got, vec![("A", "B", 2), ("A", "C", 1)]);
    }

    #[test]
    fn unseen_last_poi_falls_back_to_global() {
        let ts = vec![traj(0, &["A", "B", "C"]), traj(1, &["B", "C"])];
        let t = transition_prior(&ts, "Z", 10);
        let got: Vec<_> = t.iter().map(|e| (e.from_poi.as_str(), e.to_poi.as_str(), e.count)).collect();
        assert_eq!(got, vec![("B", "C", 2), ("A", "B", 1)]);
    }

    #[test]
    fn no_cross_trajectory_pairs() {
        let ts = vec![traj(0, &["A"]), traj(1, &["B"])];
        assert!(transition_counts(&ts).is_empty());
    }

    #[test]
    fn beta_zero_is_pure_recency() {
        let h: Vec<CheckIn> = (0..10).map(|i| ci(&format!("p{i}"), i, 0)).collect();
        let s = periodic_select(&h, 4, 0.0, Weekday::Mon);
        assert_eq!(s.n_periodic, 0);
        assert_eq!(s.selected.iter().map(|c| c.poi_id.as_str()).collect::<Vec<_>>(), ["p6", "p7", "p8", "p9"]);
    }

    /// Ten entries on days 0..=9 from Monday 2012-04-02, with days 0 and 7 Mondays,
    /// plus two extra Monday entries inserted on days 14 and 21 gives
    /// a hand-built sequence (index: day):
    ///   0:d0(Mon) 1:d1 2:d2 3:d3 4:d7(Mon) 5:d8 6:d9 7:d14(Mon) 8:d15 9:d21(Mon)
    /// L=5, beta=0.4 -> floor(2.0) = 2 periodic slots: the two latest Mondays, idx 9 and 7.
    /// Remainder by recency: idx 8, 6, 5 fill the 3 recent slots.
    /// Selected index set {5, 6, 7, 8, 9}.
    #[test]
    fn hand_enumerated_periodic_selection() {
        let days = [0, 1, 2, 3, 7, 8, 9, 14, 15, 21];
        let h: Vec<CheckIn> = days.iter().enumerate().map(|(i, &d)| ci(&format!("i{i}"), d, 0)).collect();
        assert_eq!(h.iter().filter(|c| c.weekday() == Weekday::Mon).count(), 4);
        let s = periodic_select(&h, 5, 0.4, Weekday::Mon);
        assert_eq!((s.n_periodic, s.n_recent), (2, 3));
        let ids: Vec<_> = s.selected.iter().map(|c| c.poi_id.as_str()).collect();
        assert_eq!(ids, ["i5", "i6", "i7", "i8", "i9"]);
    }

    #[test]
    fn older_mondays_can_fill_recent_slots() {
        // 4 Mondays then nothing else: quota 2, recency backfills with the older Mondays
        let h: Vec<CheckIn> = (0..4).map(|w| ci(&format!("w{w}"), 7 * w, 0)).collect();
        let s = periodic_select(&h, 4, 0.5, Weekday::Mon);
        assert_eq!((s.n_periodic, s.n_recent), (2, 2));
        assert_eq!(s.selected.len(), 4);
    }

    #[test]
    fn paper_budget_gives_sixty_slots() {
        assert_eq!(periodic_quota(0.4, 150), 60);
        let h: Vec<CheckIn> = (0..600).map(|i| ci("p", i, 0)).collect();
        let s = periodic_select(&h, 150, 0.4, Weekday::Fri);
        assert_eq!(s.n_periodic, 60);
        assert_eq!(s.n_recent, 90);
        assert!(s.selected.iter().filter(|c| c.local_time.weekday() == Weekday::Fri).count() >= 60);
    }

    #[test]
    fn beta_one_only_same_weekday_when_available() {
        let h: Vec<CheckIn> = (0..60).map(|i| ci("p", i, 0)).collect();
        let s = periodic_select(&h, 5, 1.0, Weekday::Wed);
        assert!(s.selected.iter().all(|c| c.weekday() == Weekday::Wed));
        assert_eq!(s.n_periodic, 5);
    }

    #[test]
    fn user_priors_sum_to_history_length() {
        let ts = vec![traj(0, &["A", "B", "A"]), traj(1, &["B", "C"])];
        let p = user_priors(&ts, &catalog(&["A", "B", "C"]), usize::MAX);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].frequency.iter().map(|e| e.count).sum::<u32>(), 5);
        assert_eq!(p[0].transitions.iter().map(|e| e.count).sum::<u32>(), 3);
    }
}
