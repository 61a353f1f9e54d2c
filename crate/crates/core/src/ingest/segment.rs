use std::collections::BTreeMap;

use chrono::Duration;
use rayon::prelude::*;

use super::{CheckIn, RawCheckIn, Trajectory};

/// Splits one user's chronologically sorted check-ins wherever the gap to
/// the previous check-in is strictly greater than `gap_hours`.
pub fn segment_trajectories(checkins: Vec<CheckIn>, gap_hours: f64) -> Vec<Vec<CheckIn>> {
    assert!(gap_hours > 0.0, "gap_hours must be positive");
    let gap = Duration::milliseconds((gap_hours * 3_600_000.0).round() as i64);
    let mut out: Vec<Vec<CheckIn>> = Vec::new();
    for c in checkins {
        match out.last_mut() {
            Some(cur) if c.local_time - cur.last().expect("nonempty").local_time <= gap => cur.push(c),
            _ => out.push(vec![c]),
        }
    }
    out
}

/// Groups records by user, orders each user's check-ins by local time
/// (input line breaks ties), segments them and numbers the resulting
/// trajectories in (user id, time) order.
pub fn build_trajectories(records: &[RawCheckIn], gap_hours: f64) -> Vec<Trajectory> {
    let mut by_user: BTreeMap<&str, Vec<CheckIn>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user_id.as_str()).or_default().push(CheckIn::from_raw(r));
    }
    let segmented: Vec<(String, Vec<Vec<CheckIn>>)> = by_user
        .into_par_iter()
        .map(|(user, mut checkins)| {
            checkins.sort_by(|a, b| a.local_time.cmp(&b.local_time).then(a.line_no.cmp(&b.line_no)));
            (user.to_string(), segment_trajectories(checkins, gap_hours))
        })
        .collect();

    let mut next_id = 0u64;
    let mut out = Vec::new();
    for (user_id, parts) in segmented {
        for mut checkins in parts {
            for c in &mut checkins {
                c.trajectory_id = next_id;
            }
            out.push(Trajectory { trajectory_id: next_id, user_id: user_id.clone(), checkins });
            next_id += 1;
        }
    }
    out
}
