use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, IngestError, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, validation: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), IngestError> {
        let parts = [self.train, self.validation, self.test];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(IngestError::BadRatios((self.train, self.validation, self.test)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub pruned_validation: usize,
    pub pruned_test: usize,
}

/// Orders all trajectories by end time (UTC, then id), cuts them by
/// `ratios`, and prunes validation/test trajectories that mention a user or
/// POI never seen in train.
pub fn temporal_split(mut trajectories: Vec<Trajectory>, ratios: SplitRatios) -> Result<(DatasetSplit, SplitReport), IngestError> {
    ratios.validate()?;
    if trajectories.is_empty() {
        return Err(IngestError::EmptySplit);
    }
    trajectories.sort_by(|a, b| a.end().utc_time.cmp(&b.end().utc_time).then(a.trajectory_id.cmp(&b.trajectory_id)));
    let n = trajectories.len();
    let n_train = ((n as f64) * ratios.train).round().min(n as f64) as usize;
    let n_val = ((n as f64) * ratios.validation).round().min((n - n_train) as f64) as usize;

    let mut rest = trajectories.split_off(n_train);
    let train = trajectories;
    let test = rest.split_off(n_val);
    let validation = rest;

    let users: HashSet<&str> = train.iter().map(|t| t.user_id.as_str()).collect();
    let pois: HashSet<&str> = train.iter().flat_map(|t| t.checkins.iter().map(|c| c.poi_id.as_str())).collect();
    let seen = |t: &Trajectory| users.contains(t.user_id.as_str()) && t.checkins.iter().all(|c| pois.contains(c.poi_id.as_str()));

    let (validation, pruned_validation) = keep_seen(validation, &seen);
    let (test, pruned_test) = keep_seen(test, &seen);
    if pruned_validation + pruned_test > 0 {
        tracing::info!(pruned_validation, pruned_test, "pruned trajectories with users or POIs unseen in train");
    }
    let report = SplitReport { pruned_validation, pruned_test };
    Ok((DatasetSplit { train, validation, test }, report))
}

fn keep_seen(part: Vec<Trajectory>, seen: &impl Fn(&Trajectory) -> bool) -> (Vec<Trajectory>, usize) {
    let before = part.len();
    let kept: Vec<Trajectory> = part.into_iter().filter(|t| seen(t)).collect();
    let pruned = before - kept.len();
    (kept, pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CheckIn;
    use chrono::{Duration, TimeZone, Utc};

    fn traj(id: u64, user: &str, pois: &[&str], day: i64) -> Trajectory {
        let t0 = Utc.with_ymd_and_hms(2012, 4, 1, 8, 0, 0).unwrap() + Duration::days(day);
        let checkins = pois
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let t = t0 + Duration::hours(i as i64);
                CheckIn { user_id: user.into(), poi_id: (*p).into(), utc_time: t, local_time: t.naive_utc(), line_no: 0, trajectory_id: id }
            })
            .collect();
        Trajectory { trajectory_id: id, user_id: user.into(), checkins }
    }

    #[test]
    fn ten_uniform_trajectories_split_8_1_1() {
        let ts: Vec<_> = (0..10).rev().map(|i| traj(i, "u", &["a"], i as i64)).collect();
        let (split, report) = temporal_split(ts, SplitRatios::default()).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (8, 1, 1));
        assert_eq!(report, SplitReport::default());
        let max_train = split.train.iter().map(|t| t.end().utc_time).max().unwrap();
        assert!(max_train <= split.validation[0].end().utc_time);
        assert!(split.validation[0].end().utc_time <= split.test[0].end().utc_time);
    }

    #[test]
    fn unseen_poi_in_test_is_pruned() {
        let mut ts: Vec<_> = (0..9).map(|i| traj(i, "u", &["a", "b"], i as i64)).collect();
        ts.push(traj(9, "u", &["a", "zzz"], 20));
        let (split, report) = temporal_split(ts, SplitRatios::default()).unwrap();
        assert!(split.test.is_empty());
        assert_eq!(report.pruned_test, 1);
        let train_pois: HashSet<_> = split.train.iter().flat_map(|t| &t.checkins).map(|c| &c.poi_id).collect();
        assert!(split.validation.iter().chain(&split.test).flat_map(|t| &t.checkins).all(|c| train_pois.contains(&c.poi_id)));
    }

    #[test]
    fn unseen_user_is_pruned() {
        let mut ts: Vec<_> = (0..9).map(|i| traj(i, "u", &["a"], i as i64)).collect();
        ts.push(traj(9, "stranger", &["a"], 20));
        let (split, report) = temporal_split(ts, SplitRatios::default()).unwrap();
        assert_eq!(report.pruned_test, 1);
        assert!(split.test.is_empty());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(temporal_split(vec![], SplitRatios::default()), Err(IngestError::EmptySplit)));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let bad = SplitRatios { train: 0.8, validation: 0.3, test: 0.1 };
        assert!(matches!(temporal_split(vec![traj(0, "u", &["a"], 0)], bad), Err(IngestError::BadRatios(_))));
    }
}
