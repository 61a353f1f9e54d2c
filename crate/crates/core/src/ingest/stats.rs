use std::collections::HashSet;

use super::{Catalog, DatasetSplit, DatasetStats};

/// Counts over all three parts of the split. Categories are looked up in
/// `catalog`; POIs missing from it contribute no category.
pub fn compute_stats(split: &DatasetSplit, catalog: &Catalog) -> DatasetStats {
    let mut users = HashSet::new();
    let mut pois = HashSet::new();
    let mut n_trajectories = 0;
    let mut n_checkins = 0;
    for t in split.all() {
        users.insert(t.user_id.as_str());
        n_trajectories += 1;
        n_checkins += t.checkins.len();
        pois.extend(t.checkins.iter().map(|c| c.poi_id.as_str()));
    }
    let categories: HashSet<&str> = pois.iter().filter_map(|p| catalog.get(p)).map(|p| p.category.as_str()).collect();
    DatasetStats {
        n_users: users.len(),
        n_pois: pois.len(),
        n_trajectories,
        n_categories: categories.len(),
        n_checkins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CheckIn, Poi, Trajectory};
    use chrono::{TimeZone, Utc};

    #[test]
    fn empty_split_is_all_zero() {
        assert_eq!(compute_stats(&DatasetSplit::default(), &Catalog::default()), DatasetStats::default());
    }

    /// Two users:
    ///   alice: [cafe, bar] | [cafe]      bob: [gym, cafe]
    /// users 2, pois {cafe, bar, gym} = 3, trajectories 3,
    /// categories {Coffee Shop, Bar, Gym} = 3, check-ins 5.
    #[test]
    fn toy_counts_by_hand() {
        let t = Utc.with_ymd_and_hms(2012, 4, 1, 8, 0, 0).unwrap();
        let ci = |u: &str, p: &str, id| CheckIn { user_id: u.into(), poi_id: p.into(), utc_time: t, local_time: t.naive_utc(), line_no: 0, trajectory_id: id };
        let tr = |id, u: &str, ps: &[&str]| Trajectory { trajectory_id: id, user_id: u.into(), checkins: ps.iter().map(|p| ci(u, p, id)).collect() };
        let split = DatasetSplit {
            train: vec![tr(0, "alice", &["cafe", "bar"]), tr(2, "bob", &["gym", "cafe"])],
            validation: vec![tr(1, "alice", &["cafe"])],
            test: vec![],
        };
        let poi = |id: &str, cat: &str| Poi { poi_id: id.into(), name: None, category: cat.into(), latitude: 0.0, longitude: 0.0, address: None };
        let catalog = Catalog::from_pois([poi("cafe", "Coffee Shop"), poi("bar", "Bar"), poi("gym", "Gym")]);
        let s = compute_stats(&split, &catalog);
        assert_eq!(s, DatasetStats { n_users: 2, n_pois: 3, n_trajectories: 3, n_categories: 3, n_checkins: 5 });
    }
}
