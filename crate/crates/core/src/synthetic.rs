//! Deterministic synthetic check-in data in the Foursquare TSV layout, for
//! hermetic end-to-end runs when no real dataset is at hand.

use chrono::{Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CATEGORIES: [&str; 8] = ["Coffee Shop", "Bar", "Gym", "Office", "Subway", "Park", "Italian Restaurant", "Bookstore"];

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub users: usize,
    pub pois: usize,
    pub days: i64,
    /// Probability that a user checks in on a given day.
    pub active_day: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { users: 20, pois: 80, days: 120, active_day: 0.45, seed: 7 }
    }
}

/// Renders the dataset as tab-separated lines with a trailing address
/// column. Every user's history spans the whole period, so users appear in
/// every temporal split.
pub fn foursquare_tsv(spec: &SyntheticSpec) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pois: Vec<(String, &str, f64, f64)> = (0..spec.pois)
        .map(|i| {
            let lat = 40.70 + rng.gen_range(0.0..0.10);
            let lon = -74.02 + rng.gen_range(0.0..0.10);
            (format!("v{i:04}"), CATEGORIES[i % CATEGORIES.len()], lat, lon)
        })
        .collect();
    let start = Utc.with_ymd_and_hms(2012, 4, 3, 0, 0, 0).unwrap();
    let mut out = String::new();
    for u in 0..spec.users {
        let mut favourites: Vec<usize> = (0..spec.pois).collect();
        favourites.shuffle(&mut rng);
        favourites.truncate(8);
        for day in 0..spec.days {
            if !rng.gen_bool(spec.active_day) {
                continue;
            }
            let mut t = start + Duration::days(day) + Duration::hours(rng.gen_range(7..11)) + Duration::minutes(rng.gen_range(0..60));
            for _ in 0..rng.gen_range(2..5) {
                let p = if rng.gen_bool(0.8) { favourites[rng.gen_range(0..favourites.len())] } else { rng.gen_range(0..spec.pois) };
                let (id, cat, lat, lon) = &pois[p];
                out.push_str(&format!(
                    "u{u:03}\t{id}\t4bf58dd8d48988d1{:02}\t{cat}\t{lat:.6}\t{lon:.6}\t-240\t{}\t{} Synthetic St\n",
                    p % 100,
                    t.format("%a %b %d %H:%M:%S +0000 %Y"),
                    100 + p
                ));
                t += Duration::minutes(rng.gen_range(40..180));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_checkins, DatasetFormat};

    #[test]
    fn output_parses_without_rejections_and_is_deterministic() {
        let spec = SyntheticSpec::default();
        let text = foursquare_tsv(&spec);
        assert_eq!(text, foursquare_tsv(&spec));
        let parsed = parse_checkins(text.as_bytes(), DatasetFormat::FoursquareTsv).unwrap();
        assert!(parsed.rejected.is_empty());
        assert!(parsed.records.len() > spec.users * 50);
    }
}
