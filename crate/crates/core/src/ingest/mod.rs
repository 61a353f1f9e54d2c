//! Raw check-in parsing and the preprocessing recipe: activity filter,
//! gap-based trajectory segmentation, temporal split and dataset statistics.

mod filter;
mod io;
mod parse;
mod segment;
mod split;
mod stats;

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, NaiveDateTime, Utc, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ArtifactError;
use crate::geo::Coordinates;

pub use filter::{filter_min_activity, FilterReport};
pub use io::{load_processed, write_processed, CheckInRow, ProcessedFiles, SplitTag};
pub use parse::{parse_checkins, DatasetFormat, ParseOutcome, RejectReason, Rejection};
pub use segment::{build_trajectories, segment_trajectories};
pub use split::{temporal_split, SplitRatios, SplitReport};
pub use stats::compute_stats;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable input: {0}")]
    Unreadable(#[from] std::io::Error),
    #[error("unknown dataset format `{0}` (expected foursquare-tsv or gowalla-csv)")]
    UnknownFormat(String),
    #[error("gowalla csv header is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("cannot split an empty trajectory set")]
    EmptySplit,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("processed data is inconsistent: {0}")]
    Inconsistent(String),
}

/// One raw record as it appears in a dataset release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCheckIn {
    pub user_id: String,
    pub venue_id: String,
    pub category_name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub utc_time: DateTime<Utc>,
    pub tz_offset_minutes: i32,
    pub address: Option<String>,
    pub name: Option<String>,
    /// 1-based physical line in the source; breaks timestamp ties.
    pub line_no: usize,
}

impl RawCheckIn {
    pub fn local_time(&self) -> NaiveDateTime {
        (self.utc_time + Duration::minutes(self.tz_offset_minutes as i64)).naive_utc()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub poi_id: String,
    pub name: Option<String>,
    pub category: String,
    pub latitude: f64,
    pub longitude: f64,
    pub address: Option<String>,
}

impl Poi {
    pub fn coordinates(&self) -> Coordinates {
        Coordinates { lat: self.latitude, lon: self.longitude }
    }

    /// Street address, or a "lat,lon" rendering when the dataset has none.
    pub fn address_or_coordinates(&self) -> String {
        match self.address.as_deref() {
            Some(a) if !a.trim().is_empty() => a.to_string(),
            _ => format!("{:.4},{:.4}", self.latitude, self.longitude),
        }
    }
}

/// POIs keyed by id; iteration order is the id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pois: BTreeMap<String, Poi>,
}

impl Catalog {
    /// Builds a catalog from raw records, taking attributes from each
    /// venue's first occurrence.
    pub fn from_records(records: &[RawCheckIn]) -> Self {
        let mut pois = BTreeMap::new();
        for r in records {
            pois.entry(r.venue_id.clone()).or_insert_with(|| Poi {
                poi_id: r.venue_id.clone(),
                name: r.name.clone(),
                category: r.category_name.clone(),
                latitude: r.latitude,
                longitude: r.longitude,
                address: r.address.clone(),
            });
        }
        Catalog { pois }
    }

    pub fn from_pois(pois: impl IntoIterator<Item = Poi>) -> Self {
        Catalog { pois: pois.into_iter().map(|p| (p.poi_id.clone(), p)).collect() }
    }

    pub fn get(&self, poi_id: &str) -> Option<&Poi> {
        self.pois.get(poi_id)
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Poi> {
        self.pois.values()
    }

    /// Drops POIs not referenced by `keep`.
    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.pois.retain(|id, _| keep(id));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user_id: String,
    pub poi_id: String,
    pub utc_time: DateTime<Utc>,
    pub local_time: NaiveDateTime,
    pub line_no: usize,
    pub trajectory_id: u64,
}

impl CheckIn {
    pub fn from_raw(raw: &RawCheckIn) -> Self {
        CheckIn {
            user_id: raw.user_id.clone(),
            poi_id: raw.venue_id.clone(),
            utc_time: raw.utc_time,
            local_time: raw.local_time(),
            line_no: raw.line_no,
            trajectory_id: 0,
        }
    }

    pub fn weekday(&self) -> Weekday {
        self.local_time.weekday()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory_id: u64,
    pub user_id: String,
    pub checkins: Vec<CheckIn>,
}

impl Trajectory {
    pub fn start(&self) -> &CheckIn {
        &self.checkins[0]
    }

    pub fn end(&self) -> &CheckIn {
        self.checkins.last().expect("trajectories are nonempty")
    }

    pub fn len(&self) -> usize {
        self.checkins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkins.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &Trajectory> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn part(&self, tag: SplitTag) -> &[Trajectory] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Validation => &self.validation,
            SplitTag::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_pois: usize,
    pub n_trajectories: usize,
    pub n_categories: usize,
    pub n_checkins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_checkins: usize,
    pub gap_hours: f64,
    pub ratios: SplitRatios,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { min_checkins: 10, gap_hours: 24.0, ratios: SplitRatios::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub catalog: Catalog,
    pub split: DatasetSplit,
    pub stats: DatasetStats,
    pub filter: FilterReport,
    pub split_report: SplitReport,
}

/// Filter, segment and split parsed records.
pub fn preprocess(records: Vec<RawCheckIn>, config: &PreprocessConfig) -> Result<Preprocessed, IngestError> {
    let (kept, filter) = filter_min_activity(records, config.min_checkins);
    tracing::info!(
        iterations = filter.iterations,
        removed_users = filter.removed_users,
        removed_pois = filter.removed_pois,
        "activity filter reached fixpoint"
    );
    let mut catalog = Catalog::from_records(&kept);
    let trajectories = build_trajectories(&kept, config.gap_hours);
    let (split, split_report) = temporal_split(trajectories, config.ratios)?;
    let referenced: std::collections::HashSet<&str> =
        split.all().flat_map(|t| t.checkins.iter().map(|c| c.poi_id.as_str())).collect();
    let referenced: std::collections::HashSet<String> = referenced.into_iter().map(str::to_owned).collect();
    catalog.retain(|id| referenced.contains(id));
    let stats = compute_stats(&split, &catalog);
    Ok(Preprocessed { catalog, split, stats, filter, split_report })
}
