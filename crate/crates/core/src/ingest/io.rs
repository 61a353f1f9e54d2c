//! On-disk layout of processed data.
//!
//! `checkins.jsonl` holds one object per check-in, grouped by split
//! (train, validation, test), then trajectory, then position:
//!
//! ```text
//! {"user_id":"470","poi_id":"49bb..","trajectory_id":12,"split":"train",
//!  "utc_time":"2012-04-03T18:00:09Z","local_time":"2012-04-03T14:00:09","line_no":1}
//! ```
//!
//! `pois.jsonl` holds the catalog sorted by `poi_id`; `stats.json` the
//! dataset counts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Catalog, CheckIn, DatasetSplit, DatasetStats, IngestError, Poi, Trajectory};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Validation, SplitTag::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" | "validation" => Ok(SplitTag::Validation),
            "test" => Ok(SplitTag::Test),
            other => Err(format!("unknown split `{other}` (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckInRow {
    pub user_id: String,
    pub poi_id: String,
    pub trajectory_id: u64,
    pub split: SplitTag,
    pub utc_time: DateTime<Utc>,
    pub local_time: NaiveDateTime,
    pub line_no: usize,
}

/// File names inside a processed-data directory.
pub struct ProcessedFiles {
    pub checkins: PathBuf,
    pub pois: PathBuf,
    pub stats: PathBuf,
}

impl ProcessedFiles {
    pub fn in_dir(dir: &Path) -> Self {
        ProcessedFiles { checkins: dir.join("checkins.jsonl"), pois: dir.join("pois.jsonl"), stats: dir.join("stats.json") }
    }
}

pub fn write_processed(dir: &Path, catalog: &Catalog, split: &DatasetSplit, stats: &DatasetStats) -> Result<ProcessedFiles, IngestError> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::ArtifactError::io(dir, e))?;
    let files = ProcessedFiles::in_dir(dir);
    let rows = SplitTag::ALL.into_iter().flat_map(|tag| {
        split.part(tag).iter().flat_map(move |t| {
            t.checkins.iter().map(move |c| CheckInRow {
                user_id: c.user_id.clone(),
                poi_id: c.poi_id.clone(),
                trajectory_id: t.trajectory_id,
                split: tag,
                utc_time: c.utc_time,
                local_time: c.local_time,
                line_no: c.line_no,
            })
        })
    });
    jsonl::write_jsonl(&files.checkins, rows)?;
    jsonl::write_jsonl(&files.pois, catalog.iter())?;
    jsonl::write_json(&files.stats, stats)?;
    Ok(files)
}

pub fn load_processed(dir: &Path) -> Result<(Catalog, DatasetSplit), IngestError> {
    let files = ProcessedFiles::in_dir(dir);
    let pois: Vec<Poi> = jsonl::read_jsonl(&files.pois)?;
    let rows: Vec<CheckInRow> = jsonl::read_jsonl(&files.checkins)?;
    let catalog = Catalog::from_pois(pois);

    let mut order: Vec<(SplitTag, u64)> = Vec::new();
    let mut trajs: BTreeMap<u64, Trajectory> = BTreeMap::new();
    for row in rows {
        if catalog.get(&row.poi_id).is_none() {
            return Err(IngestError::Inconsistent(format!("check-in references unknown POI `{}`", row.poi_id)));
        }
        let entry = trajs.entry(row.trajectory_id).or_insert_with(|| {
            order.push((row.split, row.trajectory_id));
            Trajectory { trajectory_id: row.trajectory_id, user_id: row.user_id.clone(), checkins: Vec::new() }
        });
        if entry.user_id != row.user_id {
            return Err(IngestError::Inconsistent(format!("trajectory {} mixes users", row.trajectory_id)));
        }
        entry.checkins.push(CheckIn {
            user_id: row.user_id,
            poi_id: row.poi_id,
            utc_time: row.utc_time,
            local_time: row.local_time,
            line_no: row.line_no,
            trajectory_id: row.trajectory_id,
        });
    }
    let mut split = DatasetSplit::default();
    for (tag, id) in order {
        let t = trajs.remove(&id).expect("inserted above");
        match tag {
            SplitTag::Train => split.train.push(t),
            SplitTag::Validation => split.validation.push(t),
            SplitTag::Test => split.test.push(t),
        }
    }
    Ok((catalog, split))
}
