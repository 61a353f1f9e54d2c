//! Scoring of ranked SID predictions: hit rate, NDCG, the easy/hard split
//! on recently visited targets, and great-circle error of top-1 guesses.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::geo::haversine_km;
use crate::ingest::Catalog;
use crate::promptgen::PromptRecord;
use crate::sid::{parse_sid, SemanticId, SidCodebook};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("run `{run}` covers a different record set than run `{first}`")]
    MismatchedRuns { first: String, run: String },
    #[error("run `{run}` has more than one prediction for record `{record}`")]
    DuplicatePrediction { run: String, record: String },
    #[error("record `{0}` has an unparseable ground-truth SID")]
    BadTruth(String),
    #[error("K must be at least 1")]
    BadK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub candidates: Vec<String>,
    #[serde(default)]
    pub run: String,
}

/// 1-based position of the first valid candidate equal to `truth`.
/// Unparseable candidates keep their slot but never match.
pub fn rank_of(candidates: &[String], truth: &SemanticId) -> Option<usize> {
    candidates.iter().position(|c| parse_sid(c).is_ok_and(|s| &s == truth)).map(|i| i + 1)
}

pub fn hr_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / ranks.len() as f64
}

/// Single-relevant-item NDCG: gain 1/log2(rank + 1) inside the top K.
pub fn ndcg_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let total: f64 = ranks.iter().map(|r| match r {
        Some(r) if *r <= k => 1.0 / ((*r as f64) + 1.0).log2(),
        _ => 0.0,
    }).sum();
    total / ranks.len() as f64
}

/// Nearest-rank percentile of ascending `sorted`; `None` when empty.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Distance between the POI a predicted SID resolves to and the true POI.
/// `None` when the SID is unparseable or unknown.
pub fn distance_error(prediction: &str, truth_poi: &str, codebook: &SidCodebook, catalog: &Catalog) -> Option<f64> {
    let sid = parse_sid(prediction).ok()?;
    let predicted = catalog.get(codebook.poi_of(&sid)?)?;
    let truth = catalog.get(truth_poi)?;
    Some(haversine_km(predicted.latitude, predicted.longitude, truth.latitude, truth.longitude))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub mean: f64,
    pub n_scored: usize,
    pub n_excluded: usize,
}

impl DistanceSummary {
    pub fn from_distances(mut d: Vec<f64>, n_excluded: usize) -> Self {
        d.sort_by(f64::total_cmp);
        if d.is_empty() {
            return DistanceSummary { n_excluded, ..Default::default() };
        }
        DistanceSummary {
            p50: percentile(&d, 50.0).unwrap_or(0.0),
            p75: percentile(&d, 75.0).unwrap_or(0.0),
            p90: percentile(&d, 90.0).unwrap_or(0.0),
            mean: d.iter().sum::<f64>() / d.len() as f64,
            n_scored: d.len(),
            n_excluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub easy_hr1: f64,
    pub hard_hr1: f64,
    pub easy_fraction: f64,
    pub hard_fraction: f64,
    pub distance: DistanceSummary,
    pub n_records: usize,
    pub n_missing: usize,
    pub runs: usize,
}

/// Scored view of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunScore {
    pub run: String,
    pub record_ids: BTreeSet<String>,
    pub report: EvalReport,
    pub distances: Vec<f64>,
}

/// Records whose target appears among the preceding recent visits.
pub fn easy_hard_partition(records: &[PromptRecord]) -> (Vec<usize>, Vec<usize>) {
    (0..records.len()).partition(|&i| records[i].meta.recent_poi_ids.contains(&records[i].meta.target_poi))
}

fn mean_of(ranks: &[Option<usize>], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().filter(|&&i| ranks[i] == Some(1)).count() as f64 / idx.len() as f64
}

/// Scores one run's predictions against `records`.
pub fn score_run(
    run: &str,
    records: &[PromptRecord],
    predictions: &[Prediction],
    codebook: &SidCodebook,
    catalog: &Catalog,
    ks: &[usize],
) -> Result<RunScore, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::BadK);
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if by_id.insert(p.record_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction { run: run.to_string(), record: p.record_id.clone() });
        }
    }
    let known: BTreeSet<&str> = records.iter().map(|r| r.meta.record_id.as_str()).collect();
    let strays = by_id.keys().filter(|k| !known.contains(*k)).count();
    if strays > 0 {
        warn!(run, strays, "predictions for unknown records ignored");
    }

    let scored: Vec<(Option<usize>, Option<Option<f64>>)> = records
        .par_iter()
        .map(|r| {
            let truth = parse_sid(&r.output).map_err(|_| EvalError::BadTruth(r.meta.record_id.clone()))?;
            Ok(match by_id.get(r.meta.record_id.as_str()) {
                Some(p) => {
                    let dist = p.candidates.first().map(|top| distance_error(top, &r.meta.target_poi, codebook, catalog));
                    (rank_of(&p.candidates, &truth), Some(dist.flatten()))
                }
                None => (None, None),
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let ranks: Vec<Option<usize>> = scored.iter().map(|s| s.0).collect();
    let n_missing = scored.iter().filter(|s| s.1.is_none()).count();
    if n_missing > 0 {
        warn!(run, n_missing, "records without a prediction are counted as misses");
    }
    let distances: Vec<f64> = scored.iter().filter_map(|s| s.1.flatten()).collect();
    let n_excluded = scored.len() - n_missing - distances.len();
    let (easy, hard) = easy_hard_partition(records);
    let n = records.len().max(1) as f64;

    let report = EvalReport {
        hr: ks.iter().map(|&k| (k, hr_at_k(&ranks, k))).collect(),
        ndcg: ks.iter().map(|&k| (k, ndcg_at_k(&ranks, k))).collect(),
        easy_hr1: mean_of(&ranks, &easy),
        hard_hr1: mean_of(&ranks, &hard),
        easy_fraction: if records.is_empty() { 0.0 } else { easy.len() as f64 / n },
        hard_fraction: if records.is_empty() { 0.0 } else { hard.len() as f64 / n },
        distance: DistanceSummary::from_distances(distances.clone(), n_excluded),
        n_records: records.len(),
        n_missing,
        runs: 1,
    };
    let record_ids = by_id.keys().filter(|k| known.contains(*k)).map(|k| k.to_string()).collect();
    Ok(RunScore { run: run.to_string(), record_ids, report, distances })
}

fn mean_map(maps: impl Iterator<Item = BTreeMap<usize, f64>>, n: f64) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for m in maps {
        for (k, v) in m {
            *acc.entry(k).or_insert(0.0) += v;
        }
    }
    acc.into_iter().map(|(k, v)| (k, v / n)).collect()
}

/// Arithmetic mean of every metric across runs. All runs must cover the
/// same records.
pub fn aggregate_report(runs: &[RunScore]) -> Result<EvalReport, EvalError> {
    let first = runs.first().ok_or(EvalError::NoRuns)?;
    for r in &runs[1..] {
        if r.record_ids != first.record_ids || r.report.n_records != first.report.n_records {
            return Err(EvalError::MismatchedRuns { first: first.run.clone(), run: r.run.clone() });
        }
    }
    let n = runs.len() as f64;
    let avg = |f: fn(&EvalReport) -> f64| runs.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    Ok(EvalReport {
        hr: mean_map(runs.iter().map(|r| r.report.hr.clone()), n),
        ndcg: mean_map(runs.iter().map(|r| r.report.ndcg.clone()), n),
        easy_hr1: avg(|r| r.easy_hr1),
        hard_hr1: avg(|r| r.hard_hr1),
        easy_fraction: first.report.easy_fraction,
        hard_fraction: first.report.hard_fraction,
        distance: DistanceSummary {
            p50: avg(|r| r.distance.p50),
            p75: avg(|r| r.distance.p75),
            p90: avg(|r| r.distance.p90),
            mean: avg(|r| r.distance.mean),
            n_scored: runs.iter().map(|r| r.report.distance.n_scored).sum::<usize>() / runs.len(),
            n_excluded: runs.iter().map(|r| r.report.distance.n_excluded).sum::<usize>() / runs.len(),
        },
        n_records: first.report.n_records,
        n_missing: runs.iter().map(|r| r.report.n_missing).max().unwrap_or(0),
        runs: runs.len(),
    })
}

/// (distance, cumulative fraction) points over the pooled distances.
pub fn distance_cdf(runs: &[RunScore]) -> Vec<(f64, f64)> {
    let mut all: Vec<f64> = runs.iter().flat_map(|r| r.distances.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    let n = all.len() as f64;
    all.iter().enumerate().map(|(i, &d)| (d, (i + 1) as f64 / n)).collect()
}

/// Plain-text summary table.
pub fn render_report(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("records {}  runs {}  missing {}\n", r.n_records, r.runs, r.n_missing));
    out.push_str("K      HR@K     NDCG@K\n");
    for (k, hr) in &r.hr {
        out.push_str(&format!("{:<6} {:.4}   {:.4}\n", k, hr, r.ndcg.get(k).copied().unwrap_or(0.0)));
    }
    out.push_str(&format!("easy HR@1 {:.4} ({:.1}% of records)\n", r.easy_hr1, r.easy_fraction * 100.0));
    out.push_str(&format!("hard HR@1 {:.4} ({:.1}% of records)\n", r.hard_hr1, r.hard_fraction * 100.0));
    let d = &r.distance;
    out.push_str(&format!(
        "distance km  P50 {:.3}  P75 {:.3}  P90 {:.3}  mean {:.3}  (scored {}, excluded {})\n",
        d.p50, d.p75, d.p90, d.mean, d.n_scored, d.n_excluded
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hr_hand_count() {
        let ranks = [Some(1), Some(3), Some(7), None];
        assert_eq!(hr_at_k(&ranks, 5), 0.5);
        assert_eq!(hr_at_k(&[Some(6)], 5), 0.0);
        assert_eq!(hr_at_k(&[Some(6)], 10), 1.0);
    }

    #[test]
    fn ndcg_values() {
        assert_eq!(ndcg_at_k(&[Some(1)], 5), 1.0);
        assert_eq!(ndcg_at_k(&[Some(3)], 5), 0.5);
        assert_eq!(ndcg_at_k(&[Some(6)], 5), 0.0);
    }

    #[test]
    fn invalid_candidates_hold_rank() {
        let truth = SemanticId::new(1, 2, 3, 4, 0);
        let cands = vec!["garbage".to_string(), "<m_1><n_2><a_3><b_4><c_0>".to_string()];
        assert_eq!(rank_of(&cands, &truth), Some(2));
        assert_eq!(rank_of(&["<m_1><n_2><a_3>".to_string()], &truth), None);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(percentile(&d, 50.0), Some(5.0));
        assert_eq!(percentile(&d, 75.0), Some(8.0));
        assert_eq!(percentile(&d, 90.0), Some(9.0));
        assert_eq!(percentile(&d, 100.0), Some(10.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn monotone_in_k() {
        let ranks = [Some(2), None, Some(9), Some(1), Some(20), Some(15)];
        let mut prev = (0.0, 0.0);
        for k in 1..=25 {
            let cur = (hr_at_k(&ranks, k), ndcg_at_k(&ranks, k));
            assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
            assert!(cur.1 >= hr_at_k(&ranks, 1));
            prev = cur;
        }
    }
}
