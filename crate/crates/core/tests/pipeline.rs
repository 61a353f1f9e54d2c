use std::collections::HashMap;

use nextpoi_core::agent::mock::ScriptedAgent;
use nextpoi_core::agent::{self, AgentConfig, BackendSet, UserOutcome};
use nextpoi_core::eval::{aggregate_report, score_run, Prediction};
use nextpoi_core::ingest::{self, DatasetFormat, PreprocessConfig, Preprocessed, SplitTag};
use nextpoi_core::jsonl::read_jsonl;
use nextpoi_core::promptgen::{build_records, emit_records, parse_prompt, PromptConfig, PromptContext, PromptRecord};
use nextpoi_core::sid::{build_sids, CodebookConfig, HashEmbedder, SidCodebook};
use nextpoi_core::synthetic::{foursquare_tsv, SyntheticSpec};

fn synthetic() -> Preprocessed {
    let text = foursquare_tsv(&SyntheticSpec::default());
    let parsed = ingest::parse_checkins(text.as_bytes(), DatasetFormat::FoursquareTsv).unwrap();
    ingest::preprocess(parsed.records, &PreprocessConfig::default()).unwrap()
}

fn codebook(pre: &Preprocessed) -> SidCodebook {
    build_sids(&pre.catalog, &HashEmbedder::new(17), &CodebookConfig::default()).unwrap()
}

#[test]
fn processed_files_round_trip() {
    let pre = synthetic();
    let dir = tempfile::tempdir().unwrap();
    ingest::write_processed(dir.path(), &pre.catalog, &pre.split, &pre.stats).unwrap();
    let (catalog, split) = ingest::load_processed(dir.path()).unwrap();
    assert_eq!(catalog, pre.catalog);
    assert_eq!(split, pre.split);
    assert_eq!(ingest::compute_stats(&split, &catalog), pre.stats);
}

#[test]
fn no_test_poi_or_user_is_unseen_in_train() {
    let pre = synthetic();
    let train_pois: std::collections::HashSet<&str> = pre.split.train.iter().flat_map(|t| t.checkins.iter().map(|c| c.poi_id.as_str())).collect();
    let train_users: std::collections::HashSet<&str> = pre.split.train.iter().map(|t| t.user_id.as_str()).collect();
    for t in pre.split.validation.iter().chain(&pre.split.test) {
        assert!(train_users.contains(t.user_id.as_str()));
        assert!(t.checkins.iter().all(|c| train_pois.contains(c.poi_id.as_str())));
    }
}

#[test]
fn one_record_per_eligible_trajectory_and_deterministic_bytes() {
    let pre = synthetic();
    let cb = codebook(&pre);
    let prefs = HashMap::new();
    let cfg = PromptConfig::default();
    let ctx = PromptContext { catalog: &pre.catalog, codebook: &cb, split: &pre.split, preferences: &prefs, config: &cfg, config_hash: "h" };
    let dir = tempfile::tempdir().unwrap();
    for tag in SplitTag::ALL {
        let eligible = pre.split.part(tag).iter().filter(|t| t.checkins.len() >= 2).count();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        assert_eq!(emit_records(&ctx, tag, &a).unwrap(), eligible);
        emit_records(&ctx, tag, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let records: Vec<PromptRecord> = read_jsonl(&a).unwrap();
        for r in &records {
            let parsed = parse_prompt(&r.input).unwrap();
            assert!(parsed.preference.is_none() && !r.meta.has_preference);
            assert!(r.meta.recent_poi_ids.len() <= 5);
            assert_eq!(cb.sid_of(&r.meta.target_poi).unwrap().to_string(), r.output);
        }
    }
}

#[test]
fn scripted_knowledge_flows_into_prompts_and_scores() {
    let pre = synthetic();
    let cb = codebook(&pre);
    let acfg = AgentConfig { city: "New York".into(), ..AgentConfig::default() };
    let inputs = agent::inputs_from_split(&pre.split, &pre.catalog, acfg.history_lines);
    assert_eq!(inputs.len(), 20);
    let prefs: HashMap<String, String> = agent::run_batch(&inputs, &acfg, 2, |_| Ok(BackendSet::uniform(ScriptedAgent::default())))
        .unwrap()
        .into_iter()
        .map(|o| match o {
            UserOutcome::Done(h, _) => (h.user_id, h.text),
            UserOutcome::Failed(q, _) => panic!("{} failed: {}", q.user_id, q.error),
        })
        .collect();
    let cfg = PromptConfig::default();
    let ctx = PromptContext { catalog: &pre.catalog, codebook: &cb, split: &pre.split, preferences: &prefs, config: &cfg, config_hash: "h" };
    let records = build_records(&ctx, SplitTag::Test).unwrap();
    assert!(records.iter().all(|r| parse_prompt(&r.input).unwrap().preference.as_deref() == prefs.get(&r.meta.user_id).map(String::as_str)));

    let runs: Vec<_> = (0..3)
        .map(|i| {
            let preds: Vec<Prediction> = records
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    // run i misses every record whose index is divisible by i + 2
                    let cands = if j % (i + 2) == 0 { vec![] } else { vec![r.output.clone()] };
                    Prediction { record_id: r.meta.record_id.clone(), candidates: cands, run: format!("r{i}") }
                })
                .collect();
            score_run(&format!("r{i}"), &records, &preds, &cb, &pre.catalog, &[1, 5]).unwrap()
        })
        .collect();
    let report = aggregate_report(&runs).unwrap();
    let n = records.len() as f64;
    let want: f64 = (0..3).map(|i| records.iter().enumerate().filter(|(j, _)| j % (i + 2) != 0).count() as f64 / n).sum::<f64>() / 3.0;
    assert!((report.hr[&1] - want).abs() < 1e-12);
    assert_eq!(report.runs, 3);
}
