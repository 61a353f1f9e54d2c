use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::Args;
use nextpoi_core::agent::mock::ScriptedAgent;
use nextpoi_core::agent::{self, AgentTranscript, BackendError, BackendSet, HotspotText, Quarantined, UserOutcome};
use nextpoi_core::config::{AgentBackendKind, EmbedKind, PipelineConfig};
use nextpoi_core::eval::{self, Prediction};
use nextpoi_core::ingest::{self, Catalog, DatasetFormat, Poi, ProcessedFiles, SplitTag};
use nextpoi_core::jsonl::{read_jsonl, write_json, write_jsonl};
use nextpoi_core::promptgen::{self, PromptContext, PromptRecord};
use nextpoi_core::sid::{self, EmbeddingBackend, HashEmbedder, HttpEmbedder, SidCodebook, SidError};
use nextpoi_core::priors;
use nextpoi_core::synthetic::{self, SyntheticSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::manifest::{manifest_path_for, StageRun};
use crate::{Failure, OrFail};

type Outcome = Result<(), Failure>;

fn need(path: &Path, what: &str, stage: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Data(anyhow!("{what} missing at {}; run {stage}", path.display())))
    }
}

fn ensure_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).data()
}

fn ensure_parent(file: &Path) -> Outcome {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn load_processed_dir(dir: &Path) -> Result<(Catalog, ingest::DatasetSplit), Failure> {
    let files = ProcessedFiles::in_dir(dir);
    need(&files.checkins, "processed check-ins", "ingest")?;
    need(&files.pois, "processed POI catalog", "ingest")?;
    ingest::load_processed(dir).data()
}

fn load_codebook(path: &Path) -> Result<SidCodebook, Failure> {
    need(path, "codebook", "build-sids")?;
    SidCodebook::load(path).data()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw dataset file.
    #[arg(long)]
    input: PathBuf,
    /// foursquare-tsv or gowalla-csv; defaults to the config's dataset_format.
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Output directory for processed data.
    #[arg(long)]
    out: PathBuf,
}

pub fn ingest(a: IngestArgs, cfg: PipelineConfig) -> Outcome {
    let mut run = StageRun::start("ingest");
    let format = a.format.unwrap_or(cfg.dataset_format);
    let file = File::open(&a.input).with_context(|| format!("cannot open dataset {}", a.input.display())).data()?;
    run.input(&a.input);
    let parsed = ingest::parse_checkins(BufReader::new(file), format).data()?;
    tracing::info!(records = parsed.records.len(), rejected = parsed.rejected.len(), "parsed raw check-ins");
    let rejected = parsed.rejected.len();
    let pre = ingest::preprocess(parsed.records, &cfg.preprocess).data()?;
    ensure_dir(&a.out)?;
    let files = ingest::write_processed(&a.out, &pre.catalog, &pre.split, &pre.stats).data()?;
    let rejections = a.out.join("rejections.jsonl");
    write_jsonl(&rejections, &parsed.rejected).data()?;
    let priors_path = a.out.join("priors.jsonl");
    write_jsonl(&priors_path, priors::user_priors(&pre.split.train, &pre.catalog, cfg.prompt.top_n)).data()?;
    let summary = json!({
        "format": format.to_string(),
        "rejected_lines": rejected,
        "filter": pre.filter,
        "split": pre.split_report,
        "stats": pre.stats,
        "trajectories": { "train": pre.split.train.len(), "validation": pre.split.validation.len(), "test": pre.split.test.len() },
    });
    let name = a.out.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    println!("{}", stats_table(&name, &pre.stats));
    let outputs = [files.checkins.as_path(), files.pois.as_path(), files.stats.as_path(), rejections.as_path(), priors_path.as_path()];
    run.finish(&cfg, &outputs, &manifest_path_for(&a.out, "ingest", true), summary).data()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct BuildSidsArgs {
    /// Processed-data directory written by `ingest`.
    #[arg(long)]
    processed: PathBuf,
    /// Codebook output path.
    #[arg(long)]
    out: PathBuf,
}

pub fn build_sids(a: BuildSidsArgs, cfg: PipelineConfig) -> Outcome {
    let mut run = StageRun::start("build-sids");
    let pois_path = ProcessedFiles::in_dir(&a.processed).pois;
    need(&pois_path, "processed POI catalog", "ingest")?;
    run.input(&pois_path);
    let pois: Vec<Poi> = read_jsonl(&pois_path).data()?;
    let catalog = Catalog::from_pois(pois);
    let backend: Box<dyn EmbeddingBackend> = match cfg.embed_backend {
        EmbedKind::Hash => Box::new(HashEmbedder::new(cfg.codebook.seed)),
        EmbedKind::Http => Box::new(HttpEmbedder::new(cfg.embed_endpoint.clone().unwrap_or_default())),
    };
    let codebook = match sid::build_sids(&catalog, backend.as_ref(), &cfg.codebook) {
        Ok(c) => c,
        Err(e @ SidError::Embed(_)) => return Err(Failure::Backend(e.into())),
        Err(e) => return Err(Failure::Data(e.into())),
    };
    ensure_parent(&a.out)?;
    codebook.save(&a.out).data()?;
    let summary = json!({
        "pois": codebook.len(),
        "vocab": codebook.vocab(),
        "category_sharing": codebook.category_sharing(),
        "backend": backend.describe(),
    });
    tracing::info!(pois = codebook.len(), "codebook written");
    run.finish(&cfg, &[a.out.as_path()], &manifest_path_for(&a.out, "build-sids", false), summary).data()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct GenKnowledgeArgs {
    /// Processed-data directory written by `ingest`.
    #[arg(long)]
    processed: PathBuf,
    /// Split whose users receive a hotspot text; only `train` is meaningful.
    #[arg(long, default_value = "train")]
    split: SplitTag,
    #[arg(long)]
    city: Option<String>,
    #[arg(long)]
    max_words: Option<usize>,
    #[arg(long)]
    delta_days: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    /// mock (scripted, offline) or http (endpoints from the environment).
    #[arg(long)]
    backend: Option<String>,
    /// Replay recorded transcripts (`transcripts.jsonl` in this directory)
    /// instead of calling any backend.
    #[arg(long)]
    mock_transcripts: Option<PathBuf>,
    /// Output directory; defaults to the processed-data directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_transcripts(path: &Path) -> Result<Vec<AgentTranscript>, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).data()?;
    if let Ok(one) = serde_json::from_str::<AgentTranscript>(&text) {
        return Ok(vec![one]);
    }
    read_jsonl(path).data()
}

pub fn gen_knowledge(a: GenKnowledgeArgs, mut cfg: PipelineConfig) -> Outcome {
    let mut run = StageRun::start("gen-knowledge");
    if a.split != SplitTag::Train {
        return Err(Failure::Usage(anyhow!("hotspot texts are anchored at each user's last train check-in; use --split train")));
    }
    if let Some(c) = a.city {
        cfg.agent.city = c;
    }
    if let Some(m) = a.max_words {
        cfg.agent.max_words = m;
    }
    if let Some(d) = a.delta_days {
        cfg.agent.delta_days = d;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    match a.backend.as_deref() {
        None => {}
        Some("mock") => cfg.agent_backend = AgentBackendKind::Mock,
        Some("http") => cfg.agent_backend = AgentBackendKind::Http,
        Some(other) => return Err(Failure::Usage(anyhow!("unknown backend `{other}`; expected mock or http"))),
    }
    cfg.validate().usage()?;
    cfg.agent.validate().usage()?;

    let (catalog, split) = load_processed_dir(&a.processed)?;
    run.input(ProcessedFiles::in_dir(&a.processed).checkins);
    let inputs = agent::inputs_from_split(&split, &catalog, cfg.agent.history_lines);

    let outcomes = if let Some(dir) = &a.mock_transcripts {
        let path = dir.join("transcripts.jsonl");
        need(&path, "recorded transcripts", "gen-knowledge")?;
        run.input(&path);
        let recorded: HashMap<String, AgentTranscript> = read_transcripts(&path)?.into_iter().map(|t| (t.user_id.clone(), t)).collect();
        agent::run_batch(&inputs, &cfg.agent, cfg.workers, |input| {
            recorded
                .get(&input.user_id)
                .map(AgentTranscript::replay_backends)
                .ok_or_else(|| BackendError::Fatal(format!("no recorded transcript for user {}", input.user_id)))
        })
    } else {
        let backends = match cfg.agent_backend {
            AgentBackendKind::Mock => BackendSet::uniform(ScriptedAgent::default()),
            AgentBackendKind::Http => BackendSet {
                llm: Arc::new(agent::backend::HttpLlm::from_env().backend()?),
                search: Arc::new(agent::backend::HttpSearch::from_env().backend()?),
                fetch: Arc::new(agent::backend::HttpFetch::from_env().backend()?),
            },
        };
        agent::run_batch(&inputs, &cfg.agent, cfg.workers, |_| Ok(backends.clone()))
    }
    .usage()?;

    let mut hotspots: Vec<HotspotText> = Vec::new();
    let mut transcripts: Vec<AgentTranscript> = Vec::new();
    let mut quarantined: Vec<Quarantined> = Vec::new();
    for o in outcomes {
        match o {
            UserOutcome::Done(h, t) => {
                hotspots.push(h);
                transcripts.push(*t);
            }
            UserOutcome::Failed(q, t) => {
                tracing::warn!(user = %q.user_id, stage = ?q.stage, error = %q.error, "user quarantined");
                quarantined.push(q);
                transcripts.push(*t);
            }
        }
    }

    let out = a.out.unwrap_or_else(|| a.processed.clone());
    ensure_dir(&out)?;
    let hot_path = out.join("hotspots.jsonl");
    let tr_path = out.join("transcripts.jsonl");
    let q_path = out.join("quarantine.jsonl");
    write_jsonl(&hot_path, &hotspots).data()?;
    write_jsonl(&tr_path, &transcripts).data()?;
    write_jsonl(&q_path, &quarantined).data()?;
    let summary = json!({
        "users": inputs.len(),
        "hotspots": hotspots.len(),
        "quarantined": quarantined.len(),
        "truncated": hotspots.iter().filter(|h| h.truncated).count(),
        "low_evidence": hotspots.iter().filter(|h| h.low_evidence).count(),
    });
    println!("hotspot texts: {} written, {} users quarantined", hotspots.len(), quarantined.len());
    run.finish(&cfg, &[hot_path.as_path(), tr_path.as_path(), q_path.as_path()], &manifest_path_for(&out, "gen-knowledge", true), summary)
        .data()?;
    if hotspots.is_empty() && !quarantined.is_empty() {
        return Err(Failure::Backend(anyhow!("every user failed; see {}", q_path.display())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct BuildPromptsArgs {
    /// train, val or test.
    #[arg(long)]
    split: SplitTag,
    /// Processed-data directory (also searched for hotspots.jsonl).
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    /// Hotspot texts; defaults to `<features>/hotspots.jsonl` when present.
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn build_prompts(a: BuildPromptsArgs, cfg: PipelineConfig) -> Outcome {
    let mut run = StageRun::start("build-prompts");
    let codebook = load_codebook(&a.codebook)?;
    run.input(&a.codebook);
    let (catalog, split) = load_processed_dir(&a.features)?;
    run.input(ProcessedFiles::in_dir(&a.features).checkins);
    let knowledge = match a.knowledge {
        Some(p) => {
            need(&p, "hotspot texts", "gen-knowledge")?;
            Some(p)
        }
        None => Some(a.features.join("hotspots.jsonl")).filter(|p| p.exists()),
    };
    let preferences: HashMap<String, String> = match &knowledge {
        Some(p) => {
            run.input(p);
            read_jsonl::<HotspotText>(p).data()?.into_iter().map(|h| (h.user_id, h.text)).collect()
        }
        None => {
            tracing::warn!("no hotspot texts found; prompts will omit the user_preference block");
            HashMap::new()
        }
    };
    let hash = cfg.hash();
    let ctx = PromptContext { catalog: &catalog, codebook: &codebook, split: &split, preferences: &preferences, config: &cfg.prompt, config_hash: &hash };
    ensure_parent(&a.out)?;
    let n = promptgen::emit_records(&ctx, a.split, &a.out).data()?;
    let eligible = split.part(a.split).iter().filter(|t| t.len() >= 2).count();
    println!("{n} records written to {}", a.out.display());
    let summary = json!({ "split": a.split, "records": n, "trajectories": split.part(a.split).len(), "eligible_trajectories": eligible });
    run.finish(&cfg, &[a.out.as_path()], &manifest_path_for(&a.out, "build-prompts", false), summary).data()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction files; records are grouped into runs by their `run` field.
    #[arg(long, num_args = 1.., required = true)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    /// The processed `pois.jsonl`.
    #[arg(long)]
    catalog: PathBuf,
    /// Comma-separated cutoffs; defaults to the config's eval_ks.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Machine-readable report path.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Tab-separated (distance_km, cumulative_fraction) pairs.
    #[arg(long)]
    cdf_out: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs, cfg: PipelineConfig) -> Outcome {
    let mut run = StageRun::start("evaluate");
    let ks = if a.k.is_empty() { cfg.eval_ks.clone() } else { a.k.clone() };
    if ks.contains(&0) {
        return Err(Failure::Usage(anyhow!("K must be at least 1")));
    }
    need(&a.records, "prompt records", "build-prompts")?;
    need(&a.catalog, "POI catalog", "ingest")?;
    let codebook = load_codebook(&a.codebook)?;
    let records: Vec<PromptRecord> = read_jsonl(&a.records).data()?;
    let catalog = Catalog::from_pois(read_jsonl::<Poi>(&a.catalog).data()?);
    run.input(&a.records);
    run.input(&a.catalog);
    run.input(&a.codebook);

    let mut runs: BTreeMap<String, Vec<Prediction>> = BTreeMap::new();
    for p in &a.predictions {
        need(p, "prediction file", "the model's predict step")?;
        run.input(p);
        let stem = p.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        for pred in read_jsonl::<Prediction>(p).data()? {
            let key = if pred.run.is_empty() { stem.clone() } else { pred.run.clone() };
            runs.entry(key).or_default().push(pred);
        }
    }
    let scores = runs
        .iter()
        .map(|(name, preds)| eval::score_run(name, &records, preds, &codebook, &catalog, &ks))
        .collect::<Result<Vec<_>, _>>()
        .data()?;
    let report = eval::aggregate_report(&scores).data()?;
    print!("{}", eval::render_report(&report));

    let mut outputs = Vec::new();
    if let Some(p) = &a.report_out {
        ensure_parent(p)?;
        write_json(p, &report).data()?;
        outputs.push(p.clone());
    }
    if let Some(p) = &a.cdf_out {
        ensure_parent(p)?;
        let mut f = File::create(p).with_context(|| format!("cannot create {}", p.display())).data()?;
        writeln!(f, "distance_km\tcumulative_fraction").data()?;
        for (d, c) in eval::distance_cdf(&scores) {
            writeln!(f, "{d:.6}\t{c:.6}").data()?;
        }
        outputs.push(p.clone());
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let manifest = match &a.report_out {
        Some(p) => manifest_path_for(p, "evaluate", false),
        None => return Ok(()),
    };
    run.finish(&cfg, &refs, &manifest, serde_json::to_value(&report).data()?).data()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    processed: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn stats_table(name: &str, s: &ingest::DatasetStats) -> String {
    format!(
        "{:<12} {:>8} {:>8} {:>8} {:>11} {:>10}\n{:<12} {:>8} {:>8} {:>8} {:>11} {:>10}",
        "Dataset",
        "Users",
        "POIs",
        "Trajs",
        "Categories",
        "Check-ins",
        name,
        thousands(s.n_users),
        thousands(s.n_pois),
        thousands(s.n_trajectories),
        thousands(s.n_categories),
        thousands(s.n_checkins)
    )
}

pub fn stats(a: StatsArgs, _cfg: PipelineConfig) -> Outcome {
    let (catalog, split) = load_processed_dir(&a.processed)?;
    let s = ingest::compute_stats(&split, &catalog);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s).data()?);
    } else {
        let name = a.processed.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        println!("{}", stats_table(&name, &s));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A transcript JSON file or a `transcripts.jsonl`.
    #[arg(long)]
    transcript: PathBuf,
}

pub fn replay_agent(a: ReplayArgs, _cfg: PipelineConfig) -> Outcome {
    need(&a.transcript, "transcript", "gen-knowledge")?;
    let transcripts = read_transcripts(&a.transcript)?;
    let mut mismatches = 0;
    for t in &transcripts {
        let Some(recorded) = &t.hotspot else {
            println!("{}\tskipped (recorded run failed: {})", t.user_id, t.failure.as_deref().unwrap_or("unknown"));
            continue;
        };
        match agent::replay(t) {
            Ok((h, _)) if &h == recorded => println!("{}\tidentical\t{}", t.user_id, h.text),
            Ok((h, _)) => {
                mismatches += 1;
                println!("{}\tMISMATCH\n  recorded: {}\n  replayed: {}", t.user_id, recorded.text, h.text);
            }
            Err(f) => {
                mismatches += 1;
                println!("{}\treplay failed: {}", t.user_id, f.error);
            }
        }
    }
    if mismatches > 0 {
        return Err(Failure::Data(anyhow!("{mismatches} of {} transcripts did not replay identically", transcripts.len())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SampleAuditArgs {
    /// `hotspots.jsonl` from gen-knowledge.
    #[arg(long)]
    knowledge: PathBuf,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn sample_audit(a: SampleAuditArgs, cfg: PipelineConfig) -> Outcome {
    let mut run = StageRun::start("sample-audit");
    need(&a.knowledge, "hotspot texts", "gen-knowledge")?;
    run.input(&a.knowledge);
    let mut all: Vec<HotspotText> = read_jsonl(&a.knowledge).data()?;
    if all.is_empty() {
        bail_data("no hotspot texts to sample")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.unwrap_or(cfg.codebook.seed));
    all.shuffle(&mut rng);
    all.truncate(a.n);
    all.sort_by(|x, y| x.user_id.cmp(&y.user_id));
    let rows: Vec<serde_json::Value> = all
        .iter()
        .map(|h| json!({ "user_id": h.user_id, "anchor_time": h.anchor_time, "region": h.region, "text": h.text, "verdict": null, "notes": "" }))
        .collect();
    ensure_parent(&a.out)?;
    write_jsonl(&a.out, &rows).data()?;
    println!("{} texts sampled to {}", rows.len(), a.out.display());
    run.finish(&cfg, &[a.out.as_path()], &manifest_path_for(&a.out, "sample-audit", false), json!({ "sampled": rows.len() })).data()
}

fn bail_data(msg: &str) -> Outcome {
    let r: anyhow::Result<()> = (|| bail!("{msg}"))();
    r.data()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    users: usize,
    #[arg(long, default_value_t = 80)]
    pois: usize,
    #[arg(long, default_value_t = 120)]
    days: i64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

pub fn synth(a: SynthArgs, _cfg: PipelineConfig) -> Outcome {
    let spec = SyntheticSpec { users: a.users, pois: a.pois, days: a.days, seed: a.seed, ..SyntheticSpec::default() };
    ensure_parent(&a.out)?;
    std::fs::write(&a.out, synthetic::foursquare_tsv(&spec)).with_context(|| format!("cannot write {}", a.out.display())).data()
}
