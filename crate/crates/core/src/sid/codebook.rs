//! Semantic-ID codebook: a two-level S2 prefix plus a three-level
//! hierarchical k-means over POI text embeddings.
//!
//! The JSON file written by [`SidCodebook::save`] (format version 1) holds
//! the geo level config, branching factors, seed, the embedding backend
//! description, all centroids, the cell remap tables and the POI -> SID map.
//! Cell ids are stored as S2 tokens (hex without trailing zeros).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{embed_poi_text, EmbedError, EmbeddingBackend};
use super::id::{parse_sid, SemanticId, SidParseError};
use super::kmeans::{kmeans, sq_dist, Clustering};
use crate::error::{ArtifactError, GeoError};
use crate::geo::Coordinates;
use crate::ingest::{Catalog, Poi};
use crate::jsonl;
use crate::s2cell::{cells_at_levels, CellId};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SidError {
    #[error("cannot build a codebook from an empty catalog")]
    EmptyCatalog,
    #[error("catalog has {n} POIs, fewer than the {k1} level-1 clusters requested")]
    TooFewPois { n: usize, k1: usize },
    #[error("branching factors must all be >= 2, got {0:?}")]
    BadBranching((usize, usize, usize)),
    #[error("geo levels must satisfy coarse <= fine <= 30, got ({0}, {1})")]
    BadGeoLevels(u8, u8),
    #[error("embedding count {embeddings} does not match POI count {pois}")]
    EmbeddingCount { pois: usize, embeddings: usize },
    #[error("embedding dimension mismatch: expected {expected}, POI `{poi_id}` has {got}")]
    Dimension { poi_id: String, expected: usize, got: usize },
    #[error("POI `{0}` has a non-finite embedding")]
    NonFinite(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid coordinates: {0}")]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("unsupported codebook format version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoLevels {
    pub coarse: u8,
    pub fine: u8,
}

impl Default for GeoLevels {
    fn default() -> Self {
        GeoLevels { coarse: 12, fine: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branching {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
}

impl Default for Branching {
    fn default() -> Self {
        Branching { k1: 32, k2: 32, k3: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookConfig {
    pub geo_levels: GeoLevels,
    pub branching: Branching,
    pub seed: u64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig { geo_levels: GeoLevels::default(), branching: Branching::default(), seed: 17 }
    }
}

/// S2 cells of a point at the two configured levels (coarse, fine).
pub fn geo_prefix(lat: f64, lon: f64, levels: GeoLevels) -> Result<(CellId, CellId), GeoError> {
    Coordinates::new(lat, lon)?;
    Ok(cells_at_levels(lat, lon, levels.coarse, levels.fine))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CodebookFile {
    format_version: u32,
    geo_levels: GeoLevels,
    branching: Branching,
    seed: u64,
    embedding_backend: String,
    dim: usize,
    level1: Vec<Vec<f32>>,
    level2: Vec<Vec<Vec<f32>>>,
    level3: Vec<Vec<Vec<Vec<f32>>>>,
    /// Coarse cell token for each m index.
    coarse_cells: Vec<String>,
    /// Fine cell tokens for each n index, per m.
    fine_cells: Vec<Vec<String>>,
    vocab: [u32; 5],
    category_sharing: Option<f64>,
    assignments: BTreeMap<String, SemanticId>,
}

/// Finished codebook; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct SidCodebook {
    file: CodebookFile,
    by_sid: HashMap<SemanticId, String>,
    coarse_index: HashMap<CellId, u32>,
    fine_index: HashMap<CellId, (u32, u32)>,
}

impl PartialEq for SidCodebook {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(&self.file).ok() == serde_json::to_value(&other.file).ok()
    }
}

impl SidCodebook {
    fn from_file(file: CodebookFile) -> Result<Self, SidError> {
        if file.format_version != FORMAT_VERSION {
            return Err(SidError::Version(file.format_version));
        }
        let by_sid = file.assignments.iter().map(|(p, s)| (*s, p.clone())).collect();
        let parse_token = |t: &str| CellId(u64::from_str_radix(&format!("{t:0<16}"), 16).unwrap_or(0));
        let coarse_index = file.coarse_cells.iter().enumerate().map(|(m, t)| (parse_token(t), m as u32)).collect();
        let mut fine_index = HashMap::new();
        for (m, cells) in file.fine_cells.iter().enumerate() {
            for (n, t) in cells.iter().enumerate() {
                fine_index.insert(parse_token(t), (m as u32, n as u32));
            }
        }
        Ok(SidCodebook { file, by_sid, coarse_index, fine_index })
    }

    pub fn save(&self, path: &Path) -> Result<(), SidError> {
        let text = serde_json::to_string(&self.file)
            .map_err(|e| ArtifactError::Json { path: path.display().to_string(), line: 0, source: e })?;
        std::fs::write(path, text + "\n").map_err(|e| ArtifactError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SidError> {
        let file: CodebookFile = jsonl::read_json(path)?;
        Self::from_file(file)
    }

    pub fn sid_of(&self, poi_id: &str) -> Option<SemanticId> {
        self.file.assignments.get(poi_id).copied()
    }

    pub fn poi_of(&self, sid: &SemanticId) -> Option<&str> {
        self.by_sid.get(sid).map(String::as_str)
    }

    pub fn assignments(&self) -> impl Iterator<Item = (&str, SemanticId)> {
        self.file.assignments.iter().map(|(p, s)| (p.as_str(), *s))
    }

    pub fn len(&self) -> usize {
        self.file.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file.assignments.is_empty()
    }

    pub fn geo_levels(&self) -> GeoLevels {
        self.file.geo_levels
    }

    pub fn branching(&self) -> Branching {
        self.file.branching
    }

    /// Exclusive upper bound of each token position's indices.
    pub fn vocab(&self) -> [u32; 5] {
        self.file.vocab
    }

    /// Fraction of same-category POI pairs that share their c token.
    pub fn category_sharing(&self) -> Option<f64> {
        self.file.category_sharing
    }

    /// Dense (m, n) tokens of a coordinate, if its cells occur in the catalog.
    pub fn geo_prefix(&self, lat: f64, lon: f64) -> Result<Option<(u32, u32)>, SidError> {
        let (_, fine) = geo_prefix(lat, lon, self.file.geo_levels)?;
        Ok(self.fine_index.get(&fine).copied())
    }

    pub fn coarse_token(&self, cell: CellId) -> Option<u32> {
        self.coarse_index.get(&cell).copied()
    }

    /// Parses `text` and checks every index against the vocabulary.
    pub fn parse_known(&self, text: &str) -> Result<SemanticId, SidParseError> {
        let sid = parse_sid(text)?;
        for ((prefix, index), bound) in SemanticId::PREFIXES.iter().zip(sid.tokens()).zip(self.file.vocab) {
            if index >= bound {
                return Err(SidParseError::UnknownIndex { prefix: *prefix, index });
            }
        }
        Ok(sid)
    }
}

/// Embeds every catalog POI (in parallel) and builds the codebook.
pub fn build_sids(catalog: &Catalog, backend: &dyn EmbeddingBackend, config: &CodebookConfig) -> Result<SidCodebook, SidError> {
    let pois: Vec<&Poi> = catalog.iter().collect();
    let embeddings: Vec<Vec<f32>> = pois
        .par_iter()
        .map(|p| embed_poi_text(p, backend, 3, None))
        .collect::<Result<_, _>>()?;
    let owned: Vec<Poi> = pois.into_iter().cloned().collect();
    build_codebook(&owned, &embeddings, config, &backend.describe())
}

fn derive_seed(seed: u64, path: &[usize]) -> u64 {
    // splitmix64 over the cluster path
    let mut z = seed;
    for &p in path {
        z = z.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(p as u64);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}

fn cluster_subset(embeddings: &[Vec<f32>], members: &[usize], k: usize, seed: u64) -> Clustering {
    let pts: Vec<&[f32]> = members.iter().map(|&i| embeddings[i].as_slice()).collect();
    kmeans(&pts, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn build_codebook(pois: &[Poi], embeddings: &[Vec<f32>], config: &CodebookConfig, backend: &str) -> Result<SidCodebook, SidError> {
    let Branching { k1, k2, k3 } = config.branching;
    if k1 < 2 || k2 < 2 || k3 < 2 {
        return Err(SidError::BadBranching((k1, k2, k3)));
    }
    let GeoLevels { coarse, fine } = config.geo_levels;
    if coarse > fine || fine > 30 {
        return Err(SidError::BadGeoLevels(coarse, fine));
    }
    let n = pois.len();
    if n == 0 {
        return Err(SidError::EmptyCatalog);
    }
    // a single POI is the degenerate one-cluster catalog
    if n < k1 && n > 1 {
        return Err(SidError::TooFewPois { n, k1 });
    }
    if embeddings.len() != n {
        return Err(SidError::EmbeddingCount { pois: n, embeddings: embeddings.len() });
    }
    let dim = embeddings[0].len();
    for (p, e) in pois.iter().zip(embeddings) {
        if e.len() != dim {
            return Err(SidError::Dimension { poi_id: p.poi_id.clone(), expected: dim, got: e.len() });
        }
        if e.iter().any(|x| !x.is_finite()) {
            return Err(SidError::NonFinite(p.poi_id.clone()));
        }
    }

    // process POIs in id order so results do not depend on input order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| pois[i].poi_id.cmp(&pois[j].poi_id));
    let pois: Vec<&Poi> = order.iter().map(|&i| &pois[i]).collect();
    let embeddings: Vec<Vec<f32>> = order.iter().map(|&i| embeddings[i].clone()).collect();

    // geographic prefix
    let cells: Vec<(CellId, CellId)> = pois
        .iter()
        .map(|p| geo_prefix(p.latitude, p.longitude, config.geo_levels))
        .collect::<Result<_, _>>()?;
    let coarse_set: BTreeSet<CellId> = cells.iter().map(|c| c.0).collect();
    let coarse_cells: Vec<CellId> = coarse_set.into_iter().collect();
    let m_of: HashMap<CellId, u32> = coarse_cells.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();
    let mut fine_sets: Vec<BTreeSet<CellId>> = vec![BTreeSet::new(); coarse_cells.len()];
    for (c, f) in &cells {
        fine_sets[m_of[c] as usize].insert(*f);
    }
    let fine_cells: Vec<Vec<CellId>> = fine_sets.into_iter().map(|s| s.into_iter().collect()).collect();
    let n_of: HashMap<CellId, u32> = fine_cells
        .iter()
        .flat_map(|cells| cells.iter().enumerate().map(|(i, c)| (*c, i as u32)))
        .collect();

    // semantic hierarchy
    let all: Vec<usize> = (0..n).collect();
    let top = cluster_subset(&embeddings, &all, k1, derive_seed(config.seed, &[1]));
    let mut members_a: Vec<Vec<usize>> = vec![Vec::new(); top.centroids.len()];
    for (i, &a) in top.assignment.iter().enumerate() {
        members_a[a].push(i);
    }
    let second: Vec<Clustering> = members_a
        .par_iter()
        .enumerate()
        .map(|(a, m)| cluster_subset(&embeddings, m, k2, derive_seed(config.seed, &[2, a])))
        .collect();
    let mut members_ab: Vec<Vec<Vec<usize>>> = second.iter().map(|c| vec![Vec::new(); c.centroids.len()]).collect();
    for (a, (members, cl)) in members_a.iter().zip(&second).enumerate() {
        for (&i, &b) in members.iter().zip(&cl.assignment) {
            members_ab[a][b].push(i);
        }
    }
    let third: Vec<Vec<Clustering>> = members_ab
        .par_iter()
        .enumerate()
        .map(|(a, per_b)| {
            per_b
                .iter()
                .enumerate()
                .map(|(b, m)| cluster_subset(&embeddings, m, k3, derive_seed(config.seed, &[3, a, b])))
                .collect()
        })
        .collect();

    let mut sids = vec![SemanticId::new(0, 0, 0, 0, 0); n];
    for (a, per_b) in members_ab.iter().enumerate() {
        for (b, members) in per_b.iter().enumerate() {
            for (&i, &c) in members.iter().zip(&third[a][b].assignment) {
                let m = m_of[&cells[i].0];
                let nn = n_of[&cells[i].1];
                sids[i] = SemanticId::new(m, nn, a as u32, b as u32, c as u32);
            }
        }
    }
    disambiguate(&mut sids, &embeddings, &third);

    let mut vocab = [0u32; 5];
    for s in &sids {
        for (v, t) in vocab.iter_mut().zip(s.tokens()) {
            *v = (*v).max(t + 1);
        }
    }
    let category_sharing = category_sharing(&pois, &sids);
    let file = CodebookFile {
        format_version: FORMAT_VERSION,
        geo_levels: config.geo_levels,
        branching: config.branching,
        seed: config.seed,
        embedding_backend: backend.to_string(),
        dim,
        level1: top.centroids,
        level2: second.iter().map(|c| c.centroids.clone()).collect(),
        level3: third.iter().map(|per_b| per_b.iter().map(|c| c.centroids.clone()).collect()).collect(),
        coarse_cells: coarse_cells.iter().map(CellId::to_token).collect(),
        fine_cells: fine_cells.iter().map(|cs| cs.iter().map(CellId::to_token).collect()).collect(),
        vocab,
        category_sharing,
        assignments: pois.iter().zip(&sids).map(|(p, s)| (p.poi_id.clone(), *s)).collect(),
    };
    if let Some(share) = category_sharing {
        tracing::info!(share, "same-category pairs sharing the c token");
    }
    SidCodebook::from_file(file)
}

/// POIs whose five tokens coincide keep the first (by id) holder; the rest
/// move to the nearest level-3 centroid of their (a, b) cluster whose slot
/// is free in their (m, n, a, b) group, or to a fresh c index past the
/// centroids when every slot is taken. Indices are already in id order.
fn disambiguate(sids: &mut [SemanticId], embeddings: &[Vec<f32>], third: &[Vec<Clustering>]) {
    let mut used: HashMap<SemanticId, usize> = HashMap::new();
    let mut colliding = Vec::new();
    for (i, s) in sids.iter().enumerate() {
        if used.contains_key(s) {
            colliding.push(i);
        } else {
            used.insert(*s, i);
        }
    }
    for i in colliding {
        let s = sids[i];
        let centroids = &third[s.a as usize][s.b as usize].centroids;
        let mut by_dist: Vec<(f32, usize)> = centroids.iter().enumerate().map(|(c, v)| (sq_dist(&embeddings[i], v), c)).collect();
        by_dist.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let free = by_dist
            .into_iter()
            .map(|(_, c)| c as u32)
            .chain(centroids.len() as u32..)
            .find(|&c| !used.contains_key(&SemanticId { c, ..s }))
            .expect("unbounded candidate range");
        let moved = SemanticId { c: free, ..s };
        used.insert(moved, i);
        sids[i] = moved;
    }
}

fn category_sharing(pois: &[&Poi], sids: &[SemanticId]) -> Option<f64> {
    let mut hist: HashMap<&str, HashMap<u32, u64>> = HashMap::new();
    for (p, s) in pois.iter().zip(sids) {
        *hist.entry(p.category.as_str()).or_default().entry(s.c).or_default() += 1;
    }
    let pairs = |k: u64| k * k.saturating_sub(1) / 2;
    let (mut shared, mut total) = (0u64, 0u64);
    for per_c in hist.values() {
        let size: u64 = per_c.values().sum();
        total += pairs(size);
        shared += per_c.values().map(|&k| pairs(k)).sum::<u64>();
    }
    (total > 0).then(|| shared as f64 / total as f64)
}
