//! Five-token semantic IDs: S2 geographic prefix plus hierarchical
//! k-means codes over POI text embeddings.

mod codebook;
pub mod embed;
mod id;
pub mod kmeans;

pub use codebook::{build_codebook, build_sids, geo_prefix, Branching, CodebookConfig, GeoLevels, SidCodebook, SidError, FORMAT_VERSION};
pub use embed::{embed_poi_text, EmbedError, EmbeddingBackend, HashEmbedder, HttpEmbedder, PoiText};
pub use id::{parse_sid, SemanticId, SidParseError};
