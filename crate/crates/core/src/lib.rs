//! Offline pipeline turning raw location-based check-ins into
//! knowledge-augmented prompts for generative next-POI recommendation,
//! plus the metrics harness that scores model generations.

pub mod agent;
pub mod config;
pub mod error;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod jsonl;
pub mod priors;
pub mod promptgen;
pub mod s2cell;
pub mod sid;
pub mod synthetic;
