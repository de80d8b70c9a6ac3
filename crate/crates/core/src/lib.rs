//! Dark-pattern detection over captured page snapshots: rule-based taxonomy
//! gating, interface heuristics, linguistic cues and temporal signals fused
//! into severity-scored findings.

pub mod eval;
pub mod heuristics;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod rules;
pub mod scoring;
pub mod synth;
pub mod taxonomy;
pub mod temporal;
pub mod text;
pub mod tokenize;
