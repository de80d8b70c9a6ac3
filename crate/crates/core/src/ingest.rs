//! Snapshot bundle loading and validation.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_snapshot, FlowGraph, PageSnapshot, Violation};
use crate::tokenize::canonicalize_text;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    /// Ground-truth label when known: `true` = dark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_label: Option<bool>,
    pub host: String,
    /// Steps that failed during live capture; empty for complete bundles.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub capture_errors: Vec<String>,
}

impl Manifest {
    pub fn new(host: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_owned(),
            site_label: None,
            host: host.into(),
            capture_errors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBundle {
    pub manifest: Manifest,
    pub snapshots: Vec<PageSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowGraph>,
}

impl SnapshotBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundles always serialize")
    }

    /// Snapshot whose flow state is `state`.
    pub fn snapshot_for_state(&self, state: &str) -> Option<&PageSnapshot> {
        self.snapshots.iter().find(|s| s.flow_state() == state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Unknown keys are an error.
    #[default]
    Strict,
    /// Unknown keys are ignored.
    Lenient,
}

/// A bundle-level invariant breach.
#[derive(Debug, Clone, PartialEq)]
pub enum BundleIssue {
    Snapshot { snapshot_id: String, violation: Violation },
    DuplicateSnapshotId(String),
    DanglingState(String),
    FlowEdge { from: String, to: String },
    EmptyGoal(String),
    UnknownTask(String),
    NoSnapshots,
}

impl std::fmt::Display for BundleIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BundleIssue::Snapshot { snapshot_id, violation } => {
                write!(f, "snapshot `{snapshot_id}`: {violation}")
            }
            BundleIssue::DuplicateSnapshotId(id) => write!(f, "duplicate snapshot id `{id}`"),
            BundleIssue::DanglingState(s) => {
                write!(f, "dangling-state: flow state `{s}` has no snapshot")
            }
            BundleIssue::FlowEdge { from, to } => {
                write!(f, "flow edge {from} -> {to} names a state outside the flow")
            }
            BundleIssue::EmptyGoal(t) => write!(f, "task `{t}` has an empty goal set"),
            BundleIssue::UnknownTask(t) => write!(f, "task pair names undeclared task `{t}`"),
            BundleIssue::NoSnapshots => f.write_str("bundle contains no snapshots"),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error("unknown keys in strict mode: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("unsupported schema_version `{found}` (supported: {SCHEMA_VERSION})")]
    SchemaVersion { found: String },
    #[error("bundle failed validation:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<BundleIssue>),
}

/// Every bundle-level issue, including each snapshot's violations.
pub fn validate_bundle(bundle: &SnapshotBundle) -> Vec<BundleIssue> {
    let mut issues = Vec::new();
    if bundle.snapshots.is_empty() {
        issues.push(BundleIssue::NoSnapshots);
    }
    let mut ids = BTreeSet::new();
    for s in &bundle.snapshots {
        if !ids.insert(s.snapshot_id.as_str()) {
            issues.push(BundleIssue::DuplicateSnapshotId(s.snapshot_id.clone()));
        }
        issues.extend(validate_snapshot(s).into_iter().map(|violation| BundleIssue::Snapshot {
            snapshot_id: s.snapshot_id.clone(),
            violation,
        }));
    }
    if let Some(flow) = &bundle.flow {
        let known: BTreeSet<&str> = bundle.snapshots.iter().map(PageSnapshot::flow_state).collect();
        let mut states: Vec<&String> = flow.states.iter().collect();
        if !flow.states.contains(&flow.entry) {
            states.push(&flow.entry);
        }
        for s in states {
            if !known.contains(s.as_str()) {
                issues.push(BundleIssue::DanglingState(s.clone()));
            }
        }
        for e in &flow.edges {
            if !flow.states.contains(&e.from) || !flow.states.contains(&e.to) {
                issues.push(BundleIssue::FlowEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                });
            }
        }
        for (task, goal) in &flow.tasks {
            if goal.is_empty() {
                issues.push(BundleIssue::EmptyGoal(task.clone()));
            }
            for g in goal {
                if !flow.states.contains(g) {
                    issues.push(BundleIssue::DanglingState(g.clone()));
                }
            }
        }
        for pair in &flow.task_pairs {
            for t in [&pair.opt_in, &pair.opt_out] {
                if !flow.tasks.contains_key(t) {
                    issues.push(BundleIssue::UnknownTask(t.clone()));
                }
            }
        }
    }
    issues
}

/// Parses, validates and tokenizes a bundle from JSON bytes.
pub fn parse_snapshot_bundle(bytes: &[u8], strictness: Strictness) -> Result<SnapshotBundle, IngestError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let mut bundle: SnapshotBundle = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()))
        .map_err(|e| IngestError::Malformed(e.to_string()))?;
    de.end().map_err(|e| IngestError::Malformed(e.to_string()))?;

    if bundle.manifest.schema_version != SCHEMA_VERSION {
        return Err(IngestError::SchemaVersion {
            found: bundle.manifest.schema_version,
        });
    }
    if strictness == Strictness::Strict && !unknown.is_empty() {
        return Err(IngestError::UnknownKeys(unknown));
    }
    let issues = validate_bundle(&bundle);
    if !issues.is_empty() {
        return Err(IngestError::Invalid(issues));
    }
    for snapshot in &mut bundle.snapshots {
        for block in &mut snapshot.text_blocks {
            block.tokens = canonicalize_text(&block.raw_text);
        }
    }
    Ok(bundle)
}

pub fn load_snapshot_bundle(path: &Path, strictness: Strictness) -> Result<SnapshotBundle, IngestError> {
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_snapshot_bundle(&bytes, strictness)
}
