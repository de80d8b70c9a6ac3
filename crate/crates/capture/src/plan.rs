//! Scripted interaction plans.

use std::collections::BTreeMap;
use std::path::Path;

use darkscan_core::model::TaskPair;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Click the first element matching a CSS selector.
    Click(String),
    /// Scroll vertically by this many pixels.
    Scroll(i64),
    Wait(u64),
    /// Snapshot the current page as a flow state.
    RecordState,
    /// Navigate directly; relative URLs resolve against the plan URL.
    Goto(String),
    /// Move the pointer to viewport coordinates.
    MoveMouse([i64; 2]),
}

impl Action {
    pub fn describe(&self) -> String {
        match self {
            Action::Click(s) => format!("click {s}"),
            Action::Scroll(d) => format!("scroll {d}"),
            Action::Wait(ms) => format!("wait {ms}ms"),
            Action::RecordState => "record_state".into(),
            Action::Goto(u) => format!("goto {u}"),
            Action::MoveMouse([x, y]) => format!("move_mouse {x},{y}"),
        }
    }
}

/// A task's goal states are those whose URL contains `url_contains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub url_contains: String,
}

fn default_max_states() -> usize {
    10
}
fn default_politeness() -> u64 {
    1000
}
fn default_timeout() -> u64 {
    30_000
}
fn default_viewport() -> [u32; 2] {
    [1280, 720]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapturePlan {
    pub url: String,
    #[serde(default = "default_max_states")]
    pub max_states: usize,
    pub actions: Vec<Action>,
    #[serde(default)]
    pub tasks: BTreeMap<String, TaskSpec>,
    #[serde(default)]
    pub task_pairs: Vec<TaskPair>,
    /// Minimum gap between requests to the same host.
    #[serde(default = "default_politeness")]
    pub politeness_ms: u64,
    /// Per-request timeout.
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Extra attempts when the endpoint refuses connections at session start.
    #[serde(default)]
    pub retries: u32,
    #[serde(default = "default_viewport")]
    pub viewport: [u32; 2],
    /// Replaces the default headless capabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<serde_json::Value>,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read plan {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("invalid plan: {0}")]
    Invalid(String),
}

impl CapturePlan {
    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let read_err = |reason: String| PlanError::Read {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let plan: CapturePlan = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Invalid(m));
        if self.max_states < 1 {
            return bad("max_states must be at least 1".into());
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be positive".into());
        }
        let base = url::Url::parse(&self.url).map_err(|e| PlanError::Invalid(format!("url `{}`: {e}", self.url)))?;
        if base.host_str().is_none() {
            return bad(format!("url `{}` has no host", self.url));
        }
        for a in &self.actions {
            if let Action::Goto(u) = a {
                base.join(u).map_err(|e| PlanError::Invalid(format!("goto `{u}`: {e}")))?;
            }
        }
        for p in &self.task_pairs {
            for t in [&p.opt_in, &p.opt_out] {
                if !self.tasks.contains_key(t) {
                    return bad(format!("task pair names undeclared task `{t}`"));
                }
            }
        }
        Ok(())
    }

    pub fn host(&self) -> String {
        url::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_owned))
            .unwrap_or_default()
    }
}
