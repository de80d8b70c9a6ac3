//! Interface heuristics: Salience Index, Path Interference Score and Escape
//! Visibility, each with its threshold flag.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    effective_opacity, is_in_viewport, resolved_background, ElementNode, FlowGraph, PageSnapshot, Rgb, Role,
};
use crate::rules::ThresholdProfile;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeuristicError {
    #[error("flow configuration: {0}")]
    Config(String),
}

fn linear_channel(c: u8) -> f64 {
    let v = f64::from(c) / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Relative luminance of an sRGB colour.
pub fn relative_luminance(c: Rgb) -> f64 {
    0.2126 * linear_channel(c.r) + 0.7152 * linear_channel(c.g) + 0.0722 * linear_channel(c.b)
}

/// WCAG contrast ratio, in [1, 21], symmetric in its arguments.
pub fn contrast_ratio(a: Rgb, b: Rgb) -> f64 {
    let (la, lb) = (relative_luminance(a), relative_luminance(b));
    let (hi, lo) = if la >= lb { (la, lb) } else { (lb, la) };
    (hi + 0.05) / (lo + 0.05)
}

/// Viewport-normalized area times foreground/background contrast.
pub fn salience_index(element: &ElementNode, snapshot: &PageSnapshot) -> f64 {
    let opacity = effective_opacity(&element.id, snapshot).unwrap_or(0.0);
    let area = element.bbox.area();
    if opacity == 0.0 || area <= 0.0 {
        return 0.0;
    }
    let bg = resolved_background(&element.id, snapshot).unwrap_or(Rgb::WHITE);
    area / snapshot.viewport.area() * contrast_ratio(element.style.fg_color, bg)
}

/// Salience Index of every interactive element, in document order.
pub fn salience_scores(snapshot: &PageSnapshot) -> Vec<(String, f64)> {
    snapshot
        .elements
        .iter()
        .filter(|e| e.interactive)
        .map(|e| (e.id.clone(), salience_index(e, snapshot)))
        .collect()
}

/// Flags values strictly above `mean + sigma·σ` (population statistics).
///
/// Evaluated as `n·D_i² > sigma²·ΣD_j²` with `D_i = n·x_i − Σx`, which is
/// exact for integer-valued inputs and avoids dividing before comparing.
pub fn outlier_flags(values: &[f64], sigma: f64) -> Vec<bool> {
    let n = values.len() as f64;
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || min == max {
        return vec![false; values.len()];
    }
    let sum: f64 = values.iter().sum();
    let scaled: Vec<f64> = values.iter().map(|&v| n * v - sum).collect();
    let spread: f64 = scaled.iter().map(|d| d * d).sum();
    scaled
        .iter()
        .map(|&d| d > 0.0 && n * d * d > sigma * sigma * spread)
        .collect()
}

/// Salience flag for every interactive element; empty when there are none.
pub fn salience_flags(snapshot: &PageSnapshot, thresholds: &ThresholdProfile) -> BTreeMap<String, bool> {
    let scores = salience_scores(snapshot);
    let values: Vec<f64> = scores.iter().map(|(_, v)| *v).collect();
    let flags = outlier_flags(&values, thresholds.salience_sigma);
    scores.into_iter().map(|(id, _)| id).zip(flags).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicReadout {
    pub element_id: String,
    pub salience: f64,
    pub salience_flag: bool,
    pub escape_opacity: f64,
    pub off_viewport: bool,
    pub escape_flag: bool,
}

/// Readouts for every interactive or dismiss-role element of `snapshot`.
pub fn heuristic_readouts(
    snapshot: &PageSnapshot,
    roles: &BTreeMap<String, BTreeSet<Role>>,
    thresholds: &ThresholdProfile,
) -> BTreeMap<String, HeuristicReadout> {
    let flags = salience_flags(snapshot, thresholds);
    snapshot
        .elements
        .iter()
        .filter(|e| e.interactive || is_dismiss(roles, &e.id))
        .map(|e| {
            let readout = readout_for(e, snapshot, roles, thresholds, flags.get(&e.id).copied().unwrap_or(false));
            (e.id.clone(), readout)
        })
        .collect()
}

fn is_dismiss(roles: &BTreeMap<String, BTreeSet<Role>>, id: &str) -> bool {
    roles.get(id).is_some_and(|r| r.contains(&Role::Dismiss))
}

fn readout_for(
    e: &ElementNode,
    snapshot: &PageSnapshot,
    roles: &BTreeMap<String, BTreeSet<Role>>,
    thresholds: &ThresholdProfile,
    salience_flag: bool,
) -> HeuristicReadout {
    let escape_opacity = effective_opacity(&e.id, snapshot).unwrap_or(0.0);
    let off_viewport = !is_in_viewport(&e.bbox, &snapshot.viewport);
    let escape_flag = is_dismiss(roles, &e.id) && (escape_opacity < thresholds.escape_opacity || off_viewport);
    HeuristicReadout {
        element_id: e.id.clone(),
        salience: if e.interactive { salience_index(e, snapshot) } else { 0.0 },
        salience_flag: e.interactive && salience_flag,
        escape_opacity,
        off_viewport,
        escape_flag,
    }
}

/// Escape Visibility readouts for each dismiss-role element.
pub fn escape_visibility(
    snapshot: &PageSnapshot,
    roles: &BTreeMap<String, BTreeSet<Role>>,
    thresholds: &ThresholdProfile,
) -> Vec<HeuristicReadout> {
    let flags = salience_flags(snapshot, thresholds);
    snapshot
        .elements
        .iter()
        .filter(|e| is_dismiss(roles, &e.id))
        .map(|e| readout_for(e, snapshot, roles, thresholds, flags.get(&e.id).copied().unwrap_or(false)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathReadout {
    pub opt_in: String,
    pub opt_out: String,
    pub d_in: Option<u32>,
    /// `None` when no opt-out goal is reachable.
    pub d_out: Option<u32>,
    /// `d_out − d_in`; `None` stands for an unbounded difference.
    pub extra_clicks: Option<i64>,
    pub pis_flag: bool,
}

/// Click-distance asymmetry for every declared opt-in/opt-out task pair.
pub fn path_interference(flow: &FlowGraph, thresholds: &ThresholdProfile) -> Result<Vec<PathReadout>, HeuristicError> {
    if flow.task_pairs.is_empty() {
        return Err(HeuristicError::Config("flow declares no opt-in/opt-out task pair".into()));
    }
    let dist = flow.distances_from(&flow.entry);
    let distance = |task: &str| -> Result<Option<u32>, HeuristicError> {
        let goals = flow
            .tasks
            .get(task)
            .ok_or_else(|| HeuristicError::Config(format!("task `{task}` is not declared")))?;
        Ok(goals.iter().filter_map(|g| dist.get(g.as_str()).copied()).min())
    };
    flow.task_pairs
        .iter()
        .map(|pair| {
            let d_in = distance(&pair.opt_in)?;
            let d_out = distance(&pair.opt_out)?;
            let extra_clicks = match (d_in, d_out) {
                (Some(i), Some(o)) => Some(i64::from(o) - i64::from(i)),
                _ => None,
            };
            let pis_flag = match (d_out, extra_clicks) {
                (None, _) => true,
                (Some(_), Some(extra)) => extra > thresholds.pis_extra_clicks,
                (Some(_), None) => false,
            };
            Ok(PathReadout {
                opt_in: pair.opt_in.clone(),
                opt_out: pair.opt_out.clone(),
                d_in,
                d_out,
                extra_clicks,
                pis_flag,
            })
        })
        .collect()
}
