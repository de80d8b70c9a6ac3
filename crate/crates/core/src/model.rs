//! Domain types shared by every pipeline stage, plus the geometric and
//! opacity primitives computed on them.
//!
//! All coordinates are viewport-relative CSS pixels. Snapshots carry
//! post-layout boxes, so nothing here ever performs layout.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An sRGB colour with 8-bit channels, serialized as `[r, g, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u8; 3]", into = "[u8; 3]")]
pub struct Rgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb {
    pub const BLACK: Rgb = Rgb::new(0, 0, 0);
    pub const WHITE: Rgb = Rgb::new(255, 255, 255);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }
}

impl From<[u8; 3]> for Rgb {
    fn from([r, g, b]: [u8; 3]) -> Self {
        Self { r, g, b }
    }
}

impl From<Rgb> for [u8; 3] {
    fn from(c: Rgb) -> Self {
        [c.r, c.g, c.b]
    }
}

/// Background paint: either a concrete colour or `"transparent"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Background {
    Color(Rgb),
    Keyword(BackgroundKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKeyword {
    Transparent,
}

impl Background {
    pub const TRANSPARENT: Background = Background::Keyword(BackgroundKeyword::Transparent);

    pub fn color(self) -> Option<Rgb> {
        match self {
            Background::Color(c) => Some(c),
            Background::Keyword(_) => None,
        }
    }
}

/// Axis-aligned box `(x, y, w, h)`, serialized as a 4-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.w * k, self.h * k)
    }
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Viewport dimensions in CSS pixels, serialized as `[width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Viewport {
    pub width: f64,
    pub height: f64,
}

impl Viewport {
    pub const fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

impl From<[f64; 2]> for Viewport {
    fn from([width, height]: [f64; 2]) -> Self {
        Self { width, height }
    }
}

impl From<Viewport> for [f64; 2] {
    fn from(v: Viewport) -> Self {
        [v.width, v.height]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Display {
    #[default]
    Visible,
    Hidden,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleInfo {
    pub fg_color: Rgb,
    pub bg_color: Background,
    pub opacity: f64,
    #[serde(default)]
    pub z_index: i32,
    #[serde(default)]
    pub display: Display,
}

impl Default for StyleInfo {
    fn default() -> Self {
        Self {
            fg_color: Rgb::BLACK,
            bg_color: Background::TRANSPARENT,
            opacity: 1.0,
            z_index: 0,
            display: Display::Visible,
        }
    }
}

/// Functional role of an element in a choice architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Dismiss,
    ConsentAccept,
    ConsentDecline,
    PremiumPrompt,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Dismiss => "dismiss",
            Role::ConsentAccept => "consent-accept",
            Role::ConsentDecline => "consent-decline",
            Role::PremiumPrompt => "premium-prompt",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementNode {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    pub tag: String,
    pub bbox: BBox,
    #[serde(default)]
    pub style: StyleInfo,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub interactive: bool,
    /// Explicit annotation from the snapshot, or the result of role inference.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub roles: BTreeSet<Role>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl ElementNode {
    /// A visible, fully opaque, non-interactive element with black-on-transparent style.
    pub fn new(id: impl Into<String>, parent_id: Option<&str>, tag: impl Into<String>, bbox: BBox) -> Self {
        Self {
            id: id.into(),
            parent_id: parent_id.map(str::to_owned),
            tag: tag.into(),
            bbox,
            style: StyleInfo::default(),
            text: String::new(),
            interactive: false,
            roles: BTreeSet::new(),
            attributes: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBlock {
    pub block_id: String,
    pub element_id: String,
    pub raw_text: String,
    /// Canonical tokens of `raw_text`; always recomputed on ingest.
    #[serde(default, skip_serializing)]
    pub tokens: Vec<String>,
}

impl TextBlock {
    pub fn new(block_id: impl Into<String>, element_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let tokens = crate::tokenize::canonicalize_text(&raw_text);
        Self {
            block_id: block_id.into(),
            element_id: element_id.into(),
            raw_text,
            tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Navigate,
    Click,
    Scroll,
    Mutation,
    PromptShown,
    Response,
}

impl EventKind {
    pub fn is_user_input(self) -> bool {
        matches!(self, EventKind::Click | EventKind::Scroll)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub t_ms: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_bbox: Option<BBox>,
    #[serde(default)]
    pub host: String,
}

impl InteractionEvent {
    fn bare(t_ms: u64, kind: EventKind, host: &str) -> Self {
        Self {
            t_ms,
            kind,
            element_id: None,
            latency_ms: None,
            prompt_hash: None,
            old_bbox: None,
            new_bbox: None,
            host: host.to_owned(),
        }
    }

    pub fn navigate(t_ms: u64, host: &str) -> Self {
        Self::bare(t_ms, EventKind::Navigate, host)
    }

    pub fn click(t_ms: u64, element_id: &str, host: &str) -> Self {
        Self {
            element_id: Some(element_id.to_owned()),
            ..Self::bare(t_ms, EventKind::Click, host)
        }
    }

    pub fn scroll(t_ms: u64, host: &str) -> Self {
        Self::bare(t_ms, EventKind::Scroll, host)
    }

    pub fn response(t_ms: u64, latency_ms: u64, host: &str) -> Self {
        Self {
            latency_ms: Some(latency_ms),
            ..Self::bare(t_ms, EventKind::Response, host)
        }
    }

    /// A `prompt_shown` event; the hash is computed from `prompt_text`.
    pub fn prompt_shown(t_ms: u64, element_id: &str, prompt_text: &str, host: &str) -> Self {
        Self {
            element_id: Some(element_id.to_owned()),
            prompt_hash: Some(crate::tokenize::prompt_hash(prompt_text)),
            ..Self::bare(t_ms, EventKind::PromptShown, host)
        }
    }

    pub fn mutation(t_ms: u64, element_id: &str, old_bbox: BBox, new_bbox: BBox, host: &str) -> Self {
        Self {
            element_id: Some(element_id.to_owned()),
            old_bbox: Some(old_bbox),
            new_bbox: Some(new_bbox),
            ..Self::bare(t_ms, EventKind::Mutation, host)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSnapshot {
    pub snapshot_id: String,
    pub url: String,
    pub captured_at: DateTime<Utc>,
    pub viewport: Viewport,
    pub elements: Vec<ElementNode>,
    #[serde(default)]
    pub text_blocks: Vec<TextBlock>,
    #[serde(default)]
    pub events: Vec<InteractionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_id: Option<String>,
}

impl PageSnapshot {
    /// Flow-graph node this snapshot represents: `state_id`, else `snapshot_id`.
    pub fn flow_state(&self) -> &str {
        self.state_id.as_deref().unwrap_or(&self.snapshot_id)
    }

    pub fn element(&self, id: &str) -> Option<&ElementNode> {
        self.elements.iter().find(|e| e.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub from: String,
    pub element_id: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPair {
    pub opt_in: String,
    pub opt_out: String,
}

/// Click graph over captured UI states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowGraph {
    /// State the user starts from when measuring click distance.
    pub entry: String,
    pub states: BTreeSet<String>,
    #[serde(default)]
    pub edges: Vec<FlowEdge>,
    /// Task name to its accepting (goal) states.
    #[serde(default)]
    pub tasks: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub task_pairs: Vec<TaskPair>,
}

impl FlowGraph {
    /// Breadth-first click distances from `start` to every reachable state.
    pub fn distances_from(&self, start: &str) -> HashMap<&str, u32> {
        let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            adjacency.entry(e.from.as_str()).or_default().push(e.to.as_str());
        }
        let mut dist = HashMap::new();
        let Some(start) = self.states.get(start) else {
            return dist;
        };
        let mut queue = std::collections::VecDeque::new();
        dist.insert(start.as_str(), 0u32);
        queue.push_back(start.as_str());
        while let Some(node) = queue.pop_front() {
            let d = dist[node];
            for &next in adjacency.get(node).map(Vec::as_slice).unwrap_or(&[]) {
                if !dist.contains_key(next) {
                    dist.insert(next, d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    /// Shortest click count from the entry state to any state in `goals`.
    pub fn distance_to_any(&self, goals: &BTreeSet<String>) -> Option<u32> {
        let dist = self.distances_from(&self.entry);
        goals.iter().filter_map(|g| dist.get(g.as_str()).copied()).min()
    }

    /// Longest finite shortest-path length over all ordered state pairs.
    pub fn diameter(&self) -> u32 {
        self.states
            .iter()
            .flat_map(|s| self.distances_from(s).into_values())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("element `{0}` not found in snapshot")]
    NotFound(String),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
}

/// Walks from `element_id` up to the root, yielding each element (self first).
fn ancestor_chain<'a>(element_id: &str, snapshot: &'a PageSnapshot) -> Result<Vec<&'a ElementNode>, ModelError> {
    let by_id: HashMap<&str, &ElementNode> = snapshot.elements.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut current = *by_id
        .get(element_id)
        .ok_or_else(|| ModelError::NotFound(element_id.to_owned()))?;
    let mut chain = vec![current];
    while let Some(parent) = current.parent_id.as_deref() {
        if chain.len() > by_id.len() {
            return Err(ModelError::Malformed(format!("parent cycle through `{element_id}`")));
        }
        current = *by_id
            .get(parent)
            .ok_or_else(|| ModelError::Malformed(format!("dangling parent `{parent}`")))?;
        chain.push(current);
    }
    Ok(chain)
}

/// Product of opacities from the element to the root; zero inside a hidden subtree.
pub fn effective_opacity(element_id: &str, snapshot: &PageSnapshot) -> Result<f64, ModelError> {
    let chain = ancestor_chain(element_id, snapshot)?;
    let mut product = 1.0;
    for e in chain {
        if e.style.display != Display::Visible {
            return Ok(0.0);
        }
        product *= e.style.opacity.clamp(0.0, 1.0);
    }
    Ok(product)
}

/// Background the element actually paints on: its own colour or the nearest
/// concrete ancestor colour, white at the root.
pub fn resolved_background(element_id: &str, snapshot: &PageSnapshot) -> Result<Rgb, ModelError> {
    let chain = ancestor_chain(element_id, snapshot)?;
    Ok(chain
        .iter()
        .find_map(|e| e.style.bg_color.color())
        .unwrap_or(Rgb::WHITE))
}

/// True iff the box overlaps `[0,w]×[0,h]` with positive area.
pub fn is_in_viewport(bbox: &BBox, viewport: &Viewport) -> bool {
    let overlap_w = (bbox.x + bbox.w).min(viewport.width) - bbox.x.max(0.0);
    let overlap_h = (bbox.y + bbox.h).min(viewport.height) - bbox.y.max(0.0);
    overlap_w > 0.0 && overlap_h > 0.0
}

/// A single invariant breach found by [`validate_snapshot`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum Violation {
    DuplicateId { id: String },
    DanglingParent { id: String, parent_id: String },
    ParentCycle { id: String },
    UnsortedEvents { index: usize },
    BadViewport { width: f64, height: f64 },
    NegativeSize { id: String },
    NonFiniteGeometry { id: String },
    OpacityOutOfRange { id: String, opacity: f64 },
    DuplicateBlockId { block_id: String },
    UnknownBlockElement { block_id: String, element_id: String },
    EventFields { index: usize, reason: String },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::DuplicateId { .. } => "duplicate-id",
            Violation::DanglingParent { .. } => "dangling-parent",
            Violation::ParentCycle { .. } => "parent-cycle",
            Violation::UnsortedEvents { .. } => "unsorted-events",
            Violation::BadViewport { .. } => "bad-viewport",
            Violation::NegativeSize { .. } => "negative-size",
            Violation::NonFiniteGeometry { .. } => "non-finite-geometry",
            Violation::OpacityOutOfRange { .. } => "opacity-out-of-range",
            Violation::DuplicateBlockId { .. } => "duplicate-block-id",
            Violation::UnknownBlockElement { .. } => "unknown-block-element",
            Violation::EventFields { .. } => "event-fields",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.code())?;
        match self {
            Violation::DuplicateId { id } => write!(f, "element id `{id}` appears more than once"),
            Violation::DanglingParent { id, parent_id } => {
                write!(f, "element `{id}` names missing parent `{parent_id}`")
            }
            Violation::ParentCycle { id } => write!(f, "element `{id}` is part of a parent cycle"),
            Violation::UnsortedEvents { index } => {
                write!(f, "event {index} has t_ms earlier than its predecessor")
            }
            Violation::BadViewport { width, height } => {
                write!(f, "viewport {width}x{height} must have positive dimensions")
            }
            Violation::NegativeSize { id } => write!(f, "element `{id}` has negative width or height"),
            Violation::NonFiniteGeometry { id } => write!(f, "element `{id}` has a non-finite bbox"),
            Violation::OpacityOutOfRange { id, opacity } => {
                write!(f, "element `{id}` opacity {opacity} outside [0,1]")
            }
            Violation::DuplicateBlockId { block_id } => write!(f, "text block `{block_id}` is duplicated"),
            Violation::UnknownBlockElement { block_id, element_id } => {
                write!(f, "text block `{block_id}` refers to missing element `{element_id}`")
            }
            Violation::EventFields { index, reason } => write!(f, "event {index}: {reason}"),
        }
    }
}

/// Lists every invariant violation in `snapshot`. An empty list means valid.
pub fn validate_snapshot(snapshot: &PageSnapshot) -> Vec<Violation> {
    let mut out = Vec::new();
    let vp = snapshot.viewport;
    if !(vp.width > 0.0 && vp.height > 0.0 && vp.width.is_finite() && vp.height.is_finite()) {
        out.push(Violation::BadViewport {
            width: vp.width,
            height: vp.height,
        });
    }

    let mut by_id: HashMap<&str, &ElementNode> = HashMap::new();
    let mut reported_dupes = BTreeSet::new();
    for e in &snapshot.elements {
        if by_id.insert(e.id.as_str(), e).is_some() && reported_dupes.insert(e.id.as_str()) {
            out.push(Violation::DuplicateId { id: e.id.clone() });
        }
        let b = e.bbox;
        if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
            out.push(Violation::NonFiniteGeometry { id: e.id.clone() });
        } else if b.w < 0.0 || b.h < 0.0 {
            out.push(Violation::NegativeSize { id: e.id.clone() });
        }
        if !(0.0..=1.0).contains(&e.style.opacity) {
            out.push(Violation::OpacityOutOfRange {
                id: e.id.clone(),
                opacity: e.style.opacity,
            });
        }
    }

    for e in &snapshot.elements {
        if let Some(parent) = e.parent_id.as_deref() {
            if !by_id.contains_key(parent) {
                out.push(Violation::DanglingParent {
                    id: e.id.clone(),
                    parent_id: parent.to_owned(),
                });
            }
        }
    }

    // Cycle check: walk each chain, bounded by element count.
    let mut cyclic = BTreeSet::new();
    for e in &snapshot.elements {
        let mut steps = 0;
        let mut cur = e;
        while let Some(parent) = cur.parent_id.as_deref().and_then(|p| by_id.get(p)) {
            steps += 1;
            if steps > by_id.len() {
                cyclic.insert(e.id.as_str());
                break;
            }
            cur = parent;
        }
    }
    out.extend(cyclic.into_iter().map(|id| Violation::ParentCycle { id: id.to_owned() }));

    let mut block_ids = BTreeSet::new();
    for block in &snapshot.text_blocks {
        if !block_ids.insert(block.block_id.as_str()) {
            out.push(Violation::DuplicateBlockId {
                block_id: block.block_id.clone(),
            });
        }
        if !by_id.contains_key(block.element_id.as_str()) {
            out.push(Violation::UnknownBlockElement {
                block_id: block.block_id.clone(),
                element_id: block.element_id.clone(),
            });
        }
    }

    if let Some(index) = snapshot
        .events
        .windows(2)
        .position(|w| w[1].t_ms < w[0].t_ms)
    {
        out.push(Violation::UnsortedEvents { index: index + 1 });
    }

    for (index, ev) in snapshot.events.iter().enumerate() {
        let mut reasons = Vec::new();
        let is_response = ev.kind == EventKind::Response;
        let is_prompt = ev.kind == EventKind::PromptShown;
        let is_mutation = ev.kind == EventKind::Mutation;
        if ev.latency_ms.is_some() != is_response {
            reasons.push("latency_ms must be present exactly on response events");
        }
        if ev.prompt_hash.is_some() != is_prompt {
            reasons.push("prompt_hash must be present exactly on prompt_shown events");
        }
        if ev.old_bbox.is_some() != is_mutation || ev.new_bbox.is_some() != is_mutation {
            reasons.push("old_bbox/new_bbox must be present exactly on mutation events");
        }
        if is_mutation && ev.element_id.is_none() {
            reasons.push("mutation events need an element_id");
        }
        if !reasons.is_empty() {
            out.push(Violation::EventFields {
                index,
                reason: reasons.join("; "),
            });
        }
    }

    out
}

/// Id-indexed view of a snapshot with parent/child and text-block lookups.
pub struct SnapshotIndex<'a> {
    pub snapshot: &'a PageSnapshot,
    by_id: HashMap<&'a str, &'a ElementNode>,
    children: HashMap<&'a str, Vec<&'a ElementNode>>,
    blocks: HashMap<&'a str, Vec<&'a TextBlock>>,
}

impl<'a> SnapshotIndex<'a> {
    pub fn new(snapshot: &'a PageSnapshot) -> Self {
        let mut by_id = HashMap::new();
        let mut children: HashMap<&str, Vec<&ElementNode>> = HashMap::new();
        for e in &snapshot.elements {
            by_id.insert(e.id.as_str(), e);
            if let Some(p) = e.parent_id.as_deref() {
                children.entry(p).or_default().push(e);
            }
        }
        let mut blocks: HashMap<&str, Vec<&TextBlock>> = HashMap::new();
        for b in &snapshot.text_blocks {
            blocks.entry(b.element_id.as_str()).or_default().push(b);
        }
        Self {
            snapshot,
            by_id,
            children,
            blocks,
        }
    }

    pub fn get(&self, id: &str) -> Option<&'a ElementNode> {
        self.by_id.get(id).copied()
    }

    pub fn children(&self, id: &str) -> &[&'a ElementNode] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn blocks_of(&self, id: &str) -> &[&'a TextBlock] {
        self.blocks.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Text blocks of the element and of its direct children.
    pub fn blocks_with_children(&self, id: &str) -> Vec<&'a TextBlock> {
        let mut out: Vec<&TextBlock> = self.blocks_of(id).to_vec();
        for child in self.children(id) {
            out.extend_from_slice(self.blocks_of(&child.id));
        }
        out
    }

    /// Own text, own blocks, and direct children's text and blocks, space-joined.
    pub fn match_text(&self, id: &str) -> String {
        let mut parts: Vec<&str> = Vec::new();
        let mut push_element = |e: &'a ElementNode| {
            if !e.text.is_empty() {
                parts.push(&e.text);
            }
            for b in self.blocks_of(&e.id) {
                if b.raw_text != e.text && !b.raw_text.is_empty() {
                    parts.push(&b.raw_text);
                }
            }
        };
        if let Some(e) = self.get(id) {
            push_element(e);
            for child in self.children(id) {
                push_element(child);
            }
        }
        parts.join(" ")
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn opacity_identity() {
        let s = snapshot(vec![root(), child("a", "root", 1.0)]);
        assert_eq!(effective_opacity("a", &s).unwrap(), 1.0);
    }

    #[test]
    fn opacity_is_product_along_chain() {
        let s = snapshot(vec![root(), child("wrap", "root", 0.5), child("btn", "wrap", 0.5)]);
        assert_eq!(effective_opacity("btn", &s).unwrap(), 0.25);
    }

    #[test]
    fn hidden_subtree_is_transparent() {
        let mut hidden = child("wrap", "root", 1.0);
        hidden.style.display = Display::None;
        let s = snapshot(vec![root(), hidden, child("btn", "wrap", 1.0)]);
        assert_eq!(effective_opacity("btn", &s).unwrap(), 0.0);

        let mut vis_hidden = child("v", "root", 1.0);
        vis_hidden.style.display = Display::Hidden;
        let s = snapshot(vec![root(), vis_hidden]);
        assert_eq!(effective_opacity("v", &s).unwrap(), 0.0);
    }

    #[test]
    fn opacity_errors() {
        let s = snapshot(vec![root()]);
        assert_eq!(
            effective_opacity("nope", &s),
            Err(ModelError::NotFound("nope".into()))
        );
        let s = snapshot(vec![child("a", "b", 1.0), child("b", "a", 1.0)]);
        assert!(matches!(effective_opacity("a", &s), Err(ModelError::Malformed(_))));
    }

    #[test]
    fn viewport_membership() {
        let vp = Viewport::new(1280.0, 720.0);
        assert!(is_in_viewport(&BBox::new(10.0, 10.0, 50.0, 20.0), &vp));
        assert!(!is_in_viewport(&BBox::new(-200.0, -200.0, 50.0, 20.0), &vp));
        assert!(is_in_viewport(&BBox::new(1270.0, 10.0, 50.0, 20.0), &vp));
        assert!(!is_in_viewport(&BBox::new(1280.0, 10.0, 50.0, 20.0), &vp));
        assert!(!is_in_viewport(&BBox::new(10.0, 10.0, 0.0, 20.0), &vp));
    }

    #[test]
    fn resolves_transparent_background() {
        let mut panel = child("panel", "root", 1.0);
        panel.style.bg_color = Background::Color(Rgb::new(10, 20, 30));
        let s = snapshot(vec![root(), panel, child("btn", "panel", 1.0), child("other", "root", 1.0)]);
        assert_eq!(resolved_background("btn", &s).unwrap(), Rgb::new(10, 20, 30));
        assert_eq!(resolved_background("other", &s).unwrap(), Rgb::WHITE);
        let bare = snapshot(vec![ElementNode::new("x", None, "div", BBox::new(0.0, 0.0, 1.0, 1.0))]);
        assert_eq!(resolved_background("x", &bare).unwrap(), Rgb::WHITE);
    }

    #[test]
    fn minimal_snapshot_is_valid() {
        assert!(validate_snapshot(&snapshot(vec![root()])).is_empty());
    }

    #[test]
    fn duplicate_id_reported_once() {
        let s = snapshot(vec![root(), child("a", "root", 1.0), child("a", "root", 1.0)]);
        let v = validate_snapshot(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code(), "duplicate-id");
    }

    #[test]
    fn unsorted_events_reported_once() {
        let mut s = snapshot(vec![root()]);
        s.events = vec![InteractionEvent::scroll(5, "h"), InteractionEvent::scroll(3, "h")];
        let v = validate_snapshot(&s);
        assert_eq!(v, vec![Violation::UnsortedEvents { index: 1 }]);
    }

    #[test]
    fn reports_field_breaches() {
        let mut bad = child("a", "ghost", 1.5);
        bad.bbox.w = -1.0;
        let mut s = snapshot(vec![root(), bad]);
        s.viewport = Viewport::new(0.0, 720.0);
        s.text_blocks.push(TextBlock::new("b1", "missing", "hi"));
        let mut ev = InteractionEvent::scroll(0, "h");
        ev.latency_ms = Some(3);
        s.events.push(ev);
        let codes: Vec<_> = validate_snapshot(&s).iter().map(Violation::code).collect();
        for expected in [
            "bad-viewport",
            "negative-size",
            "opacity-out-of-range",
            "dangling-parent",
            "unknown-block-element",
            "event-fields",
        ] {
            assert!(codes.contains(&expected), "missing {expected} in {codes:?}");
        }
    }

    #[test]
    fn cycle_is_a_violation() {
        let s = snapshot(vec![child("a", "b", 1.0), child("b", "a", 1.0)]);
        let codes: Vec<_> = validate_snapshot(&s).iter().map(Violation::code).collect();
        assert_eq!(codes, vec!["parent-cycle", "parent-cycle"]);
    }

    #[test]
    fn match_text_includes_direct_children_only() {
        let mut btn = child("btn", "root", 1.0);
        btn.text = "Buy".into();
        let mut span = child("span", "btn", 1.0);
        span.text = "now".into();
        let mut deep = child("deep", "span", 1.0);
        deep.text = "ignored".into();
        let mut s = snapshot(vec![root(), btn, span, deep]);
        s.text_blocks.push(TextBlock::new("b", "btn", "Only 1 left"));
        let idx = SnapshotIndex::new(&s);
        assert_eq!(idx.match_text("btn"), "Buy Only 1 left now");
    }

    #[test]
    fn flow_distances() {
        let flow = FlowGraph {
            entry: "a".into(),
            states: ["a", "b", "c"].iter().map(|s| s.to_string()).collect(),
            edges: vec![
                FlowEdge { from: "a".into(), element_id: "x".into(), to: "b".into() },
                FlowEdge { from: "b".into(), element_id: "y".into(), to: "c".into() },
            ],
            tasks: BTreeMap::new(),
            task_pairs: vec![],
        };
        assert_eq!(flow.diameter(), 2);
        let goal: BTreeSet<String> = ["c".to_string()].into();
        assert_eq!(flow.distance_to_any(&goal), Some(2));
        let goal: BTreeSet<String> = ["a".to_string()].into();
        assert_eq!(flow.distance_to_any(&goal), Some(0));
    }
}
