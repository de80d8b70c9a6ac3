//! Labeled synthetic pages. Dark pages carry each requested manipulation with
//! parameters strictly past the default thresholds; benign pages carry the
//! same structures as distractors strictly inside them.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Manifest, SnapshotBundle};
use crate::model::{
    BBox, Background, ElementNode, FlowEdge, FlowGraph, InteractionEvent, PageSnapshot, Rgb, StyleInfo, TaskPair,
    TextBlock, Viewport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulationKind {
    Salience,
    PathInterference,
    EscapeVisibility,
    Confirmshaming,
    Urgency,
    SocialProof,
    LatencyInjection,
    Relocation,
    ReinforcementLoop,
}

impl ManipulationKind {
    pub const ALL: [ManipulationKind; 9] = [
        ManipulationKind::Salience,
        ManipulationKind::PathInterference,
        ManipulationKind::EscapeVisibility,
        ManipulationKind::Confirmshaming,
        ManipulationKind::Urgency,
        ManipulationKind::SocialProof,
        ManipulationKind::LatencyInjection,
        ManipulationKind::Relocation,
        ManipulationKind::ReinforcementLoop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ManipulationKind::Salience => "salience",
            ManipulationKind::PathInterference => "path_interference",
            ManipulationKind::EscapeVisibility => "escape_visibility",
            ManipulationKind::Confirmshaming => "confirmshaming",
            ManipulationKind::Urgency => "urgency",
            ManipulationKind::SocialProof => "social_proof",
            ManipulationKind::LatencyInjection => "latency_injection",
            ManipulationKind::Relocation => "relocation",
            ManipulationKind::ReinforcementLoop => "reinforcement_loop",
        }
    }
}

impl fmt::Display for ManipulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("unknown manipulation kind `{0}`")]
    UnknownKind(String),
    #[error("dark_ratio must lie in [0, 1], got {0}")]
    Ratio(String),
    #[error("count must be at least 1")]
    Count,
}

impl FromStr for ManipulationKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SynthError::UnknownKind(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vertical {
    ECommerce,
    EdTech,
    Saas,
    Gaming,
}

impl Vertical {
    pub const ALL: [Vertical; 4] = [Vertical::ECommerce, Vertical::EdTech, Vertical::Saas, Vertical::Gaming];

    fn host_stem(self) -> &'static str {
        match self {
            Vertical::ECommerce => "shop",
            Vertical::EdTech => "learn",
            Vertical::Saas => "app",
            Vertical::Gaming => "play",
        }
    }

    fn nav(self) -> &'static [&'static str] {
        match self {
            Vertical::ECommerce => &[
                "Home", "Women", "Men", "Kids", "Shoes", "Bags", "Sale", "Gifts", "Brands", "Stores", "Help", "Orders",
                "Wishlist", "Returns",
            ],
            Vertical::EdTech => &[
                "Home", "Courses", "Paths", "Mentors", "Forum", "Library", "Events", "Grades", "Calendar", "Notes",
                "Help", "Profile", "Badges", "Settings",
            ],
            Vertical::Saas => &[
                "Dashboard", "Projects", "Reports", "Team", "Billing", "Docs", "Integrations", "Status", "Support",
                "Settings", "Profile", "Inbox", "Files", "Search",
            ],
            Vertical::Gaming => &[
                "Play", "Store", "Library", "Friends", "Clans", "Events", "Ranks", "News", "Support", "Settings",
                "Profile", "Inventory", "Quests", "Replays",
            ],
        }
    }

    fn copy(self) -> &'static [&'static str] {
        match self {
            Vertical::ECommerce => &[
                "Browse our spring collection of jackets and boots.",
                "Free returns within 30 days of delivery.",
                "Sign in to see your saved items and order history.",
            ],
            Vertical::EdTech => &[
                "Pick up where you left off in your current course.",
                "New practice sets are added every week.",
                "Your mentor replied to your question in the forum.",
            ],
            Vertical::Saas => &[
                "Your weekly report is ready to view.",
                "Invite teammates to collaborate on this project.",
                "All systems operational.",
            ],
            Vertical::Gaming => &[
                "Season three brings two new maps and a ranked mode.",
                "Your friends are online in the lobby.",
                "Patch notes for version 2.4 are available.",
            ],
        }
    }

    fn cta(self) -> &'static str {
        match self {
            Vertical::ECommerce => "Upgrade to Plus delivery",
            Vertical::EdTech => "Upgrade to Premium",
            Vertical::Saas => "Upgrade your plan",
            Vertical::Gaming => "Upgrade to Battle Pass",
        }
    }
}

/// What to build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSpec {
    pub vertical: Vertical,
    pub dark: bool,
    /// Manipulations (dark) or their near-threshold distractors (benign).
    pub kinds: Vec<ManipulationKind>,
}

// Phrase pools. Each dark phrase clears the default text rule; each benign
// phrase stays under it. Checked in the tests below.
pub(crate) const DARK_CONFIRMSHAMING: [&str; 3] = [
    "No thanks, I prefer to remain uninformed",
    "No thanks, I'd rather stay clueless",
    "No thanks, I like wasting money",
];
pub(crate) const BENIGN_DECLINE: [&str; 3] = ["No thanks, I'll pass", "Skip for today", "Continue with the free plan"];
pub(crate) const DARK_URGENCY: [&str; 3] = [
    "Hurry! Only 2 left in stock. Act now before it's gone",
    "Hurry, last chance: this deal expires in 10 minutes. Act now!",
    "Limited time offer ends in 05:00. Don't miss out, act now",
];
pub(crate) const BENIGN_URGENCY: [&str; 3] = [
    "Summer sale ends in 3 days",
    "Hurry, registration ends in two weeks",
    "Early booking discount until the end of May",
];
pub(crate) const DARK_SOCIAL: [&str; 2] = [
    "Hurry, 27 people are viewing this right now",
    "Hurry! Selling fast: 1,204 shoppers bought this in the last hour. Only 3 left in stock",
];
pub(crate) const BENIGN_SOCIAL: [&str; 3] = [
    "Rated 4.8 by 12,000 learners",
    "Join 3,400 players worldwide",
    "Trusted by 900 customers since 2015",
];

const NAG_TEXT: &str = "Turn on notifications so you never lose your streak";
const PREMIUM_TEXT: &str = "Upgrade to Premium for unlimited access";

/// Salience z-score of `values[i]` with population statistics, computed
/// directly from the textbook definition.
fn z_score(values: &[f64], i: usize) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        0.0
    } else {
        (values[i] - mean) / var.sqrt()
    }
}

/// Dark CTAs sit at z ≥ this; benign ones below `BENIGN_Z_MAX`.
const DARK_Z_MIN: f64 = 2.3;
const BENIGN_Z_MAX: f64 = 1.8;

struct Builder {
    rng: ChaCha8Rng,
    vp: Viewport,
    fg: Rgb,
    host: String,
    elements: Vec<ElementNode>,
    blocks: Vec<TextBlock>,
    events: Vec<InteractionEvent>,
}

impl Builder {
    fn style(&self, opacity: f64) -> StyleInfo {
        StyleInfo {
            fg_color: self.fg,
            bg_color: Background::TRANSPARENT,
            opacity,
            z_index: 1,
            display: Default::default(),
        }
    }

    fn add(&mut self, id: &str, parent: &str, tag: &str, bbox: BBox, text: &str, interactive: bool) {
        let mut e = ElementNode::new(id, Some(parent), tag, bbox);
        e.style = self.style(1.0);
        e.text = text.to_owned();
        e.interactive = interactive;
        if !text.is_empty() {
            let block_id = format!("t{}", self.blocks.len());
            self.blocks.push(TextBlock::new(block_id, id, text));
        }
        self.elements.push(e);
    }

    fn interactive_areas(&self) -> Vec<f64> {
        self.elements.iter().filter(|e| e.interactive).map(|e| e.bbox.area()).collect()
    }
}

fn root_element(vp: Viewport, fg: Rgb) -> ElementNode {
    let mut root = ElementNode::new("root", None, "body", BBox::new(0.0, 0.0, vp.width, vp.height));
    root.style = StyleInfo {
        fg_color: fg,
        bg_color: Background::Color(Rgb::WHITE),
        ..StyleInfo::default()
    };
    root
}

fn epoch() -> DateTime<Utc> {
    "2025-01-01T00:00:00Z".parse().expect("valid timestamp")
}

/// Builds one page. Deterministic for a fixed `(spec, seed)`.
pub fn generate_page(spec: &PageSpec, seed: u64) -> (SnapshotBundle, bool) {
    use ManipulationKind as K;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vp = *[
        Viewport::new(1280.0, 720.0),
        Viewport::new(1366.0, 768.0),
        Viewport::new(1440.0, 900.0),
        Viewport::new(1920.0, 1080.0),
    ]
    .choose(&mut rng)
    .expect("non-empty");
    let grey = rng.random_range(0..60u8);
    let host = format!("{}-{:04x}.example", spec.vertical.host_stem(), rng.random::<u16>());
    let captured_at = epoch() + Duration::seconds(rng.random_range(0..86_400 * 30));
    let has = |k: ManipulationKind| spec.kinds.contains(&k);
    let dark = spec.dark;

    let mut b = Builder {
        rng,
        vp,
        fg: Rgb::new(grey, grey, grey),
        host,
        elements: vec![root_element(vp, Rgb::new(grey, grey, grey))],
        blocks: Vec::new(),
        events: Vec::new(),
    };

    // Navigation: similar-sized links.
    let nav = spec.vertical.nav();
    let n_nav = b.rng.random_range(10..=nav.len());
    for (i, label) in nav.iter().take(n_nav).enumerate() {
        let w = b.rng.random_range(90..=110) as f64;
        let h = b.rng.random_range(32..=36) as f64;
        let bbox = BBox::new(20.0 + (i % 8) as f64 * 140.0, 20.0 + (i / 8) as f64 * 50.0, w, h);
        b.add(&format!("nav-{i}"), "root", "a", bbox, label, true);
    }
    let copy = spec.vertical.copy();
    for (i, text) in copy.iter().enumerate().take(b.rng.random_range(1..=copy.len())) {
        b.add(&format!("p-{i}"), "root", "p", BBox::new(40.0, 140.0 + 40.0 * i as f64, 600.0, 30.0), text, false);
    }

    // Account link leading to the opt-out path.
    if has(K::PathInterference) {
        b.add("manage", "root", "a", BBox::new(vp.width - 200.0, 120.0, 120.0, 30.0), "Manage subscription", true);
    }

    // Premium modal hosting the dismiss control and decline link.
    let needs_modal = has(K::EscapeVisibility) || has(K::Confirmshaming) || has(K::LatencyInjection);
    if needs_modal {
        let mbox = BBox::new(vp.width / 2.0 - 300.0, vp.height / 2.0 - 200.0, 600.0, 400.0);
        b.add("modal", "root", "dialog", mbox, PREMIUM_TEXT, false);
        let close_box = BBox::new(mbox.x + mbox.w - 36.0, mbox.y + 8.0, 24.0, 24.0);
        b.add("close", "modal", "button", close_box, "×", true);
        if has(K::EscapeVisibility) {
            let close = b.elements.last_mut().expect("just added");
            if dark {
                if b.rng.random_bool(0.5) {
                    close.style.opacity = (b.rng.random_range(5..=25) as f64) / 100.0;
                } else {
                    close.bbox = BBox::new(vp.width + 40.0, close.bbox.y, 24.0, 24.0);
                }
            } else {
                close.style.opacity = (b.rng.random_range(35..=100) as f64) / 100.0;
            }
        }
        let decline = if has(K::Confirmshaming) {
            if dark {
                DARK_CONFIRMSHAMING.choose(&mut b.rng)
            } else {
                BENIGN_DECLINE.choose(&mut b.rng)
            }
        } else {
            BENIGN_DECLINE.choose(&mut b.rng)
        }
        .expect("non-empty");
        b.add("decline", "modal", "a", BBox::new(mbox.x + 210.0, mbox.y + 340.0, 180.0, 20.0), decline, true);
    }

    if has(K::Urgency) {
        let pool: &[&str] = if dark { &DARK_URGENCY } else { &BENIGN_URGENCY };
        let text = pool.choose(&mut b.rng).expect("non-empty");
        b.add("banner", "root", "div", BBox::new(0.0, vp.height - 60.0, vp.width, 40.0), text, false);
    }
    if has(K::SocialProof) {
        let pool: &[&str] = if dark { &DARK_SOCIAL } else { &BENIGN_SOCIAL };
        let text = pool.choose(&mut b.rng).expect("non-empty");
        b.add("proof", "root", "span", BBox::new(40.0, 300.0, 420.0, 24.0), text, false);
    }
    if has(K::ReinforcementLoop) {
        b.add("nag", "root", "dialog", BBox::new(vp.width - 380.0, 80.0, 340.0, 120.0), NAG_TEXT, false);
    }

    // The call to action, sized for its salience z-score among every
    // interactive element on the page.
    let forced = dark && (has(K::Salience) || has(K::Relocation));
    let others = b.interactive_areas();
    let cta_w = size_cta(&others, forced, &mut b.rng);
    let cta_box = BBox::new(40.0, 360.0, cta_w, (cta_w / 4.0).round());
    b.add("cta", "root", "button", cta_box, spec.vertical.cta(), true);

    build_events(&mut b, spec);

    let mut main = PageSnapshot {
        snapshot_id: "main".into(),
        url: format!("https://{}/", b.host),
        captured_at,
        viewport: vp,
        elements: b.elements,
        text_blocks: b.blocks,
        events: b.events,
        state_id: None,
    };
    main.events.sort_by_key(|e| e.t_ms);

    let mut manifest = Manifest::new(b.host.clone());
    manifest.site_label = Some(dark);
    let mut bundle = SnapshotBundle {
        manifest,
        snapshots: vec![main],
        flow: None,
    };
    if has(K::PathInterference) {
        add_flow(&mut bundle, dark, &mut b.rng, vp, b.fg, captured_at);
    }
    (bundle, dark)
}

/// CTA width whose area sets its z-score: ≥ `DARK_Z_MIN` when forced, else
/// the largest width still under a random target below `BENIGN_Z_MAX`.
fn size_cta(others: &[f64], forced: bool, rng: &mut ChaCha8Rng) -> f64 {
    let z_of = |w: f64| {
        let mut v = others.to_vec();
        v.push(w * (w / 4.0).round());
        z_score(&v, v.len() - 1)
    };
    if forced {
        let mut w = 160.0;
        while z_of(w) < DARK_Z_MIN {
            w += 10.0;
            assert!(w < 2000.0, "cannot make the call to action salient");
        }
        w + rng.random_range(0..=8) as f64 * 10.0
    } else {
        let target = rng.random_range(1.2..BENIGN_Z_MAX);
        let mut w = 100.0;
        while z_of(w + 4.0) < target {
            w += 4.0;
        }
        w
    }
}

fn build_events(b: &mut Builder, spec: &PageSpec) {
    use ManipulationKind as K;
    let has = |k: ManipulationKind| spec.kinds.contains(&k);
    let dark = spec.dark;
    let host = b.host.clone();
    b.events.push(InteractionEvent::navigate(0, &host));

    let base = b.rng.random_range(120..=300u64);
    let mut t = 50;
    for _ in 0..5 {
        t += b.rng.random_range(100..=400);
        b.events.push(InteractionEvent::response(t, base + b.rng.random_range(0..=30), &host));
    }
    // Lower median of the five normal responses. One slower response sorts
    // above them and leaves the lower median where it is.
    let mut normals: Vec<u64> = b.events.iter().filter_map(|e| e.latency_ms).collect();
    normals.sort_unstable();
    let baseline = normals[(normals.len() - 1) / 2];

    t += 1000;
    if has(K::LatencyInjection) {
        let excess = if dark { b.rng.random_range(600..=1500) } else { b.rng.random_range(100..=450) };
        b.events.push(InteractionEvent::response(t, baseline + excess, &host));
        let delay = b.rng.random_range(300..=4000);
        b.events.push(InteractionEvent::prompt_shown(t + delay, "modal", PREMIUM_TEXT, &host));
        t += delay + 500;
    } else if b.elements.iter().any(|e| e.id == "modal") {
        b.events.push(InteractionEvent::prompt_shown(t, "modal", PREMIUM_TEXT, &host));
        t += 500;
    }

    if has(K::Relocation) {
        t += 1000;
        b.events.push(InteractionEvent::click(t, "nav-0", &host));
        let after = b.rng.random_range(200..=1500);
        let frac = if dark { b.rng.random_range(0.15..0.30) } else { b.rng.random_range(0.02..0.07) };
        let dist = (frac * b.vp.diagonal()).round();
        let new_box = b.elements.iter().find(|e| e.id == "cta").expect("cta exists").bbox;
        let old_box = BBox::new(new_box.x + dist, new_box.y, new_box.w, new_box.h);
        b.events.push(InteractionEvent::mutation(t + after, "cta", old_box, new_box, &host));
        t += after;
    }

    if has(K::ReinforcementLoop) {
        let count = b.rng.random_range(3..=5);
        let mut interval: f64 = if dark { b.rng.random_range(8000.0..12000.0) } else { b.rng.random_range(3000.0..5000.0) };
        t += 1000;
        for i in 0..count {
            if i > 0 {
                t += interval.round() as u64;
                interval *= if dark { b.rng.random_range(0.5..0.75) } else { b.rng.random_range(1.5..2.0) };
            }
            b.events.push(InteractionEvent::prompt_shown(t, "nag", NAG_TEXT, &host));
        }
    }
}

/// Opt-in and opt-out paths from the main page. The opt-out path is longer
/// by more than the click threshold on dark pages, and by at most it on
/// benign ones.
fn add_flow(bundle: &mut SnapshotBundle, dark: bool, rng: &mut ChaCha8Rng, vp: Viewport, fg: Rgb, at: DateTime<Utc>) {
    let extra: u32 = if dark { rng.random_range(4..=6) } else { rng.random_range(0..=3) };
    let d_in = 2;
    let d_out = d_in + extra;
    let host = bundle.manifest.host.clone();

    let page = |id: &str, offset: u32, buttons: &[(&str, &str)], note: &str| -> PageSnapshot {
        let mut els = vec![root_element(vp, fg)];
        let mut blocks = Vec::new();
        let mut heading = ElementNode::new("heading", Some("root"), "h1", BBox::new(40.0, 40.0, 600.0, 40.0));
        heading.text = note.to_owned();
        blocks.push(TextBlock::new("t0", "heading", note));
        els.push(heading);
        for (i, (bid, label)) in buttons.iter().enumerate() {
            let mut e = ElementNode::new(*bid, Some("root"), "button", BBox::new(40.0 + 200.0 * i as f64, 200.0, 160.0, 40.0));
            e.style.fg_color = fg;
            e.text = (*label).to_owned();
            e.interactive = true;
            blocks.push(TextBlock::new(format!("t{}", i + 1), *bid, *label));
            els.push(e);
        }
        PageSnapshot {
            snapshot_id: id.to_owned(),
            url: format!("https://{host}/{id}"),
            captured_at: at + Duration::seconds(i64::from(offset) + 1),
            viewport: vp,
            elements: els,
            text_blocks: blocks,
            events: vec![InteractionEvent::navigate(0, &host)],
            state_id: None,
        }
    };

    let mut snaps = vec![
        page("checkout", 1, &[("back", "Back"), ("confirm", "Confirm purchase")], "Review your order"),
        page("subscribed", 2, &[("home", "Back to home")], "Thanks for subscribing"),
    ];
    let mut edges = vec![
        FlowEdge { from: "main".into(), element_id: "cta".into(), to: "checkout".into() },
        FlowEdge { from: "checkout".into(), element_id: "confirm".into(), to: "subscribed".into() },
    ];
    let mut prev = "main".to_owned();
    let mut prev_el = "manage".to_owned();
    for step in 1..d_out {
        let id = format!("account-{step}");
        let last = step == d_out - 1;
        let (btn, label) = if last { ("cancel", "Cancel subscription") } else { ("next", "Continue") };
        snaps.push(page(&id, 2 + step, &[("back", "Back"), (btn, label)], "Review your plan details"));
        edges.push(FlowEdge { from: prev.clone(), element_id: prev_el.clone(), to: id.clone() });
        prev = id;
        prev_el = btn.to_owned();
    }
    snaps.push(page("cancelled", 2 + d_out, &[("home", "Back to home")], "Your plan has been cancelled"));
    edges.push(FlowEdge { from: prev, element_id: prev_el, to: "cancelled".into() });

    let mut flow = FlowGraph {
        entry: "main".into(),
        states: Default::default(),
        edges,
        tasks: Default::default(),
        task_pairs: vec![TaskPair { opt_in: "subscribe".into(), opt_out: "cancel".into() }],
    };
    flow.states.insert("main".into());
    flow.states.extend(snaps.iter().map(|s| s.snapshot_id.clone()));
    flow.tasks.insert("subscribe".into(), ["subscribed".to_string()].into());
    flow.tasks.insert("cancel".into(), ["cancelled".to_string()].into());
    bundle.snapshots.extend(snaps);
    bundle.flow = Some(flow);
}

/// Picks a spec for one corpus item.
pub fn random_spec(dark: bool, rng: &mut ChaCha8Rng) -> PageSpec {
    let vertical = *Vertical::ALL.choose(rng).expect("non-empty");
    let n = if dark { rng.random_range(1..=3) } else { rng.random_range(2..=4) };
    let mut kinds = ManipulationKind::ALL.to_vec();
    kinds.shuffle(rng);
    kinds.truncate(n);
    kinds.sort();
    PageSpec { vertical, dark, kinds }
}

#[derive(Debug, Clone)]
pub struct GeneratedItem {
    pub name: String,
    pub spec: PageSpec,
    pub seed: u64,
    pub bundle: SnapshotBundle,
    pub dark: bool,
}

/// `round(count · dark_ratio)` dark pages, shuffled among the benign ones.
pub fn generate_corpus(count: usize, dark_ratio: f64, seed: u64) -> Result<Vec<GeneratedItem>, SynthError> {
    if count == 0 {
        return Err(SynthError::Count);
    }
    if !(0.0..=1.0).contains(&dark_ratio) {
        return Err(SynthError::Ratio(dark_ratio.to_string()));
    }
    let n_dark = (count as f64 * dark_ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = (0..count).map(|i| i < n_dark).collect();
    labels.shuffle(&mut rng);
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, dark)| {
            let spec = random_spec(dark, &mut rng);
            let item_seed = rng.random::<u64>();
            let (bundle, dark) = generate_page(&spec, item_seed);
            GeneratedItem {
                name: format!("page-{i:05}"),
                spec,
                seed: item_seed,
                bundle,
                dark,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_snapshot_bundle, validate_bundle, Strictness};
    use crate::pipeline::Detector;
    use crate::rules::RuleSet;
    use crate::scoring::{StaticFlag, Verdict};
    use crate::text::{sentiment_polarity, urgency_density, DeceptiveLanguageClassifier, LexiconClassifier};
    use crate::tokenize::canonicalize_text;

    fn text_scores(phrase: &str) -> (f64, f64, f64) {
        let rules = RuleSet::bundled();
        let c = LexiconClassifier::from_lexicons(&rules.lexicons, &rules.version);
        let t = canonicalize_text(phrase);
        (
            c.score(&t).unwrap(),
            sentiment_polarity(&t, &rules.lexicons.valence),
            urgency_density(&t, &rules.lexicons.urgency_phrases()),
        )
    }

    #[test]
    fn phrase_pools_sit_on_the_right_side_with_margin() {
        for p in DARK_CONFIRMSHAMING.iter().chain(&DARK_URGENCY).chain(&DARK_SOCIAL) {
            let (dlp, pol, dens) = text_scores(p);
            assert!(dlp >= 0.80 && (pol <= -0.5 || dens >= 3.0), "{p}: {dlp} {pol} {dens}");
        }
        for p in BENIGN_DECLINE.iter().chain(&BENIGN_URGENCY).chain(&BENIGN_SOCIAL).chain([&PREMIUM_TEXT, &NAG_TEXT]) {
            let (dlp, _, _) = text_scores(p);
            assert!(dlp < 0.6, "{p}: {dlp}");
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert_eq!("salience".parse::<ManipulationKind>(), Ok(ManipulationKind::Salience));
        assert_eq!("teleport".parse::<ManipulationKind>(), Err(SynthError::UnknownKind("teleport".into())));
    }

    #[test]
    fn same_spec_and_seed_gives_identical_bytes() {
        let spec = PageSpec { vertical: Vertical::Saas, dark: true, kinds: ManipulationKind::ALL.to_vec() };
        assert_eq!(generate_page(&spec, 7).0.to_json(), generate_page(&spec, 7).0.to_json());
        assert_ne!(generate_page(&spec, 7).0.to_json(), generate_page(&spec, 8).0.to_json());
    }

    #[test]
    fn z_oracle_matches_hand_values() {
        let z = z_score(&[1.0, 1.0, 1.0, 1.0, 10.0], 4);
        assert!((z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dark_escape_page_yields_an_escape_finding() {
        let detector = Detector::new(RuleSet::bundled());
        for seed in 0..20 {
            let spec = PageSpec { vertical: Vertical::EdTech, dark: true, kinds: vec![ManipulationKind::EscapeVisibility] };
            let (bundle, _) = generate_page(&spec, seed);
            let r = detector.analyze_bundle(&bundle, None).unwrap();
            assert!(
                r.findings.iter().any(|f| f.severity >= 2 && f.static_flags.contains(&StaticFlag::Escape)),
                "seed {seed}"
            );
        }
    }

    fn check_kind(kind: ManipulationKind, dark: bool, seeds: std::ops::Range<u64>) {
        let detector = Detector::new(RuleSet::bundled());
        for seed in seeds {
            for vertical in Vertical::ALL {
                let spec = PageSpec { vertical, dark, kinds: vec![kind] };
                let (bundle, label) = generate_page(&spec, seed);
                assert!(validate_bundle(&bundle).is_empty(), "{kind} {seed}: {:?}", validate_bundle(&bundle));
                let parsed = parse_snapshot_bundle(bundle.to_json().as_bytes(), Strictness::Strict).unwrap();
                let r = detector.analyze_bundle(&parsed, None).unwrap();
                let expected = if label { Verdict::Dark } else { Verdict::Benign };
                assert_eq!(r.page_verdict, expected, "{kind} dark={dark} seed={seed} {vertical:?}");
            }
        }
    }

    #[test]
    fn each_kind_alone_is_classified_by_construction() {
        for kind in ManipulationKind::ALL {
            check_kind(kind, true, 0..15);
            check_kind(kind, false, 0..15);
        }
    }

    #[test]
    fn corpus_counts_follow_ratio() {
        let c = generate_corpus(10, 0.5, 1).unwrap();
        assert_eq!(c.iter().filter(|i| i.dark).count(), 5);
        let c = generate_corpus(7, 0.3, 1).unwrap();
        assert_eq!(c.iter().filter(|i| i.dark).count(), 2);
        assert_eq!(generate_corpus(0, 0.5, 1).unwrap_err(), SynthError::Count);
        assert!(generate_corpus(3, 1.5, 1).is_err());
    }
}
