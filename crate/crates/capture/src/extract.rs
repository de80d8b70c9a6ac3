//! In-page extraction script and conversion of its result into the model.

use std::collections::BTreeMap;

use darkscan_core::model::{BBox, Background, Display, ElementNode, InteractionEvent, Rgb, StyleInfo, TextBlock};
use serde::{Deserialize, Serialize};

/// Marker the fixture endpoint uses to recognise the extraction script.
pub const EXTRACT_MARKER: &str = "darkscan-extract";
pub const ID_OF_MARKER: &str = "darkscan-id-of";
pub const SCROLL_MARKER: &str = "darkscan-scroll";

/// `arguments[0]`: "full" or "events"; `arguments[1]`: element cap.
///
/// Boxes are viewport-relative. Moves are tracked in page coordinates so
/// that scrolling alone never reads as a relocation.
pub const EXTRACT_SCRIPT: &str = r#"// darkscan-extract
const mode = arguments[0] || 'full';
const cap = arguments[1] || 4000;
const st = window.__darkscan || (window.__darkscan = {
  next: 0, seenTiming: 0, boxes: {}, mutations: [], prompts: [], shown: {}, observer: null
});
const idOf = (el) => {
  let id = el.getAttribute('data-darkscan-id');
  if (!id) {
    const unique = el.id && document.querySelectorAll('[id="' + el.id.replace(/"/g, '\\"') + '"]').length === 1;
    id = unique ? el.id : 'ds-' + (st.next++);
    el.setAttribute('data-darkscan-id', id);
  }
  return id;
};
const pageBox = (el) => {
  const r = el.getBoundingClientRect();
  return [r.left + window.scrollX, r.top + window.scrollY, r.width, r.height];
};
const visible = (el) => {
  const cs = getComputedStyle(el);
  const r = el.getBoundingClientRect();
  return cs.display !== 'none' && cs.visibility !== 'hidden' && r.width > 0 && r.height > 0;
};
const ownText = (el) => {
  let t = '';
  for (const n of el.childNodes) if (n.nodeType === 3) t += ' ' + n.nodeValue;
  if (!t.trim() && el.tagName === 'INPUT' && /^(submit|button|reset)$/i.test(el.type)) t = el.value || '';
  return t.replace(/\s+/g, ' ').trim().slice(0, 500);
};
const check = () => {
  const now = performance.now();
  for (const id of Object.keys(st.boxes)) {
    const el = document.querySelector('[data-darkscan-id="' + id + '"]');
    if (!el) continue;
    const nb = pageBox(el);
    const old = st.boxes[id];
    if (nb.some((v, i) => Math.abs(v - old[i]) > 0.5)) {
      st.mutations.push({t: now, id: id, old: old, new: nb});
      st.boxes[id] = nb;
    }
  }
  for (const el of document.querySelectorAll('dialog[open], [role="dialog"], [role="alertdialog"], [aria-modal="true"]')) {
    const id = idOf(el);
    const on = visible(el);
    if (on && !st.shown[id]) st.prompts.push({t: now, id: id, text: (el.innerText || '').slice(0, 500)});
    st.shown[id] = on;
  }
};
if (!st.observer) {
  st.observer = new MutationObserver((recs) => {
    if (recs.every((r) => r.type === 'attributes' && r.attributeName === 'data-darkscan-id')) return;
    check();
  });
  st.observer.observe(document.documentElement, {attributes: true, childList: true, subtree: true});
}
check();
const entries = performance.getEntriesByType('navigation').concat(performance.getEntriesByType('resource'));
const timing = entries.slice(st.seenTiming).map((e) => ({
  name: e.name,
  start: e.startTime,
  latency: Math.max(0, e.responseStart > 0 ? e.responseStart - (e.requestStart || e.startTime) : e.duration)
}));
st.seenTiming = entries.length;
const out = {
  url: location.href,
  viewport: [window.innerWidth, window.innerHeight],
  time_origin: performance.timeOrigin,
  timing: timing,
  mutations: st.mutations.splice(0),
  prompts: st.prompts.splice(0),
  elements: []
};
if (mode !== 'full') return out;
const SKIP = new Set(['SCRIPT', 'STYLE', 'NOSCRIPT', 'TEMPLATE', 'HEAD', 'META', 'LINK', 'SVG']);
const CLICKABLE = new Set(['A', 'BUTTON', 'INPUT', 'SELECT', 'TEXTAREA', 'SUMMARY', 'OPTION', 'LABEL']);
const ROLES = new Set(['button', 'link', 'menuitem', 'checkbox', 'switch', 'tab', 'radio', 'option']);
const color = (s) => {
  const m = /rgba?\(([^)]*)\)/.exec(s || '');
  if (!m) return 'transparent';
  const p = m[1].split(/[\s,\/]+/).filter(Boolean).map(Number);
  if (p.length > 3 && p[3] === 0) return 'transparent';
  return p.slice(0, 3).map((v) => Math.max(0, Math.min(255, Math.round(v || 0))));
};
const root = document.body || document.documentElement;
const stack = [[root, null]];
while (stack.length && out.elements.length < cap) {
  const [el, parent] = stack.pop();
  if (SKIP.has(el.tagName.toUpperCase())) continue;
  const cs = getComputedStyle(el);
  const r = el.getBoundingClientRect();
  const id = idOf(el);
  const tag = el.tagName.toLowerCase();
  const parentCursor = el.parentElement ? getComputedStyle(el.parentElement).cursor : 'auto';
  const interactive = (CLICKABLE.has(el.tagName) && !(tag === 'a' && !el.hasAttribute('href')))
    || ROLES.has(el.getAttribute('role') || '') || el.hasAttribute('onclick')
    || (cs.cursor === 'pointer' && parentCursor !== 'pointer');
  const attrs = {};
  for (const a of el.attributes) {
    if (a.name === 'role' || a.name === 'aria-label' || a.name === 'type' || (a.name.startsWith('data-') && a.name !== 'data-darkscan-id')) {
      attrs[a.name] = String(a.value).slice(0, 200);
    }
  }
  out.elements.push({
    id: id, parent: parent, tag: tag,
    bbox: [r.left, r.top, r.width, r.height],
    fg: color(cs.color), bg: color(cs.backgroundColor),
    opacity: parseFloat(cs.opacity),
    z: parseInt(cs.zIndex, 10) || 0,
    display: cs.display === 'none' ? 'none' : (cs.visibility === 'hidden' || cs.visibility === 'collapse') ? 'hidden' : 'visible',
    text: ownText(el), interactive: interactive, attrs: attrs
  });
  if (interactive) st.boxes[id] = pageBox(el);
  const kids = Array.from(el.children);
  for (let i = kids.length - 1; i >= 0; i--) stack.push([kids[i], id]);
}
return out;
"#;

/// `arguments[0]` is an element reference.
pub const ID_OF_SCRIPT: &str = r#"// darkscan-id-of
const el = arguments[0];
let id = el.getAttribute('data-darkscan-id');
if (!id) {
  const st = window.__darkscan || (window.__darkscan = {next: 0, seenTiming: 0, boxes: {}, mutations: [], prompts: [], shown: {}, observer: null});
  id = el.id || 'ds-' + (st.next++);
  el.setAttribute('data-darkscan-id', id);
}
return id;
"#;

pub const SCROLL_SCRIPT: &str = "// darkscan-scroll\nwindow.scrollBy(0, arguments[0]); return null;";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawColor {
    Rgb([u8; 3]),
    Keyword(String),
}

impl RawColor {
    fn background(&self) -> Background {
        match self {
            RawColor::Rgb(c) => Background::Color(Rgb::new(c[0], c[1], c[2])),
            RawColor::Keyword(_) => Background::TRANSPARENT,
        }
    }

    fn foreground(&self) -> Rgb {
        match self {
            RawColor::Rgb(c) => Rgb::new(c[0], c[1], c[2]),
            RawColor::Keyword(_) => Rgb::BLACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawElement {
    pub id: String,
    pub parent: Option<String>,
    pub tag: String,
    pub bbox: [f64; 4],
    pub fg: RawColor,
    pub bg: RawColor,
    pub opacity: f64,
    #[serde(default)]
    pub z: i32,
    pub display: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub interactive: bool,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTiming {
    pub name: String,
    pub start: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMutation {
    pub t: f64,
    pub id: String,
    pub old: [f64; 4],
    pub new: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrompt {
    pub t: f64,
    pub id: String,
    pub text: String,
}

/// What the extraction script returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub url: String,
    pub viewport: [f64; 2],
    pub time_origin: f64,
    #[serde(default)]
    pub timing: Vec<RawTiming>,
    #[serde(default)]
    pub mutations: Vec<RawMutation>,
    #[serde(default)]
    pub prompts: Vec<RawPrompt>,
    #[serde(default)]
    pub elements: Vec<RawElement>,
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn bbox(b: [f64; 4]) -> BBox {
    BBox::new(
        finite_or_zero(b[0]),
        finite_or_zero(b[1]),
        finite_or_zero(b[2]).max(0.0),
        finite_or_zero(b[3]).max(0.0),
    )
}

fn host_of(url: &str) -> String {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(str::to_owned))
        .unwrap_or_default()
}

impl Extraction {
    /// Elements and text blocks, sanitised so the snapshot validates.
    /// Block ids are prefixed with `block_prefix`.
    pub fn elements(&self, block_prefix: &str) -> (Vec<ElementNode>, Vec<TextBlock>) {
        let ids: std::collections::HashSet<&str> = self.elements.iter().map(|e| e.id.as_str()).collect();
        let mut seen = std::collections::HashSet::new();
        let mut elements = Vec::new();
        let mut blocks = Vec::new();
        for raw in &self.elements {
            if !seen.insert(raw.id.as_str()) {
                continue;
            }
            let parent = raw.parent.as_deref().filter(|p| ids.contains(p) && seen.contains(p));
            let mut e = ElementNode::new(raw.id.clone(), parent, raw.tag.clone(), bbox(raw.bbox));
            e.style = StyleInfo {
                fg_color: raw.fg.foreground(),
                bg_color: raw.bg.background(),
                opacity: if raw.opacity.is_finite() { raw.opacity.clamp(0.0, 1.0) } else { 1.0 },
                z_index: raw.z,
                display: match raw.display.as_str() {
                    "none" => Display::None,
                    "hidden" => Display::Hidden,
                    _ => Display::Visible,
                },
            };
            e.text = raw.text.clone();
            e.interactive = raw.interactive;
            e.attributes = raw.attrs.clone();
            if !raw.text.is_empty() {
                blocks.push(TextBlock::new(format!("{block_prefix}{}", blocks.len()), raw.id.clone(), raw.text.clone()));
            }
            elements.push(e);
        }
        (elements, blocks)
    }

    /// Response, mutation and prompt events with times relative to
    /// `run_epoch_ms`.
    pub fn events(&self, run_epoch_ms: f64) -> Vec<InteractionEvent> {
        let rel = |t: f64| (self.time_origin + t - run_epoch_ms).max(0.0).round() as u64;
        let page_host = host_of(&self.url);
        let mut out = Vec::new();
        for t in &self.timing {
            let host = host_of(&t.name);
            let host = if host.is_empty() { page_host.clone() } else { host };
            out.push(InteractionEvent::response(rel(t.start + t.latency), t.latency.max(0.0).round() as u64, &host));
        }
        for m in &self.mutations {
            out.push(InteractionEvent::mutation(rel(m.t), &m.id, bbox(m.old), bbox(m.new), &page_host));
        }
        for p in &self.prompts {
            out.push(InteractionEvent::prompt_shown(rel(p.t), &p.id, &p.text, &page_host));
        }
        out.sort_by_key(|e| e.t_ms);
        out
    }
}
