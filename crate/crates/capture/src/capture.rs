//! Runs a capture plan against a WebDriver endpoint.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use chrono::Utc;
use darkscan_core::ingest::{Manifest, SnapshotBundle};
use darkscan_core::model::{FlowEdge, FlowGraph, InteractionEvent, PageSnapshot, Viewport};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::extract::{Extraction, EXTRACT_SCRIPT, ID_OF_SCRIPT, SCROLL_SCRIPT};
use crate::plan::{Action, CapturePlan, PlanError};
use crate::webdriver::{default_capabilities, Session, WebDriverClient, WebDriverError};

/// Upper bound on elements read from one page.
pub const MAX_ELEMENTS: usize = 4000;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    /// No session could be opened; nothing was captured.
    #[error(transparent)]
    Session(WebDriverError),
}

/// One politeness-governed request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoliteRequest {
    pub host: String,
    pub action: String,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone)]
pub struct CaptureOutcome {
    pub bundle: SnapshotBundle,
    pub session_id: String,
    pub requests: Vec<PoliteRequest>,
    /// Non-fatal notes, such as tasks whose goal was never reached.
    pub warnings: Vec<String>,
}

impl CaptureOutcome {
    pub fn is_partial(&self) -> bool {
        !self.bundle.manifest.capture_errors.is_empty()
    }
}

/// Enforces a minimum gap between consecutive requests to one host.
struct Politeness {
    gap: Duration,
    start: Instant,
    last_end: HashMap<String, Instant>,
    log: Vec<PoliteRequest>,
}

impl Politeness {
    fn run<T>(&mut self, host: &str, action: &str, f: impl FnOnce() -> T) -> T {
        if let Some(last) = self.last_end.get(host) {
            let ready = *last + self.gap;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        let begun = Instant::now();
        let out = f();
        let ended = Instant::now();
        self.last_end.insert(host.to_owned(), ended);
        let ms = |t: Instant| t.duration_since(self.start).as_secs_f64() * 1000.0;
        self.log.push(PoliteRequest {
            host: host.to_owned(),
            action: action.to_owned(),
            start_ms: ms(begun),
            end_ms: ms(ended),
        });
        out
    }
}

fn host_of(url: &str) -> String {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Flow-state key: path plus query.
fn state_key(url: &str) -> String {
    match url::Url::parse(url) {
        Ok(u) => match u.query() {
            Some(q) => format!("{}?{q}", u.path()),
            None => u.path().to_owned(),
        },
        Err(_) => url.to_owned(),
    }
}

enum Step {
    Continue,
    /// `max_states` reached.
    Full,
}

struct Recorder<'s, 'c> {
    session: &'s Session<'c>,
    plan: &'s CapturePlan,
    base: url::Url,
    polite: Politeness,
    epoch_ms: f64,
    snapshots: Vec<PageSnapshot>,
    by_state: HashMap<String, usize>,
    pending: Vec<InteractionEvent>,
    current: Option<String>,
    last_click: Option<String>,
    edges: Vec<FlowEdge>,
    page_host: String,
}

fn protocol(reason: String, payload: &Value) -> WebDriverError {
    let mut text = payload.to_string();
    if text.len() > 300 {
        let cut = (0..=300).rev().find(|&i| text.is_char_boundary(i)).unwrap_or(0);
        text.truncate(cut);
    }
    WebDriverError::Protocol { reason, payload: text }
}

impl Recorder<'_, '_> {
    fn now_ms(&self) -> u64 {
        self.polite.start.elapsed().as_millis() as u64
    }

    fn extract(&mut self, mode: &str) -> Result<Extraction, WebDriverError> {
        let v = self.session.execute(EXTRACT_SCRIPT, vec![json!(mode), json!(MAX_ELEMENTS)])?;
        let ex: Extraction =
            serde_json::from_value(v.clone()).map_err(|e| protocol(format!("unexpected extraction result: {e}"), &v))?;
        self.page_host = host_of(&ex.url);
        self.pending.extend(ex.events(self.epoch_ms));
        Ok(ex)
    }

    /// Collects in-page events before the page may be replaced.
    fn drain(&mut self) -> Result<(), WebDriverError> {
        self.extract("events").map(drop)
    }

    fn navigate(&mut self, url: &str) -> Result<(), WebDriverError> {
        let host = host_of(url);
        let session = self.session;
        self.polite.run(&host, &format!("navigate {url}"), || session.navigate(url))?;
        self.pending.push(InteractionEvent::navigate(self.now_ms(), &host));
        self.page_host = host;
        Ok(())
    }

    fn step(&mut self, action: &Action) -> Result<Step, WebDriverError> {
        match action {
            Action::RecordState => return self.record(),
            Action::Click(selector) => {
                self.drain()?;
                let el = self.session.find_css(selector)?;
                let id = self.session.execute(ID_OF_SCRIPT, vec![Session::element_arg(&el)])?;
                let id = id
                    .as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| protocol("element id is not a string".into(), &id))?;
                let host = self.page_host.clone();
                let session = self.session;
                let t = self.now_ms();
                self.polite.run(&host, &format!("click {selector}"), || session.click(&el))?;
                self.pending.push(InteractionEvent::click(t, &id, &host));
                self.last_click = Some(id);
            }
            Action::Scroll(dy) => {
                self.session.execute(SCROLL_SCRIPT, vec![json!(dy)])?;
                self.pending.push(InteractionEvent::scroll(self.now_ms(), &self.page_host));
            }
            Action::Wait(ms) => std::thread::sleep(Duration::from_millis(*ms)),
            Action::Goto(target) => {
                self.drain()?;
                let url = self.base.join(target).map(String::from).unwrap_or_else(|_| target.clone());
                self.navigate(&url)?;
                self.current = None;
                self.last_click = None;
            }
            Action::MoveMouse([x, y]) => self.session.move_pointer(*x, *y)?,
        }
        Ok(Step::Continue)
    }

    fn record(&mut self) -> Result<Step, WebDriverError> {
        let ex = self.extract("full")?;
        let key = state_key(&ex.url);
        let mut events = std::mem::take(&mut self.pending);
        events.sort_by_key(|e| e.t_ms);
        if let Some(&idx) = self.by_state.get(&key) {
            let snap = &mut self.snapshots[idx];
            snap.events.extend(events);
            snap.events.sort_by_key(|e| e.t_ms);
        } else {
            if self.snapshots.len() >= self.plan.max_states {
                return Ok(Step::Full);
            }
            let n = self.snapshots.len();
            let (elements, text_blocks) = ex.elements(&format!("s{n}-b"));
            let viewport = Viewport::new(
                if ex.viewport[0] > 0.0 { ex.viewport[0] } else { f64::from(self.plan.viewport[0]) },
                if ex.viewport[1] > 0.0 { ex.viewport[1] } else { f64::from(self.plan.viewport[1]) },
            );
            self.snapshots.push(PageSnapshot {
                snapshot_id: format!("s{n}"),
                url: ex.url.clone(),
                captured_at: Utc::now(),
                viewport,
                elements,
                text_blocks,
                events,
                state_id: Some(key.clone()),
            });
            self.by_state.insert(key.clone(), n);
        }
        if let (Some(prev), Some(el)) = (&self.current, &self.last_click) {
            if *prev != key {
                let edge = FlowEdge {
                    from: prev.clone(),
                    element_id: el.clone(),
                    to: key.clone(),
                };
                if !self.edges.contains(&edge) {
                    self.edges.push(edge);
                }
            }
        }
        self.current = Some(key);
        self.last_click = None;
        Ok(Step::Continue)
    }

    fn flow(&self, warnings: &mut Vec<String>) -> Option<FlowGraph> {
        let first = self.snapshots.first()?;
        let states: BTreeSet<String> = self.snapshots.iter().map(|s| s.flow_state().to_owned()).collect();
        let mut tasks = BTreeMap::new();
        for (name, spec) in &self.plan.tasks {
            let goals: BTreeSet<String> = self
                .snapshots
                .iter()
                .filter(|s| s.url.contains(&spec.url_contains))
                .map(|s| s.flow_state().to_owned())
                .collect();
            if goals.is_empty() {
                warnings.push(format!("task `{name}`: no recorded state matches `{}`", spec.url_contains));
            } else {
                tasks.insert(name.clone(), goals);
            }
        }
        let task_pairs = self
            .plan
            .task_pairs
            .iter()
            .filter(|p| {
                let ok = tasks.contains_key(&p.opt_in) && tasks.contains_key(&p.opt_out);
                if !ok {
                    warnings.push(format!("task pair {}/{} dropped", p.opt_in, p.opt_out));
                }
                ok
            })
            .cloned()
            .collect();
        Some(FlowGraph {
            entry: first.flow_state().to_owned(),
            states,
            edges: self.edges.clone(),
            tasks,
            task_pairs,
        })
    }
}

/// Opens a session, executes the plan and always closes the session.
///
/// A failing step ends the run early; what was recorded so far is returned
/// with the failure listed in `manifest.capture_errors`.
pub fn run_plan(client: &WebDriverClient, plan: &CapturePlan) -> Result<CaptureOutcome, CaptureError> {
    plan.validate()?;
    let caps = plan
        .capabilities
        .clone()
        .unwrap_or_else(|| default_capabilities((plan.viewport[0], plan.viewport[1])));
    let session = client.new_session(&caps).map_err(CaptureError::Session)?;
    let session_id = session.id().to_owned();
    let epoch_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64() * 1000.0).unwrap_or(0.0);
    let mut rec = Recorder {
        session: &session,
        plan,
        base: url::Url::parse(&plan.url).expect("validated"),
        polite: Politeness {
            gap: Duration::from_millis(plan.politeness_ms),
            start: Instant::now(),
            last_end: HashMap::new(),
            log: Vec::new(),
        },
        epoch_ms,
        snapshots: Vec::new(),
        by_state: HashMap::new(),
        pending: Vec::new(),
        current: None,
        last_click: None,
        edges: Vec::new(),
        page_host: plan.host(),
    };
    let mut errors = Vec::new();
    let setup = session
        .set_timeouts(plan.timeout_ms, plan.timeout_ms)
        .and_then(|()| rec.navigate(&plan.url));
    match setup {
        Err(e) => errors.push(format!("start: {e}")),
        Ok(()) => {
            for (i, action) in plan.actions.iter().enumerate() {
                match rec.step(action) {
                    Ok(Step::Continue) => {}
                    Ok(Step::Full) => break,
                    Err(e) => {
                        errors.push(format!("step {i} ({}): {e}", action.describe()));
                        break;
                    }
                }
            }
        }
    }
    let mut warnings = Vec::new();
    let flow = rec.flow(&mut warnings);
    let requests = std::mem::take(&mut rec.polite.log);
    let snapshots = std::mem::take(&mut rec.snapshots);
    drop(rec);
    if let Err(e) = session.delete() {
        warnings.push(format!("session teardown: {e}"));
    }
    let mut manifest = Manifest::new(plan.host());
    manifest.capture_errors = errors;
    Ok(CaptureOutcome {
        bundle: SnapshotBundle {
            manifest,
            snapshots,
            flow,
        },
        session_id,
        requests,
        warnings,
    })
}
