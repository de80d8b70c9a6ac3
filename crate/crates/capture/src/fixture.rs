//! A local WebDriver-compatible endpoint that serves a simulated site.
//!
//! No browser is involved: the endpoint answers the extraction script from a
//! JSON site description, follows `href`s on click, and keeps a session
//! ledger so tests can check teardown.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::extract::{
    Extraction, RawColor, RawElement, RawMutation, RawPrompt, RawTiming, EXTRACT_MARKER, ID_OF_MARKER, SCROLL_MARKER,
};
use crate::webdriver::ELEMENT_KEY;

/// Moves an element when its owner is clicked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickMove {
    pub target: String,
    pub to: [f64; 4],
}

fn default_tag() -> String {
    "div".into()
}
fn default_fg() -> RawColor {
    RawColor::Rgb([0, 0, 0])
}
fn default_bg() -> RawColor {
    RawColor::Keyword("transparent".into())
}
fn one() -> f64 {
    1.0
}
fn visible() -> String {
    "visible".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteElement {
    pub id: String,
    #[serde(default = "default_tag")]
    pub tag: String,
    /// Defaults to the synthesized `body` root.
    #[serde(default)]
    pub parent: Option<String>,
    /// Page coordinates.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub text: String,
    #[serde(default = "default_fg")]
    pub fg: RawColor,
    #[serde(default = "default_bg")]
    pub bg: RawColor,
    #[serde(default = "one")]
    pub opacity: f64,
    #[serde(default)]
    pub z: i32,
    #[serde(default = "visible")]
    pub display: String,
    /// Defaults to true for links, buttons and anything with an `href`.
    #[serde(default)]
    pub interactive: Option<bool>,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
    #[serde(default)]
    pub href: Option<String>,
    #[serde(default)]
    pub on_click_move: Option<ClickMove>,
}

impl SiteElement {
    fn is_interactive(&self) -> bool {
        self.interactive
            .unwrap_or(self.href.is_some() || matches!(self.tag.as_str(), "a" | "button" | "input" | "select"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SitePrompt {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub at_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SitePage {
    /// Reported server latency of the page load.
    #[serde(default)]
    pub latency_ms: f64,
    /// Real delay before the endpoint answers extraction on this page.
    #[serde(default)]
    pub extract_delay_ms: u64,
    #[serde(default)]
    pub elements: Vec<SiteElement>,
    #[serde(default)]
    pub prompts: Vec<SitePrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    #[serde(default = "default_viewport")]
    pub viewport: [f64; 2],
    pub pages: BTreeMap<String, SitePage>,
}

fn default_viewport() -> [f64; 2] {
    [1280.0, 720.0]
}

impl Site {
    pub fn load(path: &Path) -> Result<Site, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Misbehaviours for error-path tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// New-session replies are not JSON.
    MalformedSession,
    /// New-session replies with `session not created`.
    RejectCapabilities,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedRequest {
    pub method: String,
    pub path: String,
    pub at: Instant,
}

struct SessionState {
    url: String,
    origin_ms: f64,
    loaded: Instant,
    boxes: HashMap<String, [f64; 4]>,
    timing: Vec<RawTiming>,
    mutations: Vec<RawMutation>,
    prompts: Vec<RawPrompt>,
    scroll_y: f64,
}

impl SessionState {
    fn since_load(&self) -> f64 {
        self.loaded.elapsed().as_secs_f64() * 1000.0
    }
}

struct State {
    site: Site,
    fault: Fault,
    sessions: HashMap<String, SessionState>,
    created: Vec<String>,
    deleted: Vec<String>,
    log: Vec<LoggedRequest>,
    next: u64,
}

fn epoch_ms() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64() * 1000.0).unwrap_or(0.0)
}

fn path_of(url: &str) -> String {
    url::Url::parse(url).map(|u| u.path().to_owned()).unwrap_or_else(|_| url.to_owned())
}

impl State {
    fn page(&self, url: &str) -> Option<&SitePage> {
        self.site.pages.get(&path_of(url))
    }

    fn navigate(&mut self, sid: &str, url: &str) {
        let latency = self.page(url).map_or(0.0, |p| p.latency_ms);
        let prompts: Vec<RawPrompt> = self
            .page(url)
            .map(|p| {
                p.prompts
                    .iter()
                    .map(|q| RawPrompt {
                        t: latency + q.at_ms,
                        id: q.id.clone(),
                        text: q.text.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        let s = self.sessions.get_mut(sid).expect("caller checked");
        s.url = url.to_owned();
        s.origin_ms = epoch_ms();
        s.loaded = Instant::now();
        s.boxes.clear();
        s.mutations.clear();
        s.scroll_y = 0.0;
        s.timing = vec![RawTiming {
            name: url.to_owned(),
            start: 0.0,
            latency,
        }];
        s.prompts = prompts;
    }

    fn element_box(&self, sid: &str, el: &SiteElement) -> [f64; 4] {
        self.sessions[sid].boxes.get(&el.id).copied().unwrap_or(el.bbox)
    }

    fn extraction(&mut self, sid: &str, full: bool) -> Extraction {
        let url = self.sessions[sid].url.clone();
        let vp = self.site.viewport;
        let mut elements = Vec::new();
        if full {
            let scroll = self.sessions[sid].scroll_y;
            elements.push(RawElement {
                id: "body".into(),
                parent: None,
                tag: "body".into(),
                bbox: [0.0, -scroll, vp[0], vp[1]],
                fg: RawColor::Rgb([0, 0, 0]),
                bg: RawColor::Rgb([255, 255, 255]),
                opacity: 1.0,
                z: 0,
                display: "visible".into(),
                text: String::new(),
                interactive: false,
                attrs: BTreeMap::new(),
            });
            for el in self.page(&url).map(|p| p.elements.clone()).unwrap_or_default() {
                let b = self.element_box(sid, &el);
                elements.push(RawElement {
                    id: el.id.clone(),
                    parent: Some(el.parent.clone().unwrap_or_else(|| "body".into())),
                    tag: el.tag.clone(),
                    bbox: [b[0], b[1] - scroll, b[2], b[3]],
                    fg: el.fg.clone(),
                    bg: el.bg.clone(),
                    opacity: el.opacity,
                    z: el.z,
                    display: el.display.clone(),
                    text: el.text.clone(),
                    interactive: el.is_interactive(),
                    attrs: el.attrs.clone(),
                });
            }
        }
        let s = self.sessions.get_mut(sid).expect("caller checked");
        Extraction {
            url,
            viewport: vp,
            time_origin: s.origin_ms,
            timing: std::mem::take(&mut s.timing),
            mutations: std::mem::take(&mut s.mutations),
            prompts: std::mem::take(&mut s.prompts),
            elements,
        }
    }

    fn click(&mut self, sid: &str, id: &str) -> Result<(), Reply> {
        let url = self.sessions[sid].url.clone();
        let el = self
            .page(&url)
            .and_then(|p| p.elements.iter().find(|e| e.id == id))
            .cloned()
            .ok_or_else(|| Reply::error(404, "stale element reference", id))?;
        if let Some(mv) = &el.on_click_move {
            let target = self
                .page(&url)
                .and_then(|p| p.elements.iter().find(|e| e.id == mv.target))
                .cloned()
                .ok_or_else(|| Reply::error(404, "no such element", &mv.target))?;
            let old = self.element_box(sid, &target);
            let s = self.sessions.get_mut(sid).expect("caller checked");
            let t = s.since_load();
            s.mutations.push(RawMutation {
                t,
                id: mv.target.clone(),
                old,
                new: mv.to,
            });
            s.boxes.insert(mv.target.clone(), mv.to);
        }
        if let Some(href) = &el.href {
            let next = url::Url::parse(&url)
                .and_then(|u| u.join(href))
                .map(String::from)
                .unwrap_or_else(|_| href.clone());
            self.navigate(sid, &next);
        }
        Ok(())
    }
}

struct Reply {
    status: u16,
    body: String,
}

impl Reply {
    fn ok(value: Value) -> Self {
        Self {
            status: 200,
            body: json!({ "value": value }).to_string(),
        }
    }

    fn error(status: u16, error: &str, message: &str) -> Self {
        Self {
            status,
            body: json!({ "value": { "error": error, "message": message } }).to_string(),
        }
    }
}

/// A running fixture endpoint. Stops when dropped.
pub struct FixtureDriver {
    server: Arc<tiny_http::Server>,
    state: Arc<Mutex<State>>,
    url: String,
    acceptor: Option<JoinHandle<()>>,
}

impl FixtureDriver {
    pub fn start(site: Site) -> std::io::Result<Self> {
        Self::with_fault(site, Fault::None)
    }

    pub fn with_fault(site: Site, fault: Fault) -> std::io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let port = server.server_addr().to_ip().map(|a| a.port()).unwrap_or_default();
        let server = Arc::new(server);
        let state = Arc::new(Mutex::new(State {
            site,
            fault,
            sessions: HashMap::new(),
            created: Vec::new(),
            deleted: Vec::new(),
            log: Vec::new(),
            next: 0,
        }));
        let acceptor = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    let state = Arc::clone(&state);
                    std::thread::spawn(move || serve(&state, request));
                }
            })
        };
        Ok(Self {
            server,
            state,
            url: format!("http://127.0.0.1:{port}"),
            acceptor: Some(acceptor),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Sessions created and not yet deleted.
    pub fn open_sessions(&self) -> Vec<String> {
        let st = self.state.lock().expect("fixture state");
        st.created.iter().filter(|id| !st.deleted.contains(id)).cloned().collect()
    }

    pub fn created_sessions(&self) -> Vec<String> {
        self.state.lock().expect("fixture state").created.clone()
    }

    pub fn request_log(&self) -> Vec<LoggedRequest> {
        self.state.lock().expect("fixture state").log.clone()
    }
}

impl Drop for FixtureDriver {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn serve(state: &Mutex<State>, mut request: tiny_http::Request) {
    let method = request.method().as_str().to_owned();
    let path = request.url().to_owned();
    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let reply = handle(state, &method, &path, &body);
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json; charset=utf-8").expect("static header");
    let response = tiny_http::Response::from_string(reply.body)
        .with_status_code(reply.status)
        .with_header(header);
    let _ = request.respond(response);
}

fn handle(state: &Mutex<State>, method: &str, path: &str, body: &str) -> Reply {
    let mut st = state.lock().expect("fixture state");
    st.log.push(LoggedRequest {
        method: method.to_owned(),
        path: path.to_owned(),
        at: Instant::now(),
    });
    let args: Value = serde_json::from_str(body).unwrap_or(Value::Null);
    let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
    match (method, parts.as_slice()) {
        ("POST", ["session"]) => match st.fault {
            Fault::MalformedSession => Reply {
                status: 200,
                body: "{\"value\": {\"sessionId\": oops".into(),
            },
            Fault::RejectCapabilities => Reply::error(500, "session not created", "no matching capabilities"),
            Fault::None => {
                st.next += 1;
                let id = format!("fixture-{}", st.next);
                st.created.push(id.clone());
                st.sessions.insert(
                    id.clone(),
                    SessionState {
                        url: "about:blank".into(),
                        origin_ms: epoch_ms(),
                        loaded: Instant::now(),
                        boxes: HashMap::new(),
                        timing: Vec::new(),
                        mutations: Vec::new(),
                        prompts: Vec::new(),
                        scroll_y: 0.0,
                    },
                );
                Reply::ok(json!({ "sessionId": id, "capabilities": { "browserName": "fixture" } }))
            }
        },
        (_, ["session", sid, ..]) if !st.sessions.contains_key(*sid) => Reply::error(404, "invalid session id", sid),
        ("DELETE", ["session", sid]) => {
            st.sessions.remove(*sid);
            st.deleted.push((*sid).to_owned());
            Reply::ok(Value::Null)
        }
        ("POST", ["session", _, "timeouts"]) | ("POST", ["session", _, "actions"]) => Reply::ok(Value::Null),
        ("GET", ["session", sid, "url"]) => Reply::ok(json!(st.sessions[*sid].url)),
        ("POST", ["session", sid, "url"]) => match args.get("url").and_then(Value::as_str) {
            Some(url) => {
                st.navigate(sid, url);
                Reply::ok(Value::Null)
            }
            None => Reply::error(400, "invalid argument", "missing url"),
        },
        ("POST", ["session", sid, "element"]) => {
            let selector = args.get("value").and_then(Value::as_str).unwrap_or_default();
            let url = st.sessions[*sid].url.clone();
            let found = selector
                .strip_prefix('#')
                .filter(|id| st.page(&url).is_some_and(|p| p.elements.iter().any(|e| e.id == *id)));
            match found {
                Some(id) => Reply::ok(json!({ ELEMENT_KEY: format!("el-{id}") })),
                None => Reply::error(404, "no such element", selector),
            }
        }
        ("POST", ["session", sid, "element", el, "click"]) => {
            let id = el.strip_prefix("el-").unwrap_or(el);
            match st.click(sid, id) {
                Ok(()) => Reply::ok(Value::Null),
                Err(r) => r,
            }
        }
        ("POST", ["session", sid, "execute", "sync"]) => {
            let script = args.get("script").and_then(Value::as_str).unwrap_or_default();
            let a = args.get("args").cloned().unwrap_or(Value::Null);
            if script.contains(EXTRACT_MARKER) {
                let full = a.get(0).and_then(Value::as_str) != Some("events");
                let url = st.sessions[*sid].url.clone();
                let delay = st.page(&url).map_or(0, |p| p.extract_delay_ms);
                if delay > 0 {
                    drop(st);
                    std::thread::sleep(Duration::from_millis(delay));
                    st = state.lock().expect("fixture state");
                    if !st.sessions.contains_key(*sid) {
                        return Reply::error(404, "invalid session id", sid);
                    }
                }
                let ex = st.extraction(sid, full);
                Reply::ok(serde_json::to_value(ex).expect("extraction serializes"))
            } else if script.contains(ID_OF_MARKER) {
                let el = a.get(0).and_then(|e| e.get(ELEMENT_KEY)).and_then(Value::as_str).unwrap_or_default();
                Reply::ok(json!(el.strip_prefix("el-").unwrap_or(el)))
            } else if script.contains(SCROLL_MARKER) {
                let dy = a.get(0).and_then(Value::as_f64).unwrap_or(0.0);
                let s = st.sessions.get_mut(*sid).expect("checked above");
                s.scroll_y = (s.scroll_y + dy).max(0.0);
                Reply::ok(Value::Null)
            } else {
                Reply::error(500, "javascript error", "fixture endpoint only runs darkscan scripts")
            }
        }
        _ => Reply::error(404, "unknown command", path),
    }
}
