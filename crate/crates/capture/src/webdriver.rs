//! Minimal W3C WebDriver client over HTTP + JSON.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

/// Key under which W3C endpoints return element references.
pub const ELEMENT_KEY: &str = "element-6066-11e4-a52e-4f735466cecf";

#[derive(Debug, Error)]
pub enum WebDriverError {
    #[error("cannot connect to WebDriver endpoint {endpoint}: {reason}")]
    Connection { endpoint: String, reason: String },
    #[error("WebDriver endpoint rejected the session ({error}): {message}")]
    Rejected { error: String, message: String, body: String },
    #[error("protocol error: {reason}; payload: {payload}")]
    Protocol { reason: String, payload: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("WebDriver error `{error}` (HTTP {status}): {message}")]
    Command { status: u16, error: String, message: String },
}

impl WebDriverError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, WebDriverError::Timeout(_)) || matches!(self, WebDriverError::Command { error, .. } if error == "timeout" || error == "script timeout")
    }
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_owned()
    } else {
        s.chars().take(n).collect::<String>() + "…"
    }
}

#[derive(Debug, Clone, Copy)]
enum Method {
    Get,
    Post,
    Delete,
}

pub struct WebDriverClient {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
}

impl WebDriverClient {
    pub fn new(endpoint: &str, timeout: Duration, retries: u32) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.trim_end_matches('/').to_owned(),
            agent,
            retries,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn request(&self, method: Method, path: &str, body: Option<&Value>) -> Result<(u16, String), WebDriverError> {
        let url = format!("{}{}", self.endpoint, path);
        let result = match method {
            Method::Get => self.agent.get(&url).call(),
            Method::Delete => self.agent.delete(&url).call(),
            Method::Post => {
                let text = body.map_or_else(|| "{}".to_owned(), Value::to_string);
                self.agent.post(&url).content_type("application/json").send(text.as_str())
            }
        };
        let mut resp = result.map_err(|e| self.transport_error(e))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| self.transport_error(e))?;
        Ok((status, text))
    }

    fn transport_error(&self, e: ureq::Error) -> WebDriverError {
        match e {
            ureq::Error::Timeout(t) => WebDriverError::Timeout(t.to_string()),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => WebDriverError::Timeout(io.to_string()),
            ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::Io(_) | ureq::Error::BadUri(_) => {
                WebDriverError::Connection {
                    endpoint: self.endpoint.clone(),
                    reason: e.to_string(),
                }
            }
            other => WebDriverError::Protocol {
                reason: other.to_string(),
                payload: String::new(),
            },
        }
    }

    /// Sends a command and unwraps the `value` member of the reply.
    fn command(&self, method: Method, path: &str, body: Option<&Value>) -> Result<Value, WebDriverError> {
        let (status, text) = self.request(method, path, body)?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| WebDriverError::Protocol {
            reason: format!("malformed JSON from {path}: {e}"),
            payload: truncate(&text, 300),
        })?;
        let Some(value) = doc.get("value") else {
            return Err(WebDriverError::Protocol {
                reason: format!("reply to {path} has no `value` member"),
                payload: truncate(&text, 300),
            });
        };
        if (200..300).contains(&status) {
            return Ok(value.clone());
        }
        let error = value.get("error").and_then(Value::as_str).unwrap_or("unknown error").to_owned();
        let message = value.get("message").and_then(Value::as_str).unwrap_or_default().to_owned();
        Err(WebDriverError::Command { status, error, message })
    }

    /// Opens a session, retrying connection failures up to the configured count.
    pub fn new_session(&self, capabilities: &Value) -> Result<Session<'_>, WebDriverError> {
        let body = json!({ "capabilities": capabilities });
        let mut attempt = 0;
        loop {
            match self.command(Method::Post, "/session", Some(&body)) {
                Ok(value) => {
                    let id = value.get("sessionId").and_then(Value::as_str).ok_or_else(|| WebDriverError::Protocol {
                        reason: "new-session reply lacks sessionId".into(),
                        payload: truncate(&value.to_string(), 300),
                    })?;
                    return Ok(Session {
                        client: self,
                        id: id.to_owned(),
                        closed: false,
                    });
                }
                Err(WebDriverError::Connection { .. }) if attempt < self.retries => {
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
                }
                Err(WebDriverError::Command { status, error, message }) => {
                    return Err(WebDriverError::Rejected {
                        body: format!("HTTP {status}: {error}: {message}"),
                        error,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Headless capabilities understood by the common browser drivers.
pub fn default_capabilities(viewport: (u32, u32)) -> Value {
    let size = format!("--window-size={},{}", viewport.0, viewport.1);
    json!({
        "alwaysMatch": {
            "goog:chromeOptions": { "args": ["--headless=new", size] },
            "moz:firefoxOptions": { "args": ["-headless"] },
            "ms:edgeOptions": { "args": ["--headless=new", size] }
        }
    })
}

/// A live session. Deleted on drop unless already closed.
pub struct Session<'c> {
    client: &'c WebDriverClient,
    id: String,
    closed: bool,
}

impl Session<'_> {
    pub fn id(&self) -> &str {
        &self.id
    }

    fn path(&self, rest: &str) -> String {
        format!("/session/{}{}", self.id, rest)
    }

    fn post(&self, rest: &str, body: Value) -> Result<Value, WebDriverError> {
        self.client.command(Method::Post, &self.path(rest), Some(&body))
    }

    pub fn set_timeouts(&self, script_ms: u64, page_load_ms: u64) -> Result<(), WebDriverError> {
        self.post("/timeouts", json!({ "script": script_ms, "pageLoad": page_load_ms, "implicit": 0 }))
            .map(drop)
    }

    pub fn navigate(&self, url: &str) -> Result<(), WebDriverError> {
        self.post("/url", json!({ "url": url })).map(drop)
    }

    pub fn current_url(&self) -> Result<String, WebDriverError> {
        let v = self.client.command(Method::Get, &self.path("/url"), None)?;
        v.as_str().map(str::to_owned).ok_or_else(|| WebDriverError::Protocol {
            reason: "current URL is not a string".into(),
            payload: v.to_string(),
        })
    }

    pub fn execute(&self, script: &str, args: Vec<Value>) -> Result<Value, WebDriverError> {
        self.post("/execute/sync", json!({ "script": script, "args": args }))
    }

    /// Element reference for a CSS selector.
    pub fn find_css(&self, selector: &str) -> Result<String, WebDriverError> {
        let v = self.post("/element", json!({ "using": "css selector", "value": selector }))?;
        v.get(ELEMENT_KEY)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| WebDriverError::Protocol {
                reason: format!("find-element reply for `{selector}` lacks an element reference"),
                payload: v.to_string(),
            })
    }

    pub fn click(&self, element: &str) -> Result<(), WebDriverError> {
        self.post(&format!("/element/{element}/click"), json!({})).map(drop)
    }

    pub fn move_pointer(&self, x: i64, y: i64) -> Result<(), WebDriverError> {
        let actions = json!({ "actions": [{
            "type": "pointer",
            "id": "mouse",
            "parameters": { "pointerType": "mouse" },
            "actions": [{ "type": "pointerMove", "duration": 100, "x": x, "y": y, "origin": "viewport" }]
        }]});
        self.post("/actions", actions).map(drop)
    }

    pub fn element_arg(element: &str) -> Value {
        json!({ ELEMENT_KEY: element })
    }

    /// Ends the session.
    pub fn delete(mut self) -> Result<(), WebDriverError> {
        self.closed = true;
        self.client.command(Method::Delete, &self.path(""), None).map(drop)
    }
}

impl Drop for Session<'_> {
    fn drop(&mut self) {
        if !self.closed {
            let _ = self.client.command(Method::Delete, &self.path(""), None);
        }
    }
}
