use std::thread;
use std::time::Duration;

use darkscan_core::text::{DeceptiveLanguageClassifier, RemoteClassifier};

/// Serves `n` requests, answering each with `status` and `body`.
fn serve(n: usize, status: u16, body: &'static str) -> (String, thread::JoinHandle<Vec<String>>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/score", server.server_addr().to_ip().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for mut req in server.incoming_requests().take(n) {
            let mut s = String::new();
            req.as_reader().read_to_string(&mut s).unwrap();
            seen.push(s);
            req.respond(tiny_http::Response::from_string(body).with_status_code(status)).unwrap();
        }
        seen
    });
    (url, handle)
}

#[test]
fn posts_tokens_and_reads_score() {
    let (url, handle) = serve(1, 200, r#"{"score": 0.82}"#);
    let c = RemoteClassifier::new(url, Duration::from_secs(5));
    let tokens = vec!["act".to_string(), "now".to_string()];
    assert_eq!(c.score(&tokens).unwrap(), 0.82);
    let sent: serde_json::Value = serde_json::from_str(&handle.join().unwrap()[0]).unwrap();
    assert_eq!(sent, serde_json::json!({"tokens": ["act", "now"]}));
}

#[test]
fn non_2xx_and_bad_payloads_are_unavailable() {
    let (url, _h) = serve(1, 503, "overloaded");
    let err = RemoteClassifier::new(url, Duration::from_secs(5)).score(&[]).unwrap_err();
    assert!(err.reason.contains("503"), "{err}");

    let (url, _h) = serve(1, 200, r#"{"score": 1.7}"#);
    assert!(RemoteClassifier::new(url, Duration::from_secs(5)).score(&[]).is_err());

    let (url, _h) = serve(1, 200, "not json");
    let err = RemoteClassifier::new(url.clone(), Duration::from_secs(5)).score(&[]).unwrap_err();
    assert_eq!(err.descriptor.version, url);
}

#[test]
fn timeout_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/score", listener.local_addr().unwrap());
    // accept and never answer
    let _h = thread::spawn(move || {
        let conn = listener.accept();
        thread::sleep(Duration::from_secs(3));
        drop(conn);
    });
    let err = RemoteClassifier::new(url, Duration::from_millis(300)).score(&[]).unwrap_err();
    assert!(!err.reason.is_empty());
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = RemoteClassifier::new(format!("http://127.0.0.1:{port}/score"), Duration::from_secs(2));
    assert!(c.score(&[]).is_err());
}
