use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use darkscan_capture::fixture::{FixtureDriver, Site};
use serde_json::Value;

fn darkscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darkscan"))
        .args(args)
        .env_remove("DARKSCAN_WEBDRIVER_URL")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn capture_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../capture/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, count: usize, seed: u64) -> Output {
    darkscan(&["gen", "--count", &count.to_string(), "--dark-ratio", "0.5", "--seed", &seed.to_string(), "--out", s(dir)])
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_counts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&gen(&a, 10, 1)), 0);
    assert_eq!(code(&gen(&b, 10, 1)), 0);
    let m = manifest(&a);
    let items = m["items"].as_array().unwrap();
    assert_eq!(items.len(), 10);
    assert_eq!(items.iter().filter(|i| i["label"] == "dark").count(), 5);
    assert_eq!(m["provenance"]["seed"], 1);
    assert_eq!(read_tree(&a), read_tree(&b));
}

#[test]
fn gen_rejects_bad_arguments_and_unwritable_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("f");
    std::fs::write(&file, "x").unwrap();
    assert_eq!(code(&gen(&file.join("sub"), 4, 1)), 2);
    assert_eq!(code(&darkscan(&["gen", "--count", "0", "--out", s(tmp.path())])), 2);
    assert_eq!(code(&darkscan(&["gen", "--count", "3", "--dark-ratio", "1.5", "--out", s(tmp.path())])), 2);
}

#[test]
fn scan_exit_code_follows_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(tmp.path(), 12, 7)), 0);
    let m = manifest(tmp.path());
    for item in m["items"].as_array().unwrap() {
        let path = tmp.path().join(item["path"].as_str().unwrap());
        let report = tmp.path().join("report.json");
        let o = darkscan(&["scan", s(&path), "--out", s(&report)]);
        let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
        let high = r["findings"].as_array().unwrap().iter().filter(|f| f["severity"].as_u64().unwrap() >= 2).count();
        if item["label"] == "dark" {
            assert_eq!(code(&o), 3, "{path:?}");
            assert!(high > 0);
        } else {
            assert_eq!(code(&o), 0, "{path:?}");
            assert_eq!(high, 0);
        }
    }
}

#[test]
fn scan_input_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&darkscan(&["scan", s(&tmp.path().join("missing.json"))])), 2);
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"manifest\": {}}").unwrap();
    let o = darkscan(&["scan", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(!stderr(&o).is_empty());
}

#[test]
fn scan_options() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(tmp.path(), 2, 3)), 0);
    let m = manifest(tmp.path());
    let first = tmp.path().join(m["items"][0]["path"].as_str().unwrap());

    let o = darkscan(&["scan", s(&first), "--format", "summary"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("host: "));
    assert!(text.contains("verdict: "));
    assert_eq!(code(&darkscan(&["scan", s(&first), "--format", "xml"])), 2);

    let o = darkscan(&["scan", s(&first), "--timestamp", "2030-01-02T03:04:05Z"]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["generated_at"], "2030-01-02T03:04:05Z");

    assert_eq!(code(&darkscan(&["scan", s(&first), "--threshold", "dlp_min=high"])), 2);
    assert_eq!(code(&darkscan(&["scan", s(&first), "--threshold", "bogus=1"])), 2);
    let o = darkscan(&["scan", s(&first), "--threshold", "pis_extra_clicks=7"]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["ruleset"]["thresholds"]["pis_extra_clicks"], 7);

    let mut bundle: Value = serde_json::from_slice(&std::fs::read(&first).unwrap()).unwrap();
    bundle["surprise"] = Value::Bool(true);
    let extra = tmp.path().join("extra.json");
    std::fs::write(&extra, bundle.to_string()).unwrap();
    assert_eq!(code(&darkscan(&["scan", s(&extra)])), 2);
    assert_ne!(code(&darkscan(&["scan", s(&extra), "--lenient"])), 2);
}

#[test]
fn unreachable_classifier_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(tmp.path(), 2, 3)), 0);
    let m = manifest(tmp.path());
    let first = tmp.path().join(m["items"][0]["path"].as_str().unwrap());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/score");
    let o = darkscan(&["scan", s(&first), "--classifier-url", &url, "--classifier-timeout-ms", "500"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_pipeline_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    assert_eq!(code(&gen(&corpus, 40, 9)), 0);
    let mf = corpus.join("manifest.json");
    let run = |out: &Path| darkscan(&["eval", s(&mf), "--k", "5", "--seed", "42", "--out", s(out)]);
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    assert_eq!(code(&run(&a)), 0);
    assert_eq!(code(&run(&b)), 0);
    let strip = |p: &Path| {
        let mut v: Value = serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timing");
        v
    };
    let ra = strip(&a);
    assert_eq!(ra, strip(&b));
    assert_eq!(ra["folds"].as_array().unwrap().len(), 5);
    assert_eq!(ra["pooled"]["metrics"]["precision"], 1.0);
    assert_eq!(ra["pooled"]["metrics"]["recall"], 1.0);

    assert_eq!(code(&darkscan(&["eval", s(&mf), "--k", "30"])), 2);
    assert_eq!(code(&darkscan(&["eval", s(&tmp.path().join("none.json"))])), 2);
}

#[test]
fn rules_validate_cases() {
    let o = darkscan(&["rules-validate"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for line in text.lines().skip(1) {
        let n: usize = line.rsplit(": ").next().unwrap().parse().unwrap();
        assert!(n >= 1, "{line}");
    }

    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.yaml");
    std::fs::write(&empty, "").unwrap();
    let o = darkscan(&["rules-validate", s(&empty)]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));

    let bad = tmp.path().join("bad.yaml");
    std::fs::write(
        &bad,
        "categories:\n  - id: broken-regex\n    category: A\n    when:\n      text_matches: '(unclosed'\n",
    )
    .unwrap();
    let o = darkscan(&["rules-validate", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("broken-regex"));
}

#[test]
fn crawl_fixture_then_scan() {
    let tmp = tempfile::tempdir().unwrap();
    let driver = FixtureDriver::start(Site::load(&capture_fixture("fair-cancel.json")).unwrap()).unwrap();
    let bundle = tmp.path().join("bundle.json");
    let plan = capture_fixture("cancel-plan.json");
    let o = Command::new(env!("CARGO_BIN_EXE_darkscan"))
        .args(["crawl", "--plan", s(&plan), "--out", s(&bundle)])
        .env("DARKSCAN_WEBDRIVER_URL", driver.url())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b: Value = serde_json::from_slice(&std::fs::read(&bundle).unwrap()).unwrap();
    assert_eq!(b["flow"]["states"].as_array().unwrap().len(), 3);
    assert_eq!(code(&darkscan(&["scan", s(&bundle)])), 0);
    assert!(driver.open_sessions().is_empty());
}

#[test]
fn crawl_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = capture_fixture("cancel-plan.json");
    let out = tmp.path().join("b.json");

    assert_eq!(code(&darkscan(&["crawl", "--plan", s(&plan), "--out", s(&out)])), 2);

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let down = format!("http://127.0.0.1:{port}");
    assert_eq!(code(&darkscan(&["crawl", "--plan", s(&plan), "--out", s(&out), "--webdriver", &down])), 2);

    let mut site = Site::load(&capture_fixture("fair-cancel.json")).unwrap();
    site.pages.get_mut("/cancelled").unwrap().extract_delay_ms = 1500;
    let driver = FixtureDriver::start(site).unwrap();
    let mut p: Value = serde_json::from_str(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    p["timeout_ms"] = 300.into();
    let slow_plan = tmp.path().join("slow.json");
    std::fs::write(&slow_plan, p.to_string()).unwrap();
    let o = darkscan(&["crawl", "--plan", s(&slow_plan), "--out", s(&out), "--webdriver", driver.url()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let b: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(b["snapshots"].as_array().unwrap().len(), 2);
    assert_eq!(b["manifest"]["capture_errors"].as_array().unwrap().len(), 1);
    assert_eq!(code(&darkscan(&["scan", s(&out)])), 0);
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(code(&darkscan(&[])), 2);
    assert_eq!(code(&darkscan(&["frobnicate"])), 2);
    assert_eq!(code(&darkscan(&["--help"])), 0);
    assert_eq!(code(&darkscan(&["--version"])), 0);
}
