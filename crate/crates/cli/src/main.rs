//! `darkscan`: scan snapshot bundles, crawl with WebDriver, generate and
//! evaluate synthetic corpora, and validate rule files.
//!
//! Exit codes: 0 success or benign verdict, 2 input or usage error, 3 dark
//! verdict, 4 partial capture.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use darkscan_capture::{run_plan, CaptureError, CapturePlan, WebDriverClient};
use darkscan_core::eval::{run_eval, write_corpus, LabeledCorpus, Provenance};
use darkscan_core::ingest::{load_snapshot_bundle, Strictness};
use darkscan_core::pipeline::Detector;
use darkscan_core::rules::{parse_rules, RuleSet};
use darkscan_core::scoring::{render_report, ReportFormat};
use darkscan_core::synth::generate_corpus;
use darkscan_core::text::RemoteClassifier;

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 2;
const EXIT_DARK: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "darkscan", version, about = "Rule-based dark-pattern detection for captured web pages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DetectorArgs {
    /// YAML rules file; the bundled rules are used when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Override one threshold, e.g. `--threshold dlp_min=0.8`. Repeatable.
    #[arg(long = "threshold", value_name = "NAME=VALUE")]
    thresholds: Vec<String>,
    /// Score text with an HTTP classifier instead of the lexicon model.
    #[arg(long, value_name = "URL")]
    classifier_url: Option<String>,
    #[arg(long, default_value_t = 5000, value_name = "MS")]
    classifier_timeout_ms: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Analyse a snapshot bundle. Exits 3 when the page verdict is dark.
    Scan {
        bundle: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json", value_parser = parse_format)]
        format: ReportFormat,
        /// Ignore unknown keys in the bundle.
        #[arg(long)]
        lenient: bool,
        /// Report timestamp (RFC 3339); defaults to the latest capture time.
        #[arg(long)]
        timestamp: Option<DateTime<Utc>>,
    },
    /// Run a capture plan through a WebDriver endpoint. Exits 4 on partial capture.
    Crawl {
        /// Start URL; overrides the plan's `url`.
        url: Option<String>,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "DARKSCAN_WEBDRIVER_URL")]
        webdriver: Option<String>,
    },
    /// Cross-validate the detector on a labelled corpus.
    Eval {
        manifest: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic labelled corpus.
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0.5)]
        dark_ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a rules file and summarise it; the bundled rules when omitted.
    RulesValidate { rules: Option<PathBuf> },
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

/// Failure carrying the exit code to use.
struct Fail(u8, String);

fn input_err(msg: impl std::fmt::Display) -> Fail {
    Fail(EXIT_INPUT, msg.to_string())
}

fn load_rules(path: Option<&Path>) -> Result<(RuleSet, bool), Fail> {
    let Some(path) = path else {
        return Ok((RuleSet::bundled(), false));
    };
    let text = std::fs::read_to_string(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let rules = parse_rules(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    Ok((rules, text.trim().is_empty()))
}

fn build_detector(args: &DetectorArgs) -> Result<Detector, Fail> {
    let (mut rules, empty) = load_rules(args.rules.as_deref())?;
    if empty {
        eprintln!("warning: rules file is empty; no category rules, default thresholds");
    }
    for t in &args.thresholds {
        rules.thresholds = rules.thresholds.with_override(t).map_err(input_err)?;
    }
    Ok(match &args.classifier_url {
        Some(url) => Detector::with_classifier(
            rules,
            Box::new(RemoteClassifier::new(url.clone(), Duration::from_millis(args.classifier_timeout_ms))),
        ),
        None => Detector::new(rules),
    })
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Fail> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| input_err(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| input_err(format!("cannot write to standard output: {e}"))),
    }
}

fn scan(
    bundle: &Path,
    detector: &DetectorArgs,
    out: Option<&Path>,
    format: ReportFormat,
    lenient: bool,
    timestamp: Option<DateTime<Utc>>,
) -> Result<u8, Fail> {
    let detector = build_detector(detector)?;
    let strictness = if lenient { Strictness::Lenient } else { Strictness::Strict };
    let bundle = load_snapshot_bundle(bundle, strictness).map_err(input_err)?;
    let report = detector.analyze_bundle(&bundle, timestamp).map_err(input_err)?;
    write_output(out, &render_report(&report, format))?;
    Ok(if report.page_verdict.is_dark() { EXIT_DARK } else { EXIT_OK })
}

fn crawl(url: Option<String>, plan: &Path, out: &Path, webdriver: Option<String>) -> Result<u8, Fail> {
    let endpoint = webdriver
        .ok_or_else(|| input_err("no WebDriver endpoint: pass --webdriver or set DARKSCAN_WEBDRIVER_URL"))?;
    let mut plan = CapturePlan::load(plan).map_err(input_err)?;
    if let Some(u) = url {
        plan.url = u;
        plan.validate().map_err(input_err)?;
    }
    let client = WebDriverClient::new(&endpoint, Duration::from_millis(plan.timeout_ms), plan.retries);
    let outcome = run_plan(&client, &plan).map_err(|e| match e {
        CaptureError::Plan(p) => input_err(p),
        CaptureError::Session(s) => input_err(s),
    })?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    write_output(Some(out), (outcome.bundle.to_json() + "\n").as_bytes())?;
    if outcome.is_partial() {
        for e in &outcome.bundle.manifest.capture_errors {
            eprintln!("capture error: {e}");
        }
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn eval(manifest: &Path, detector: &DetectorArgs, k: usize, seed: u64, out: Option<&Path>) -> Result<u8, Fail> {
    let detector = build_detector(detector)?;
    let (corpus, base) = LabeledCorpus::load(manifest).map_err(input_err)?;
    let run = run_eval(&corpus, &base, &detector, k, seed).map_err(input_err)?;
    for x in &run.exclusions {
        eprintln!("excluded {}: {}", x.id, x.error);
    }
    let text = serde_json::to_string_pretty(&run).expect("eval runs serialize") + "\n";
    write_output(out, text.as_bytes())?;
    Ok(EXIT_OK)
}

fn gen(count: usize, dark_ratio: f64, seed: u64, out: &Path) -> Result<u8, Fail> {
    let items = generate_corpus(count, dark_ratio, seed).map_err(input_err)?;
    let provenance = Provenance {
        generator: format!("darkscan-synth {}", env!("CARGO_PKG_VERSION")),
        seed,
        count,
        dark_ratio,
    };
    let corpus = write_corpus(out, &items, provenance).map_err(input_err)?;
    let dark = items.iter().filter(|i| i.dark).count();
    eprintln!(
        "wrote {} bundles ({dark} dark, {} benign) to {}",
        corpus.items.len(),
        items.len() - dark,
        out.display()
    );
    Ok(EXIT_OK)
}

fn rules_validate(path: Option<&Path>) -> Result<u8, Fail> {
    let (rules, empty) = load_rules(path)?;
    if empty {
        eprintln!("warning: rules file is empty; defaults applied");
    }
    let mut out = format!(
        "ruleset {}: {} category rules, {} role rules\n",
        rules.version,
        rules.categories.len(),
        rules.roles.len()
    );
    for (cat, n) in rules.rules_per_category() {
        out.push_str(&format!("  {cat} {}: {n}\n", cat.name()));
    }
    write_output(None, out.as_bytes())?;
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_OK });
        }
    };
    let result = match cli.command {
        Command::Scan {
            bundle,
            detector,
            out,
            format,
            lenient,
            timestamp,
        } => scan(&bundle, &detector, out.as_deref(), format, lenient, timestamp),
        Command::Crawl { url, plan, out, webdriver } => crawl(url, &plan, &out, webdriver),
        Command::Eval {
            manifest,
            detector,
            k,
            seed,
            out,
        } => eval(&manifest, &detector, k, seed, out.as_deref()),
        Command::Gen {
            count,
            dark_ratio,
            seed,
            out,
        } => gen(count, dark_ratio, seed, &out),
        Command::RulesValidate { rules } => rules_validate(rules.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
