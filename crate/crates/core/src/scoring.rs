//! Evidence fusion into severity-scored findings, and the report surface.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::heuristics::{HeuristicReadout, PathReadout};
use crate::ingest::{Manifest, SnapshotBundle};
use crate::rules::{Category, RuleSet, ThresholdProfile};
use crate::taxonomy::Candidate;
use crate::temporal::TemporalSignal;
use crate::text::{ClassifierDescriptor, TextReadout};

pub const REPORT_VERSION: &str = "1.0";
pub const ENGINE_NAME: &str = "darkscan";
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MAX_SEVERITY: u8 = 3;
/// Lowest severity that makes a page verdict dark.
pub const DARK_SEVERITY: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticFlag {
    Salience,
    PathInterference,
    Escape,
    Text,
}

/// Every readout that touched a candidate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub matched_rule_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heuristics: Option<HeuristicReadout>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub text: Vec<TextReadout>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathReadout>,
}

impl Evidence {
    pub fn static_flags(&self) -> BTreeSet<StaticFlag> {
        let mut flags = BTreeSet::new();
        if let Some(h) = &self.heuristics {
            if h.salience_flag {
                flags.insert(StaticFlag::Salience);
            }
            if h.escape_flag {
                flags.insert(StaticFlag::Escape);
            }
        }
        if self.text.iter().any(|t| t.text_flag) {
            flags.insert(StaticFlag::Text);
        }
        if self.paths.iter().any(|p| p.pis_flag) {
            flags.insert(StaticFlag::PathInterference);
        }
        flags
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub snapshot_id: String,
    pub element_id: String,
    pub categories: BTreeSet<Category>,
    pub severity: u8,
    pub static_flags: BTreeSet<StaticFlag>,
    pub temporal_signals: Vec<TemporalSignal>,
    pub evidence: Evidence,
}

/// `min(3, 1 + [any static flag] + #signals)`.
pub fn severity(static_flag_count: usize, signal_count: usize) -> u8 {
    let raw = 1 + usize::from(static_flag_count > 0) + signal_count;
    raw.min(MAX_SEVERITY as usize) as u8
}

pub fn score_finding(candidate: &Candidate, evidence: Evidence, temporal_signals: Vec<TemporalSignal>) -> Finding {
    let static_flags = evidence.static_flags();
    Finding {
        snapshot_id: candidate.snapshot_id.clone(),
        element_id: candidate.element_id.clone(),
        categories: candidate.categories.clone(),
        severity: severity(static_flags.len(), temporal_signals.len()),
        static_flags,
        temporal_signals,
        evidence,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Benign,
    Dark,
}

impl Verdict {
    pub fn is_dark(self) -> bool {
        self == Verdict::Dark
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineInfo {
    pub name: String,
    pub version: String,
    pub classifier: ClassifierDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesetInfo {
    pub version: String,
    pub thresholds: ThresholdProfile,
}

/// A temporal signal on an element outside the candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnattributedSignal {
    pub snapshot_id: String,
    pub signal: TemporalSignal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: String,
    pub generated_at: DateTime<Utc>,
    pub engine: EngineInfo,
    pub ruleset: RulesetInfo,
    pub manifest: Manifest,
    pub page_verdict: Verdict,
    pub max_severity: u8,
    pub category_counts: BTreeMap<Category, usize>,
    pub findings: Vec<Finding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path_readouts: Vec<PathReadout>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unattributed_signals: Vec<UnattributedSignal>,
}

pub struct ReportConfig<'a> {
    pub rules: &'a RuleSet,
    pub classifier: ClassifierDescriptor,
    /// Fixed timestamp for reproducible output; defaults to the latest capture time.
    pub timestamp: Option<DateTime<Utc>>,
}

pub fn assemble_report(
    bundle: &SnapshotBundle,
    mut findings: Vec<Finding>,
    path_readouts: Vec<PathReadout>,
    unattributed_signals: Vec<UnattributedSignal>,
    config: &ReportConfig<'_>,
) -> Report {
    findings.sort_by(|a, b| (&a.snapshot_id, &a.element_id).cmp(&(&b.snapshot_id, &b.element_id)));
    let max_severity = findings.iter().map(|f| f.severity).max().unwrap_or(0);
    let mut category_counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    for f in &findings {
        for c in &f.categories {
            *category_counts.entry(*c).or_default() += 1;
        }
    }
    let generated_at = config
        .timestamp
        .or_else(|| bundle.snapshots.iter().map(|s| s.captured_at).max())
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    Report {
        report_version: REPORT_VERSION.into(),
        generated_at,
        engine: EngineInfo {
            name: ENGINE_NAME.into(),
            version: ENGINE_VERSION.into(),
            classifier: config.classifier.clone(),
        },
        ruleset: RulesetInfo {
            version: config.rules.version.clone(),
            thresholds: config.rules.thresholds.clone(),
        },
        manifest: bundle.manifest.clone(),
        page_verdict: if max_severity >= DARK_SEVERITY { Verdict::Dark } else { Verdict::Benign },
        max_severity,
        category_counts,
        findings,
        path_readouts,
        unattributed_signals,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Summary,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "summary" => Ok(ReportFormat::Summary),
            other => Err(format!("unknown format `{other}` (expected json or summary)")),
        }
    }
}

pub fn render_report(report: &Report, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("reports always serialize");
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Summary => render_summary(report).into_bytes(),
    }
}

fn render_summary(report: &Report) -> String {
    let mut out = String::new();
    let verdict = match report.page_verdict {
        Verdict::Dark => "DARK",
        Verdict::Benign => "benign",
    };
    let _ = writeln!(out, "host: {}", report.manifest.host);
    let _ = writeln!(out, "verdict: {verdict} (max severity {})", report.max_severity);
    let n = report.findings.len();
    let _ = writeln!(out, "{n} finding{}", if n == 1 { "" } else { "s" });
    let mut ordered: Vec<&Finding> = report.findings.iter().collect();
    ordered.sort_by(|a, b| b.severity.cmp(&a.severity));
    for f in ordered {
        let cats: Vec<&str> = f.categories.iter().map(|c| c.name()).collect();
        let flags: Vec<String> = f
            .static_flags
            .iter()
            .map(|s| serde_json::to_value(s).unwrap().as_str().unwrap().to_owned())
            .chain(f.temporal_signals.iter().map(|s| s.kind().to_owned()))
            .collect();
        let _ = writeln!(
            out,
            "  [{}] {}/{} {} {}",
            f.severity,
            f.snapshot_id,
            f.element_id,
            cats.join(","),
            if flags.is_empty() { "(taxonomy only)".to_owned() } else { flags.join(",") }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::*;
    use crate::temporal::SignalEvidence;
    use proptest::prelude::*;

    fn cand(id: &str) -> Candidate {
        Candidate {
            element_id: id.into(),
            snapshot_id: "s0".into(),
            categories: [Category::A].into(),
            matched_rule_ids: vec!["r".into()],
        }
    }

    fn signal(t: u64) -> TemporalSignal {
        TemporalSignal {
            t_ms: t,
            evidence: SignalEvidence::Relocation {
                mutation_index: 1,
                input_index: 0,
                element_id: "x".into(),
                distance_px: 200.0,
                distance_frac: 0.136,
            },
        }
    }

    fn escape_evidence() -> Evidence {
        Evidence {
            heuristics: Some(HeuristicReadout {
                element_id: "x".into(),
                salience: 0.0,
                salience_flag: false,
                escape_opacity: 0.1,
                off_viewport: false,
                escape_flag: true,
            }),
            ..Evidence::default()
        }
    }

    fn text_evidence() -> Evidence {
        Evidence {
            text: vec![TextReadout {
                block_id: "b".into(),
                element_id: "x".into(),
                dlp: 0.9,
                polarity: -0.5,
                urgency_density: 0.0,
                text_flag: true,
            }],
            ..Evidence::default()
        }
    }

    #[test]
    fn severity_examples() {
        assert_eq!(score_finding(&cand("x"), Evidence::default(), vec![]).severity, 1);
        let f = score_finding(&cand("x"), escape_evidence(), vec![signal(1)]);
        assert_eq!(f.severity, 3);
        assert_eq!(f.static_flags, [StaticFlag::Escape].into());
        let f = score_finding(&cand("x"), text_evidence(), vec![signal(1), signal(2), signal(3)]);
        assert_eq!(f.severity, 3);
        assert_eq!(score_finding(&cand("x"), escape_evidence(), vec![]).severity, 2);
    }

    fn bundle() -> SnapshotBundle {
        SnapshotBundle {
            manifest: Manifest::new("shop.example"),
            snapshots: vec![snapshot(vec![root()])],
            flow: None,
        }
    }

    fn report(findings: Vec<Finding>) -> Report {
        let rules = RuleSet::default();
        let config = ReportConfig {
            rules: &rules,
            classifier: ClassifierDescriptor { name: "t".into(), version: "0".into() },
            timestamp: None,
        };
        assemble_report(&bundle(), findings, vec![], vec![], &config)
    }

    #[test]
    fn verdict_threshold() {
        let empty = report(vec![]);
        assert_eq!(empty.page_verdict, Verdict::Benign);
        assert!(empty.findings.is_empty());
        assert_eq!(empty.generated_at, bundle().snapshots[0].captured_at);
        assert_eq!(report(vec![score_finding(&cand("x"), Evidence::default(), vec![])]).page_verdict, Verdict::Benign);
        let dark = report(vec![score_finding(&cand("x"), escape_evidence(), vec![signal(0)])]);
        assert_eq!(dark.page_verdict, Verdict::Dark);
        assert_eq!(dark.category_counts[&Category::A], 1);
        assert_eq!(dark.category_counts[&Category::E], 0);
    }

    #[test]
    fn findings_sorted_and_json_round_trips() {
        let r = report(vec![
            score_finding(&cand("z"), Evidence::default(), vec![]),
            score_finding(&cand("a"), escape_evidence(), vec![signal(4)]),
        ]);
        assert_eq!(r.findings[0].element_id, "a");
        let bytes = render_report(&r, ReportFormat::Json);
        let back: Report = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, r);
        assert_eq!(render_report(&back, ReportFormat::Json), bytes);
    }

    #[test]
    fn summary_orders_by_severity() {
        let empty = String::from_utf8(render_report(&report(vec![]), ReportFormat::Summary)).unwrap();
        assert!(empty.lines().any(|l| l == "0 findings"));

        let r = report(vec![
            score_finding(&cand("a"), Evidence::default(), vec![]),
            score_finding(&cand("b"), escape_evidence(), vec![signal(1)]),
            score_finding(&cand("c"), text_evidence(), vec![]),
        ]);
        let text = String::from_utf8(render_report(&r, ReportFormat::Summary)).unwrap();
        let sev: Vec<u8> = text
            .lines()
            .filter_map(|l| l.trim_start().strip_prefix('['))
            .map(|l| l[..1].parse().unwrap())
            .collect();
        let mut oracle = sev.clone();
        oracle.sort_by(|a, b| b.cmp(a));
        assert_eq!(sev, [3, 2, 1]);
        assert_eq!(sev, oracle);
        assert!("xml".parse::<ReportFormat>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn severity_monotone_and_bounded(flags in 0usize..4, signals in 0usize..6) {
            let s = severity(flags, signals);
            prop_assert!((1..=3).contains(&s));
            prop_assert!(severity(flags, signals + 1) >= s);
            prop_assert!(severity(flags + 1, signals) >= s);
            prop_assert_eq!(s as usize, (1 + usize::from(flags > 0) + signals).min(3));
        }

        #[test]
        fn adding_a_signal_never_lowers_a_finding(n in 0usize..5, escape in any::<bool>()) {
            let ev = if escape { escape_evidence() } else { Evidence::default() };
            let sigs: Vec<_> = (0..n as u64).map(signal).collect();
            let before = score_finding(&cand("x"), ev.clone(), sigs.clone());
            let mut more = sigs;
            more.push(signal(99));
            prop_assert!(score_finding(&cand("x"), ev, more).severity >= before.severity);
        }
    }
}
