//! End-to-end analysis of a snapshot bundle.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::heuristics::{heuristic_readouts, path_interference, salience_flags, HeuristicError, PathReadout};
use crate::ingest::SnapshotBundle;
use crate::model::{PageSnapshot, Role, SnapshotIndex};
use crate::rules::{Category, RuleSet};
use crate::scoring::{assemble_report, score_finding, Evidence, Finding, Report, ReportConfig, UnattributedSignal};
use crate::taxonomy::{candidate_set, infer_roles, with_roles};
use crate::temporal::detect_all;
use crate::text::{ClassifierUnavailable, DeceptiveLanguageClassifier, LexiconClassifier, TextAnalyzer};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Classifier(#[from] ClassifierUnavailable),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
}

pub struct Detector {
    rules: RuleSet,
    classifier: Box<dyn DeceptiveLanguageClassifier>,
}

impl Detector {
    /// Detector using the rule set's own lexicon classifier.
    pub fn new(rules: RuleSet) -> Self {
        let classifier = LexiconClassifier::from_lexicons(&rules.lexicons, &rules.version);
        Self {
            rules,
            classifier: Box::new(classifier),
        }
    }

    pub fn with_classifier(rules: RuleSet, classifier: Box<dyn DeceptiveLanguageClassifier>) -> Self {
        Self { rules, classifier }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn analyze_bundle(&self, bundle: &SnapshotBundle, timestamp: Option<DateTime<Utc>>) -> Result<Report, AnalysisError> {
        let paths = match &bundle.flow {
            Some(flow) if !flow.task_pairs.is_empty() => path_interference(flow, &self.rules.thresholds)?,
            _ => Vec::new(),
        };
        let mut findings = Vec::new();
        let mut unattributed = Vec::new();
        for snapshot in &bundle.snapshots {
            let (f, u) = self.analyze_snapshot(snapshot, &paths)?;
            findings.extend(f);
            unattributed.extend(u);
        }
        let config = ReportConfig {
            rules: &self.rules,
            classifier: self.classifier.descriptor(),
            timestamp,
        };
        Ok(assemble_report(bundle, findings, paths, unattributed, &config))
    }

    fn analyze_snapshot(
        &self,
        raw: &PageSnapshot,
        paths: &[PathReadout],
    ) -> Result<(Vec<Finding>, Vec<UnattributedSignal>), AnalysisError> {
        let thresholds = &self.rules.thresholds;
        let roles = infer_roles(raw, &self.rules);
        let snapshot = with_roles(raw, &roles);
        let candidates = candidate_set(&snapshot, &self.rules);

        let heuristics = heuristic_readouts(&snapshot, &roles, thresholds);
        let texts = TextAnalyzer::new(self.classifier.as_ref(), &self.rules.lexicons, thresholds).analyze_all(&snapshot.text_blocks)?;

        let premium: BTreeSet<String> = roles
            .iter()
            .filter(|(_, r)| r.contains(&Role::PremiumPrompt))
            .map(|(id, _)| id.clone())
            .collect();
        let flags = salience_flags(&snapshot, thresholds);
        let signals = detect_all(&snapshot.events, &premium, &flags, &snapshot.viewport, thresholds);

        let index = SnapshotIndex::new(&snapshot);
        let candidate_ids: BTreeSet<&str> = candidates.iter().map(|c| c.element_id.as_str()).collect();
        let mut by_element: BTreeMap<&str, Vec<_>> = BTreeMap::new();
        let mut unattributed = Vec::new();
        for s in &signals {
            let targets: Vec<&str> = s.element_ids().into_iter().filter(|id| candidate_ids.contains(id)).collect();
            if targets.is_empty() {
                unattributed.push(UnattributedSignal {
                    snapshot_id: snapshot.snapshot_id.clone(),
                    signal: s.clone(),
                });
            }
            for t in targets {
                by_element.entry(t).or_default().push(s.clone());
            }
        }

        let findings = candidates
            .iter()
            .map(|c| {
                let evidence = Evidence {
                    matched_rule_ids: c.matched_rule_ids.clone(),
                    heuristics: heuristics.get(&c.element_id).cloned(),
                    text: index
                        .blocks_with_children(&c.element_id)
                        .iter()
                        .filter_map(|b| texts.get(&b.block_id).cloned())
                        .collect(),
                    paths: if c.categories.contains(&Category::A) {
                        paths.to_vec()
                    } else {
                        Vec::new()
                    },
                };
                let sigs = by_element.remove(c.element_id.as_str()).unwrap_or_default();
                score_finding(c, evidence, sigs)
            })
            .collect();
        Ok((findings, unattributed))
    }
}
