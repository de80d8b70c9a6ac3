//! Taxonomy gating: only elements matching at least one category rule
//! proceed to the heuristic, text and temporal stages.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{ElementNode, PageSnapshot, Role, SnapshotIndex};
use crate::rules::{Category, CategoryRule, RuleSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub element_id: String,
    pub snapshot_id: String,
    pub categories: BTreeSet<Category>,
    pub matched_rule_ids: Vec<String>,
}

/// Rules whose whole predicate conjunction holds for `element`.
pub fn matching_rules<'r>(element: &ElementNode, match_text: &str, rules: &'r RuleSet) -> Vec<&'r CategoryRule> {
    rules
        .categories
        .iter()
        .filter(|r| r.when.holds(element, match_text))
        .collect()
}

/// Union of the categories of every firing rule.
pub fn match_categories(element: &ElementNode, match_text: &str, rules: &RuleSet) -> BTreeSet<Category> {
    matching_rules(element, match_text, rules)
        .into_iter()
        .map(|r| r.category)
        .collect()
}

/// Role assignment per element. Annotated roles win over inferred ones.
pub fn infer_roles(snapshot: &PageSnapshot, rules: &RuleSet) -> BTreeMap<String, BTreeSet<Role>> {
    let index = SnapshotIndex::new(snapshot);
    snapshot
        .elements
        .iter()
        .map(|e| {
            let roles = if !e.roles.is_empty() {
                e.roles.clone()
            } else {
                let text = index.match_text(&e.id);
                rules
                    .roles
                    .iter()
                    .filter(|r| r.when.holds(e, &text))
                    .map(|r| r.role)
                    .collect()
            };
            (e.id.clone(), roles)
        })
        .collect()
}

/// Copy of `snapshot` with inferred roles written onto its elements.
pub fn with_roles(snapshot: &PageSnapshot, roles: &BTreeMap<String, BTreeSet<Role>>) -> PageSnapshot {
    let mut out = snapshot.clone();
    for e in &mut out.elements {
        if let Some(r) = roles.get(&e.id) {
            e.roles = r.clone();
        }
    }
    out
}

/// Elements with a non-empty category match, sorted by element id.
pub fn candidate_set(snapshot: &PageSnapshot, rules: &RuleSet) -> Vec<Candidate> {
    let index = SnapshotIndex::new(snapshot);
    let mut out: Vec<Candidate> = snapshot
        .elements
        .iter()
        .filter_map(|e| {
            let fired = matching_rules(e, &index.match_text(&e.id), rules);
            if fired.is_empty() {
                return None;
            }
            Some(Candidate {
                element_id: e.id.clone(),
                snapshot_id: snapshot.snapshot_id.clone(),
                categories: fired.iter().map(|r| r.category).collect(),
                matched_rule_ids: fired.iter().map(|r| r.id.clone()).collect(),
            })
        })
        .collect();
    out.sort_by(|a, b| a.element_id.cmp(&b.element_id));
    out
}
