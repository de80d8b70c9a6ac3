//! Versioned rule sets: taxonomy category rules, role rules, lexicons and the
//! threshold profile. Stored as YAML.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ElementNode, Role};
use crate::tokenize::canonicalize_text;

/// The bundled default rule set, operationalizing categories A–E.
pub const DEFAULT_RULES_YAML: &str = include_str!("../rules/default.yaml");

/// Dark-pattern taxonomy category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Obstruction (e.g. roach motel).
    A,
    /// Sneaking (e.g. disguised ads).
    B,
    /// Urgency (e.g. artificial scarcity).
    C,
    /// Social proof (e.g. fake popularity cues).
    D,
    /// Nagging (repetitive interruptions).
    E,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::A, Category::B, Category::C, Category::D, Category::E];

    pub fn name(self) -> &'static str {
        match self {
            Category::A => "Obstruction",
            Category::B => "Sneaking",
            Category::C => "Urgency",
            Category::D => "Social Proof",
            Category::E => "Nagging",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" => Ok(Category::A),
            "B" => Ok(Category::B),
            "C" => Ok(Category::C),
            "D" => Ok(Category::D),
            "E" => Ok(Category::E),
            other => Err(format!("unknown category `{other}` (expected one of A, B, C, D, E)")),
        }
    }
}

/// A compiled regular expression that compares and serializes by its source.
#[derive(Clone)]
pub struct Pattern {
    source: String,
    regex: Regex,
}

impl Pattern {
    pub fn new(source: &str) -> Result<Self, regex::Error> {
        Ok(Self {
            source: source.to_owned(),
            regex: Regex::new(source)?,
        })
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pattern({:?})", self.source)
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Serialize for Pattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

/// Conjunction of element predicates. Absent fields do not constrain.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Predicates {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tag_in: Option<BTreeSet<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role_is: Option<Role>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_matches: Option<Pattern>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute_equals: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interactive: Option<bool>,
}

impl Predicates {
    pub fn is_empty(&self) -> bool {
        self.tag_in.is_none()
            && self.role_is.is_none()
            && self.text_matches.is_none()
            && self.attribute_equals.is_none()
            && self.interactive.is_none()
    }

    /// `text` is the element's match text (own text plus direct children).
    pub fn holds(&self, element: &ElementNode, text: &str) -> bool {
        if let Some(tags) = &self.tag_in {
            if !tags.contains(&element.tag.to_ascii_lowercase()) {
                return false;
            }
        }
        if let Some(role) = self.role_is {
            if !element.roles.contains(&role) {
                return false;
            }
        }
        if let Some(want) = self.interactive {
            if element.interactive != want {
                return false;
            }
        }
        if let Some(attrs) = &self.attribute_equals {
            let all = attrs
                .iter()
                .all(|(k, v)| element.attributes.get(k).is_some_and(|have| have == v));
            if !all {
                return false;
            }
        }
        if let Some(pattern) = &self.text_matches {
            if !pattern.is_match(text) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRule {
    pub id: String,
    pub category: Category,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub when: Predicates,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleRule {
    pub id: String,
    pub role: Role,
    pub when: Predicates,
}

/// Word lists and weights for text analysis.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Lexicons {
    /// Time-pressure tokens and phrases.
    pub urgency: BTreeSet<String>,
    /// Token valence in [-1, 1].
    pub valence: BTreeMap<String, f64>,
    /// Unigram or space-separated bigram features of the default DLP model.
    pub deceptive_features: BTreeMap<String, f64>,
    pub bias: f64,
}

impl Lexicons {
    /// Urgency entries as canonical token sequences, longest first.
    pub fn urgency_phrases(&self) -> Vec<Vec<String>> {
        let mut phrases: Vec<Vec<String>> = self
            .urgency
            .iter()
            .map(|p| canonicalize_text(p))
            .filter(|p| !p.is_empty())
            .collect();
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        phrases.dedup();
        phrases
    }
}

/// Calibration thresholds for every detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdProfile {
    pub salience_sigma: f64,
    pub pis_extra_clicks: i64,
    pub escape_opacity: f64,
    pub dlp_min: f64,
    pub polarity_max: f64,
    pub urgency_min: f64,
    pub latency_excess_ms: i64,
    pub latency_corr_window_ms: i64,
    pub relocation_frac: f64,
    pub relocation_window_ms: i64,
    pub loop_min_count: i64,
}

impl Default for ThresholdProfile {
    fn default() -> Self {
        Self {
            salience_sigma: 2.0,
            pis_extra_clicks: 3,
            escape_opacity: 0.30,
            dlp_min: 0.75,
            polarity_max: -0.4,
            urgency_min: 2.0,
            latency_excess_ms: 500,
            latency_corr_window_ms: 5000,
            relocation_frac: 0.10,
            relocation_window_ms: 2000,
            loop_min_count: 3,
        }
    }
}

impl ThresholdProfile {
    pub const FIELDS: [&'static str; 11] = [
        "salience_sigma",
        "pis_extra_clicks",
        "escape_opacity",
        "dlp_min",
        "polarity_max",
        "urgency_min",
        "latency_excess_ms",
        "latency_corr_window_ms",
        "relocation_frac",
        "relocation_window_ms",
        "loop_min_count",
    ];

    /// Every constraint breach as `(field, message)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let positive_f = [
            ("salience_sigma", self.salience_sigma),
            ("urgency_min", self.urgency_min),
        ];
        for (name, v) in positive_f {
            if !(v > 0.0 && v.is_finite()) {
                out.push((name, format!("{name} must be strictly positive, got {v}")));
            }
        }
        let fractions = [
            ("escape_opacity", self.escape_opacity),
            ("dlp_min", self.dlp_min),
            ("relocation_frac", self.relocation_frac),
        ];
        for (name, v) in fractions {
            if !(v > 0.0 && v <= 1.0) {
                out.push((name, format!("{name} must be a fraction in (0, 1], got {v}")));
            }
        }
        let positive_i = [
            ("pis_extra_clicks", self.pis_extra_clicks),
            ("latency_excess_ms", self.latency_excess_ms),
            ("latency_corr_window_ms", self.latency_corr_window_ms),
            ("relocation_window_ms", self.relocation_window_ms),
            ("loop_min_count", self.loop_min_count),
        ];
        for (name, v) in positive_i {
            if v <= 0 {
                out.push((name, format!("{name} must be strictly positive, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.polarity_max) {
            out.push((
                "polarity_max",
                format!("polarity_max must lie in [-1, 1], got {}", self.polarity_max),
            ));
        }
        out
    }

    /// Applies a `name=value` override, type-checked against the profile.
    pub fn with_override(&self, assignment: &str) -> Result<Self, String> {
        let (name, value) = assignment
            .split_once('=')
            .ok_or_else(|| format!("threshold override `{assignment}` is not of the form name=value"))?;
        let name = name.trim();
        if !Self::FIELDS.contains(&name) {
            return Err(format!(
                "unknown threshold `{name}` (known: {})",
                Self::FIELDS.join(", ")
            ));
        }
        let number: serde_json::Number = value
            .trim()
            .parse()
            .map_err(|_| format!("threshold `{name}` needs a number, got `{value}`"))?;
        let mut map = serde_json::to_value(self).map_err(|e| e.to_string())?;
        map[name] = serde_json::Value::Number(number);
        let updated: Self = serde_json::from_value(map)
            .map_err(|e| format!("threshold `{name}`: {e}"))?;
        if let Some((_, msg)) = updated.violations().into_iter().find(|(f, _)| *f == name) {
            return Err(msg);
        }
        Ok(updated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleSet {
    pub version: String,
    pub categories: Vec<CategoryRule>,
    pub roles: Vec<RoleRule>,
    pub lexicons: Lexicons,
    pub thresholds: ThresholdProfile,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self {
            version: "unversioned".to_owned(),
            categories: Vec::new(),
            roles: Vec::new(),
            lexicons: Lexicons::default(),
            thresholds: ThresholdProfile::default(),
        }
    }
}

impl RuleSet {
    /// The bundled default rules. Panics only if the shipped file is broken,
    /// which the test suite rules out.
    pub fn bundled() -> Self {
        parse_rules(DEFAULT_RULES_YAML).expect("bundled rule set is valid")
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("rule sets always serialize")
    }

    pub fn rules_per_category(&self) -> BTreeMap<Category, usize> {
        let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
        for rule in &self.categories {
            *counts.entry(rule.category).or_default() += 1;
        }
        counts
    }
}

/// One problem found while parsing a rules document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleIssue {
    pub rule_id: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for RuleIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(id) = &self.rule_id {
            write!(f, "rule `{id}`: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{} problem(s) in rules document:\n{}", .0.len(), .0.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n"))]
pub struct RulesError(pub Vec<RuleIssue>);

// Raw document shape: categories and regexes stay strings so that every
// semantic problem can be collected and reported together.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRuleSet {
    #[serde(default)]
    version: Option<String>,
    #[serde(default)]
    categories: Vec<RawCategoryRule>,
    #[serde(default)]
    roles: Vec<RawRoleRule>,
    #[serde(default)]
    lexicons: RawLexicons,
    #[serde(default)]
    thresholds: ThresholdProfile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCategoryRule {
    id: String,
    category: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    when: RawPredicates,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoleRule {
    id: String,
    role: Role,
    #[serde(default)]
    when: RawPredicates,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPredicates {
    tag_in: Option<BTreeSet<String>>,
    role_is: Option<Role>,
    text_matches: Option<String>,
    attribute_equals: Option<BTreeMap<String, String>>,
    interactive: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawLexicons {
    #[serde(default)]
    urgency: BTreeSet<String>,
    #[serde(default)]
    valence: BTreeMap<String, f64>,
    #[serde(default)]
    deceptive_features: BTreeMap<String, f64>,
    #[serde(default)]
    bias: f64,
}

/// Line (1-based) of the first `id: <rule_id>` entry in the document.
fn line_of_rule(text: &str, rule_id: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start().trim_start_matches("- ").trim_start();
        l.strip_prefix("id:")
            .map(|rest| rest.trim().trim_matches(|c| c == '"' || c == '\'') == rule_id)
            .unwrap_or(false)
    })
    .map(|i| i + 1)
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let prefix = format!("{key}:");
    text.lines()
        .position(|l| l.trim_start().starts_with(&prefix))
        .map(|i| i + 1)
}

fn compile_predicates(
    raw: RawPredicates,
    rule_id: &str,
    line: Option<usize>,
    issues: &mut Vec<RuleIssue>,
) -> Option<Predicates> {
    let issue = |message: String| RuleIssue {
        rule_id: Some(rule_id.to_owned()),
        line,
        message,
    };
    let text_matches = match raw.text_matches.as_deref().map(Pattern::new) {
        None => None,
        Some(Ok(p)) => Some(p),
        Some(Err(e)) => {
            issues.push(issue(format!("bad regex: {e}")));
            return None;
        }
    };
    let preds = Predicates {
        tag_in: raw
            .tag_in
            .map(|tags| tags.into_iter().map(|t| t.to_ascii_lowercase()).collect()),
        role_is: raw.role_is,
        text_matches,
        attribute_equals: raw.attribute_equals,
        interactive: raw.interactive,
    };
    if preds.is_empty() {
        issues.push(issue("rule needs at least one predicate".to_owned()));
        return None;
    }
    Some(preds)
}

/// Parses a YAML rules document, applying defaults for omitted thresholds.
pub fn parse_rules(text: &str) -> Result<RuleSet, RulesError> {
    let value: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| {
        RulesError(vec![RuleIssue {
            rule_id: None,
            line: e.location().map(|l| l.line()),
            message: e.to_string(),
        }])
    })?;
    let raw: RawRuleSet = if value.is_null() {
        RawRuleSet::default()
    } else {
        serde_yaml::from_str(text).map_err(|e| {
            RulesError(vec![RuleIssue {
                rule_id: None,
                line: e.location().map(|l| l.line()),
                message: e.to_string(),
            }])
        })?
    };

    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();

    let mut categories = Vec::new();
    for rule in raw.categories {
        let line = line_of_rule(text, &rule.id);
        if !seen.insert(rule.id.clone()) {
            issues.push(RuleIssue {
                rule_id: Some(rule.id.clone()),
                line,
                message: "duplicate rule id".to_owned(),
            });
        }
        let category = match rule.category.parse::<Category>() {
            Ok(c) => Some(c),
            Err(message) => {
                issues.push(RuleIssue {
                    rule_id: Some(rule.id.clone()),
                    line,
                    message,
                });
                None
            }
        };
        let when = compile_predicates(rule.when, &rule.id, line, &mut issues);
        if let (Some(category), Some(when)) = (category, when) {
            categories.push(CategoryRule {
                id: rule.id,
                category,
                description: rule.description,
                when,
            });
        }
    }

    let mut roles = Vec::new();
    for rule in raw.roles {
        let line = line_of_rule(text, &rule.id);
        if !seen.insert(rule.id.clone()) {
            issues.push(RuleIssue {
                rule_id: Some(rule.id.clone()),
                line,
                message: "duplicate rule id".to_owned(),
            });
        }
        if let Some(when) = compile_predicates(rule.when, &rule.id, line, &mut issues) {
            roles.push(RoleRule {
                id: rule.id,
                role: rule.role,
                when,
            });
        }
    }

    for (token, score) in &raw.lexicons.valence {
        if !(-1.0..=1.0).contains(score) {
            issues.push(RuleIssue {
                rule_id: None,
                line: line_of_key(text, token),
                message: format!("valence score for `{token}` is {score}, outside [-1, 1]"),
            });
        }
    }
    for (feature, weight) in &raw.lexicons.deceptive_features {
        if !weight.is_finite() {
            issues.push(RuleIssue {
                rule_id: None,
                line: line_of_key(text, feature),
                message: format!("deceptive feature `{feature}` has a non-finite weight"),
            });
        }
    }
    for (field, message) in raw.thresholds.violations() {
        issues.push(RuleIssue {
            rule_id: None,
            line: line_of_key(text, field),
            message,
        });
    }

    if !issues.is_empty() {
        return Err(RulesError(issues));
    }

    Ok(RuleSet {
        version: raw.version.unwrap_or_else(|| "unversioned".to_owned()),
        categories,
        roles,
        lexicons: Lexicons {
            urgency: raw.lexicons.urgency,
            valence: raw.lexicons.valence,
            deceptive_features: raw.lexicons.deceptive_features,
            bias: raw.lexicons.bias,
        },
        thresholds: raw.thresholds,
    })
}
