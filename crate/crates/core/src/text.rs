//! Linguistic cues: deceptive-language probability (DLP), sentiment polarity
//! and urgency cue density, combined by the compound text flag rule.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TextBlock;
use crate::rules::{Lexicons, ThresholdProfile};
use crate::tokenize::canonicalize_text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierDescriptor {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Error)]
#[error("classifier {}@{} unavailable: {reason}", descriptor.name, descriptor.version)]
pub struct ClassifierUnavailable {
    pub descriptor: ClassifierDescriptor,
    pub reason: String,
}

/// Scores canonical tokens with the probability that they carry coercive or
/// misleading phrasing. Must be deterministic for fixed tokens and version,
/// and always return a value in [0, 1].
pub trait DeceptiveLanguageClassifier: Send + Sync {
    fn score(&self, tokens: &[String]) -> Result<f64, ClassifierUnavailable>;
    fn descriptor(&self) -> ClassifierDescriptor;
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Finds non-overlapping occurrences of `phrases` in `tokens`, preferring the
/// longest phrase at each position. Returns the number of matches.
fn count_phrase_runs(tokens: &[String], phrases: &[Vec<String>]) -> usize {
    let mut count = 0;
    let mut i = 0;
    while i < tokens.len() {
        let hit = phrases
            .iter()
            .filter(|p| !p.is_empty())
            .max_by_key(|p| if tokens[i..].starts_with(p) { p.len() } else { 0 })
            .filter(|p| tokens[i..].starts_with(p));
        match hit {
            Some(p) => {
                count += 1;
                i += p.len();
            }
            None => i += 1,
        }
    }
    count
}

/// Transparent logistic model `σ(bias + Σ weight)` over the n-gram features
/// present in the tokens. Each feature contributes at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconClassifier {
    features: Vec<(Vec<String>, f64)>,
    bias: f64,
    version: String,
}

impl LexiconClassifier {
    pub fn new(features: &BTreeMap<String, f64>, bias: f64, version: impl Into<String>) -> Self {
        Self {
            features: features
                .iter()
                .map(|(k, w)| (canonicalize_text(k), *w))
                .filter(|(k, _)| !k.is_empty())
                .collect(),
            bias,
            version: version.into(),
        }
    }

    pub fn from_lexicons(lexicons: &Lexicons, ruleset_version: &str) -> Self {
        Self::new(&lexicons.deceptive_features, lexicons.bias, ruleset_version)
    }

    /// Raw logit before the sigmoid.
    pub fn logit(&self, tokens: &[String]) -> f64 {
        self.bias
            + self
                .features
                .iter()
                .filter(|(f, _)| tokens.windows(f.len()).any(|w| w == f.as_slice()))
                .map(|(_, w)| w)
                .sum::<f64>()
    }
}

impl DeceptiveLanguageClassifier for LexiconClassifier {
    fn score(&self, tokens: &[String]) -> Result<f64, ClassifierUnavailable> {
        Ok(sigmoid(self.logit(tokens)).clamp(0.0, 1.0))
    }

    fn descriptor(&self) -> ClassifierDescriptor {
        ClassifierDescriptor {
            name: "lexicon-logistic".into(),
            version: self.version.clone(),
        }
    }
}

/// Always returns the same score; isolates the rule from the model in tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub f64);

impl DeceptiveLanguageClassifier for ConstantClassifier {
    fn score(&self, _tokens: &[String]) -> Result<f64, ClassifierUnavailable> {
        Ok(self.0)
    }

    fn descriptor(&self) -> ClassifierDescriptor {
        ClassifierDescriptor {
            name: "constant".into(),
            version: self.0.to_string(),
        }
    }
}

/// Adapter for an external model service: `POST {"tokens": [...]}` answered
/// with `{"score": x}`. Stateless per call, so concurrent use is safe.
pub struct RemoteClassifier {
    endpoint: String,
    agent: ureq::Agent,
    descriptor: ClassifierDescriptor,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct RemoteResponse {
    score: f64,
}

impl RemoteClassifier {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let endpoint = endpoint.into();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            descriptor: ClassifierDescriptor {
                name: "remote".into(),
                version: endpoint.clone(),
            },
            endpoint,
            agent,
        }
    }

    fn unavailable(&self, reason: impl Into<String>) -> ClassifierUnavailable {
        ClassifierUnavailable {
            descriptor: self.descriptor.clone(),
            reason: reason.into(),
        }
    }
}

impl DeceptiveLanguageClassifier for RemoteClassifier {
    fn score(&self, tokens: &[String]) -> Result<f64, ClassifierUnavailable> {
        let body = serde_json::to_string(&RemoteRequest { tokens }).expect("token lists serialize");
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .content_type("application/json")
            .send(body.as_str())
            .map_err(|e| self.unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.unavailable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(self.unavailable(format!("HTTP {status}: {text}")));
        }
        let parsed: RemoteResponse =
            serde_json::from_str(&text).map_err(|e| self.unavailable(format!("bad response `{text}`: {e}")))?;
        if !(0.0..=1.0).contains(&parsed.score) {
            return Err(self.unavailable(format!("score {} outside [0, 1]", parsed.score)));
        }
        Ok(parsed.score)
    }

    fn descriptor(&self) -> ClassifierDescriptor {
        self.descriptor.clone()
    }
}

pub fn dlp_score(tokens: &[String], classifier: &dyn DeceptiveLanguageClassifier) -> Result<f64, ClassifierUnavailable> {
    classifier.score(tokens)
}

/// Mean valence over tokens found in the lexicon; 0.0 without hits.
pub fn sentiment_polarity(tokens: &[String], valence: &BTreeMap<String, f64>) -> f64 {
    let hits: Vec<f64> = tokens.iter().filter_map(|t| valence.get(t).copied()).collect();
    if hits.is_empty() {
        0.0
    } else {
        (hits.iter().sum::<f64>() / hits.len() as f64).clamp(-1.0, 1.0)
    }
}

/// Urgency hits per 20 tokens, over the whole block.
pub fn urgency_density(tokens: &[String], urgency_phrases: &[Vec<String>]) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    count_phrase_runs(tokens, urgency_phrases) as f64 / tokens.len() as f64 * 20.0
}

/// `dlp ≥ dlp_min ∧ (polarity ≤ polarity_max ∨ density ≥ urgency_min)`.
pub fn text_flag(dlp: f64, polarity: f64, urgency_density: f64, thresholds: &ThresholdProfile) -> bool {
    dlp >= thresholds.dlp_min && (polarity <= thresholds.polarity_max || urgency_density >= thresholds.urgency_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextReadout {
    pub block_id: String,
    pub element_id: String,
    pub dlp: f64,
    pub polarity: f64,
    pub urgency_density: f64,
    pub text_flag: bool,
}

/// Text analysis bound to one rule set and classifier.
pub struct TextAnalyzer<'a> {
    classifier: &'a dyn DeceptiveLanguageClassifier,
    valence: &'a BTreeMap<String, f64>,
    urgency: Vec<Vec<String>>,
    thresholds: &'a ThresholdProfile,
}

impl<'a> TextAnalyzer<'a> {
    pub fn new(
        classifier: &'a dyn DeceptiveLanguageClassifier,
        lexicons: &'a Lexicons,
        thresholds: &'a ThresholdProfile,
    ) -> Self {
        Self {
            classifier,
            valence: &lexicons.valence,
            urgency: lexicons.urgency_phrases(),
            thresholds,
        }
    }

    pub fn analyze(&self, block: &TextBlock) -> Result<TextReadout, ClassifierUnavailable> {
        let tokens = &block.tokens;
        let dlp = dlp_score(tokens, self.classifier)?;
        let polarity = sentiment_polarity(tokens, self.valence);
        let density = urgency_density(tokens, &self.urgency);
        Ok(TextReadout {
            block_id: block.block_id.clone(),
            element_id: block.element_id.clone(),
            dlp,
            polarity,
            urgency_density: density,
            text_flag: text_flag(dlp, polarity, density, self.thresholds),
        })
    }

    /// Readouts for every block, keyed by block id.
    pub fn analyze_all(&self, blocks: &[TextBlock]) -> Result<BTreeMap<String, TextReadout>, ClassifierUnavailable> {
        let mut seen = BTreeSet::new();
        blocks
            .iter()
            .filter(|b| seen.insert(b.block_id.as_str()))
            .map(|b| self.analyze(b).map(|r| (b.block_id.clone(), r)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::RuleSet;

    fn toks(s: &str) -> Vec<String> {
        canonicalize_text(s)
    }

    #[test]
    fn empty_tokens_score_sigmoid_of_bias() {
        let rules = RuleSet::bundled();
        let c = LexiconClassifier::from_lexicons(&rules.lexicons, &rules.version);
        let oracle = 1.0 / (1.0 + 3.0f64.exp());
        assert_eq!(c.score(&[]).unwrap(), oracle);
        assert!((oracle - 0.047).abs() < 5e-4);
        assert_eq!(c.score(&toks("welcome to the store")).unwrap(), oracle);
    }

    #[test]
    fn confirmshaming_phrase_clears_dlp_threshold() {
        let rules = RuleSet::bundled();
        let c = LexiconClassifier::from_lexicons(&rules.lexicons, &rules.version);
        let dlp = c.score(&toks("no thanks i prefer to remain uninformed")).unwrap();
        // bias -3 + 1.5 + 1.0 + 2.5 = 2.0
        assert_eq!(dlp, 1.0 / (1.0 + (-2.0f64).exp()));
        assert!(dlp >= 0.75);
    }

    #[test]
    fn features_count_once() {
        let features: BTreeMap<String, f64> = [("act now".to_string(), 1.0)].into();
        let c = LexiconClassifier::new(&features, 0.0, "t");
        assert_eq!(c.logit(&toks("act now act now")), 1.0);
        assert_eq!(c.logit(&toks("act later now")), 0.0);
    }

    #[test]
    fn polarity_cases() {
        let lex: BTreeMap<String, f64> = [("bad".to_string(), -0.8), ("meh".to_string(), -0.2), ("good".to_string(), 0.6)].into();
        assert_eq!(sentiment_polarity(&toks("nothing here"), &lex), 0.0);
        assert!((sentiment_polarity(&toks("bad and meh"), &lex) + 0.5).abs() < 1e-12);
        assert_eq!(sentiment_polarity(&toks("good good"), &lex), 0.6);
    }

    #[test]
    fn urgency_density_cases() {
        let phrases = vec![toks("act now"), toks("now"), toks("hurry")];
        assert_eq!(urgency_density(&[], &phrases), 0.0);
        let ten = toks("one two three four five six seven eight nine hurry");
        assert_eq!(ten.len(), 10);
        assert_eq!(urgency_density(&ten, &phrases), 2.0);
        assert!(text_flag(0.8, 0.0, urgency_density(&ten, &phrases), &ThresholdProfile::default()));
        // "act now" counts once, not as "act now" + "now".
        assert_eq!(urgency_density(&toks("act now"), &phrases), 10.0);
    }

    #[test]
    fn bundled_lexicon_catches_known_phrases() {
        let rules = RuleSet::bundled();
        let phrases = rules.lexicons.urgency_phrases();
        assert!(urgency_density(&toks("Only 1 left"), &phrases) > 0.0);
        assert!(urgency_density(&toks("Act now"), &phrases) > 0.0);
        assert_eq!(count_phrase_runs(&toks("Only 1 left. Act now!"), &phrases), 2);
    }

    #[test]
    fn text_flag_truth_table_examples() {
        let t = ThresholdProfile::default();
        assert!(text_flag(0.80, -0.5, 0.0, &t));
        assert!(!text_flag(0.74, -1.0, 10.0, &t));
        assert!(!text_flag(0.90, 0.2, 1.9, &t));
        assert!(text_flag(0.75, -0.4, 0.0, &t));
        assert!(text_flag(0.75, 0.0, 2.0, &t));
    }

    #[test]
    fn constant_one_reduces_rule_to_disjunct() {
        let t = ThresholdProfile::default();
        let one = ConstantClassifier(1.0);
        for (pol, dens) in [(-0.5, 0.0), (0.0, 0.0), (0.0, 3.0), (-0.39, 1.99)] {
            let dlp = one.score(&[]).unwrap();
            assert_eq!(text_flag(dlp, pol, dens, &t), pol <= -0.4 || dens >= 2.0);
        }
    }
}
