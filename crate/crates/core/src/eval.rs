//! Stratified cross-validation harness and the metric engine.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{parse_snapshot_bundle, SnapshotBundle, Strictness};
use crate::pipeline::Detector;
use crate::synth::GeneratedItem;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be at least 2, got {0}")]
    FoldCount(usize),
    #[error("cannot stratify into {k} folds: class `{class}` has only {size} items")]
    Stratification { k: usize, class: &'static str, size: usize },
    #[error("predictions ({0}) and labels ({1}) differ in length")]
    LengthMismatch(usize, usize),
    #[error("cannot read corpus manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("cannot write corpus to {path}: {reason}")]
    Write { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Dark,
    Benign,
}

impl Label {
    pub fn from_dark(dark: bool) -> Self {
        if dark {
            Label::Dark
        } else {
            Label::Benign
        }
    }

    pub fn is_dark(self) -> bool {
        self == Label::Dark
    }
}

/// Folds of item indices; each class is shuffled then dealt round-robin,
/// the second class continuing where the first stopped.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::FoldCount(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, want) in [("dark", true), ("benign", false)] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == want).collect();
        if members.len() < k {
            return Err(EvalError::Stratification {
                k,
                class,
                size: members.len(),
            });
        }
        members.shuffle(&mut rng);
        for m in members {
            folds[next % k].push(m);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Result<Self, EvalError> {
        if predictions.len() != labels.len() {
            return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
        }
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }

    /// `None` when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `None` when there are no positive labels.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, computed from counts as
    /// `2tp / (2tp + fp + fn)`; `None` if either side is undefined or both
    /// are zero.
    pub fn f1(&self) -> Option<f64> {
        self.precision()?;
        self.recall()?;
        if self.tp == 0 {
            return None;
        }
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Undefined values serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn confusion_metrics(predictions: &[bool], labels: &[bool]) -> Result<Metrics, EvalError> {
    Ok(Confusion::from_predictions(predictions, labels)?.metrics())
}

/// Mann-Whitney AUROC with ties counted one half; `None` unless both
/// classes are present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&o| labels[o]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub path: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub count: usize,
    pub dark_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub items: Vec<CorpusItem>,
}

impl LabeledCorpus {
    /// Reads a manifest: either `{"items": [...]}` or a bare list of items.
    /// Item paths are resolved relative to the manifest's directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), EvalError> {
        let err = |reason: String| EvalError::Manifest {
            path: path.display().to_string(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Full(LabeledCorpus),
            Bare(Vec<CorpusItem>),
        }
        let corpus = match serde_json::from_str::<Doc>(&text).map_err(|e| err(e.to_string()))? {
            Doc::Full(c) => c,
            Doc::Bare(items) => LabeledCorpus { provenance: None, items },
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((corpus, base))
    }
}

/// Writes each bundle as `bundles/<name>.json` plus `manifest.json`.
pub fn write_corpus(dir: &Path, items: &[GeneratedItem], provenance: Provenance) -> Result<LabeledCorpus, EvalError> {
    let err = |p: &Path, e: std::io::Error| EvalError::Write {
        path: p.display().to_string(),
        reason: e.to_string(),
    };
    let bundles = dir.join("bundles");
    fs::create_dir_all(&bundles).map_err(|e| err(&bundles, e))?;
    let mut corpus = LabeledCorpus {
        provenance: Some(provenance),
        items: Vec::with_capacity(items.len()),
    };
    for item in items {
        let rel = format!("bundles/{}.json", item.name);
        let path = dir.join(&rel);
        fs::write(&path, item.bundle.to_json() + "\n").map_err(|e| err(&path, e))?;
        corpus.items.push(CorpusItem {
            path: rel,
            label: Label::from_dark(item.dark),
        });
    }
    let manifest = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&corpus).expect("manifests serialize") + "\n";
    fs::write(&manifest, text).map_err(|e| err(&manifest, e))?;
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub label: Label,
    /// Maximum finding severity, 0 without findings.
    pub score: u8,
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Indices into `items`.
    pub items: Vec<usize>,
    pub n_dark: usize,
    pub n_benign: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub sd: f64,
    /// Folds where the metric was defined.
    pub n: usize,
}

fn mean_sd(values: impl Iterator<Item = Option<f64>>) -> Option<MeanSd> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanSd { mean, sd, n: v.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcrossFolds {
    pub precision: Option<MeanSd>,
    pub recall: Option<MeanSd>,
    pub f1: Option<MeanSd>,
    pub auroc: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub auroc: Option<f64>,
}

/// Wall-clock measurements; excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_page_time_ms: f64,
    pub total_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub k: usize,
    pub seed: u64,
    pub ruleset_version: String,
    pub n_items: usize,
    pub n_dark: usize,
    pub n_benign: usize,
    pub items: Vec<ItemResult>,
    pub exclusions: Vec<Exclusion>,
    pub folds: Vec<FoldResult>,
    pub pooled: Pooled,
    pub across_folds: AcrossFolds,
    pub timing: Timing,
}

impl EvalRun {
    /// JSON without the `timing` block, for byte comparisons.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("runs serialize");
        v.as_object_mut().expect("object").remove("timing");
        serde_json::to_string_pretty(&v).expect("runs serialize")
    }
}

struct Outcome {
    score: u8,
    dark: bool,
    millis: f64,
}

/// Runs the detector on every item (in parallel) and cross-validates.
/// `load(i)` produces item `i`'s bundle; a load or analysis failure excludes
/// the item.
pub fn evaluate<F>(ids: &[String], labels: &[bool], load: F, detector: &Detector, k: usize, seed: u64) -> Result<EvalRun, EvalError>
where
    F: Fn(usize) -> Result<SnapshotBundle, String> + Sync,
{
    if k < 2 {
        return Err(EvalError::FoldCount(k));
    }
    let n = ids.len();
    let started = Instant::now();
    let results: Vec<Mutex<Option<Result<Outcome, String>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let t0 = Instant::now();
                let outcome = load(i).and_then(|b| {
                    detector
                        .analyze_bundle(&b, None)
                        .map(|r| (r.max_severity, r.page_verdict.is_dark()))
                        .map_err(|e| e.to_string())
                });
                let millis = t0.elapsed().as_secs_f64() * 1000.0;
                *results[i].lock().expect("no poisoning") =
                    Some(outcome.map(|(score, dark)| Outcome { score, dark, millis }));
            });
        }
    });
    let total_time_ms = started.elapsed().as_secs_f64() * 1000.0;

    let mut items = Vec::new();
    let mut exclusions = Vec::new();
    let mut times = Vec::new();
    for (i, slot) in results.into_iter().enumerate() {
        match slot.into_inner().expect("no poisoning").expect("every item ran") {
            Ok(o) => {
                times.push(o.millis);
                items.push(ItemResult {
                    id: ids[i].clone(),
                    label: Label::from_dark(labels[i]),
                    score: o.score,
                    predicted: Label::from_dark(o.dark),
                });
            }
            Err(error) => exclusions.push(Exclusion { id: ids[i].clone(), error }),
        }
    }

    let y: Vec<bool> = items.iter().map(|r| r.label.is_dark()).collect();
    let pred: Vec<bool> = items.iter().map(|r| r.predicted.is_dark()).collect();
    let score: Vec<f64> = items.iter().map(|r| f64::from(r.score)).collect();
    let folds = stratified_folds(&y, k, seed)?;
    let fold_results: Vec<FoldResult> = folds
        .into_iter()
        .enumerate()
        .map(|(fold, idx)| {
            let fy: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
            let fp: Vec<bool> = idx.iter().map(|&i| pred[i]).collect();
            let fs: Vec<f64> = idx.iter().map(|&i| score[i]).collect();
            let confusion = Confusion::from_predictions(&fp, &fy).expect("equal lengths");
            FoldResult {
                fold,
                n_dark: fy.iter().filter(|&&l| l).count(),
                n_benign: fy.iter().filter(|&&l| !l).count(),
                items: idx,
                metrics: confusion.metrics(),
                confusion,
                auroc: auroc(&fs, &fy),
            }
        })
        .collect();
    let pooled_confusion = Confusion::from_predictions(&pred, &y).expect("equal lengths");
    Ok(EvalRun {
        k,
        seed,
        ruleset_version: detector.rules().version.clone(),
        n_items: items.len(),
        n_dark: y.iter().filter(|&&l| l).count(),
        n_benign: y.iter().filter(|&&l| !l).count(),
        across_folds: AcrossFolds {
            precision: mean_sd(fold_results.iter().map(|f| f.metrics.precision)),
            recall: mean_sd(fold_results.iter().map(|f| f.metrics.recall)),
            f1: mean_sd(fold_results.iter().map(|f| f.metrics.f1)),
            auroc: mean_sd(fold_results.iter().map(|f| f.auroc)),
        },
        pooled: Pooled {
            confusion: pooled_confusion,
            metrics: pooled_confusion.metrics(),
            auroc: auroc(&score, &y),
        },
        folds: fold_results,
        items,
        exclusions,
        timing: Timing {
            mean_page_time_ms: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
            total_time_ms,
        },
    })
}

/// Evaluates the corpus described by a manifest; bundles load strictly.
pub fn run_eval(corpus: &LabeledCorpus, base: &Path, detector: &Detector, k: usize, seed: u64) -> Result<EvalRun, EvalError> {
    let ids: Vec<String> = corpus.items.iter().map(|i| i.path.clone()).collect();
    let labels: Vec<bool> = corpus.items.iter().map(|i| i.label.is_dark()).collect();
    let load = |i: usize| {
        let path = base.join(&corpus.items[i].path);
        let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        parse_snapshot_bundle(&bytes, Strictness::Strict).map_err(|e| e.to_string())
    };
    evaluate(&ids, &labels, load, detector, k, seed)
}

/// Evaluates generated items without touching the filesystem.
pub fn run_eval_generated(items: &[GeneratedItem], detector: &Detector, k: usize, seed: u64) -> Result<EvalRun, EvalError> {
    let ids: Vec<String> = items.iter().map(|i| i.name.clone()).collect();
    let labels: Vec<bool> = items.iter().map(|i| i.dark).collect();
    evaluate(&ids, &labels, |i| Ok(items[i].bundle.clone()), detector, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// All positive/negative pairs, ties one half.
    fn brute_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        (pairs > 0.0).then(|| wins / pairs)
    }

    fn labels(dark: usize, benign: usize) -> Vec<bool> {
        (0..dark + benign).map(|i| i < dark).collect()
    }

    #[test]
    fn paper_corpus_shape_folds() {
        let y = labels(1050, 1050);
        let folds = stratified_folds(&y, 5, 42).unwrap();
        for f in &folds {
            assert_eq!(f.len(), 420);
            assert_eq!(f.iter().filter(|&&i| y[i]).count(), 210);
        }
        assert_eq!(folds, stratified_folds(&y, 5, 42).unwrap());
    }

    #[test]
    fn small_folds_and_errors() {
        let y = labels(5, 5);
        for f in stratified_folds(&y, 5, 1).unwrap() {
            assert_eq!(f.len(), 2);
            assert_eq!(f.iter().filter(|&&i| y[i]).count(), 1);
        }
        assert!(matches!(stratified_folds(&y, 1, 1), Err(EvalError::FoldCount(1))));
        assert!(matches!(stratified_folds(&labels(3, 10), 5, 1), Err(EvalError::Stratification { .. })));
    }

    #[test]
    fn confusion_examples() {
        let c = Confusion { tp: 9, fp: 1, tn: 0, fn_: 0 };
        assert_eq!(c.precision(), Some(0.9));
        assert_eq!(c.recall(), Some(1.0));
        let none = confusion_metrics(&[false, false], &[true, false]).unwrap();
        assert_eq!(none.precision, None);
        assert_eq!(none.recall, Some(0.0));
        let c = Confusion { tp: 88, fp: 9, tn: 0, fn_: 12 };
        assert_eq!(c.recall(), Some(0.88));
        assert!((c.precision().unwrap() - 0.907).abs() < 5e-4);
        assert!(confusion_metrics(&[true], &[]).is_err());
        let json = serde_json::to_value(none).unwrap();
        assert!(json["precision"].is_null());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]), Some(1.0));
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]), Some(0.5));
        assert_eq!(auroc(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]), Some(0.75));
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), None);
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        prop::collection::vec((0u8..8, any::<bool>()), 2..50).prop_map(|v| {
            let mut s: Vec<f64> = v.iter().map(|(x, _)| f64::from(*x) / 7.0).collect();
            let mut l: Vec<bool> = v.iter().map(|(_, y)| *y).collect();
            // both classes present
            l[0] = true;
            l[1] = false;
            s.truncate(l.len());
            (s, l)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn auroc_matches_pairwise_oracle((s, l) in scored()) {
            let fast = auroc(&s, &l).unwrap();
            prop_assert!((fast - brute_auroc(&s, &l).unwrap()).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn auroc_invariant_under_increasing_transform((s, l) in scored(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let t: Vec<f64> = s.iter().map(|x| (a * x + b).exp()).collect();
            prop_assert!((auroc(&s, &l).unwrap() - auroc(&t, &l).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn metric_ranges(p in prop::collection::vec(any::<bool>(), 1..60), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut l = p.clone();
            l.shuffle(&mut rng);
            let m = confusion_metrics(&p, &l).unwrap();
            for v in [m.precision, m.recall, m.f1].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let (Some(f), Some(pr), Some(rc)) = (m.f1, m.precision, m.recall) {
                prop_assert!(f <= pr.max(rc) + 1e-12);
            }
        }

        #[test]
        fn folds_partition_and_balance(dark in 5usize..60, benign in 5usize..60, k in 2usize..6, seed in any::<u64>()) {
            let y = labels(dark, benign);
            let folds = stratified_folds(&y, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
            for f in &folds {
                let d = f.iter().filter(|&&i| y[i]).count() as f64;
                let b = f.len() as f64 - d;
                prop_assert!((d - dark as f64 / k as f64).abs() < 1.0);
                prop_assert!((b - benign as f64 / k as f64).abs() < 1.0);
            }
        }
    }
}
