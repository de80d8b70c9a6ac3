//! Dynamic manipulation signals read from a snapshot's event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EventKind, InteractionEvent, Viewport};
use crate::rules::ThresholdProfile;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemporalError {
    #[error("no response events for host `{0}`; latency baseline unavailable")]
    NoBaseline(String),
}

/// What a signal saw. Indices point into the snapshot's event list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalEvidence {
    LatencyInjection {
        response_index: usize,
        prompt_index: usize,
        prompt_element_id: String,
        latency_ms: u64,
        baseline_ms: u64,
        excess_ms: i64,
    },
    Relocation {
        mutation_index: usize,
        input_index: usize,
        element_id: String,
        distance_px: f64,
        distance_frac: f64,
    },
    ReinforcementLoop {
        prompt_hash: String,
        occurrence_indices: Vec<usize>,
        intervals_ms: Vec<u64>,
        element_ids: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSignal {
    pub t_ms: u64,
    #[serde(flatten)]
    pub evidence: SignalEvidence,
}

impl TemporalSignal {
    pub fn kind(&self) -> &'static str {
        match self.evidence {
            SignalEvidence::LatencyInjection { .. } => "latency_injection",
            SignalEvidence::Relocation { .. } => "relocation",
            SignalEvidence::ReinforcementLoop { .. } => "reinforcement_loop",
        }
    }

    /// Elements this signal is attributed to.
    pub fn element_ids(&self) -> Vec<&str> {
        match &self.evidence {
            SignalEvidence::LatencyInjection { prompt_element_id, .. } => vec![prompt_element_id],
            SignalEvidence::Relocation { element_id, .. } => vec![element_id],
            SignalEvidence::ReinforcementLoop { element_ids, .. } => {
                let set: BTreeSet<&str> = element_ids.iter().map(String::as_str).collect();
                set.into_iter().collect()
            }
        }
    }

    /// Re-checks the evidence against the raw log and thresholds.
    pub fn verify(&self, events: &[InteractionEvent], viewport: &Viewport, thresholds: &ThresholdProfile) -> bool {
        match &self.evidence {
            SignalEvidence::LatencyInjection {
                response_index,
                prompt_index,
                prompt_element_id,
                latency_ms,
                baseline_ms,
                excess_ms,
            } => {
                let (Some(resp), Some(prompt)) = (events.get(*response_index), events.get(*prompt_index)) else {
                    return false;
                };
                resp.kind == EventKind::Response
                    && resp.latency_ms == Some(*latency_ms)
                    && baseline_latency(events, &resp.host) == Ok(*baseline_ms)
                    && *excess_ms == *latency_ms as i64 - *baseline_ms as i64
                    && *excess_ms > thresholds.latency_excess_ms
                    && prompt.kind == EventKind::PromptShown
                    && prompt.element_id.as_deref() == Some(prompt_element_id.as_str())
                    && within(resp.t_ms, prompt.t_ms, thresholds.latency_corr_window_ms)
                    && self.t_ms == resp.t_ms
            }
            SignalEvidence::Relocation {
                mutation_index,
                input_index,
                element_id,
                distance_px,
                distance_frac,
            } => {
                let (Some(m), Some(input)) = (events.get(*mutation_index), events.get(*input_index)) else {
                    return false;
                };
                m.kind == EventKind::Mutation
                    && m.element_id.as_deref() == Some(element_id.as_str())
                    && move_distance(m) == Some(*distance_px)
                    && *distance_frac == distance_px / viewport.diagonal()
                    && *distance_frac > thresholds.relocation_frac
                    && input.kind.is_user_input()
                    && within(input.t_ms, m.t_ms, thresholds.relocation_window_ms)
                    && self.t_ms == m.t_ms
            }
            SignalEvidence::ReinforcementLoop {
                prompt_hash,
                occurrence_indices,
                intervals_ms,
                element_ids,
            } => {
                let occ: Option<Vec<&InteractionEvent>> = occurrence_indices.iter().map(|&i| events.get(i)).collect();
                let Some(occ) = occ else { return false };
                let times: Vec<u64> = occ.iter().map(|e| e.t_ms).collect();
                let intervals: Vec<u64> = times.windows(2).map(|w| w[1] - w[0]).collect();
                occ.len() as i64 >= thresholds.loop_min_count
                    && occ.iter().all(|e| {
                        e.kind == EventKind::PromptShown && e.prompt_hash.as_deref() == Some(prompt_hash.as_str())
                    })
                    && occurrence_indices.windows(2).all(|w| w[0] < w[1])
                    && times.windows(2).all(|w| w[0] <= w[1])
                    && &intervals == intervals_ms
                    && intervals.windows(2).all(|w| w[1] < w[0])
                    && occ.iter().map(|e| e.element_id.clone().unwrap_or_default()).eq(element_ids.iter().cloned())
                    && times.last() == Some(&self.t_ms)
            }
        }
    }
}

/// `start ≤ t ≤ start + window`.
fn within(start: u64, t: u64, window_ms: i64) -> bool {
    t >= start && (t - start) as i128 <= window_ms as i128
}

fn move_distance(e: &InteractionEvent) -> Option<f64> {
    let (a, b) = (e.old_bbox?.center(), e.new_bbox?.center());
    Some((b.0 - a.0).hypot(b.1 - a.1))
}

/// Lower median of the host's response latencies.
pub fn baseline_latency(events: &[InteractionEvent], host: &str) -> Result<u64, TemporalError> {
    let mut lat: Vec<u64> = events
        .iter()
        .filter(|e| e.kind == EventKind::Response && e.host == host)
        .filter_map(|e| e.latency_ms)
        .collect();
    if lat.is_empty() {
        return Err(TemporalError::NoBaseline(host.to_owned()));
    }
    lat.sort_unstable();
    Ok(lat[(lat.len() - 1) / 2])
}

/// Slow responses followed, inside the correlation window, by a prompt on a
/// premium-prompt element.
pub fn detect_latency_injection(
    events: &[InteractionEvent],
    premium_prompts: &BTreeSet<String>,
    thresholds: &ThresholdProfile,
) -> Vec<TemporalSignal> {
    let mut baselines: BTreeMap<&str, u64> = BTreeMap::new();
    let mut out = Vec::new();
    for (ri, resp) in events.iter().enumerate() {
        let (EventKind::Response, Some(latency)) = (resp.kind, resp.latency_ms) else {
            continue;
        };
        let baseline = match baselines.get(resp.host.as_str()) {
            Some(b) => *b,
            None => match baseline_latency(events, &resp.host) {
                Ok(b) => *baselines.entry(&resp.host).or_insert(b),
                Err(_) => continue,
            },
        };
        let excess = latency as i64 - baseline as i64;
        if excess <= thresholds.latency_excess_ms {
            continue;
        }
        let prompt = events.iter().enumerate().find(|(_, p)| {
            p.kind == EventKind::PromptShown
                && p.element_id.as_ref().is_some_and(|id| premium_prompts.contains(id))
                && within(resp.t_ms, p.t_ms, thresholds.latency_corr_window_ms)
        });
        if let Some((pi, p)) = prompt {
            out.push(TemporalSignal {
                t_ms: resp.t_ms,
                evidence: SignalEvidence::LatencyInjection {
                    response_index: ri,
                    prompt_index: pi,
                    prompt_element_id: p.element_id.clone().unwrap_or_default(),
                    latency_ms: latency,
                    baseline_ms: baseline,
                    excess_ms: excess,
                },
            });
        }
    }
    out
}

/// Mutations moving a salience-flagged element farther than the threshold
/// fraction of the viewport diagonal, shortly after a click or scroll.
pub fn detect_relocation(
    events: &[InteractionEvent],
    salience_flags: &BTreeMap<String, bool>,
    viewport: &Viewport,
    thresholds: &ThresholdProfile,
) -> Vec<TemporalSignal> {
    let diagonal = viewport.diagonal();
    let mut out = Vec::new();
    for (mi, m) in events.iter().enumerate() {
        if m.kind != EventKind::Mutation {
            continue;
        }
        let Some(id) = m.element_id.as_deref() else { continue };
        if !salience_flags.get(id).copied().unwrap_or(false) {
            continue;
        }
        let Some(distance) = move_distance(m) else { continue };
        let frac = distance / diagonal;
        if frac <= thresholds.relocation_frac {
            continue;
        }
        // the most recent qualifying input
        let input = events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind.is_user_input() && within(e.t_ms, m.t_ms, thresholds.relocation_window_ms))
            .max_by_key(|(i, e)| (e.t_ms, *i));
        if let Some((ii, _)) = input {
            out.push(TemporalSignal {
                t_ms: m.t_ms,
                evidence: SignalEvidence::Relocation {
                    mutation_index: mi,
                    input_index: ii,
                    element_id: id.to_owned(),
                    distance_px: distance,
                    distance_frac: frac,
                },
            });
        }
    }
    out
}

/// One signal per prompt hash whose longest run of strictly shrinking
/// inter-arrival intervals spans at least `loop_min_count` occurrences.
pub fn detect_reinforcement_loop(events: &[InteractionEvent], thresholds: &ThresholdProfile) -> Vec<TemporalSignal> {
    let mut by_hash: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        if let (EventKind::PromptShown, Some(h)) = (e.kind, e.prompt_hash.as_deref()) {
            by_hash.entry(h).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for (hash, idx) in by_hash {
        let run = longest_shrinking_run(&idx.iter().map(|&i| events[i].t_ms).collect::<Vec<_>>());
        if (run.len() as i64) < thresholds.loop_min_count.max(2) {
            continue;
        }
        let occurrence_indices: Vec<usize> = run.iter().map(|&k| idx[k]).collect();
        let times: Vec<u64> = occurrence_indices.iter().map(|&i| events[i].t_ms).collect();
        out.push(TemporalSignal {
            t_ms: *times.last().expect("run is non-empty"),
            evidence: SignalEvidence::ReinforcementLoop {
                prompt_hash: hash.to_owned(),
                intervals_ms: times.windows(2).map(|w| w[1] - w[0]).collect(),
                element_ids: occurrence_indices
                    .iter()
                    .map(|&i| events[i].element_id.clone().unwrap_or_default())
                    .collect(),
                occurrence_indices,
            },
        });
    }
    out.sort_by_key(|s| s.t_ms);
    out
}

/// Positions of the longest (earliest on ties) run of consecutive
/// occurrences whose intervals strictly decrease.
fn longest_shrinking_run(times: &[u64]) -> Vec<usize> {
    if times.len() < 2 {
        return (0..times.len()).collect();
    }
    let mut best = (0, 2);
    let mut start = 0;
    for end in 2..times.len() {
        let prev = times[end - 1] - times[end - 2];
        let cur = times[end] - times[end - 1];
        if cur >= prev {
            start = end - 1;
        }
        if end + 1 - start > best.1 - best.0 {
            best = (start, end + 1);
        }
    }
    (best.0..best.1).collect()
}

/// All three detectors over one snapshot's log. Latency detection is skipped
/// silently when no baseline exists.
pub fn detect_all(
    events: &[InteractionEvent],
    premium_prompts: &BTreeSet<String>,
    salience_flags: &BTreeMap<String, bool>,
    viewport: &Viewport,
    thresholds: &ThresholdProfile,
) -> Vec<TemporalSignal> {
    let mut all = detect_latency_injection(events, premium_prompts, thresholds);
    all.extend(detect_relocation(events, salience_flags, viewport, thresholds));
    all.extend(detect_reinforcement_loop(events, thresholds));
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BBox;
    use proptest::prelude::*;

    const H: &str = "shop.example";

    fn premium() -> BTreeSet<String> {
        ["upsell".to_string()].into()
    }

    fn vp() -> Viewport {
        Viewport::new(1280.0, 720.0)
    }

    #[test]
    fn baseline_medians() {
        let r = |ls: &[u64]| -> Vec<InteractionEvent> {
            ls.iter().enumerate().map(|(i, &l)| InteractionEvent::response(i as u64, l, H)).collect()
        };
        assert_eq!(baseline_latency(&r(&[200]), H), Ok(200));
        assert_eq!(baseline_latency(&r(&[100, 300, 200]), H), Ok(200));
        assert_eq!(baseline_latency(&r(&[100, 200, 300, 400]), H), Ok(200));
        assert_eq!(baseline_latency(&r(&[]), H), Err(TemporalError::NoBaseline(H.into())));
        assert!(baseline_latency(&r(&[100]), "other.example").is_err());
    }

    fn latency_log(slow: u64, prompt_at: u64) -> Vec<InteractionEvent> {
        vec![
            InteractionEvent::response(0, 200, H),
            InteractionEvent::response(100, 200, H),
            InteractionEvent::response(1000, slow, H),
            InteractionEvent::prompt_shown(prompt_at, "upsell", "Upgrade to Premium", H),
        ]
    }

    #[test]
    fn latency_injection_cases() {
        let t = ThresholdProfile::default();
        let s = detect_latency_injection(&latency_log(900, 3000), &premium(), &t);
        assert_eq!(s.len(), 1);
        let SignalEvidence::LatencyInjection { excess_ms, .. } = s[0].evidence else { panic!() };
        assert_eq!(excess_ms, 700);
        assert!(s[0].verify(&latency_log(900, 3000), &vp(), &t));

        assert!(detect_latency_injection(&latency_log(600, 3000), &premium(), &t).is_empty());
        // window ends at 1000 + 5000
        assert!(detect_latency_injection(&latency_log(900, 6001), &premium(), &t).is_empty());
        assert_eq!(detect_latency_injection(&latency_log(900, 6000), &premium(), &t).len(), 1);
        // prompt on an element without the premium role
        assert!(detect_latency_injection(&latency_log(900, 3000), &BTreeSet::new(), &t).is_empty());
    }

    #[test]
    fn latency_excess_boundary() {
        let t = ThresholdProfile::default();
        for (excess, expected) in [(400, 0), (500, 0), (501, 1)] {
            let log = latency_log(200 + excess, 2000);
            assert_eq!(detect_latency_injection(&log, &premium(), &t).len(), expected, "excess {excess}");
        }
    }

    fn relocation_log(dx: f64, after_click_ms: u64) -> Vec<InteractionEvent> {
        let from = BBox::new(100.0, 100.0, 120.0, 40.0);
        vec![
            InteractionEvent::click(1000, "other", H),
            InteractionEvent::mutation(1000 + after_click_ms, "cta", from, BBox::new(100.0 + dx, 100.0, 120.0, 40.0), H),
        ]
    }

    #[test]
    fn relocation_cases() {
        let t = ThresholdProfile::default();
        let flagged: BTreeMap<String, bool> = [("cta".to_string(), true)].into();
        let unflagged: BTreeMap<String, bool> = [("cta".to_string(), false)].into();
        // independent geometry: 10% of hypot(1280, 720)
        let limit = 0.1 * (1280.0f64 * 1280.0 + 720.0 * 720.0).sqrt();
        assert!((limit - 146.86).abs() < 0.01);

        let log = relocation_log(200.0, 500);
        let s = detect_relocation(&log, &flagged, &vp(), &t);
        assert_eq!(s.len(), 1);
        assert!(s[0].verify(&log, &vp(), &t));
        assert_eq!(s[0].element_ids(), ["cta"]);

        assert!(detect_relocation(&log, &unflagged, &vp(), &t).is_empty());
        assert!(detect_relocation(&relocation_log(100.0, 500), &flagged, &vp(), &t).is_empty());
        assert!(detect_relocation(&relocation_log(200.0, 2001), &flagged, &vp(), &t).is_empty());
        assert_eq!(detect_relocation(&relocation_log(limit + 0.01, 2000), &flagged, &vp(), &t).len(), 1);
    }

    fn prompts(times: &[u64]) -> Vec<InteractionEvent> {
        times
            .iter()
            .map(|&t| InteractionEvent::prompt_shown(t, "nag", "Turn on notifications?", H))
            .collect()
    }

    #[test]
    fn reinforcement_loop_cases() {
        let t = ThresholdProfile::default();
        let log = prompts(&[0, 10_000, 16_000, 19_000]);
        let s = detect_reinforcement_loop(&log, &t);
        assert_eq!(s.len(), 1);
        let SignalEvidence::ReinforcementLoop { intervals_ms, .. } = &s[0].evidence else { panic!() };
        assert_eq!(intervals_ms, &[10_000, 6_000, 3_000]);
        assert!(s[0].verify(&log, &vp(), &t));

        assert!(detect_reinforcement_loop(&prompts(&[0, 1000]), &t).is_empty());
        assert!(detect_reinforcement_loop(&prompts(&[0, 3000, 9000, 19_000]), &t).is_empty());
        // plateau does not count as rising frequency
        assert!(detect_reinforcement_loop(&prompts(&[0, 5000, 10_000]), &t).is_empty());
        // whitespace and case do not change prompt identity
        let mut mixed = prompts(&[0, 10_000]);
        mixed.push(InteractionEvent::prompt_shown(15_000, "nag", "  turn ON   notifications? ", H));
        assert_eq!(detect_reinforcement_loop(&mixed, &t).len(), 1);
    }

    #[test]
    fn longest_run_is_found_after_a_reset() {
        // intervals 5, 9 | 8, 4, 1
        assert_eq!(longest_shrinking_run(&[0, 5, 14, 22, 26, 27]), vec![1, 2, 3, 4, 5]);
        assert_eq!(longest_shrinking_run(&[7]), vec![0]);
    }

    #[test]
    fn tampered_evidence_fails_verification() {
        let t = ThresholdProfile::default();
        let log = latency_log(900, 3000);
        let mut s = detect_latency_injection(&log, &premium(), &t).remove(0);
        if let SignalEvidence::LatencyInjection { excess_ms, .. } = &mut s.evidence {
            *excess_ms = 900;
        }
        assert!(!s.verify(&log, &vp(), &t));
    }

    #[test]
    fn signal_json_is_tagged_by_kind() {
        let t = ThresholdProfile::default();
        let s = detect_reinforcement_loop(&prompts(&[0, 10_000, 16_000]), &t);
        let json = serde_json::to_value(&s[0]).unwrap();
        assert_eq!(json["kind"], "reinforcement_loop");
        assert_eq!(serde_json::from_value::<TemporalSignal>(json).unwrap(), s[0]);
    }

    fn arb_log() -> impl Strategy<Value = Vec<InteractionEvent>> {
        let ev = (0u64..4_000, 0u8..5, 0u64..1500, -300.0f64..300.0, 0u8..3).prop_map(|(dt, k, lat, dx, p)| {
            let b = BBox::new(200.0, 200.0, 80.0, 30.0);
            (dt, match k {
                0 => InteractionEvent::response(0, lat, H),
                1 => InteractionEvent::click(0, "x", H),
                2 => InteractionEvent::mutation(0, "cta", b, BBox::new(200.0 + dx, 200.0 + dx, 80.0, 30.0), H),
                3 => InteractionEvent::prompt_shown(0, "upsell", ["Upgrade", "Go premium", "Nag"][p as usize], H),
                _ => InteractionEvent::scroll(0, H),
            })
        });
        prop::collection::vec(ev, 0..30).prop_map(|items| {
            let mut t = 0;
            items
                .into_iter()
                .map(|(dt, mut e)| {
                    t += dt;
                    e.t_ms = t;
                    e
                })
                .collect()
        })
    }

    fn detect(log: &[InteractionEvent]) -> Vec<TemporalSignal> {
        let flags: BTreeMap<String, bool> = [("cta".to_string(), true)].into();
        detect_all(log, &premium(), &flags, &vp(), &ThresholdProfile::default())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn every_signal_verifies(log in arb_log()) {
            for s in detect(&log) {
                prop_assert!(s.verify(&log, &vp(), &ThresholdProfile::default()), "{s:?}");
            }
        }

        #[test]
        fn time_translation_invariance(log in arb_log(), shift in 0u64..1_000_000) {
            let shifted: Vec<_> = log.iter().cloned().map(|mut e| { e.t_ms += shift; e }).collect();
            let back: Vec<_> = detect(&shifted).into_iter().map(|mut s| { s.t_ms -= shift; s }).collect();
            prop_assert_eq!(back, detect(&log));
        }

        #[test]
        fn flat_latency_never_fires(n in 1usize..20, lat in 0u64..2000) {
            let mut log: Vec<_> = (0..n).map(|i| InteractionEvent::response(i as u64 * 10, lat, H)).collect();
            log.push(InteractionEvent::prompt_shown(n as u64 * 10, "upsell", "Upgrade", H));
            prop_assert!(detect_latency_injection(&log, &premium(), &ThresholdProfile::default()).is_empty());
        }

        #[test]
        fn appending_prompts_or_inputs_is_monotone(log in arb_log(), extra in 0u8..3, dt in 0u64..3000) {
            let before = detect(&log);
            let last = log.last().map_or(0, |e| e.t_ms) + dt;
            let mut longer = log.clone();
            longer.push(match extra {
                0 => InteractionEvent::prompt_shown(last, "upsell", "Upgrade", H),
                1 => InteractionEvent::click(last, "x", H),
                _ => InteractionEvent::prompt_shown(last, "upsell", "Nag", H),
            });
            let after = detect(&longer);
            for kind in ["latency_injection", "relocation", "reinforcement_loop"] {
                let count = |v: &[TemporalSignal]| v.iter().filter(|s| s.kind() == kind).count();
                prop_assert!(count(&after) >= count(&before), "{kind}");
            }
        }
    }
}
