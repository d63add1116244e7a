//! Adaptive visual anchoring: the fallback-routing connector between the
//! anchor cache (fast, deterministic) and the mock VLA supervisor (slow,
//! semantic).
//!
//! A grounding either hits with coordinates or raises a drift exception
//! that carries none. Only the supervisor repair path writes to the cache.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GroundTruthPort, StyleSignature};
use crate::fusion::Affordance;
use crate::geom::Rect;
use crate::ledger::{Charges, CostUnits};
use crate::rng;

pub const DEFAULT_TAU: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum AnchorError {
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("tau {0} outside [0, 1]")]
    InvalidTau(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualAnchor {
    pub semantic_key: String,
    pub template_signature: StyleSignature,
    pub expected_bbox: Rect,
    pub last_verified_revision: u64,
}

/// Weights of the match score and the distance that maps to zero locality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    pub w_loc: f64,
    pub w_style: f64,
    /// Center distance at which locality reaches 0; the screen diagonal.
    pub diag_norm: f64,
}

impl Scoring {
    pub fn for_screen(width: i32, height: i32) -> Self {
        Self { w_loc: 0.5, w_style: 0.5, diag_norm: f64::from(width).hypot(f64::from(height)) }
    }

    pub fn locality(&self, expected: &Rect, observed: &Rect) -> f64 {
        1.0 - (expected.center_distance(observed) / self.diag_norm).min(1.0)
    }

    pub fn score(&self, anchor: &VisualAnchor, candidate: &Affordance) -> f64 {
        let loc = self.locality(&anchor.expected_bbox, &candidate.bbox);
        let style = candidate.style.map_or(0.0, |s| anchor.template_signature.similarity(&s));
        (self.w_loc * loc + self.w_style * style).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub score: f64,
    pub candidate: Option<Affordance>,
}

/// Best-scoring affordance for `anchor`. Ties go to the closer candidate,
/// then the lower affordance id.
pub fn match_anchor(anchor: &VisualAnchor, affordances: &[Affordance], scoring: &Scoring) -> MatchResult {
    let best = affordances
        .iter()
        .map(|a| (scoring.score(anchor, a), anchor.expected_bbox.center_distance(&a.bbox), a))
        .max_by(|x, y| {
            x.0.total_cmp(&y.0).then(y.1.total_cmp(&x.1)).then(y.2.id.cmp(&x.2.id))
        });
    match best {
        Some((score, _, a)) => MatchResult { score, candidate: Some(a.clone()) },
        None => MatchResult { score: 0.0, candidate: None },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftCause {
    ColdStart,
    BelowThreshold,
    NoCandidate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundingResult {
    Hit { bbox: Rect, score: f64, candidate: Affordance },
    /// Execution is inhibited. Deliberately carries no coordinates.
    DriftException { score: f64, cause: DriftCause },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCache {
    entries: BTreeMap<String, VisualAnchor>,
    tau: f64,
    scoring: Scoring,
}

impl AnchorCache {
    pub fn new(tau: f64, scoring: Scoring) -> Result<Self, AnchorError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(AnchorError::InvalidTau(tau));
        }
        Ok(Self { entries: BTreeMap::new(), tau, scoring })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<(), AnchorError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(AnchorError::InvalidTau(tau));
        }
        self.tau = tau;
        Ok(())
    }

    pub fn scoring(&self) -> &Scoring {
        &self.scoring
    }

    pub fn get(&self, key: &str) -> Option<&VisualAnchor> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Seeds an entry directly (warm-start fixtures).
    pub fn insert(&mut self, anchor: VisualAnchor) {
        self.entries.insert(anchor.semantic_key.clone(), anchor);
    }

    pub fn match_key(&self, key: &str, affordances: &[Affordance]) -> Option<MatchResult> {
        self.entries.get(key).map(|a| match_anchor(a, affordances, &self.scoring))
    }

    /// `score >= tau` hits; anything lower, a missing key, or an empty frame
    /// raises a drift exception.
    pub fn ground(&self, key: &str, affordances: &[Affordance]) -> GroundingResult {
        let Some(m) = self.match_key(key, affordances) else {
            return GroundingResult::DriftException { score: 0.0, cause: DriftCause::ColdStart };
        };
        match m.candidate {
            None => GroundingResult::DriftException { score: 0.0, cause: DriftCause::NoCandidate },
            Some(c) if m.score >= self.tau => GroundingResult::Hit { bbox: c.bbox, score: m.score, candidate: c },
            Some(_) => GroundingResult::DriftException { score: m.score, cause: DriftCause::BelowThreshold },
        }
    }

    /// Replaces (or creates) the entry for `key` from a successful supervisor
    /// response. Other keys are untouched.
    pub fn repair(&mut self, key: &str, response: &SupervisorResponse, revision: u64) -> Result<(), AnchorError> {
        let (Some(bbox), Some(template)) = (response.bbox, response.new_template_signature) else {
            return Err(AnchorError::ContractViolation(format!(
                "repair of `{key}` with a response that found nothing"
            )));
        };
        self.entries.insert(
            key.to_string(),
            VisualAnchor {
                semantic_key: key.to_string(),
                template_signature: template,
                expected_bbox: bbox,
                last_verified_revision: revision,
            },
        );
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cache serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// `"Submit@Invoice_Form"` style key for a target inside a container path.
pub fn semantic_key(target: &str, container_path: &[String]) -> String {
    format!("{target}@{}", container_path.join("/"))
}

/// Target label part of a semantic key.
pub fn key_target(key: &str) -> &str {
    key.split_once('@').map_or(key, |(t, _)| t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorResponse {
    pub found: bool,
    pub bbox: Option<Rect>,
    pub new_template_signature: Option<StyleSignature>,
    pub charged_latency_ms: u64,
    pub charged_cost_units: CostUnits,
}

/// Stand-in for a vision-language-action model. It resolves a semantic key
/// against ground truth through the privileged port and charges a fixed,
/// large latency and cost per call.
#[derive(Debug, Clone, PartialEq)]
pub struct MockSupervisor {
    pub latency_ms: u64,
    pub cost: CostUnits,
    /// Probability that a call fails: half of the failures find nothing,
    /// the other half return a wrong widget.
    pub error_prob: f64,
    pub seed: u64,
}

impl MockSupervisor {
    pub fn new(charges: &Charges, error_prob: f64, seed: u64) -> Self {
        Self { latency_ms: charges.supervisor_ms, cost: charges.supervisor_cost, error_prob, seed }
    }

    /// `call_path` identifies the call (episode, step, attempt) so error
    /// draws are reproducible.
    pub fn supervise(&self, key: &str, port: &dyn GroundTruthPort, call_path: &[u64]) -> SupervisorResponse {
        let miss = SupervisorResponse {
            found: false,
            bbox: None,
            new_template_signature: None,
            charged_latency_ms: self.latency_ms,
            charged_cost_units: self.cost,
        };
        if self.error_prob > 0.0 {
            let mut rng = rng::stream(self.seed, call_path, "supervisor");
            if rng.random_bool(self.error_prob) {
                if rng.random_bool(0.5) {
                    return miss;
                }
                let ids = port.widget_ids();
                if ids.is_empty() {
                    return miss;
                }
                let wrong = ids[rng.random_range(0..ids.len())];
                let Some(hit) = port.locate_id(wrong) else { return miss };
                return SupervisorResponse {
                    found: true,
                    bbox: Some(hit.bbox),
                    new_template_signature: Some(hit.style),
                    ..miss
                };
            }
        }
        let mut hits = port.locate(key_target(key));
        hits.sort_by_key(|h| (!h.clickable, h.widget));
        match hits.first() {
            Some(h) if h.clickable => SupervisorResponse {
                found: true,
                bbox: Some(h.bbox),
                new_template_signature: Some(h.style),
                ..miss
            },
            _ => miss,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Category, Effect, Environment, Screen, Widget};
    use crate::fusion::Provenance;

    const BLUE: StyleSignature = StyleSignature([0.1, 0.35, 0.9, 0.8, 0.5, 0.5, 0.2, 0.6]);
    const GREEN: StyleSignature = StyleSignature([0.15, 0.8, 0.3, 0.45, 0.5, 0.5, 0.55, 0.6]);

    fn aff(id: u32, bbox: Rect, text: &str, style: StyleSignature) -> Affordance {
        Affordance {
            id,
            bbox,
            category: Category::Button,
            text: Some(text.into()),
            confidence: 1.0,
            uncertain: false,
            provenance: Provenance::Fused,
            style: Some(style),
            detection_source: None,
            text_source: None,
        }
    }

    fn cache() -> AnchorCache {
        let mut c = AnchorCache::new(DEFAULT_TAU, Scoring::for_screen(1280, 800)).unwrap();
        c.insert(VisualAnchor {
            semantic_key: "Submit@Invoice_Form".into(),
            template_signature: BLUE,
            expected_bbox: Rect::new(160, 200, 100, 40),
            last_verified_revision: 0,
        });
        c.insert(VisualAnchor {
            semantic_key: "Cancel@Invoice_Form".into(),
            template_signature: BLUE,
            expected_bbox: Rect::new(420, 200, 100, 40),
            last_verified_revision: 0,
        });
        c
    }

    #[test]
    fn identity_match_scores_one() {
        let affs = [aff(0, Rect::new(160, 200, 100, 40), "Submit", BLUE)];
        match cache().ground("Submit@Invoice_Form", &affs) {
            GroundingResult::Hit { score, bbox, .. } => {
                assert_eq!(score, 1.0);
                assert_eq!(bbox, Rect::new(160, 200, 100, 40));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shifted_restyled_target_falls_below_tau() {
        let affs = [aff(0, Rect::new(210, 200, 100, 40), "Submit", GREEN)];
        let m = cache().match_key("Submit@Invoice_Form", &affs).unwrap();
        // Independent evaluation of the documented score.
        let diag = (1280.0f64 * 1280.0 + 800.0 * 800.0).sqrt();
        let l1: f64 = [0.05, 0.45, 0.6, 0.35, 0.0, 0.0, 0.35, 0.0].iter().sum();
        let expected = 0.5 * (1.0 - 50.0 / diag) + 0.5 * (1.0 - l1 / 8.0);
        assert!((m.score - expected).abs() < 1e-12);
        assert!(m.score < DEFAULT_TAU);
        assert!(matches!(
            cache().ground("Submit@Invoice_Form", &affs),
            GroundingResult::DriftException { cause: DriftCause::BelowThreshold, .. }
        ));
    }

    #[test]
    fn empty_frame_scores_zero() {
        let m = cache().match_key("Submit@Invoice_Form", &[]).unwrap();
        assert_eq!(m.score, 0.0);
        assert!(m.candidate.is_none());
    }

    #[test]
    fn missing_key_is_cold_start() {
        assert!(matches!(
            cache().ground("Save@Dialog", &[]),
            GroundingResult::DriftException { cause: DriftCause::ColdStart, score } if score == 0.0
        ));
    }

    #[test]
    fn boundary_is_inclusive() {
        let affs = [aff(0, Rect::new(210, 200, 100, 40), "Submit", GREEN)];
        let mut c = cache();
        let score = c.match_key("Submit@Invoice_Form", &affs).unwrap().score;
        c.set_tau(score).unwrap();
        assert!(matches!(c.ground("Submit@Invoice_Form", &affs), GroundingResult::Hit { .. }));
        c.set_tau(f64::from_bits(score.to_bits() + 1)).unwrap();
        assert!(matches!(c.ground("Submit@Invoice_Form", &affs), GroundingResult::DriftException { .. }));
    }

    fn drifted_env() -> Environment {
        let screen = Screen::new(
            1280,
            800,
            vec![
                Widget::new(5, Rect::new(210, 200, 100, 40), "Submit", Category::Button, GREEN)
                    .with_effect(Effect::Submit),
                Widget::new(8, Rect::new(160, 200, 100, 40), "Delete", Category::Button, BLUE)
                    .with_effect(Effect::Delete)
                    .with_z(1),
            ],
        )
        .unwrap();
        Environment::new(screen, 0)
    }

    #[test]
    fn supervise_then_repair_converges() {
        let env = drifted_env();
        let sup = MockSupervisor::new(&Charges::default(), 0.0, 7);
        let resp = sup.supervise("Submit@Invoice_Form", &env, &[0, 0, 0]);
        assert!(resp.found);
        assert_eq!(resp.bbox, Some(Rect::new(210, 200, 100, 40)));
        assert_eq!(resp.new_template_signature, Some(GREEN));
        assert_eq!(resp.charged_latency_ms, 10_000);

        let mut c = cache();
        let before_cancel = c.get("Cancel@Invoice_Form").cloned();
        c.repair("Submit@Invoice_Form", &resp, 1).unwrap();
        assert_eq!(c.get("Cancel@Invoice_Form").cloned(), before_cancel);
        let affs = [aff(0, Rect::new(210, 200, 100, 40), "Submit", GREEN)];
        assert!(matches!(c.ground("Submit@Invoice_Form", &affs), GroundingResult::Hit { score, .. } if score >= DEFAULT_TAU));
    }

    #[test]
    fn absent_target_not_found() {
        let sup = MockSupervisor::new(&Charges::default(), 0.0, 7);
        let resp = sup.supervise("Approve@Invoice_Form", &drifted_env(), &[0]);
        assert!(!resp.found);
        assert!(resp.bbox.is_none() && resp.new_template_signature.is_none());
        let mut c = cache();
        assert!(matches!(c.repair("Approve@Invoice_Form", &resp, 1), Err(AnchorError::ContractViolation(_))));
    }

    #[test]
    fn supervisor_errors_are_reproducible() {
        let sup = MockSupervisor::new(&Charges::default(), 0.5, 3);
        let env = drifted_env();
        let a: Vec<_> = (0..40).map(|i| sup.supervise("Submit@", &env, &[i])).collect();
        let b: Vec<_> = (0..40).map(|i| sup.supervise("Submit@", &env, &[i])).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|r| !r.found));
        assert!(a.iter().any(|r| r.bbox == Some(Rect::new(160, 200, 100, 40))));
    }

    #[test]
    fn cache_json_round_trip() {
        let c = cache();
        assert_eq!(AnchorCache::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_tau() {
        assert!(AnchorCache::new(1.5, Scoring::for_screen(10, 10)).is_err());
    }
}
