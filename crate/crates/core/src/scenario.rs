//! Scenario files: screen, drift schedule, task plan, noise, and policy
//! defaults, loaded from JSON.
//!
//! Any `"style"` value may be a palette name instead of a literal tuple; the
//! loader substitutes it before typed decoding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::anchoring::{semantic_key, DEFAULT_TAU};
use crate::env::{DriftEvent, DriftKind, DriftTrigger, Effect, EnvError, Screen, StyleSignature, Widget};
use crate::fusion::FusionConfig;
use crate::geom::Point;
use crate::hierarchy::RelativeAddress;
use crate::ledger::Charges;
use crate::perception::NoiseModel;
use crate::scenegraph::Precondition;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("field `{path}`: {message}")]
    Field { path: String, message: String },
    #[error("invalid screen: {0}")]
    Screen(#[from] EnvError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenSpec {
    pub width: i32,
    pub height: i32,
    pub widgets: Vec<Widget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepAction {
    Click,
    Type { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStep {
    pub address: RelativeAddress,
    pub action: StepAction,
    pub declared_intent: Effect,
    #[serde(default)]
    pub preconditions: Vec<Precondition>,
    #[serde(default = "yes")]
    pub expected_change: bool,
    /// Coordinates an open-loop script replays for this step.
    pub recorded_point: Point,
}

fn yes() -> bool {
    true
}

impl PlanStep {
    pub fn cache_key(&self) -> String {
        semantic_key(&self.address.target_label, &self.address.container_path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicon {
    #[serde(default = "default_actionable")]
    pub actionable: BTreeSet<String>,
    /// Visible word → effect a plan author expects from it.
    #[serde(default)]
    pub intents: BTreeMap<String, Effect>,
    #[serde(default = "default_destructive")]
    pub destructive: BTreeSet<Effect>,
}

fn default_actionable() -> BTreeSet<String> {
    FusionConfig::default().actionable_lexicon
}

fn default_destructive() -> BTreeSet<Effect> {
    BTreeSet::from([Effect::Delete, Effect::Cancel])
}

impl Default for Lexicon {
    fn default() -> Self {
        Self { actionable: default_actionable(), intents: BTreeMap::new(), destructive: default_destructive() }
    }
}

impl Lexicon {
    /// The visible text names an effect that is destructive and differs from
    /// `intent`.
    pub fn is_forbidden(&self, text: &str, intent: Effect) -> bool {
        self.intents.get(text).is_some_and(|e| *e != intent && self.destructive.contains(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyDefaults {
    pub tau: f64,
    pub iou_threshold: f64,
    pub downgrade_factor: f64,
    pub charges: Charges,
    pub supervisor_error_prob: f64,
    /// Seed the anchor cache from the pre-drift screen before the first record.
    pub warm_cache: bool,
    pub records: u64,
    /// Stop the batch at the first destroyed record.
    pub halt_on_violation: bool,
}

impl Default for PolicyDefaults {
    fn default() -> Self {
        let f = FusionConfig::default();
        Self {
            tau: DEFAULT_TAU,
            iou_threshold: f.iou_threshold,
            downgrade_factor: f.downgrade_factor,
            charges: Charges::default(),
            supervisor_error_prob: 0.0,
            warm_cache: true,
            records: 1,
            halt_on_violation: true,
        }
    }
}

/// Clicks swallowed at the start of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagFault {
    pub episode: u64,
    pub clicks: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyExpectation {
    pub safety_violations: Option<u64>,
    pub task_aborts: Option<u64>,
    pub drift_supervisor_calls: Option<u64>,
    pub max_steady_state_latency_ms: Option<f64>,
    /// Total simulated time should equal steps × this, within `total_ms_tolerance`.
    pub ms_per_step: Option<f64>,
    pub total_ms_tolerance: Option<f64>,
    pub max_total_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    pub rpa: Option<PolicyExpectation>,
    pub vla: Option<PolicyExpectation>,
    pub hybrid: Option<PolicyExpectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub palette: BTreeMap<String, StyleSignature>,
    pub screen: ScreenSpec,
    #[serde(default)]
    pub drifts: Vec<DriftEvent>,
    /// Drifts a sweep cycles through, one per Bernoulli firing.
    #[serde(default)]
    pub sweep_drifts: Vec<DriftKind>,
    pub plan: Vec<PlanStep>,
    #[serde(default)]
    pub lexicon: Lexicon,
    #[serde(default = "NoiseModel::zero")]
    pub noise: NoiseModel,
    #[serde(default)]
    pub policy_defaults: PolicyDefaults,
    #[serde(default)]
    pub lag_faults: Vec<LagFault>,
    #[serde(default)]
    pub expect: Expectations,
}

fn substitute_styles(v: &mut Value, palette: &BTreeMap<String, StyleSignature>, path: &str) -> Result<(), ScenarioError> {
    match v {
        Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                if let (true, Value::String(name)) = (k == "style", &*child) {
                    let style = palette.get(name).ok_or_else(|| ScenarioError::Field {
                        path: here.clone(),
                        message: format!("unknown palette style `{name}`"),
                    })?;
                    *child = serde_json::to_value(style).expect("style serializes");
                } else {
                    substitute_styles(child, palette, &here)?;
                }
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter_mut().enumerate() {
                substitute_styles(child, palette, &format!("{path}[{i}]"))?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn field_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> ScenarioError {
    ScenarioError::Field { path: e.path().to_string(), message: e.inner().to_string() }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let palette: BTreeMap<String, StyleSignature> = match v.get("palette") {
            Some(p) => serde_path_to_error::deserialize(p.clone()).map_err(|e| {
                let ScenarioError::Field { path, message } = field_error(e) else { unreachable!() };
                ScenarioError::Field { path: format!("palette.{path}"), message }
            })?,
            None => BTreeMap::new(),
        };
        if let Value::Object(map) = &mut v {
            for (k, child) in map.iter_mut().filter(|(k, _)| k.as_str() != "palette") {
                substitute_styles(child, &palette, k)?;
            }
        }
        let scenario: Scenario = serde_path_to_error::deserialize(v).map_err(field_error)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Scenario::from_json(&text)
    }

    pub fn base_screen(&self) -> Result<Screen, EnvError> {
        Screen::new(self.screen.width, self.screen.height, self.screen.widgets.clone())
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            iou_threshold: self.policy_defaults.iou_threshold,
            downgrade_factor: self.policy_defaults.downgrade_factor,
            actionable_lexicon: self.lexicon.actionable.clone(),
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let screen = self.base_screen()?;
        if self.plan.is_empty() {
            return bad("plan has no steps".into());
        }
        for (name, style) in &self.palette {
            if !style.is_valid() {
                return bad(format!("palette style `{name}` has components outside [0, 1]"));
            }
        }
        self.noise.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let d = &self.policy_defaults;
        for (name, x) in [
            ("tau", d.tau),
            ("iou_threshold", d.iou_threshold),
            ("downgrade_factor", d.downgrade_factor),
            ("supervisor_error_prob", d.supervisor_error_prob),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return bad(format!("policy_defaults.{name} = {x} is outside [0, 1]"));
            }
        }
        if d.records == 0 {
            return bad("policy_defaults.records must be at least 1".into());
        }
        for (i, step) in self.plan.iter().enumerate() {
            if !screen.bounds().contains_point(step.recorded_point) {
                return bad(format!("plan[{i}].recorded_point lies outside the screen"));
            }
        }
        for (i, drift) in self.drifts.iter().enumerate() {
            if let DriftTrigger::Bernoulli(p) = drift.trigger {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("drifts[{i}] probability {p} is outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "mini",
        "seed": 1,
        "palette": {"blue": [0.1, 0.35, 0.9, 0.8, 0.5, 0.5, 0.2, 0.6]},
        "screen": {"width": 400, "height": 300, "widgets": [
            {"id": 1, "bbox": {"x": 10, "y": 10, "w": 80, "h": 30}, "label": "OK",
             "style": "blue", "category": "button", "effect": "Submit"}
        ]},
        "plan": [{"address": {"target_label": "OK"}, "action": {"kind": "click"},
                  "declared_intent": "Submit", "recorded_point": {"x": 50, "y": 25}}]
    }"#;

    #[test]
    fn loads_with_palette_names() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.screen.widgets[0].style, s.palette["blue"]);
        assert_eq!(s.noise, NoiseModel::zero());
        assert_eq!(s.plan[0].cache_key(), "OK@");
        assert!(s.plan[0].expected_change);
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = Scenario::from_json("{\n\"name\": \"x\",\n oops }").unwrap_err();
        assert!(matches!(err, ScenarioError::Syntax { line: 3, .. }), "{err}");
    }

    #[test]
    fn field_error_reports_path() {
        let text = MINIMAL.replace("\"category\": \"button\"", "\"category\": \"lever\"");
        let err = Scenario::from_json(&text).unwrap_err();
        let ScenarioError::Field { path, .. } = &err else { panic!("{err}") };
        assert_eq!(path, "screen.widgets[0].category");
    }

    #[test]
    fn unknown_palette_name() {
        let err = Scenario::from_json(&MINIMAL.replace("\"style\": \"blue\"", "\"style\": \"teal\"")).unwrap_err();
        assert!(err.to_string().contains("teal"));
    }

    #[test]
    fn semantic_checks() {
        let text = MINIMAL.replace("\"x\": 50, \"y\": 25", "\"x\": 500, \"y\": 25");
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Invalid(_))));
        let text = MINIMAL.replace("\"w\": 80", "\"w\": 0");
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Screen(_))));
    }

    #[test]
    fn forbidden_lexicon() {
        let mut lex = Lexicon::default();
        lex.intents.insert("Delete".into(), Effect::Delete);
        lex.intents.insert("Submit".into(), Effect::Submit);
        assert!(lex.is_forbidden("Delete", Effect::Submit));
        assert!(!lex.is_forbidden("Delete", Effect::Delete));
        assert!(!lex.is_forbidden("Submit", Effect::Submit));
    }
}
