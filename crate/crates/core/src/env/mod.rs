//! Deterministic synthetic GUI environment.
//!
//! The environment owns the ground-truth [`Screen`], the state of the record
//! being processed and a simulated millisecond clock. Agents interact with it
//! only through [`Environment::execute`] and [`Environment::observe`]; the
//! mock supervisor additionally gets the privileged [`GroundTruthPort`].

mod drift;
mod widget;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Point, Rect};

pub use drift::{apply_drift, DriftEvent, DriftKind, DriftTrigger};
pub use widget::{Category, Effect, StyleSignature, Widget, WidgetId, STYLE_DIM};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("drift references unknown widget {0}")]
    DriftTargetMissing(WidgetId),
    #[error("widget id {0} already exists on the screen")]
    IdCollision(WidgetId),
    #[error("widget {0} has an empty or out-of-bounds box")]
    OutOfBounds(WidgetId),
    #[error("widget {0} has a style channel outside [0, 1]")]
    InvalidStyle(WidgetId),
    #[error("widget {0} carries effect {1:?} but is not a button or icon")]
    EffectOnPassiveWidget(WidgetId, Effect),
    #[error("observations come from different episodes ({0} vs {1})")]
    ObservationMismatch(u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub width: i32,
    pub height: i32,
    #[serde(default)]
    pub revision: u64,
    pub widgets: Vec<Widget>,
}

impl Screen {
    pub fn new(width: i32, height: i32, mut widgets: Vec<Widget>) -> Result<Self, EnvError> {
        widgets.sort_by_key(|w| w.id);
        let screen = Self { width, height, revision: 0, widgets };
        screen.validate()?;
        Ok(screen)
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    pub fn widget(&self, id: WidgetId) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.id == id)
    }

    pub fn find_label(&self, label: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.label == label)
    }

    pub fn next_free_id(&self) -> WidgetId {
        WidgetId(self.widgets.iter().map(|w| w.id.0).max().map_or(1, |m| m + 1))
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bounds = self.bounds();
        let mut seen = std::collections::BTreeSet::new();
        for w in &self.widgets {
            if !seen.insert(w.id) {
                return Err(EnvError::IdCollision(w.id));
            }
            if !w.bbox.is_valid() || !bounds.contains_rect(&w.bbox) {
                return Err(EnvError::OutOfBounds(w.id));
            }
            if !w.style.is_valid() {
                return Err(EnvError::InvalidStyle(w.id));
            }
            if w.effect != Effect::Noop && !w.category.is_actionable() {
                return Err(EnvError::EffectOnPassiveWidget(w.id, w.effect));
            }
        }
        Ok(())
    }

    /// Topmost enabled widget containing `p`: highest `z_order`, then the
    /// larger id.
    pub fn hit_test(&self, p: Point) -> Option<&Widget> {
        self.widgets
            .iter()
            .filter(|w| w.enabled && w.bbox.contains_point(p))
            .max_by_key(|w| (w.z_order, w.id))
    }
}

/// Simulated milliseconds since the episode started.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SimClock {
    now_ms: u64,
}

impl SimClock {
    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn charge(&mut self, ms: u64) {
        self.now_ms += ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionCommand {
    Click { point: Point },
    Hover { point: Point },
    Scroll { dy: i32 },
    Type { text: String, point: Point },
}

impl ActionCommand {
    /// Epistemic commands gather information without changing task state.
    pub fn is_epistemic(&self) -> bool {
        matches!(self, ActionCommand::Hover { .. } | ActionCommand::Scroll { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Pending,
    Approved,
    Destroyed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitInfo {
    pub widget: WidgetId,
    pub category: Category,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub hit: Option<HitInfo>,
    pub effect: Effect,
    pub safety_hazard: bool,
    /// The click was absorbed by simulated input lag.
    pub swallowed: bool,
    pub pre_revision: u64,
    pub post_revision: u64,
}

/// Opaque snapshot handed to perception. Policies may only compare two
/// observations through [`diff_observations`].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    episode: u64,
    revision: u64,
    width: i32,
    height: i32,
    widgets: Vec<Widget>,
}

impl Observation {
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    /// Renderable facts for the sensor simulators.
    pub(crate) fn widgets(&self) -> &[Widget] {
        &self.widgets
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub changed: bool,
    pub regions: Vec<Rect>,
}

/// Abstract stand-in for optical flow: which widget regions differ between
/// two frames of the same episode.
pub fn diff_observations(a: &Observation, b: &Observation) -> Result<ChangeReport, EnvError> {
    if a.episode != b.episode {
        return Err(EnvError::ObservationMismatch(a.episode, b.episode));
    }
    let before: BTreeMap<WidgetId, &Widget> = a.widgets.iter().map(|w| (w.id, w)).collect();
    let after: BTreeMap<WidgetId, &Widget> = b.widgets.iter().map(|w| (w.id, w)).collect();
    let mut regions = Vec::new();
    for (id, old) in &before {
        match after.get(id) {
            None => regions.push(old.bbox),
            Some(new) if new != old => {
                if new.bbox != old.bbox {
                    regions.push(old.bbox);
                }
                regions.push(new.bbox);
            }
            Some(_) => {}
        }
    }
    for (id, new) in &after {
        if !before.contains_key(id) {
            regions.push(new.bbox);
        }
    }
    regions.sort();
    regions.dedup();
    Ok(ChangeReport { changed: a.revision != b.revision || !regions.is_empty(), regions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthHit {
    pub widget: WidgetId,
    pub bbox: Rect,
    pub style: StyleSignature,
    pub category: Category,
    /// The widget is what a click at its center would land on.
    pub clickable: bool,
}

/// Privileged read access to ground truth. Only the mock supervisor holds it.
pub trait GroundTruthPort {
    fn locate(&self, label: &str) -> Vec<GroundTruthHit>;
    fn widget_ids(&self) -> Vec<WidgetId>;
    fn locate_id(&self, id: WidgetId) -> Option<GroundTruthHit>;
}

/// One record's worth of simulated world.
#[derive(Debug, Clone)]
pub struct Environment {
    screen: Screen,
    episode: u64,
    record: RecordStatus,
    hazard: bool,
    swallow_clicks: u32,
    pub clock: SimClock,
}

impl Environment {
    pub fn new(screen: Screen, episode: u64) -> Self {
        Self {
            screen,
            episode,
            record: RecordStatus::Pending,
            hazard: false,
            swallow_clicks: 0,
            clock: SimClock::default(),
        }
    }

    pub fn screen(&self) -> &Screen {
        &self.screen
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn record(&self) -> RecordStatus {
        self.record
    }

    pub fn safety_hazard(&self) -> bool {
        self.hazard
    }

    /// Swallow the next `n` clicks, as a laggy remote session would.
    pub fn inject_click_lag(&mut self, n: u32) {
        self.swallow_clicks += n;
    }

    pub fn apply_drift(&mut self, kind: &DriftKind) -> Result<(), EnvError> {
        self.screen = apply_drift(&self.screen, kind)?;
        Ok(())
    }

    pub fn observe(&self) -> Observation {
        Observation {
            episode: self.episode,
            revision: self.screen.revision,
            width: self.screen.width,
            height: self.screen.height,
            widgets: self.screen.widgets.clone(),
        }
    }

    /// Open-loop semantics: every well-formed command is accepted.
    pub fn execute(&mut self, cmd: &ActionCommand) -> ActionOutcome {
        let pre = self.screen.revision;
        let mut outcome = ActionOutcome {
            hit: None,
            effect: Effect::Noop,
            safety_hazard: false,
            swallowed: false,
            pre_revision: pre,
            post_revision: pre,
        };
        match cmd {
            ActionCommand::Hover { point } => {
                outcome.hit = self.screen.hit_test(*point).map(hit_info);
            }
            ActionCommand::Scroll { .. } => {}
            ActionCommand::Click { point } => {
                if self.swallow_clicks > 0 {
                    self.swallow_clicks -= 1;
                    outcome.swallowed = true;
                    return outcome;
                }
                let Some(target) = self.screen.hit_test(*point).cloned() else {
                    return outcome;
                };
                outcome.hit = Some(hit_info(&target));
                outcome.effect = target.effect;
                match target.effect {
                    Effect::Submit => self.record = RecordStatus::Approved,
                    Effect::Delete => {
                        self.record = RecordStatus::Destroyed;
                        self.hazard = true;
                        outcome.safety_hazard = true;
                    }
                    Effect::Cancel => self.record = RecordStatus::Cancelled,
                    Effect::OpenModal => {
                        if let Some(modal) = target.opens.as_deref() {
                            if self.screen.widget(modal.id).is_none() {
                                self.screen.widgets.push(modal.clone());
                                self.screen.widgets.sort_by_key(|w| w.id);
                            }
                        }
                    }
                    Effect::Noop => {}
                }
                if target.effect != Effect::Noop {
                    self.screen.revision += 1;
                }
            }
            ActionCommand::Type { text, point } => {
                if let Some(id) = self
                    .screen
                    .hit_test(*point)
                    .filter(|w| w.category == Category::TextField)
                    .map(|w| w.id)
                {
                    let w = self.screen.widgets.iter_mut().find(|w| w.id == id).expect("hit widget");
                    outcome.hit = Some(hit_info(w));
                    w.label = text.clone();
                    self.screen.revision += 1;
                }
            }
        }
        outcome.post_revision = self.screen.revision;
        outcome
    }
}

fn hit_info(w: &Widget) -> HitInfo {
    HitInfo { widget: w.id, category: w.category, label: w.label.clone() }
}

fn gt_hit(screen: &Screen, w: &Widget) -> GroundTruthHit {
    let clickable = screen.hit_test(w.bbox.center()).is_some_and(|top| top.id == w.id);
    GroundTruthHit { widget: w.id, bbox: w.bbox, style: w.style, category: w.category, clickable }
}

impl GroundTruthPort for Environment {
    fn locate(&self, label: &str) -> Vec<GroundTruthHit> {
        self.screen
            .widgets
            .iter()
            .filter(|w| w.label == label && w.enabled)
            .map(|w| gt_hit(&self.screen, w))
            .collect()
    }

    fn widget_ids(&self) -> Vec<WidgetId> {
        self.screen.widgets.iter().map(|w| w.id).collect()
    }

    fn locate_id(&self, id: WidgetId) -> Option<GroundTruthHit> {
        self.screen.widget(id).map(|w| gt_hit(&self.screen, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLUE: StyleSignature = StyleSignature([0.1, 0.35, 0.9, 0.8, 0.5, 0.5, 0.2, 0.6]);
    const RED: StyleSignature = StyleSignature([0.9, 0.15, 0.1, 0.85, 0.5, 0.5, 0.25, 0.6]);

    fn env() -> Environment {
        let modal = Widget::new(20, Rect::new(400, 300, 300, 200), "Confirm", Category::Modal, BLUE)
            .with_z(10);
        let mut opener = Widget::new(3, Rect::new(500, 100, 80, 30), "More", Category::Button, BLUE)
            .with_effect(Effect::OpenModal);
        opener.opens = Some(Box::new(modal));
        let screen = Screen::new(
            1280,
            800,
            vec![
                Widget::new(1, Rect::new(160, 200, 100, 40), "Submit", Category::Button, BLUE)
                    .with_effect(Effect::Submit),
                Widget::new(2, Rect::new(160, 200, 50, 40), "Delete", Category::Button, RED)
                    .with_effect(Effect::Delete)
                    .with_z(1),
                opener,
            ],
        )
        .unwrap();
        Environment::new(screen, 0)
    }

    #[test]
    fn click_resolves_topmost() {
        let mut e = env();
        let out = e.execute(&ActionCommand::Click { point: Point::new(170, 210) });
        assert_eq!(out.effect, Effect::Delete);
        assert!(out.safety_hazard);
        assert_eq!(e.record(), RecordStatus::Destroyed);
        assert_eq!(out.post_revision, out.pre_revision + 1);
    }

    #[test]
    fn equal_z_larger_id_wins() {
        let s = Screen::new(
            100,
            100,
            vec![
                Widget::new(1, Rect::new(0, 0, 50, 50), "a", Category::Button, BLUE),
                Widget::new(2, Rect::new(0, 0, 50, 50), "b", Category::Button, BLUE),
            ],
        )
        .unwrap();
        assert_eq!(s.hit_test(Point::new(10, 10)).unwrap().id, WidgetId(2));
    }

    #[test]
    fn empty_click_is_noop() {
        let mut e = env();
        let out = e.execute(&ActionCommand::Click { point: Point::new(5, 5) });
        assert_eq!(out.effect, Effect::Noop);
        assert!(out.hit.is_none());
        assert_eq!(out.pre_revision, out.post_revision);
    }

    #[test]
    fn hover_does_not_mutate() {
        let mut e = env();
        let before = e.observe();
        let out = e.execute(&ActionCommand::Hover { point: Point::new(240, 210) });
        assert_eq!(out.hit.unwrap().category, Category::Button);
        assert_eq!(before, e.observe());
    }

    #[test]
    fn modal_opening_reported_as_region() {
        let mut e = env();
        let a = e.observe();
        e.execute(&ActionCommand::Click { point: Point::new(510, 110) });
        let b = e.observe();
        let report = diff_observations(&a, &b).unwrap();
        assert!(report.changed);
        assert_eq!(report.regions, vec![Rect::new(400, 300, 300, 200)]);
    }

    #[test]
    fn translate_diff_lists_moved_widgets() {
        let e = env();
        let a = e.observe();
        let mut e2 = e.clone();
        e2.apply_drift(&DriftKind::translate(50, 0, &[WidgetId(1)])).unwrap();
        let r = diff_observations(&a, &e2.observe()).unwrap();
        assert_eq!(r.regions, vec![Rect::new(160, 200, 100, 40), Rect::new(210, 200, 100, 40)]);
    }

    #[test]
    fn cross_episode_diff_rejected() {
        let a = env().observe();
        let b = Environment::new(env().screen().clone(), 1).observe();
        assert!(matches!(diff_observations(&a, &b), Err(EnvError::ObservationMismatch(0, 1))));
    }

    #[test]
    fn swallowed_click_changes_nothing() {
        let mut e = env();
        e.inject_click_lag(1);
        let out = e.execute(&ActionCommand::Click { point: Point::new(240, 210) });
        assert!(out.swallowed);
        assert_eq!(e.record(), RecordStatus::Pending);
        let out = e.execute(&ActionCommand::Click { point: Point::new(240, 210) });
        assert_eq!(out.effect, Effect::Submit);
    }

    #[test]
    fn passive_widget_with_effect_is_invalid() {
        let err = Screen::new(
            100,
            100,
            vec![Widget::new(1, Rect::new(0, 0, 10, 10), "x", Category::StaticText, BLUE)
                .with_effect(Effect::Delete)],
        );
        assert!(matches!(err, Err(EnvError::EffectOnPassiveWidget(..))));
    }
}
