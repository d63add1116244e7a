//! The agent loop. Three policies drive the same environment:
//!
//! * `rpa` replays recorded coordinates without looking at the screen.
//! * `vla` asks the supervisor to ground every step.
//! * `hybrid` perceives, parses, verifies, and grounds through the anchor
//!   cache, escalating to the supervisor only when the cache cannot vouch
//!   for a target.
//!
//! Everything runs on a simulated clock; traces record which of the reflex,
//! structural, or supervisor loops produced each event.

mod trace;

pub use trace::*;

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::anchoring::{AnchorCache, AnchorError, GroundingResult, MockSupervisor, Scoring, VisualAnchor};
use crate::env::{
    diff_observations, ActionCommand, Category, DriftTrigger, EnvError, Environment, GroundTruthPort, Observation,
    RecordStatus, Screen,
};
use crate::fusion::{fuse_frame, Affordance, FusionConfig};
use crate::geom::{Point, Rect};
use crate::hierarchy::{parse_layout, resolve, LayoutConfig, UINode};
use crate::ledger::{CostLedger, EscalationReason};
use crate::perception::{detect_widgets, read_text};
use crate::rng::{self, frame_seed};
use crate::scenario::{PlanStep, Scenario, StepAction};
use crate::scenegraph::{build_graph, verify, verify_target, Precondition, SceneGraph};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DumpFlags {
    pub perception: bool,
    pub affordances: bool,
    pub tree: bool,
    pub graph: bool,
}

/// Per-frame artifacts collected when the matching dump flag is set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dumps {
    pub perception: Vec<Value>,
    pub affordances: Vec<Value>,
    pub trees: Vec<Value>,
    pub graphs: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub tau: f64,
    pub dumps: DumpFlags,
    /// Keep full traces; sweeps only need the ledgers.
    pub keep_trace: bool,
}

impl RunConfig {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self { seed: scenario.seed, tau: scenario.policy_defaults.tau, dumps: DumpFlags::default(), keep_trace: true }
    }
}

/// How drifts are scheduled across a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftSchedule {
    /// The scenario's own drift events.
    Scenario,
    /// Each record independently draws a drift with probability `p`,
    /// cycling through the scenario's sweep drifts.
    Sweep { p: f64 },
}

/// Outcome of comparing the frames before and after an action.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProprioceptionResult {
    pub confirmed: bool,
    pub changed: bool,
    pub regions: Vec<Rect>,
}

/// "Did the button depress?" A mismatch is an expected change that did not
/// happen, or a change where none was expected.
pub fn verify_effect(
    pre: &Observation,
    post: &Observation,
    expected_change: bool,
) -> Result<ProprioceptionResult, EnvError> {
    let report = diff_observations(pre, post)?;
    Ok(ProprioceptionResult { confirmed: report.changed == expected_change, changed: report.changed, regions: report.regions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClarifiedAffordance {
    pub affordance: Affordance,
    pub verdict: HoverVerdict,
    pub revealed: Option<Category>,
    pub point: Point,
}

/// Hovers over an uncertain affordance and lets the environment say what is
/// there. An actionable answer certifies it and undoes the conflict
/// downgrade; anything else demotes it to the revealed category. Certain
/// affordances pass through untouched without a hover.
pub fn resolve_uncertainty(aff: &Affordance, env: &mut Environment, downgrade_factor: f64) -> ClarifiedAffordance {
    let point = aff.bbox.center();
    if !aff.uncertain {
        return ClarifiedAffordance { affordance: aff.clone(), verdict: HoverVerdict::Certified, revealed: None, point };
    }
    let revealed = env.execute(&ActionCommand::Hover { point }).hit.map(|h| h.category);
    let mut out = aff.clone();
    out.uncertain = false;
    let verdict = match revealed {
        Some(c) if c.is_actionable() => {
            out.category = c;
            if downgrade_factor > 0.0 {
                out.confidence = (aff.confidence / downgrade_factor).min(1.0);
            }
            HoverVerdict::Certified
        }
        other => {
            out.category = other.unwrap_or(Category::StaticText);
            HoverVerdict::Demoted
        }
    };
    ClarifiedAffordance { affordance: out, verdict, revealed, point }
}

/// A point inside `target` that no other perceived element claims. Elements
/// that wrap the target without being actionable themselves (dialogs,
/// panels) do not block it. Center first, then outward.
pub fn choose_click_point(target: &Affordance, affordances: &[Affordance], clearance: i32) -> Option<Point> {
    let b = target.bbox;
    let obstacles: Vec<Rect> = affordances
        .iter()
        .filter(|a| a.id != target.id)
        .filter(|a| a.category.is_actionable() || !(a.bbox.contains_rect(&b) && a.bbox.area() > b.area()))
        .map(|a| a.bbox.expanded(clearance))
        .collect();
    let free = |p: Point| b.contains_point(p) && obstacles.iter().all(|o| !o.contains_point(p));
    let center = b.center();
    if free(center) {
        return Some(center);
    }
    let margin = clearance.max(4).min(b.w / 4).min(b.h / 4);
    let mut candidates: Vec<(i64, i32, i32)> = Vec::new();
    for y in (b.y + margin..b.bottom() - margin).step_by(2) {
        for x in (b.x + margin..b.right() - margin).step_by(2) {
            let (dx, dy) = (i64::from(x - center.x), i64::from(y - center.y));
            candidates.push((dx * dx + dy * dy, y, x));
        }
    }
    candidates.sort_unstable();
    candidates.into_iter().map(|(_, y, x)| Point::new(x, y)).find(|&p| free(p))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("dump value serializes")
}

struct Frame {
    obs: Observation,
    affordances: Vec<Affordance>,
    tree: UINode,
    graph: SceneGraph,
}

struct Acquired {
    point: Point,
    score: f64,
}

enum Setback {
    Escalate(EscalationReason),
    Abort(String),
}

struct Episode<'a> {
    scenario: &'a Scenario,
    cfg: &'a RunConfig,
    policy: PolicyKind,
    env: Environment,
    ledger: CostLedger,
    trace: EpisodeTrace,
    fusion: FusionConfig,
    layout: LayoutConfig,
    supervisor: MockSupervisor,
    dumps: &'a mut Dumps,
}

enum StepResult {
    Done,
    Violation,
    Aborted,
}

impl Episode<'_> {
    fn emit(&mut self, event: TraceEvent) {
        if self.cfg.keep_trace {
            self.trace.push(self.env.episode(), self.env.clock.now_ms(), event);
        }
    }

    fn charges(&self) -> crate::ledger::Charges {
        self.scenario.policy_defaults.charges
    }

    fn charge_reflex(&mut self) {
        let c = self.charges();
        self.ledger.charge_reflex(&c, &mut self.env.clock);
    }

    fn dump_tag(&self, step: usize, attempt: u64) -> Value {
        json!({"policy": self.policy.as_str(), "episode": self.env.episode(), "step": step, "attempt": attempt})
    }

    fn perceive(&mut self, step: usize, attempt: u64) -> Frame {
        let obs = self.env.observe();
        self.emit(TraceEvent::Observe { step, revision: obs.revision() });
        let (seed, ep) = (self.cfg.seed, self.env.episode());
        let detections =
            detect_widgets(&obs, &self.scenario.noise, frame_seed(seed, ep, step as u64, attempt, "detector"));
        let texts = read_text(&obs, &self.scenario.noise, frame_seed(seed, ep, step as u64, attempt, "ocr"));
        self.emit(TraceEvent::Perceive { step, detections: detections.len(), texts: texts.len() });
        let affordances = fuse_frame(&detections, &texts, &self.fusion);
        let uncertain = affordances.iter().filter(|a| a.uncertain).count();
        self.emit(TraceEvent::Fuse { step, affordances: affordances.len(), uncertain });
        let tree = parse_layout(&affordances, &self.layout);
        self.emit(TraceEvent::Parse { step, nodes: tree.walk().len() });
        let graph = build_graph(&tree, &affordances, &self.scenario.lexicon.intents, obs.revision());
        self.emit(TraceEvent::GraphBuilt { step, nodes: graph.nodes().len(), edges: graph.edges().len() });

        let flags = self.cfg.dumps;
        let tag = self.dump_tag(step, attempt);
        let tagged = |fields: &[(&str, Value)]| {
            let mut t = tag.clone();
            for (k, v) in fields {
                t[*k] = v.clone();
            }
            t
        };
        if flags.perception {
            let d = tagged(&[("detections", to_json(&detections)), ("texts", to_json(&texts))]);
            self.dumps.perception.push(d);
        }
        if flags.affordances {
            let d = tagged(&[("affordances", to_json(&affordances))]);
            self.dumps.affordances.push(d);
        }
        if flags.tree {
            let d = tagged(&[("tree", to_json(&tree))]);
            self.dumps.trees.push(d);
        }
        if flags.graph {
            let d = tagged(&[("graph", to_json(&graph))]);
            self.dumps.graphs.push(d);
        }
        Frame { obs, affordances, tree, graph }
    }

    /// Guards added to every grounding: the element about to be clicked must
    /// not carry a destructive effect other than the declared one.
    fn gate_preconditions(&self, step: &PlanStep) -> Vec<Precondition> {
        self.scenario
            .lexicon
            .destructive
            .iter()
            .filter(|e| **e != step.declared_intent)
            .map(|e| Precondition::TargetEffectIsNot { address: step.address.clone(), effect: *e })
            .collect()
    }

    fn acquire(&mut self, si: usize, attempt: u64, cache: &AnchorCache) -> Result<(Acquired, Observation), Setback> {
        let step = &self.scenario.plan[si];
        let key = step.cache_key();
        let frame = self.perceive(si, attempt);
        let report = verify(&frame.graph, &step.preconditions, &frame.tree);
        self.emit(TraceEvent::Verify {
            step: si,
            passed: report.passed,
            violations: report.violated.iter().map(|v| format!("{}: {}", v.precondition, v.explanation)).collect(),
            queried_nodes: report.queried_nodes.clone(),
        });
        if !report.passed {
            return Err(Setback::Escalate(EscalationReason::Drift));
        }
        let Ok(target) = resolve(&frame.tree, &step.address) else {
            self.emit(TraceEvent::GateRejected {
                step: si,
                key: key.clone(),
                reasons: vec![format!("{} does not resolve", step.address)],
            });
            return Err(Setback::Escalate(EscalationReason::Drift));
        };
        let target_node = target.node_id;
        let mut affordances = frame.affordances.clone();
        if let Some(idx) = target.affordance_ref.and_then(|id| affordances.iter().position(|a| a.id == id)) {
            if affordances[idx].uncertain {
                let factor = self.fusion.downgrade_factor;
                let clarified = resolve_uncertainty(&affordances[idx], &mut self.env, factor);
                self.charge_reflex();
                self.emit(TraceEvent::Hover {
                    step: si,
                    point: clarified.point,
                    affordance: clarified.affordance.id,
                    revealed: clarified.revealed,
                    verdict: clarified.verdict,
                });
                match (clarified.verdict, clarified.revealed) {
                    (HoverVerdict::Certified, _) => affordances[idx] = clarified.affordance,
                    (HoverVerdict::Demoted, None) => return Err(Setback::Escalate(EscalationReason::Drift)),
                    (HoverVerdict::Demoted, Some(c)) => {
                        return Err(Setback::Abort(format!("target {} is a {}, not actionable", step.address, c.as_str())))
                    }
                }
            }
        }
        match cache.ground(&key, &affordances) {
            GroundingResult::DriftException { score, cause } => {
                self.emit(TraceEvent::Ground { step: si, key, hit: false, score, cause: Some(cause) });
                let reason = match cause {
                    crate::anchoring::DriftCause::ColdStart => EscalationReason::ColdStart,
                    _ => EscalationReason::Drift,
                };
                Err(Setback::Escalate(reason))
            }
            GroundingResult::Hit { score, candidate, .. } => {
                self.emit(TraceEvent::Ground { step: si, key: key.clone(), hit: true, score, cause: None });
                let mut reasons = Vec::new();
                match frame.tree.leaf_for_affordance(candidate.id) {
                    Some(leaf) => {
                        if leaf.node_id != target_node {
                            reasons.push(format!(
                                "anchor matched node {} but {} resolves to node {}",
                                leaf.node_id, step.address, target_node
                            ));
                        }
                        let gate = verify_target(&frame.graph, &self.gate_preconditions(step), leaf.node_id);
                        reasons.extend(gate.violated.into_iter().map(|v| v.explanation));
                    }
                    None => reasons.push(format!("anchor matched affordance {} outside the tree", candidate.id)),
                }
                if !reasons.is_empty() {
                    self.emit(TraceEvent::GateRejected { step: si, key, reasons });
                    return Err(Setback::Escalate(EscalationReason::Drift));
                }
                match choose_click_point(&candidate, &affordances, self.scenario.noise.edge_clearance()) {
                    Some(point) => Ok((Acquired { point, score }, frame.obs)),
                    None => Err(Setback::Abort(format!("no unobstructed point on {}", step.address))),
                }
            }
        }
    }

    fn escalate(&mut self, si: usize, attempt: u64, reason: EscalationReason, cache: &mut AnchorCache) -> bool {
        let key = self.scenario.plan[si].cache_key();
        let resp = self.supervisor.supervise(&key, &self.env, &[self.env.episode(), si as u64, attempt]);
        let charges = self.charges();
        self.ledger.charge_supervisor(&charges, &mut self.env.clock, reason);
        self.emit(TraceEvent::SupervisorCall { step: si, key: key.clone(), reason, found: resp.found, bbox: resp.bbox });
        if !resp.found {
            return false;
        }
        let revision = self.env.observe().revision();
        if cache.repair(&key, &resp, revision).is_err() {
            return false;
        }
        self.emit(TraceEvent::CacheRepair { step: si, key, bbox: resp.bbox.expect("found response has a bbox") });
        true
    }

    fn command(step: &PlanStep, point: Point) -> ActionCommand {
        match &step.action {
            StepAction::Click => ActionCommand::Click { point },
            StepAction::Type { text } => ActionCommand::Type { text: text.clone(), point },
        }
    }

    /// Executes the step's command. `Err` carries the proprioception verdict
    /// when the action was performed but its effect was not observed.
    fn act(&mut self, si: usize, point: Point, score: Option<f64>, pre: Option<&Observation>) -> Option<StepResult> {
        let step = &self.scenario.plan[si];
        let cmd = Self::command(step, point);
        let intent = step.declared_intent;
        let expected = step.expected_change;
        self.emit(TraceEvent::Click { step: si, point, declared_intent: intent, score });
        let outcome = self.env.execute(&cmd);
        self.emit(TraceEvent::Effect {
            step: si,
            widget: outcome.hit.as_ref().map(|h| h.label.clone()),
            effect: outcome.effect,
            hazard: outcome.safety_hazard,
            swallowed: outcome.swallowed,
        });
        if self.env.safety_hazard() {
            return Some(StepResult::Violation);
        }
        let pre = pre?;
        let post = self.env.observe();
        let pr = verify_effect(pre, &post, expected).expect("same episode");
        self.emit(TraceEvent::Proprioception {
            step: si,
            confirmed: pr.confirmed,
            changed: pr.changed,
            regions: pr.regions,
        });
        pr.confirmed.then_some(StepResult::Done)
    }

    fn abort(&mut self, step: usize, reason: String) -> StepResult {
        self.emit(TraceEvent::Abort { step, reason });
        StepResult::Aborted
    }

    fn hybrid_step(&mut self, si: usize, cache: &mut AnchorCache) -> StepResult {
        self.charge_reflex();
        let mut attempt = 0;
        let mut retried = false;
        let mut escalated = false;
        loop {
            let (acq, pre) = match self.acquire(si, attempt, cache) {
                Ok(a) => a,
                Err(Setback::Abort(reason)) => return self.abort(si, reason),
                Err(Setback::Escalate(_)) if escalated => {
                    return self.abort(si, "grounding still fails after supervisor repair".into())
                }
                Err(Setback::Escalate(reason)) => {
                    escalated = true;
                    if !self.escalate(si, attempt, reason, cache) {
                        return self.abort(si, "supervisor could not locate the target".into());
                    }
                    attempt += 1;
                    continue;
                }
            };
            if let Some(r) = self.act(si, acq.point, Some(acq.score), Some(&pre)) {
                return r;
            }
            attempt += 1;
            if !retried {
                retried = true;
                self.charge_reflex();
                self.emit(TraceEvent::Retry { step: si, attempt });
            } else if !escalated {
                escalated = true;
                if !self.escalate(si, attempt, EscalationReason::Proprioception, cache) {
                    return self.abort(si, "supervisor could not locate the target".into());
                }
            } else {
                return self.abort(si, "action effect not observed".into());
            }
        }
    }

    fn vla_step(&mut self, si: usize) -> StepResult {
        let key = self.scenario.plan[si].cache_key();
        for attempt in 0..2u64 {
            if attempt > 0 {
                self.emit(TraceEvent::Retry { step: si, attempt });
            }
            let resp = self.supervisor.supervise(&key, &self.env, &[self.env.episode(), si as u64, attempt]);
            let charges = self.charges();
            self.ledger.charge_supervisor(&charges, &mut self.env.clock, EscalationReason::Grounding);
            self.emit(TraceEvent::SupervisorCall {
                step: si,
                key: key.clone(),
                reason: EscalationReason::Grounding,
                found: resp.found,
                bbox: resp.bbox,
            });
            let Some(bbox) = resp.bbox.filter(|_| resp.found) else {
                return self.abort(si, "supervisor could not locate the target".into());
            };
            let pre = self.env.observe();
            if let Some(r) = self.act(si, bbox.center(), None, Some(&pre)) {
                return r;
            }
        }
        self.abort(si, "action effect not observed".into())
    }

    fn rpa_step(&mut self, si: usize) -> StepResult {
        self.charge_reflex();
        let point = self.scenario.plan[si].recorded_point;
        self.act(si, point, None, None).unwrap_or(StepResult::Done)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub status: TerminalStatus,
    pub record: RecordStatus,
    pub ledger: CostLedger,
    pub drifts: Vec<usize>,
}

/// Runs one record on `env` under `policy`. The anchor cache is shared
/// across records; only supervisor repairs write to it.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    scenario: &Scenario,
    policy: PolicyKind,
    env: Environment,
    cache: &mut AnchorCache,
    cfg: &RunConfig,
    drifts: Vec<usize>,
    dumps: &mut Dumps,
) -> (EpisodeTrace, EpisodeSummary) {
    let screen = env.screen().clone();
    let supervisor = MockSupervisor::new(
        &scenario.policy_defaults.charges,
        scenario.policy_defaults.supervisor_error_prob,
        rng::derive_seed(cfg.seed, &[], "supervisor"),
    );
    let mut ep = Episode {
        scenario,
        cfg,
        policy,
        env,
        ledger: CostLedger::default(),
        trace: EpisodeTrace::default(),
        fusion: scenario.fusion_config(),
        layout: LayoutConfig::for_screen(screen.width, screen.height),
        supervisor,
        dumps,
    };
    ep.emit(TraceEvent::EpisodeStart { policy, drifts: drifts.clone() });
    let mut status = TerminalStatus::Success;
    for si in 0..scenario.plan.len() {
        let t0 = ep.env.clock.now_ms();
        let r = match policy {
            PolicyKind::Rpa => ep.rpa_step(si),
            PolicyKind::Vla => ep.vla_step(si),
            PolicyKind::Hybrid => ep.hybrid_step(si, cache),
        };
        let latency_ms = ep.env.clock.now_ms() - t0;
        ep.emit(TraceEvent::StepEnd { step: si, latency_ms });
        match r {
            StepResult::Done => {}
            StepResult::Violation => {
                status = TerminalStatus::SafetyViolation;
                break;
            }
            StepResult::Aborted => {
                status = TerminalStatus::TaskAbort;
                break;
            }
        }
    }
    let record = ep.env.record();
    let ledger = ep.ledger;
    ep.emit(TraceEvent::EpisodeEnd { status, record, ledger });
    let summary = EpisodeSummary { episode: ep.env.episode(), status, record, ledger, drifts };
    (ep.trace, summary)
}

/// Anchors for every plan step, taken from the screen before any drift.
pub fn warm_cache(scenario: &Scenario, screen: &Screen, tau: f64) -> Result<AnchorCache, AnchorError> {
    let mut cache = AnchorCache::new(tau, Scoring::for_screen(screen.width, screen.height))?;
    let env = Environment::new(screen.clone(), 0);
    for step in &scenario.plan {
        let hit = env.locate(&step.address.target_label).into_iter().find(|h| h.clickable);
        if let Some(h) = hit {
            cache.insert(VisualAnchor {
                semantic_key: step.cache_key(),
                template_signature: h.style,
                expected_bbox: h.bbox,
                last_verified_revision: screen.revision,
            });
        }
    }
    Ok(cache)
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub policy: PolicyKind,
    pub episodes: Vec<EpisodeSummary>,
    /// JSON Lines, episodes in index order. Empty unless traces are kept.
    pub trace_jsonl: String,
    pub ledger: CostLedger,
    pub cache: AnchorCache,
    pub dumps: Dumps,
}

/// Runs `n_records` records in order. Drifts persist: each fired drift
/// changes the screen every later record sees.
pub fn run_batch(
    scenario: &Scenario,
    policy: PolicyKind,
    cfg: &RunConfig,
    n_records: u64,
    schedule: DriftSchedule,
    cache_in: Option<AnchorCache>,
) -> Result<BatchReport, RuntimeError> {
    let mut screen = scenario.base_screen()?;
    let mut cache = match cache_in {
        Some(mut c) => {
            c.set_tau(cfg.tau)?;
            c
        }
        None if scenario.policy_defaults.warm_cache => warm_cache(scenario, &screen, cfg.tau)?,
        None => AnchorCache::new(cfg.tau, Scoring::for_screen(screen.width, screen.height))?,
    };
    let mut report = BatchReport {
        policy,
        episodes: Vec::new(),
        trace_jsonl: String::new(),
        ledger: CostLedger::default(),
        cache: cache.clone(),
        dumps: Dumps::default(),
    };
    let mut sweep_fired = 0usize;
    for episode in 0..n_records {
        let mut fired = Vec::new();
        match schedule {
            DriftSchedule::Scenario => {
                for (i, d) in scenario.drifts.iter().enumerate() {
                    let fires = match d.trigger {
                        DriftTrigger::Episode(e) => e == episode,
                        DriftTrigger::Bernoulli(p) => rng::stream(cfg.seed, &[episode, i as u64], "drift").random_bool(p),
                    };
                    if fires {
                        screen = crate::env::apply_drift(&screen, &d.kind)?;
                        fired.push(i);
                    }
                }
            }
            DriftSchedule::Sweep { p } => {
                let n = scenario.sweep_drifts.len();
                if n > 0 && rng::stream(cfg.seed, &[episode], "sweep_drift").random_bool(p) {
                    let i = sweep_fired % n;
                    screen = crate::env::apply_drift(&screen, &scenario.sweep_drifts[i])?;
                    sweep_fired += 1;
                    fired.push(i);
                }
            }
        }
        let mut env = Environment::new(screen.clone(), episode);
        for lag in scenario.lag_faults.iter().filter(|l| l.episode == episode) {
            env.inject_click_lag(lag.clicks);
        }
        let (trace, summary) = run_episode(scenario, policy, env, &mut cache, cfg, fired, &mut report.dumps);
        trace.write_jsonl(&mut report.trace_jsonl);
        report.ledger.absorb(&summary.ledger);
        let halt = summary.status == TerminalStatus::SafetyViolation && scenario.policy_defaults.halt_on_violation;
        report.episodes.push(summary);
        if halt {
            break;
        }
    }
    report.cache = cache;
    Ok(report)
}

#[cfg(test)]
mod tests;
