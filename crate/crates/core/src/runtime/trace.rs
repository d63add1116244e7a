//! Episode traces: one JSON object per line, stamped with simulated time and
//! the control loop that produced the event.

use serde::{Deserialize, Serialize};

use crate::anchoring::DriftCause;
use crate::env::{Category, Effect, RecordStatus};
use crate::geom::{Point, Rect};
use crate::ledger::{CostLedger, EscalationReason};

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Rpa,
    Vla,
    Hybrid,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Rpa, PolicyKind::Vla, PolicyKind::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Rpa => "rpa",
            PolicyKind::Vla => "vla",
            PolicyKind::Hybrid => "hybrid",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            PolicyKind::Rpa => "OpenLoopRPA",
            PolicyKind::Vla => "EndToEndVLA",
            PolicyKind::Hybrid => "HybridReflex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loop {
    Reflex,
    Structural,
    Supervisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Success,
    SafetyViolation,
    TaskAbort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoverVerdict {
    Certified,
    Demoted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    EpisodeStart {
        policy: PolicyKind,
        /// Indices of the drifts applied before this record.
        drifts: Vec<usize>,
    },
    Observe {
        step: usize,
        revision: u64,
    },
    Perceive {
        step: usize,
        detections: usize,
        texts: usize,
    },
    Fuse {
        step: usize,
        affordances: usize,
        uncertain: usize,
    },
    Parse {
        step: usize,
        nodes: usize,
    },
    GraphBuilt {
        step: usize,
        nodes: usize,
        edges: usize,
    },
    Verify {
        step: usize,
        passed: bool,
        violations: Vec<String>,
        queried_nodes: Vec<u32>,
    },
    Hover {
        step: usize,
        point: Point,
        affordance: u32,
        revealed: Option<Category>,
        verdict: HoverVerdict,
    },
    Ground {
        step: usize,
        key: String,
        hit: bool,
        score: f64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        cause: Option<DriftCause>,
    },
    GateRejected {
        step: usize,
        key: String,
        reasons: Vec<String>,
    },
    SupervisorCall {
        step: usize,
        key: String,
        reason: EscalationReason,
        found: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        bbox: Option<Rect>,
    },
    CacheRepair {
        step: usize,
        key: String,
        bbox: Rect,
    },
    Click {
        step: usize,
        point: Point,
        declared_intent: Effect,
        /// Anchor score of the grounding behind the click, if any.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        score: Option<f64>,
    },
    /// What the environment did in response to the last command.
    Effect {
        step: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        widget: Option<String>,
        effect: Effect,
        hazard: bool,
        swallowed: bool,
    },
    Proprioception {
        step: usize,
        confirmed: bool,
        changed: bool,
        regions: Vec<Rect>,
    },
    Retry {
        step: usize,
        attempt: u64,
    },
    Abort {
        step: usize,
        reason: String,
    },
    StepEnd {
        step: usize,
        latency_ms: u64,
    },
    EpisodeEnd {
        status: TerminalStatus,
        record: RecordStatus,
        ledger: CostLedger,
    },
}

impl TraceEvent {
    pub fn control_loop(&self) -> Loop {
        use TraceEvent::*;
        match self {
            Parse { .. } | GraphBuilt { .. } | Verify { .. } | GateRejected { .. } => Loop::Structural,
            SupervisorCall { .. } | CacheRepair { .. } => Loop::Supervisor,
            _ => Loop::Reflex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub schema: u32,
    pub episode: u64,
    pub t_ms: u64,
    #[serde(rename = "loop")]
    pub control_loop: Loop,
    pub event: TraceEvent,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub records: Vec<TraceRecord>,
}

impl EpisodeTrace {
    pub fn push(&mut self, episode: u64, t_ms: u64, event: TraceEvent) {
        self.records.push(TraceRecord {
            schema: TRACE_SCHEMA,
            episode,
            t_ms,
            control_loop: event.control_loop(),
            event,
        });
    }

    pub fn status(&self) -> Option<TerminalStatus> {
        self.records.iter().rev().find_map(|r| match r.event {
            TraceEvent::EpisodeEnd { status, .. } => Some(status),
            _ => None,
        })
    }

    pub fn write_jsonl(&self, out: &mut String) {
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
    }
}
