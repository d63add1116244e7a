//! Evaluation harness: the amortized cost model, per-policy metrics,
//! scenario expectations, drift-probability sweeps, and the files a run
//! leaves behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchoring::AnchorCache;
use crate::env::RecordStatus;
use crate::ledger::{Charges, CostLedger, CostUnits};
use crate::runtime::{
    run_batch, BatchReport, DriftSchedule, EpisodeSummary, PolicyKind, RunConfig, RuntimeError, TerminalStatus,
    TraceEvent, TraceRecord,
};
use crate::scenario::{PolicyExpectation, Scenario, ScenarioError};

pub const SUMMARY_SCHEMA: u32 = 1;
/// Largest relative gap between measured and predicted means in a sweep.
pub const SWEEP_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("drift probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("invalid cache file: {0}")]
    Cache(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.display().to_string(), source }
}

/// `Cost_avg = Cost_Reflex + P_Drift × Cost_Supervisor`, in both time and
/// cost units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmortizedCostModel {
    pub reflex_ms: f64,
    pub reflex_cost: f64,
    pub supervisor_ms: f64,
    pub supervisor_cost: f64,
    pub p_drift: f64,
}

impl AmortizedCostModel {
    /// Per-record model for a plan of `steps` reflex steps.
    pub fn from_charges(charges: &Charges, steps: usize, p_drift: f64) -> Result<Self, BenchError> {
        if !(0.0..=1.0).contains(&p_drift) {
            return Err(BenchError::InvalidProbability(p_drift));
        }
        let steps = steps as u64;
        Ok(Self {
            reflex_ms: (charges.reflex_ms * steps) as f64,
            reflex_cost: (charges.reflex_cost * steps).as_units(),
            supervisor_ms: charges.supervisor_ms as f64,
            supervisor_cost: charges.supervisor_cost.as_units(),
            p_drift,
        })
    }
}

pub fn predict_avg_cost(m: &AmortizedCostModel) -> (f64, f64) {
    (m.reflex_ms + m.p_drift * m.supervisor_ms, m.reflex_cost + m.p_drift * m.supervisor_cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub policy: PolicyKind,
    pub episodes: u64,
    pub successes: u64,
    pub safety_violations: u64,
    pub task_aborts: u64,
    pub drift_episodes: u64,
    pub total_sim_ms: u64,
    pub mean_latency_ms: f64,
    /// Mean over records that saw no drift.
    pub steady_state_latency_ms: Option<f64>,
    pub supervisor_calls: u64,
    pub drift_supervisor_calls: u64,
    pub cold_start_calls: u64,
    pub proprioception_calls: u64,
    /// Fraction of records that needed the supervisor at least once.
    pub supervisor_rate: f64,
    pub reflex_steps: u64,
    pub total_cost_micro: CostUnits,
    pub mean_cost_units: f64,
}

pub fn summarize(policy: PolicyKind, episodes: &[EpisodeSummary]) -> MetricsSummary {
    let mut ledger = CostLedger::default();
    for e in episodes {
        ledger.absorb(&e.ledger);
    }
    let n = episodes.len() as u64;
    let count = |s: TerminalStatus| episodes.iter().filter(|e| e.status == s).count() as u64;
    let steady: Vec<u64> = episodes.iter().filter(|e| e.drifts.is_empty()).map(|e| e.ledger.total_sim_ms).collect();
    let per = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    MetricsSummary {
        policy,
        episodes: n,
        successes: count(TerminalStatus::Success),
        safety_violations: count(TerminalStatus::SafetyViolation),
        task_aborts: count(TerminalStatus::TaskAbort),
        drift_episodes: n - steady.len() as u64,
        total_sim_ms: ledger.total_sim_ms,
        mean_latency_ms: per(ledger.total_sim_ms as f64),
        steady_state_latency_ms: (!steady.is_empty())
            .then(|| steady.iter().sum::<u64>() as f64 / steady.len() as f64),
        supervisor_calls: ledger.supervisor_calls,
        drift_supervisor_calls: ledger.drift_calls,
        cold_start_calls: ledger.cold_start_calls,
        proprioception_calls: ledger.proprioception_calls,
        supervisor_rate: per(episodes.iter().filter(|e| e.ledger.supervisor_calls > 0).count() as f64),
        reflex_steps: ledger.reflex_steps,
        total_cost_micro: ledger.total_cost_micro,
        mean_cost_units: per(ledger.total_cost_micro.as_units()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub policy: PolicyKind,
    pub name: String,
    pub expected: String,
    pub observed: String,
    pub passed: bool,
}

fn check_policy(m: &MetricsSummary, e: &PolicyExpectation, steps_per_record: usize) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &str, expected: String, observed: String, passed: bool| {
        out.push(Check { policy: m.policy, name: name.to_string(), expected, observed, passed });
    };
    for (name, want, got) in [
        ("safety_violations", e.safety_violations, m.safety_violations),
        ("task_aborts", e.task_aborts, m.task_aborts),
        ("drift_supervisor_calls", e.drift_supervisor_calls, m.drift_supervisor_calls),
    ] {
        if let Some(w) = want {
            push(name, format!("== {w}"), got.to_string(), got == w);
        }
    }
    if let Some(limit) = e.max_steady_state_latency_ms {
        let got = m.steady_state_latency_ms;
        push(
            "steady_state_latency_ms",
            format!("< {limit}"),
            got.map_or("n/a".into(), |g| g.to_string()),
            got.is_some_and(|g| g < limit),
        );
    }
    if let Some(per_step) = e.ms_per_step {
        let tol = e.total_ms_tolerance.unwrap_or(0.0);
        let target = per_step * (m.episodes as usize * steps_per_record) as f64;
        let got = m.total_sim_ms as f64;
        let passed = (got - target).abs() <= tol * target;
        push("total_sim_ms", format!("{target} ± {}%", tol * 100.0), m.total_sim_ms.to_string(), passed);
    }
    if let Some(limit) = e.max_total_ms {
        push("total_sim_ms", format!("< {limit}"), m.total_sim_ms.to_string(), m.total_sim_ms < limit);
    }
    out
}

pub fn evaluate(scenario: &Scenario, metrics: &[MetricsSummary]) -> Vec<Check> {
    let steps = scenario.plan.len();
    metrics
        .iter()
        .flat_map(|m| {
            let e = match m.policy {
                PolicyKind::Rpa => &scenario.expect.rpa,
                PolicyKind::Vla => &scenario.expect.vla,
                PolicyKind::Hybrid => &scenario.expect.hybrid,
            };
            e.as_ref().map(|e| check_policy(m, e, steps)).unwrap_or_default()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub scenario: String,
    pub policies: Vec<MetricsSummary>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl RunSummary {
    pub fn build(scenario: &Scenario, per_policy: &[(PolicyKind, Vec<EpisodeSummary>)]) -> Self {
        let policies: Vec<MetricsSummary> = per_policy.iter().map(|(p, eps)| summarize(*p, eps)).collect();
        let checks = evaluate(scenario, &policies);
        let passed = checks.iter().all(|c| c.passed);
        Self { schema: SUMMARY_SCHEMA, scenario: scenario.name.clone(), policies, checks, passed }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(
            t,
            "{:<13} {:>8} {:>10} {:>7} {:>11} {:>13} {:>13} {:>12}",
            "policy", "records", "violations", "aborts", "supervisor", "mean ms", "steady ms", "total h"
        );
        for m in &self.policies {
            let _ = writeln!(
                t,
                "{:<13} {:>8} {:>10} {:>7} {:>11} {:>13.1} {:>13} {:>12.4}",
                m.policy.display_name(),
                m.episodes,
                m.safety_violations,
                m.task_aborts,
                m.supervisor_calls,
                m.mean_latency_ms,
                m.steady_state_latency_ms.map_or("-".into(), |s| format!("{s:.1}")),
                m.total_sim_ms as f64 / 3_600_000.0,
            );
        }
        for c in &self.checks {
            let _ = writeln!(
                t,
                "[{}] {} {}: expected {}, observed {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.policy.as_str(),
                c.name,
                c.expected,
                c.observed
            );
        }
        t
    }
}

/// Rebuilds per-episode summaries from an emitted trace.
pub fn episodes_from_trace(jsonl: &str) -> Result<(Option<PolicyKind>, Vec<EpisodeSummary>), BenchError> {
    let mut policy = None;
    let mut open: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, line) in jsonl.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: TraceRecord =
            serde_json::from_str(line).map_err(|e| BenchError::Trace { line: i + 1, message: e.to_string() })?;
        match rec.event {
            TraceEvent::EpisodeStart { policy: p, drifts } => {
                policy = Some(p);
                open.insert(rec.episode, drifts);
            }
            TraceEvent::EpisodeEnd { status, record, ledger } => {
                let drifts = open.remove(&rec.episode).ok_or_else(|| BenchError::Trace {
                    line: i + 1,
                    message: format!("episode {} ends without starting", rec.episode),
                })?;
                out.push(EpisodeSummary { episode: rec.episode, status, record, ledger, drifts });
            }
            _ => {}
        }
    }
    Ok((policy, out))
}

fn record_str(r: RecordStatus) -> &'static str {
    match r {
        RecordStatus::Pending => "pending",
        RecordStatus::Approved => "approved",
        RecordStatus::Destroyed => "destroyed",
        RecordStatus::Cancelled => "cancelled",
    }
}

fn status_str(s: TerminalStatus) -> &'static str {
    match s {
        TerminalStatus::Success => "success",
        TerminalStatus::SafetyViolation => "safety_violation",
        TerminalStatus::TaskAbort => "task_abort",
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), BenchError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    policy: &'a str,
    episodes: u64,
    successes: u64,
    safety_violations: u64,
    task_aborts: u64,
    drift_episodes: u64,
    total_sim_ms: u64,
    mean_latency_ms: f64,
    steady_state_latency_ms: Option<f64>,
    supervisor_calls: u64,
    drift_supervisor_calls: u64,
    cold_start_calls: u64,
    proprioception_calls: u64,
    supervisor_rate: f64,
    reflex_steps: u64,
    total_cost_units: String,
    mean_cost_units: f64,
}

#[derive(Serialize)]
struct EpisodeRow<'a> {
    policy: &'a str,
    episode: u64,
    status: &'a str,
    record: &'a str,
    drifted: bool,
    sim_ms: u64,
    reflex_steps: u64,
    supervisor_calls: u64,
    cost_units: String,
}

#[derive(Serialize)]
struct PlotRow<'a> {
    policy: &'a str,
    metric: &'a str,
    value: f64,
}

/// Writes the metrics CSV, per-episode CSV, and long-format plot data.
pub fn write_metrics(out: &Path, summary: &RunSummary, per_policy: &[(PolicyKind, Vec<EpisodeSummary>)]) -> Result<(), BenchError> {
    let rows: Vec<MetricsRow> = summary
        .policies
        .iter()
        .map(|m| MetricsRow {
            policy: m.policy.as_str(),
            episodes: m.episodes,
            successes: m.successes,
            safety_violations: m.safety_violations,
            task_aborts: m.task_aborts,
            drift_episodes: m.drift_episodes,
            total_sim_ms: m.total_sim_ms,
            mean_latency_ms: m.mean_latency_ms,
            steady_state_latency_ms: m.steady_state_latency_ms,
            supervisor_calls: m.supervisor_calls,
            drift_supervisor_calls: m.drift_supervisor_calls,
            cold_start_calls: m.cold_start_calls,
            proprioception_calls: m.proprioception_calls,
            supervisor_rate: m.supervisor_rate,
            reflex_steps: m.reflex_steps,
            total_cost_units: m.total_cost_micro.to_string(),
            mean_cost_units: m.mean_cost_units,
        })
        .collect();
    write_file(&out.join("metrics.csv"), &csv_bytes(&rows)?)?;

    let episodes: Vec<EpisodeRow> = per_policy
        .iter()
        .flat_map(|(p, eps)| {
            eps.iter().map(move |e| EpisodeRow {
                policy: p.as_str(),
                episode: e.episode,
                status: status_str(e.status),
                record: record_str(e.record),
                drifted: !e.drifts.is_empty(),
                sim_ms: e.ledger.total_sim_ms,
                reflex_steps: e.ledger.reflex_steps,
                supervisor_calls: e.ledger.supervisor_calls,
                cost_units: e.ledger.total_cost_micro.to_string(),
            })
        })
        .collect();
    write_file(&out.join("episodes.csv"), &csv_bytes(&episodes)?)?;

    let plot: Vec<PlotRow> = summary
        .policies
        .iter()
        .flat_map(|m| {
            [
                ("mean_latency_ms", m.mean_latency_ms),
                ("safety_violations", m.safety_violations as f64),
                ("supervisor_calls", m.supervisor_calls as f64),
            ]
            .map(|(metric, value)| PlotRow { policy: m.policy.as_str(), metric, value })
        })
        .collect();
    write_file(&out.join("plot.csv"), &csv_bytes(&plot)?)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub cache_in: Option<PathBuf>,
    pub cache_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct RunManifest<'a> {
    schema: u32,
    scenario: &'a str,
    seed: u64,
    records: u64,
    tau: f64,
    policies: Vec<&'a str>,
}

pub fn load_cache(path: &Path) -> Result<AnchorCache, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    AnchorCache::from_json(&text).map_err(|e| BenchError::Cache(format!("{}: {e}", path.display())))
}

/// Runs each policy over the scenario's drift schedule and writes traces,
/// metrics, plot data, and the summary under `out`.
pub fn run_saam(
    scenario: &Scenario,
    policies: &[PolicyKind],
    cfg: &RunConfig,
    records: u64,
    out: &Path,
    opts: &RunOptions,
) -> Result<RunSummary, BenchError> {
    let cache_in = opts.cache_in.as_deref().map(load_cache).transpose()?;
    let reports: Vec<BatchReport> = policies
        .iter()
        .map(|&p| run_batch(scenario, p, cfg, records, DriftSchedule::Scenario, cache_in.clone()))
        .collect::<Result<_, _>>()?;

    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    for r in &reports {
        write_file(&traces.join(format!("{}.jsonl", r.policy.as_str())), r.trace_jsonl.as_bytes())?;
    }
    let per_policy: Vec<(PolicyKind, Vec<EpisodeSummary>)> =
        reports.iter().map(|r| (r.policy, r.episodes.clone())).collect();
    let summary = RunSummary::build(scenario, &per_policy);
    write_metrics(out, &summary, &per_policy)?;
    write_file(&out.join("summary.json"), summary.to_json().as_bytes())?;
    let manifest = RunManifest {
        schema: SUMMARY_SCHEMA,
        scenario: &scenario.name,
        seed: cfg.seed,
        records,
        tau: cfg.tau,
        policies: policies.iter().map(|p| p.as_str()).collect(),
    };
    let mut m = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    m.push('\n');
    write_file(&out.join("run.json"), m.as_bytes())?;
    write_dumps(out, &reports)?;
    if let Some(path) = &opts.cache_out {
        if let Some(r) = reports.iter().find(|r| r.policy == PolicyKind::Hybrid) {
            write_file(path, r.cache.to_json().as_bytes())?;
        }
    }
    Ok(summary)
}

fn write_dumps(out: &Path, reports: &[BatchReport]) -> Result<(), BenchError> {
    let lines = |pick: fn(&BatchReport) -> &Vec<serde_json::Value>| {
        let mut s = String::new();
        for v in reports.iter().flat_map(pick) {
            s.push_str(&serde_json::to_string(v).expect("dump serializes"));
            s.push('\n');
        }
        s
    };
    let pretty = |pick: fn(&BatchReport) -> &Vec<serde_json::Value>| {
        let all: Vec<&serde_json::Value> = reports.iter().flat_map(pick).collect();
        let mut s = serde_json::to_string_pretty(&all).expect("dump serializes");
        s.push('\n');
        s
    };
    let any = |pick: fn(&BatchReport) -> &Vec<serde_json::Value>| reports.iter().any(|r| !pick(r).is_empty());
    if any(|r| &r.dumps.perception) {
        write_file(&out.join("perception.jsonl"), lines(|r| &r.dumps.perception).as_bytes())?;
    }
    if any(|r| &r.dumps.affordances) {
        write_file(&out.join("affordances.jsonl"), lines(|r| &r.dumps.affordances).as_bytes())?;
    }
    if any(|r| &r.dumps.trees) {
        write_file(&out.join("tree.json"), pretty(|r| &r.dumps.trees).as_bytes())?;
    }
    if any(|r| &r.dumps.graphs) {
        write_file(&out.join("graph.json"), pretty(|r| &r.dumps.graphs).as_bytes())?;
    }
    Ok(())
}

/// Recomputes the summary from traces written by [`run_saam`].
pub fn aggregate(scenario: &Scenario, traces_dir: &Path) -> Result<RunSummary, BenchError> {
    let mut per_policy = Vec::new();
    for p in PolicyKind::ALL {
        let path = traces_dir.join(format!("{}.jsonl", p.as_str()));
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let (_, episodes) = episodes_from_trace(&text)?;
        per_policy.push((p, episodes));
    }
    Ok(RunSummary::build(scenario, &per_policy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub episodes: u64,
    pub drift_episodes: u64,
    pub supervisor_calls: u64,
    pub safety_violations: u64,
    pub task_aborts: u64,
    pub measured_ms: f64,
    pub predicted_ms: f64,
    pub rel_err_ms: f64,
    pub measured_cost: f64,
    pub predicted_cost: f64,
    pub rel_err_cost: f64,
    pub within_tolerance: bool,
}

fn rel_err(measured: f64, predicted: f64) -> f64 {
    if predicted == 0.0 {
        if measured == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (measured - predicted).abs() / predicted
    }
}

/// For each `p`, runs `episodes` records where every record independently
/// drifts with probability `p`, and compares the measured means with the
/// amortized model. `p = 0` must match exactly.
pub fn sweep_drift(
    scenario: &Scenario,
    policy: PolicyKind,
    p_values: &[f64],
    episodes: u64,
    seed: u64,
) -> Result<Vec<SweepRow>, BenchError> {
    let cfg = RunConfig { seed, keep_trace: false, ..RunConfig::for_scenario(scenario) };
    p_values
        .iter()
        .map(|&p| {
            let model = AmortizedCostModel::from_charges(&scenario.policy_defaults.charges, scenario.plan.len(), p)?;
            let (predicted_ms, predicted_cost) = predict_avg_cost(&model);
            let r = run_batch(scenario, policy, &cfg, episodes, DriftSchedule::Sweep { p }, None)?;
            let m = summarize(policy, &r.episodes);
            let measured_ms = m.mean_latency_ms;
            let measured_cost = m.mean_cost_units;
            let (rel_err_ms, rel_err_cost) = (rel_err(measured_ms, predicted_ms), rel_err(measured_cost, predicted_cost));
            let within_tolerance = if p == 0.0 {
                measured_ms == predicted_ms && m.total_cost_micro == scenario.policy_defaults.charges.reflex_cost
                    * (m.episodes * scenario.plan.len() as u64)
            } else {
                rel_err_ms <= SWEEP_TOLERANCE && rel_err_cost <= SWEEP_TOLERANCE
            };
            Ok(SweepRow {
                p,
                episodes: m.episodes,
                drift_episodes: m.drift_episodes,
                supervisor_calls: m.supervisor_calls,
                safety_violations: m.safety_violations,
                task_aborts: m.task_aborts,
                measured_ms,
                predicted_ms,
                rel_err_ms,
                measured_cost,
                predicted_cost,
                rel_err_cost,
                within_tolerance,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema: u32,
    pub scenario: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub episodes_per_point: u64,
    pub tolerance: f64,
    pub rows: Vec<SweepRow>,
    pub passed: bool,
}

pub fn write_sweep(out: &Path, summary: &SweepSummary) -> Result<(), BenchError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("sweep.csv"), &csv_bytes(&summary.rows)?)?;
    let mut s = serde_json::to_string_pretty(summary).expect("sweep serializes");
    s.push('\n');
    write_file(&out.join("sweep.json"), s.as_bytes())
}

impl SweepSummary {
    pub fn table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(
            t,
            "{:>7} {:>9} {:>7} {:>12} {:>12} {:>8} {:>10} {:>10} {:>8}  ok",
            "p", "episodes", "drifts", "measured ms", "predicted", "err", "meas cost", "pred cost", "err"
        );
        for r in &self.rows {
            let _ = writeln!(
                t,
                "{:>7} {:>9} {:>7} {:>12.3} {:>12.3} {:>7.2}% {:>10.5} {:>10.5} {:>7.2}%  {}",
                r.p,
                r.episodes,
                r.drift_episodes,
                r.measured_ms,
                r.predicted_ms,
                r.rel_err_ms * 100.0,
                r.measured_cost,
                r.predicted_cost,
                r.rel_err_cost * 100.0,
                if r.within_tolerance { "yes" } else { "NO" }
            );
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(p: f64) -> AmortizedCostModel {
        AmortizedCostModel::from_charges(&Charges::default(), 1, p).unwrap()
    }

    #[test]
    fn amortized_prediction() {
        assert_eq!(predict_avg_cost(&model(0.0)), (50.0, 0.005));
        assert!((predict_avg_cost(&model(0.01)).0 - 150.0).abs() < 1e-9);
        assert!((predict_avg_cost(&model(0.1)).0 - 1050.0).abs() < 1e-9);
        assert_eq!(predict_avg_cost(&model(1.0)).0, 10_050.0);
        assert!(AmortizedCostModel::from_charges(&Charges::default(), 1, 1.5).is_err());
    }

    fn ep(status: TerminalStatus, ms: u64, drift: bool) -> EpisodeSummary {
        let charges = Charges::default();
        let mut clock = crate::env::SimClock::default();
        let mut ledger = CostLedger::default();
        ledger.charge_reflex(&charges, &mut clock);
        if ms > 50 {
            ledger.charge_supervisor(&charges, &mut clock, crate::ledger::EscalationReason::Drift);
        }
        EpisodeSummary { episode: 0, status, record: RecordStatus::Approved, ledger, drifts: if drift { vec![0] } else { vec![] } }
    }

    #[test]
    fn summary_is_ledger_sum() {
        let eps = vec![
            ep(TerminalStatus::Success, 50, false),
            ep(TerminalStatus::Success, 10_050, true),
            ep(TerminalStatus::TaskAbort, 50, false),
        ];
        let m = summarize(PolicyKind::Hybrid, &eps);
        assert_eq!(m.total_sim_ms, 10_150);
        assert_eq!(m.steady_state_latency_ms, Some(50.0));
        assert_eq!(m.task_aborts, 1);
        assert_eq!(m.drift_episodes, 1);
        assert!((m.supervisor_rate - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.total_cost_micro, CostUnits::from_units(1.015));
    }

    #[test]
    fn expectation_checks() {
        let m = summarize(PolicyKind::Vla, &[ep(TerminalStatus::Success, 10_050, false)]);
        let e = PolicyExpectation { ms_per_step: Some(10_000.0), total_ms_tolerance: Some(0.01), ..Default::default() };
        assert!(check_policy(&m, &e, 1)[0].passed);
        let e = PolicyExpectation { ms_per_step: Some(10_000.0), total_ms_tolerance: Some(0.001), ..Default::default() };
        assert!(!check_policy(&m, &e, 1)[0].passed);
        let e = PolicyExpectation { safety_violations: Some(1), ..Default::default() };
        assert!(!check_policy(&m, &e, 1)[0].passed);
    }
}
