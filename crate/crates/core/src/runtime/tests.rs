use std::path::Path;

use super::*;
use crate::env::{StyleSignature, Widget};
use crate::fusion::Provenance;
use crate::scenario::LagFault;

fn fixture(name: &str) -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

fn batch(s: &Scenario, policy: PolicyKind, n: u64) -> BatchReport {
    run_batch(s, policy, &RunConfig::for_scenario(s), n, DriftSchedule::Scenario, None).unwrap()
}

fn count(r: &BatchReport, status: TerminalStatus) -> usize {
    r.episodes.iter().filter(|e| e.status == status).count()
}

#[test]
fn rpa_destroys_the_drifted_record() {
    let s = fixture("invoice_approval.json");
    let r = batch(&s, PolicyKind::Rpa, 1000);
    assert_eq!(count(&r, TerminalStatus::SafetyViolation), 1);
    assert_eq!(r.episodes.len(), 2);
    assert_eq!(r.episodes[1].record, RecordStatus::Destroyed);
    assert_eq!(r.ledger.supervisor_calls, 0);
}

#[test]
fn vla_pays_the_supervisor_on_every_record() {
    let s = fixture("invoice_approval.json");
    let r = batch(&s, PolicyKind::Vla, 1000);
    assert_eq!(count(&r, TerminalStatus::Success), 1000);
    assert_eq!(r.ledger.total_sim_ms, 1000 * 10_000);
    assert_eq!(r.ledger.supervisor_calls, 1000);
}

#[test]
fn hybrid_escalates_once() {
    let s = fixture("invoice_approval.json");
    let r = batch(&s, PolicyKind::Hybrid, 1000);
    assert_eq!(count(&r, TerminalStatus::Success), 1000);
    assert_eq!(r.ledger.drift_calls, 1);
    assert_eq!(r.ledger.supervisor_calls, 1);
    assert_eq!(r.ledger.total_sim_ms, 1000 * 50 + 10_000);
    assert!(r.episodes.iter().all(|e| e.record == RecordStatus::Approved));
    let drifted: Vec<_> = r.episodes.iter().filter(|e| !e.drifts.is_empty()).collect();
    assert_eq!(drifted.len(), 1);
    assert_eq!(drifted[0].ledger.total_sim_ms, 10_050);
}

#[test]
fn hybrid_trace_is_ordered_and_attributed() {
    let s = fixture("invoice_approval.json");
    let r = batch(&s, PolicyKind::Hybrid, 3);
    let records: Vec<TraceRecord> = r.trace_jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for w in records.windows(2) {
        if w[0].episode == w[1].episode {
            assert!(w[0].t_ms <= w[1].t_ms);
        }
    }
    let ep1: Vec<_> = records.iter().filter(|r| r.episode == 1).collect();
    let first_sup = ep1.iter().position(|r| r.control_loop == Loop::Supervisor).unwrap();
    assert!(ep1[..first_sup]
        .iter()
        .any(|r| matches!(r.event, TraceEvent::Ground { hit: false, .. })));
    assert_eq!(ep1.iter().filter(|r| matches!(r.event, TraceEvent::EpisodeEnd { .. })).count(), 1);
}

#[test]
fn warm_cache_without_drift_never_escalates() {
    let mut s = fixture("invoice_approval.json");
    s.drifts.clear();
    let r = batch(&s, PolicyKind::Hybrid, 1);
    assert_eq!(r.ledger.supervisor_calls, 0);
    s.policy_defaults.warm_cache = false;
    let r = batch(&s, PolicyKind::Hybrid, 5);
    assert_eq!(r.ledger.supervisor_calls, 1);
    assert_eq!(r.ledger.cold_start_calls, 1);
}

#[test]
fn swallowed_click_is_retried() {
    let mut s = fixture("invoice_approval.json");
    s.drifts.clear();
    s.lag_faults = vec![LagFault { episode: 0, clicks: 1 }];
    let r = batch(&s, PolicyKind::Hybrid, 1);
    assert_eq!(r.episodes[0].status, TerminalStatus::Success);
    assert!(r.trace_jsonl.contains("\"kind\":\"retry\""));
    assert_eq!(r.ledger.supervisor_calls, 0);

    s.lag_faults = vec![LagFault { episode: 0, clicks: 2 }];
    let r = batch(&s, PolicyKind::Hybrid, 1);
    assert_eq!(r.episodes[0].status, TerminalStatus::Success);
    assert_eq!(r.ledger.proprioception_calls, 1);

    s.lag_faults = vec![LagFault { episode: 0, clicks: 3 }];
    let r = batch(&s, PolicyKind::Hybrid, 1);
    assert_eq!(r.episodes[0].status, TerminalStatus::TaskAbort);
}

#[test]
fn proprioception_cases() {
    let s = fixture("invoice_approval.json");
    let mut env = Environment::new(s.base_screen().unwrap(), 0);
    let a = env.observe();
    assert!(!verify_effect(&a, &env.observe(), true).unwrap().confirmed);
    env.execute(&ActionCommand::Click { point: Point::new(210, 220) });
    assert!(verify_effect(&a, &env.observe(), true).unwrap().confirmed);

    let modal = Widget::new(40, Rect::new(300, 300, 400, 200), "Session expired", Category::Modal, s.palette["gray"]);
    let before = env.observe();
    env.apply_drift(&crate::env::DriftKind::OpenPopup { widget: modal }).unwrap();
    let r = verify_effect(&before, &env.observe(), false).unwrap();
    assert!(!r.confirmed);
    assert_eq!(r.regions, vec![Rect::new(300, 300, 400, 200)]);
}

fn uncertain_aff(bbox: Rect) -> Affordance {
    Affordance {
        id: 0,
        bbox,
        category: Category::Button,
        text: Some("Version 2.0".into()),
        confidence: 0.45,
        uncertain: true,
        provenance: Provenance::Fused,
        style: Some(StyleSignature([0.5; 8])),
        detection_source: None,
        text_source: None,
    }
}

#[test]
fn hover_certifies_or_demotes() {
    let s = fixture("version_conflict.json");
    let mut env = Environment::new(s.base_screen().unwrap(), 0);
    let rev = env.observe().revision();

    let panel = uncertain_aff(Rect::new(40, 80, 160, 40));
    let c = resolve_uncertainty(&panel, &mut env, 0.5);
    assert_eq!(c.verdict, HoverVerdict::Demoted);
    assert_eq!(c.affordance.category, Category::StaticText);

    let save = uncertain_aff(Rect::new(40, 160, 100, 40));
    let c = resolve_uncertainty(&save, &mut env, 0.5);
    assert_eq!(c.verdict, HoverVerdict::Certified);
    assert_eq!(c.affordance.confidence, 0.9);
    assert!(!c.affordance.uncertain);

    let mut certain = save.clone();
    certain.uncertain = false;
    assert_eq!(resolve_uncertainty(&certain, &mut env, 0.5).affordance, certain);
    assert_eq!(env.observe().revision(), rev);
}

#[test]
fn version_panel_is_never_clicked() {
    let s = fixture("version_conflict.json");
    let r = batch(&s, PolicyKind::Hybrid, 1);
    assert_eq!(r.episodes[0].status, TerminalStatus::TaskAbort);
    assert!(r.trace_jsonl.contains("\"kind\":\"hover\""));
    assert!(!r.trace_jsonl.contains("\"kind\":\"click\""));
}

#[test]
fn click_point_avoids_overlapping_trap() {
    let mk = |id, bbox, cat| Affordance { id, category: cat, uncertain: false, ..uncertain_aff(bbox) };
    let submit = mk(1, Rect::new(200, 200, 100, 40), Category::Button);
    let trap = mk(2, Rect::new(160, 200, 100, 40), Category::Button);
    let p = choose_click_point(&submit, &[submit.clone(), trap.clone()], 0).unwrap();
    assert!(submit.bbox.contains_point(p) && !trap.bbox.contains_point(p));
    let twin = mk(3, submit.bbox, Category::Button);
    assert_eq!(choose_click_point(&submit, &[submit.clone(), twin], 0), None);
    let dialog = mk(4, Rect::new(100, 100, 600, 400), Category::Modal);
    assert_eq!(choose_click_point(&submit, &[dialog], 0), Some(submit.bbox.center()));
    let wide = choose_click_point(&submit, &[submit.clone(), trap.clone()], 8).unwrap();
    assert!(wide.x >= trap.bbox.right() + 8, "{wide:?}");
}
