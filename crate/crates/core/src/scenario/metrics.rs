//! Run metrics, artifact files and the human-readable report.
//!
//! A run writes five artifacts plus the out-of-band ground truth:
//! event log (TSV and/or JSON-lines), alert log, action log, audit log
//! and a metrics summary. The report command consumes only these files,
//! never live state.

use super::engine::{LocalizationRecord, RedundancyStats, RunArtifacts};
use crate::detect::{Alert, AlertKind, TraceEvent};
use crate::netsim::{dist, AttackTruth, EventKind, SimEvent};
use crate::respond::{ActionOutcome, AuditLog, ChainCheck, ResponseAction};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Tsv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: String,
    pub target: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub detected: bool,
    pub first_alert_ms: Option<u64>,
    pub latency_windows: Option<u64>,
    pub localization_error_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub device: String,
    pub supi: String,
    pub action: String,
    pub alert_ms: Option<u64>,
    pub action_ms: u64,
    pub effect_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyRecord {
    pub traffic: String,
    pub sent: u64,
    pub delivered: u64,
    pub duplicates: u64,
    pub rejected: u64,
    pub delivery_ratio: f64,
    pub exactly_once_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub scored_events: usize,
    pub total_alerts: usize,
    pub true_positive_alerts: usize,
    pub false_positive_alerts: usize,
    pub precision: Option<f64>,
    pub attack_recall: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub entries: usize,
    pub valid: bool,
    pub first_broken_index: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub alert_counts: BTreeMap<String, u64>,
    pub attacks: Vec<AttackOutcome>,
    pub exclusions: Vec<ExclusionRecord>,
    pub redundancy: Vec<RedundancyRecord>,
    pub detection: DetectionStats,
    pub localizations: Vec<LocalizationRecord>,
    pub audit: AuditSummary,
}

/// Alert kinds that count as detecting a given attack kind.
fn matching_kinds(attack_kind: &str) -> &'static [AlertKind] {
    match attack_kind {
        "jam" => &[AlertKind::Jamming, AlertKind::Wireless],
        "flood" => &[AlertKind::Timing, AlertKind::Wireless],
        "impersonation" | "replay" => &[AlertKind::Auth],
        "tamper" | "tamper-hit" => &[AlertKind::Process],
        _ => &[],
    }
}

fn alert_matches(alert: &Alert, truth: &AttackTruth, slack: SimTime) -> bool {
    matching_kinds(&truth.kind).contains(&alert.detector)
        && alert.t >= truth.start.saturating_sub(slack)
        && alert.t <= truth.end + slack
}

fn parse_truth_position(detail: &str) -> Option<(f64, f64)> {
    let mut x = None;
    let mut y = None;
    for part in detail.split(';') {
        if let Some((k, v)) = part.split_once('=') {
            match k {
                "x" => x = v.parse().ok(),
                "y" => y = v.parse().ok(),
                _ => {}
            }
        }
    }
    Some((x?, y?))
}

/// Builds the metrics summary from the run's artifacts.
pub fn compute_metrics(artifacts: &RunArtifacts, train_window: SimTime) -> Metrics {
    let window = artifacts.detect_config.window_len;
    let slack = SimTime::from_us(window.as_us() * 3).max(SimTime::from_secs(3));

    let mut alert_counts: BTreeMap<String, u64> = BTreeMap::new();
    for a in &artifacts.alerts {
        *alert_counts.entry(a.detector.to_string()).or_default() += 1;
    }

    // primary attack windows only; per-frame tamper hits are detail
    let primary: Vec<&AttackTruth> =
        artifacts.truth.iter().filter(|t| t.kind != "tamper-hit").collect();
    let attacks: Vec<AttackOutcome> = primary
        .iter()
        .map(|truth| {
            let first = artifacts
                .alerts
                .iter()
                .filter(|a| alert_matches(a, truth, slack))
                .map(|a| a.t)
                .min();
            let localization_error_m = parse_truth_position(&truth.detail).and_then(|pos| {
                artifacts
                    .localizations
                    .iter()
                    .filter(|l| {
                        l.window_start >= truth.start.saturating_sub(slack)
                            && l.window_start <= truth.end + slack
                    })
                    .map(|l| dist((l.x, l.y), pos))
                    .fold(None, |acc: Option<f64>, e| {
                        Some(acc.map_or(e, |a| a.min(e)))
                    })
            });
            AttackOutcome {
                kind: truth.kind.clone(),
                target: truth.target.clone(),
                start_ms: truth.start.as_ms(),
                end_ms: truth.end.as_ms(),
                detected: first.is_some(),
                first_alert_ms: first.map(|t| t.as_ms()),
                latency_windows: first.map(|t| {
                    t.saturating_sub(truth.start).as_us() / window.as_us()
                }),
                localization_error_m,
            }
        })
        .collect();

    let exclusions = exclusion_records(&artifacts.actions, &artifacts.alerts, &artifacts.events);

    let redundancy: Vec<RedundancyRecord> = artifacts
        .redundancy
        .iter()
        .map(|(id, s): (&String, &RedundancyStats)| RedundancyRecord {
            traffic: id.clone(),
            sent: s.sent,
            delivered: s.delivered,
            duplicates: s.duplicates,
            rejected: s.rejected,
            delivery_ratio: if s.sent > 0 {
                s.delivered as f64 / s.sent as f64
            } else {
                0.0
            },
            exactly_once_violations: s.exactly_once_violations,
        })
        .collect();

    let detection = detection_stats(
        &artifacts.alerts,
        &artifacts.truth,
        &artifacts.trace,
        train_window,
        slack,
    );

    let audit_check = artifacts.audit.verify_chain();
    Metrics {
        scenario: artifacts.scenario_name.clone(),
        seed: artifacts.seed,
        duration_ms: artifacts.duration.as_ms(),
        alert_counts,
        attacks,
        exclusions,
        redundancy,
        detection,
        localizations: artifacts.localizations.clone(),
        audit: AuditSummary {
            entries: artifacts.audit.len(),
            valid: audit_check == ChainCheck::Valid,
            first_broken_index: match audit_check {
                ChainCheck::Valid => None,
                ChainCheck::BrokenAt(i) => Some(i),
            },
        },
    }
}

pub(crate) fn detection_stats(
    alerts: &[Alert],
    truth: &[AttackTruth],
    trace: &[TraceEvent],
    train_window: SimTime,
    slack: SimTime,
) -> DetectionStats {
    let scored_events = trace.iter().filter(|e| e.t >= train_window).count();
    let tp = alerts
        .iter()
        .filter(|a| truth.iter().any(|t| alert_matches(a, t, slack)))
        .count();
    let fp = alerts.len() - tp;
    let primary: Vec<&AttackTruth> = truth.iter().filter(|t| t.kind != "tamper-hit").collect();
    let detected = primary
        .iter()
        .filter(|t| alerts.iter().any(|a| alert_matches(a, t, slack)))
        .count();
    DetectionStats {
        scored_events,
        total_alerts: alerts.len(),
        true_positive_alerts: tp,
        false_positive_alerts: fp,
        precision: (!alerts.is_empty()).then(|| tp as f64 / alerts.len() as f64),
        attack_recall: (!primary.is_empty()).then(|| detected as f64 / primary.len() as f64),
        false_positive_rate: (scored_events > 0).then(|| fp as f64 / scored_events as f64),
    }
}

fn exclusion_records(
    actions: &[ResponseAction],
    alerts: &[Alert],
    events: &[SimEvent],
) -> Vec<ExclusionRecord> {
    actions
        .iter()
        .filter(|a| a.outcome == ActionOutcome::Applied)
        .map(|a| {
            let alert_ms = alerts.iter().find(|al| al.id == a.alert_id).map(|al| al.t.as_ms());
            let effect = match a.action {
                crate::respond::ActionKind::BlockSim => events
                    .iter()
                    .find(|e| {
                        e.kind == EventKind::Drop
                            && e.t > a.t
                            && e.src == a.target_device_id
                            && e.meta.contains("blocked")
                    })
                    .map(|e| e.t),
                _ => events
                    .iter()
                    .find(|e| {
                        e.kind == EventKind::Action
                            && e.msg_type == "auth-failed"
                            && e.t > a.t
                            && e.dst == a.target_device_id
                    })
                    .map(|e| e.t),
            };
            ExclusionRecord {
                device: a.target_device_id.clone(),
                supi: a.target_supi.clone(),
                action: a.action.to_string(),
                alert_ms,
                action_ms: a.t.as_ms(),
                effect_ms: effect.map(|t| t.as_ms()),
            }
        })
        .collect()
}

// ---- artifact files ------------------------------------------------------

pub const EVENTS_TSV: &str = "events.tsv";
pub const EVENTS_JSONL: &str = "events.jsonl";
pub const ALERTS_FILE: &str = "alerts.jsonl";
pub const ACTIONS_FILE: &str = "actions.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRUTH_FILE: &str = "ground_truth.jsonl";

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("artifact serializes"));
        out.push('\n');
    }
    out
}

/// Writes all run artifacts into `dir`.
pub fn write_artifacts(
    dir: &Path,
    artifacts: &RunArtifacts,
    metrics: &Metrics,
    format: LogFormat,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let events_jsonl = jsonl(&artifacts.events);
    match format {
        LogFormat::Tsv => {
            let mut tsv = String::new();
            for ev in &artifacts.events {
                tsv.push_str(&ev.to_tsv());
                tsv.push('\n');
            }
            fs::write(dir.join(EVENTS_TSV), tsv)?;
            fs::write(dir.join(EVENTS_JSONL), events_jsonl)?;
        }
        LogFormat::Jsonl => {
            fs::write(dir.join(EVENTS_JSONL), events_jsonl)?;
        }
    }
    fs::write(dir.join(ALERTS_FILE), jsonl(&artifacts.alerts))?;
    fs::write(dir.join(ACTIONS_FILE), jsonl(&artifacts.actions))?;
    fs::write(dir.join(AUDIT_FILE), artifacts.audit.to_jsonl())?;
    fs::write(dir.join(TRUTH_FILE), jsonl(&artifacts.truth))?;
    fs::write(
        dir.join(METRICS_FILE),
        serde_json::to_string_pretty(metrics).expect("metrics serialize"),
    )?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("artifact unreadable: {0}")]
    Unreadable(String),
}

/// Renders the report from artifact files alone.
pub fn render_report(dir: &Path) -> Result<String, ReportError> {
    let mut missing = Vec::new();
    let events_present =
        dir.join(EVENTS_TSV).exists() || dir.join(EVENTS_JSONL).exists();
    if !events_present {
        missing.push("event log (events.tsv or events.jsonl)".to_string());
    }
    for name in [ALERTS_FILE, ACTIONS_FILE, AUDIT_FILE, METRICS_FILE] {
        if !dir.join(name).exists() {
            missing.push(name.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(ReportError::MissingArtifacts(missing));
    }

    let metrics: Metrics = serde_json::from_str(
        &fs::read_to_string(dir.join(METRICS_FILE))
            .map_err(|e| ReportError::Unreadable(e.to_string()))?,
    )
    .map_err(|e| ReportError::Unreadable(format!("{METRICS_FILE}: {e}")))?;
    let audit = AuditLog::from_jsonl(
        &fs::read_to_string(dir.join(AUDIT_FILE))
            .map_err(|e| ReportError::Unreadable(e.to_string()))?,
    )
    .map_err(|e| ReportError::Unreadable(e.to_string()))?;

    let mut out = String::new();
    let _ = writeln!(out, "scenario: {} (seed {})", metrics.scenario, metrics.seed);
    let _ = writeln!(out, "duration: {} ms", metrics.duration_ms);
    let _ = writeln!(out, "\nalerts by detector:");
    if metrics.alert_counts.is_empty() {
        let _ = writeln!(out, "  (none)");
    }
    for (k, v) in &metrics.alert_counts {
        let _ = writeln!(out, "  {k:<10} {v}");
    }

    let _ = writeln!(out, "\nattacks:");
    if metrics.attacks.is_empty() {
        let _ = writeln!(out, "  (none injected)");
    }
    for a in &metrics.attacks {
        let det = if a.detected {
            format!(
                "detected at {} ms (latency {} windows)",
                a.first_alert_ms.unwrap(),
                a.latency_windows.unwrap()
            )
        } else {
            "NOT DETECTED".to_string()
        };
        let _ = writeln!(
            out,
            "  {:<14} target={:<12} window {}..{} ms  {det}",
            a.kind, a.target, a.start_ms, a.end_ms
        );
        if let Some(err) = a.localization_error_m {
            let _ = writeln!(out, "    localization error: {err:.2} m");
        }
    }
    if let Some(recall) = metrics.detection.attack_recall {
        let _ = writeln!(
            out,
            "  recall {recall:.2}, precision {}, FPR {}",
            metrics
                .detection
                .precision
                .map_or("n/a".into(), |p| format!("{p:.3}")),
            metrics
                .detection
                .false_positive_rate
                .map_or("n/a".into(), |p| format!("{p:.5}")),
        );
    }

    let _ = writeln!(out, "\nexclusions (alert -> action -> effect):");
    if metrics.exclusions.is_empty() {
        let _ = writeln!(out, "  (none)");
    }
    for e in &metrics.exclusions {
        let _ = writeln!(
            out,
            "  {:<18} {:<12} alert={} ms action={} ms effect={}",
            e.action,
            e.device,
            e.alert_ms.map_or("-".into(), |t| t.to_string()),
            e.action_ms,
            e.effect_ms.map_or("(not yet observed)".into(), |t| format!("{t} ms")),
        );
    }

    let _ = writeln!(out, "\nredundant streams:");
    if metrics.redundancy.is_empty() {
        let _ = writeln!(out, "  (none)");
    }
    for r in &metrics.redundancy {
        let _ = writeln!(
            out,
            "  {:<14} sent={} delivered={} ratio={:.4} duplicates={} exactly-once violations={}",
            r.traffic, r.sent, r.delivered, r.delivery_ratio, r.duplicates, r.exactly_once_violations
        );
    }

    let chain = audit.verify_chain();
    let _ = writeln!(
        out,
        "\naudit log: {} entries, verification: {}",
        audit.len(),
        match chain {
            ChainCheck::Valid => "valid".to_string(),
            ChainCheck::BrokenAt(i) => format!("BROKEN at index {i}"),
        }
    );
    Ok(out)
}
