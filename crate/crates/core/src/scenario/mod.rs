//! Scenario configuration, end-to-end engine, metrics and replay.

mod config;
mod engine;
mod metrics;
mod replay;

pub use config::{AdminAction, AdminOp, ConfigError, Scenario, TrafficPattern};
pub use engine::{run_scenario, Engine, EngineError, LocalizationRecord, RedundancyStats, RunArtifacts};
pub use metrics::{
    compute_metrics, render_report, write_artifacts, AttackOutcome, AuditSummary,
    DetectionStats, ExclusionRecord, LogFormat, Metrics, RedundancyRecord, ReportError,
    ACTIONS_FILE, ALERTS_FILE, AUDIT_FILE, EVENTS_JSONL, EVENTS_TSV, METRICS_FILE, TRUTH_FILE,
};
pub use replay::{load_trace, replay_detect, ReplayError, ReplayOutcome, TraceFormat};
