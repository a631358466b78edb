//! Response orchestration and the audit trail.
//!
//! An ordered rule list maps alerts to exclusion actions: certificate
//! suspension or revocation through the CA, SIM blocking through the
//! subscriber core, or none. Repeat offenders escalate from suspension
//! to revocation. Jamming alerts carry no excludable credential and
//! always resolve to an operator notice.
//!
//! Every action lands in a hash-chained append-only audit log before it
//! is reported applied; `verify_audit_chain` recomputes the chain and
//! pinpoints the first tampered entry.

use crate::detect::{Alert, AlertKind};
use crate::netsim::{Simulator, SubscriberAction};
use crate::pki::{CertificateAuthority, PkiError, RevocationReason, StatusChange};
use crate::time::SimTime;
use crate::wire::Encoder;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    None,
    SuspendCert,
    RevokeCert,
    BlockSim,
    SuspendAndBlock,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActionKind::None => "none",
            ActionKind::SuspendCert => "suspend_cert",
            ActionKind::RevokeCert => "revoke_cert",
            ActionKind::BlockSim => "block_sim",
            ActionKind::SuspendAndBlock => "suspend_and_block",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ActionKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "none" => ActionKind::None,
            "suspend_cert" => ActionKind::SuspendCert,
            "revoke_cert" => ActionKind::RevokeCert,
            "block_sim" => ActionKind::BlockSim,
            "suspend_and_block" => ActionKind::SuspendAndBlock,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRule {
    pub detector: AlertKind,
    pub min_severity: f64,
    pub action: ActionKind,
}

/// Ordered rules, first match wins; an implicit trailing rule maps
/// everything unmatched to no action.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePolicy {
    pub rules: Vec<PolicyRule>,
    /// Offense count at which suspension escalates to revocation.
    pub escalation: u32,
}

impl Default for ResponsePolicy {
    fn default() -> Self {
        ResponsePolicy { rules: Vec::new(), escalation: 3 }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("policy parse error at line {line}: {msg}")]
pub struct PolicyParseError {
    pub line: usize,
    pub msg: String,
}

impl ResponsePolicy {
    /// Text format, one directive per line:
    /// `rule = detector, min_severity, action` and `escalation = N`.
    pub fn parse(text: &str) -> Result<Self, PolicyParseError> {
        let err = |line: usize, msg: &str| PolicyParseError { line, msg: msg.to_string() };
        let mut policy = ResponsePolicy::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, "expected key = value"))?;
            match key.trim() {
                "rule" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(err(line_no, "expected detector, min_severity, action"));
                    }
                    let detector: AlertKind =
                        parts[0].parse().map_err(|_| err(line_no, "unknown detector kind"))?;
                    let min_severity: f64 =
                        parts[1].parse().map_err(|_| err(line_no, "bad severity"))?;
                    let action: ActionKind =
                        parts[2].parse().map_err(|_| err(line_no, "unknown action"))?;
                    policy.rules.push(PolicyRule { detector, min_severity, action });
                }
                "escalation" => {
                    policy.escalation = value
                        .trim()
                        .parse()
                        .map_err(|_| err(line_no, "bad escalation count"))?;
                }
                other => return Err(err(line_no, &format!("unknown directive {other:?}"))),
            }
        }
        Ok(policy)
    }
}

/// Planned response for one alert, before execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePlan {
    pub alert_id: u64,
    pub action: ActionKind,
    pub target_device: Option<String>,
    pub target_supi: Option<String>,
    pub note: Option<String>,
}

/// Maps one alert to a plan. `identity` is the resolved device behind
/// the alert's channel, when one exists.
pub fn decide_response(
    policy: &ResponsePolicy,
    alert: &Alert,
    identity: Option<(&str, Option<&str>)>,
    offense_count: u32,
) -> ResponsePlan {
    // jammers hold no credentials; exclusion cannot apply
    if alert.detector == AlertKind::Jamming {
        return ResponsePlan {
            alert_id: alert.id,
            action: ActionKind::None,
            target_device: None,
            target_supi: None,
            note: Some("jamming: operator notice, no excludable credential".into()),
        };
    }
    let Some((device, supi)) = identity else {
        return ResponsePlan {
            alert_id: alert.id,
            action: ActionKind::None,
            target_device: None,
            target_supi: None,
            note: Some("unresolvable identity: operator notice".into()),
        };
    };

    let matched = policy
        .rules
        .iter()
        .find(|r| r.detector == alert.detector && alert.score >= r.min_severity);
    let mut action = matched.map(|r| r.action).unwrap_or(ActionKind::None);
    if action == ActionKind::SuspendCert && offense_count >= policy.escalation {
        action = ActionKind::RevokeCert;
    }
    ResponsePlan {
        alert_id: alert.id,
        action,
        target_device: Some(device.to_string()),
        target_supi: supi.map(str::to_string),
        note: None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "reason")]
pub enum ActionOutcome {
    Applied,
    Failed(String),
}

/// Executed (or attempted) response, one audit entry each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAction {
    pub t: SimTime,
    pub target_device_id: String,
    pub target_supi: String,
    pub action: ActionKind,
    pub alert_id: u64,
    #[serde(flatten)]
    pub outcome: ActionOutcome,
}

/// Suspends or revokes the target's certificate. The device stays on
/// the network; only authentication fails from here on, so peers must
/// keep validating status.
pub fn execute_pki_exclusion(
    plan: &ResponsePlan,
    ca: &mut CertificateAuthority,
    serial: Option<u64>,
    revoke: bool,
    now: SimTime,
) -> ResponseAction {
    let device = plan.target_device.clone().unwrap_or_default();
    let outcome = match serial {
        None => ActionOutcome::Failed("no known certificate".into()),
        Some(serial) => {
            let change = if revoke {
                StatusChange::Revoked(RevocationReason::Exclusion)
            } else {
                StatusChange::Suspended
            };
            match ca.set_status(serial, change, now) {
                Ok(_) => ActionOutcome::Applied,
                Err(PkiError::IllegalTransition(s)) => {
                    ActionOutcome::Failed(format!("illegal transition from {s}"))
                }
                Err(e) => ActionOutcome::Failed(e.to_string()),
            }
        }
    };
    ResponseAction {
        t: now,
        target_device_id: device,
        target_supi: plan.target_supi.clone().unwrap_or_default(),
        action: if revoke { ActionKind::RevokeCert } else { ActionKind::SuspendCert },
        alert_id: plan.alert_id,
        outcome,
    }
}

/// Blocks the target SUPI in the subscriber core; all later
/// transmissions from it are undeliverable.
pub fn execute_sim_exclusion(
    plan: &ResponsePlan,
    sim: &mut Simulator,
    now: SimTime,
) -> ResponseAction {
    let supi = plan.target_supi.clone().unwrap_or_default();
    let outcome = if supi.is_empty() {
        ActionOutcome::Failed("unknown-supi".into())
    } else {
        match sim.manage_subscriber(&supi, SubscriberAction::Block) {
            Ok(_) => ActionOutcome::Applied,
            Err(_) => ActionOutcome::Failed("unknown-supi".into()),
        }
    };
    ResponseAction {
        t: now,
        target_device_id: plan.target_device.clone().unwrap_or_default(),
        target_supi: supi,
        action: ActionKind::BlockSim,
        alert_id: plan.alert_id,
        outcome,
    }
}

const GENESIS_HASH: [u8; 32] = [0u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub index: u64,
    pub t: SimTime,
    pub actor: String,
    pub description: String,
    #[serde(with = "crate::serde_key32")]
    pub prev_hash: [u8; 32],
    #[serde(with = "crate::serde_key32")]
    pub entry_hash: [u8; 32],
}

fn entry_hash(index: u64, t: SimTime, actor: &str, description: &str, prev: &[u8; 32]) -> [u8; 32] {
    let mut e = Encoder::new();
    e.u64(index).u64(t.as_us()).str(actor).str(description).bytes(prev);
    crate::crypto::sha256(&e.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainCheck {
    Valid,
    BrokenAt(u64),
}

/// Append-only hash-chained log.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct AuditLog {
    entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn new() -> Self {
        AuditLog::default()
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, actor: &str, description: &str, t: SimTime) -> &AuditEntry {
        let index = self.entries.len() as u64;
        let prev_hash = self
            .entries
            .last()
            .map(|e| e.entry_hash)
            .unwrap_or(GENESIS_HASH);
        let hash = entry_hash(index, t, actor, description, &prev_hash);
        self.entries.push(AuditEntry {
            index,
            t,
            actor: actor.to_string(),
            description: description.to_string(),
            prev_hash,
            entry_hash: hash,
        });
        self.entries.last().unwrap()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("audit entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, AuditParseError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: AuditEntry = serde_json::from_str(line)
                .map_err(|e| AuditParseError { line: idx + 1, msg: e.to_string() })?;
            entries.push(entry);
        }
        Ok(AuditLog { entries })
    }

    /// Recomputes hashes, indices and linkage; reports the first entry
    /// position that fails. Position, not stored index: a deleted entry
    /// surfaces as the gap where it used to be.
    pub fn verify_chain(&self) -> ChainCheck {
        let mut prev = GENESIS_HASH;
        for (pos, e) in self.entries.iter().enumerate() {
            let pos = pos as u64;
            if e.index != pos
                || e.prev_hash != prev
                || e.entry_hash != entry_hash(e.index, e.t, &e.actor, &e.description, &e.prev_hash)
            {
                return ChainCheck::BrokenAt(pos);
            }
            prev = e.entry_hash;
        }
        ChainCheck::Valid
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("audit log parse error at line {line}: {msg}")]
pub struct AuditParseError {
    pub line: usize,
    pub msg: String,
}
