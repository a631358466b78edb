//! End-to-end scenario engine.
//!
//! Builds the whole world from a parsed scenario — CA, status responder,
//! authentication service, device agents, subscriber core, traffic
//! streams — then drives the simulator queue to completion. Periodic
//! markers fire traffic ticks, handshake rounds and detection windows;
//! deliveries dispatch to protocol handlers; alerts flow through the
//! response policy into certificate or SIM exclusion with every action
//! audit-logged first. Ground truth stays out of band.

use super::config::{AdminAction, AdminOp, Scenario, TrafficPattern};
use crate::auth::{
    AuthConfig, AuthFailure, ChallengeMsg, ConfirmMsg, DeviceAgent, IdaService, ResponseMsg,
    TokenStore,
};
use crate::crypto::{subrng, KexSecret, SigningKey};
use crate::detect::{
    detect_jamming, localize_jammer, seal_process_payload, Alert, AlertKind, DetectorConfig,
    DetectorEngine, Normalizer, PskPayloadDecoder, SensorWindow, TraceEvent,
};
use crate::linksec::{install_stream, RxOutcome, StreamRx, StreamTx};
use crate::netsim::{
    AttackSpec, EventKind, NodeRole, Simulator, Stepped, SubscriberAction, TransmitSpec,
};
use crate::pki::{
    CertificateAuthority, CertStatus, StatusChange, StatusResponder, StatusSource, SubjectKind,
};
use crate::respond::{
    decide_response, execute_pki_exclusion, execute_sim_exclusion, ActionKind, ActionOutcome,
    AuditLog, ResponseAction, ResponsePlan,
};
use crate::time::SimTime;
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    NetSim(#[from] crate::netsim::NetSimError),
    #[error(transparent)]
    Pki(#[from] crate::pki::PkiError),
    #[error(transparent)]
    Auth(#[from] crate::auth::AuthError),
}

/// Jammer position estimate recorded alongside its window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub window_start: SimTime,
    pub x: f64,
    pub y: f64,
    pub power_dbm: f64,
    pub residual: f64,
}

/// Per-stream delivery accounting for the redundancy report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RedundancyStats {
    pub sent: u64,
    pub delivered: u64,
    pub duplicates: u64,
    pub stale: u64,
    pub rejected: u64,
    pub exactly_once_violations: u64,
}

struct TrafficState {
    pattern: TrafficPattern,
    device_end: Option<String>,
    channel_ids: Vec<u32>,
    generation: u32,
    stream_tx: Option<StreamTx>,
    stream_rx: Option<StreamRx>,
    process_key: Option<[u8; 32]>,
    next_plain_seq: u64,
    delivered_seqs: BTreeSet<(u32, u32)>,
    redundancy: RedundancyStats,
}

struct ActiveHs {
    session_id: u64,
    attempt: u32,
    service_done: bool,
}

struct CapturedMsg {
    dst: String,
    msg_type: String,
    seq: u64,
    payload: Vec<u8>,
}

/// Everything a run produces; the artifact writer serializes it.
pub struct RunArtifacts {
    pub scenario_name: String,
    pub seed: u64,
    pub duration: SimTime,
    pub events: Vec<crate::netsim::SimEvent>,
    pub trace: Vec<TraceEvent>,
    pub alerts: Vec<Alert>,
    pub actions: Vec<ResponseAction>,
    pub audit: AuditLog,
    pub truth: Vec<crate::netsim::AttackTruth>,
    pub localizations: Vec<LocalizationRecord>,
    pub redundancy: BTreeMap<String, RedundancyStats>,
    pub detect_config: DetectorConfig,
    pub baseline_noise_dbm: f64,
}

pub struct Engine {
    scenario: Scenario,
    sim: Simulator,
    ca: CertificateAuthority,
    responder: StatusResponder,
    ida: IdaService,
    devices: BTreeMap<String, DeviceAgent>,
    traffics: BTreeMap<String, TrafficState>,
    active_hs: BTreeMap<String, ActiveHs>,
    last_challenge: BTreeMap<String, ChallengeMsg>,
    captured: Vec<CapturedMsg>,
    decoder: PskPayloadDecoder,
    normalizer: Normalizer,
    detector: Option<DetectorEngine>,
    training: Vec<TraceEvent>,
    trace_out: Vec<TraceEvent>,
    alerts: Vec<Alert>,
    actions: Vec<ResponseAction>,
    audit: AuditLog,
    offense: BTreeMap<String, u32>,
    window_counts: BTreeMap<u64, (u32, u32)>,
    next_window_to_score: u64,
    localizations: Vec<LocalizationRecord>,
    next_alert_id: u64,
    rng_attacker: ChaCha20Rng,
}

impl Engine {
    pub fn build(scenario: Scenario) -> Result<Engine, EngineError> {
        let seed = scenario.seed;
        let mut sim = Simulator::new(seed);
        sim.set_channel("default", scenario.default_channel.clone());
        for (name, model) in &scenario.channels {
            sim.set_channel(name, model.clone());
        }
        for node in &scenario.nodes {
            sim.add_node(node.clone());
        }
        for attack in &scenario.attacks {
            sim.inject_attack(attack.clone())?;
        }

        let mut audit = AuditLog::new();
        let mut key_rng = subrng(seed, "keys");
        let mut ca = CertificateAuthority::new("ca-root", SigningKey::generate(&mut key_rng));
        let responder = StatusResponder::new("ocsp-1", SigningKey::generate(&mut key_rng));
        audit.append("admin", "certificate authority initialized", SimTime::ZERO);

        let cert_lifetime = scenario.duration + SimTime::from_secs(3600);
        let service_key = SigningKey::generate(&mut key_rng);
        let service_cert = ca
            .issue(
                SubjectKind::Service,
                &scenario.service_node,
                None,
                &service_key.verifying_key().to_bytes(),
                SimTime::ZERO,
                cert_lifetime,
            )
            .map_err(|e| EngineError::Setup(e.to_string()))?;
        let auth_config = AuthConfig::with_interval(scenario.auth_interval);
        let mut ida = IdaService::new(
            scenario.service_node.clone(),
            service_key,
            service_cert,
            auth_config.clone(),
            subrng(seed, "ida-service"),
        );

        let mut devices = BTreeMap::new();
        for node in scenario.nodes.iter().filter(|n| n.role == NodeRole::Device) {
            let supi = node.supi.clone().expect("devices carry a supi");
            let device_key = SigningKey::generate(&mut key_rng);
            let cert = ca
                .issue(
                    SubjectKind::Device,
                    &node.node_id,
                    Some(&supi),
                    &device_key.verifying_key().to_bytes(),
                    SimTime::ZERO,
                    cert_lifetime,
                )
                .map_err(|e| EngineError::Setup(e.to_string()))?;
            ida.register_device(&ca, &node.node_id, &supi, cert.serial)?;
            audit.append(
                "admin",
                &format!("issued certificate serial {} for device {}", cert.serial, node.node_id),
                SimTime::ZERO,
            );
            devices.insert(
                node.node_id.clone(),
                DeviceAgent::new(
                    node.node_id.clone(),
                    supi,
                    cert,
                    TokenStore::new(node.node_id.clone(), device_key),
                    auth_config.clone(),
                    subrng(seed, &format!("device-{}", node.node_id)),
                ),
            );
        }

        let mut traffics = BTreeMap::new();
        let mut next_channel_id = 1u32;
        for pattern in &scenario.traffic {
            let device_end = if devices.contains_key(&pattern.src) {
                Some(pattern.src.clone())
            } else if devices.contains_key(&pattern.dst) {
                Some(pattern.dst.clone())
            } else {
                None
            };
            if device_end.is_none() && (pattern.pipelines.len() == 2 || !pattern.process.is_empty())
            {
                return Err(EngineError::Setup(format!(
                    "traffic {:?} needs a registered device endpoint for key establishment",
                    pattern.id
                )));
            }
            let channel_ids: Vec<u32> = pattern
                .pipelines
                .iter()
                .map(|_| {
                    let id = next_channel_id;
                    next_channel_id += 1;
                    id
                })
                .collect();
            traffics.insert(
                pattern.id.clone(),
                TrafficState {
                    pattern: pattern.clone(),
                    device_end,
                    channel_ids,
                    generation: 0,
                    stream_tx: None,
                    stream_rx: None,
                    process_key: None,
                    next_plain_seq: 0,
                    delivered_seqs: BTreeSet::new(),
                    redundancy: RedundancyStats::default(),
                },
            );
        }

        let mut engine = Engine {
            sim,
            ca,
            responder,
            ida,
            devices,
            traffics,
            active_hs: BTreeMap::new(),
            last_challenge: BTreeMap::new(),
            captured: Vec::new(),
            decoder: PskPayloadDecoder::new(),
            normalizer: Normalizer::new(),
            detector: None,
            training: Vec::new(),
            trace_out: Vec::new(),
            alerts: Vec::new(),
            actions: Vec::new(),
            audit,
            offense: BTreeMap::new(),
            window_counts: BTreeMap::new(),
            next_window_to_score: 0,
            localizations: Vec::new(),
            next_alert_id: 1,
            rng_attacker: subrng(scenario.seed, "attacker"),
            scenario,
        };
        engine.schedule_initial()?;
        Ok(engine)
    }

    fn schedule_initial(&mut self) -> Result<(), EngineError> {
        let duration = self.scenario.duration;
        // traffic ticks
        for id in self.traffics.keys().cloned().collect::<Vec<_>>() {
            let period = self.traffics[&id].pattern.period;
            self.sim.schedule_marker(period, "traffic", format!("id={id}"))?;
        }
        // handshakes: staggered kick, then a shared periodic round
        for (i, device) in self.devices.keys().cloned().enumerate().collect::<Vec<_>>() {
            self.sim.schedule_marker(
                SimTime::from_ms(10 * (i as u64 + 1)),
                "auth-kick",
                format!("device={device}"),
            )?;
        }
        // one second past each interval boundary, so devices established
        // shortly after t=0 are already due at the first round
        self.sim.schedule_marker(
            self.scenario.auth_interval + SimTime::from_secs(1),
            "auth-periodic",
            String::new(),
        )?;
        // detection boundaries
        self.sim.schedule_marker(self.scenario.train_window, "detect-train", String::new())?;
        let w = self.scenario.detect.window_len;
        self.sim.schedule_marker(w * 2, "detect-window", String::new())?;
        // scripted operator actions
        for (i, action) in self.scenario.admin.clone().into_iter().enumerate() {
            self.sim.schedule_marker(action.at.min(duration), "admin", format!("idx={i}"))?;
        }
        // behavioral attacks
        for (i, spec) in self.sim.attack_specs().to_vec().into_iter().enumerate() {
            match spec {
                AttackSpec::Flood { start, .. } => {
                    self.sim.schedule_marker(start, "flood", format!("idx={i}"))?;
                }
                AttackSpec::Replay { replay_at, .. } => {
                    self.sim.schedule_marker(replay_at, "replay-fire", format!("idx={i}"))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn next_alert_id(&mut self) -> u64 {
        let id = self.next_alert_id;
        self.next_alert_id += 1;
        id
    }

    /// Runs to the scenario horizon and produces all artifacts. A short
    /// drain grace lets frames already in flight at the horizon land
    /// instead of surfacing as phantom drops.
    pub fn run(mut self) -> Result<RunArtifacts, EngineError> {
        let horizon = self.scenario.duration + SimTime::from_ms(200);
        while let Some(stepped) = self.sim.step() {
            if stepped.t > horizon {
                break;
            }
            self.handle(stepped)?;
        }
        self.finalize()
    }

    fn handle(&mut self, stepped: Stepped) -> Result<(), EngineError> {
        let t = stepped.t;
        for ev in &stepped.events {
            // attacker overhears challenges and races the honest device
            if ev.kind == EventKind::Tx && ev.msg_type == "auth-challenge" {
                self.maybe_impersonate(&ev.dst, t)?;
            }
            let emitted = self.normalizer.push(ev, Some(&self.decoder));
            for te in emitted {
                self.on_trace_event(te, t)?;
            }
        }
        if let Some(delivery) = stepped.delivery {
            self.on_delivery(delivery, t)?;
        }
        if let Some((kind, meta)) = stepped.marker {
            self.on_marker(&kind, &meta, t)?;
        }
        Ok(())
    }

    // ---- detection plumbing -------------------------------------------

    fn on_trace_event(&mut self, te: TraceEvent, now: SimTime) -> Result<(), EngineError> {
        let w = te.t.as_us() / self.scenario.detect.window_len.as_us();
        let counts = self.window_counts.entry(w).or_default();
        counts.0 += 1;
        if te.delivered {
            counts.1 += 1;
        }

        match &mut self.detector {
            Some(detector) => {
                let alerts = detector.score_event(&te);
                self.trace_out.push(te);
                self.dispatch_alerts(alerts, now)?;
            }
            None => {
                self.training.push(te.clone());
                self.trace_out.push(te);
            }
        }
        Ok(())
    }

    fn train_detector(&mut self) {
        let model = crate::detect::train(&self.training, &self.scenario.detect);
        self.detector = Some(DetectorEngine::new(model, self.scenario.detect.clone()));
        self.audit.append(
            "detector",
            &format!("baseline trained on {} messages", self.training.len()),
            self.sim.now(),
        );
    }

    fn score_sensor_window(&mut self, w: u64, now: SimTime) -> Result<(), EngineError> {
        let len = self.scenario.detect.window_len;
        let start = SimTime::from_us(w * len.as_us());
        let (offered, delivered) = self.window_counts.get(&w).copied().unwrap_or((0, 0));
        let windows: Vec<SensorWindow> = self
            .sim
            .sensors()
            .map(|s| SensorWindow {
                sensor_id: s.node_id.clone(),
                position: s.position,
                window_start: start,
                window_len: len,
                noise_floor_dbm: self.sim.noise_floor_over_window(s.position, start, len),
                pdr: (offered > 0).then(|| delivered as f64 / offered as f64),
                offered_load: offered,
            })
            .collect();
        if windows.is_empty() {
            return Ok(());
        }
        let baseline = self.scenario.default_channel.noise_floor_dbm;
        if let Some(alert) = detect_jamming(baseline, &windows, &self.scenario.detect) {
            match localize_jammer(
                &windows,
                baseline,
                &self.scenario.default_channel,
                &self.scenario.detect,
            ) {
                Ok(loc) => {
                    self.localizations.push(LocalizationRecord {
                        window_start: start,
                        x: loc.position.0,
                        y: loc.position.1,
                        power_dbm: loc.power_dbm,
                        residual: loc.residual,
                    });
                    self.sim.log_event(
                        EventKind::Action,
                        "detector",
                        "",
                        "jam-localized",
                        0,
                        format!(
                            "x={:.2};y={:.2};power_dbm={:.2};residual={:.4}",
                            loc.position.0, loc.position.1, loc.power_dbm, loc.residual
                        ),
                    );
                }
                Err(_) => {
                    // fewer than three sensors saw the rise; detection
                    // stands, localization is simply unavailable
                }
            }
            self.dispatch_alerts(vec![alert], now)?;
        }
        Ok(())
    }

    // ---- alert -> response --------------------------------------------

    fn dispatch_alerts(&mut self, alerts: Vec<Alert>, now: SimTime) -> Result<(), EngineError> {
        for alert in alerts {
            let id = self.next_alert_id();
            let alert = alert.with_id(id);
            self.sim.log_event(
                EventKind::Alert,
                &alert.detector.to_string(),
                &alert.channel,
                "alert",
                alert.id,
                format!("score={:.4};threshold={:.4};{}", alert.score, alert.threshold, alert.evidence),
            );
            self.respond_to(&alert, now)?;
            self.alerts.push(alert);
        }
        Ok(())
    }

    fn resolve_identity(&self, alert: &Alert) -> Option<(String, Option<String>)> {
        let candidate = if alert.detector == AlertKind::Auth {
            alert.channel.clone()
        } else {
            alert.channel.split('>').next().unwrap_or_default().to_string()
        };
        let node = self.sim.node(&candidate)?;
        if node.role == NodeRole::Device {
            Some((candidate, node.supi.clone()))
        } else {
            None
        }
    }

    fn respond_to(&mut self, alert: &Alert, now: SimTime) -> Result<(), EngineError> {
        let identity = self.resolve_identity(alert);
        let plan = match &identity {
            Some((device, supi)) => {
                // offense number = prior actionable alerts + this one;
                // notice-only alerts never count towards escalation
                let prior = self.offense.get(device).copied().unwrap_or(0);
                let plan = decide_response(
                    &self.scenario.policy,
                    alert,
                    Some((device.as_str(), supi.as_deref())),
                    prior + 1,
                );
                if plan.action != ActionKind::None {
                    self.offense.insert(device.clone(), prior + 1);
                }
                plan
            }
            None => decide_response(&self.scenario.policy, alert, None, 0),
        };
        if plan.action == ActionKind::None {
            if let Some(note) = &plan.note {
                self.audit.append("responder", &format!("alert {}: {note}", alert.id), now);
            }
            return Ok(());
        }
        self.execute_plan(plan, now)
    }

    fn execute_plan(&mut self, plan: ResponsePlan, now: SimTime) -> Result<(), EngineError> {
        let device = plan.target_device.clone().unwrap_or_default();
        let serial = self.ida.identity_of(&device).map(|i| i.cert_serial);
        let record = |engine: &mut Engine, action: ResponseAction| {
            // audit first, then report: an action is only "applied" once
            // its audit entry exists
            engine.audit.append(
                "responder",
                &format!(
                    "alert {}: {} {} supi={} outcome={:?}",
                    action.alert_id,
                    action.action,
                    action.target_device_id,
                    action.target_supi,
                    action.outcome
                ),
                now,
            );
            engine.sim.log_event(
                EventKind::Action,
                "responder",
                &action.target_device_id,
                &action.action.to_string(),
                action.alert_id,
                match &action.outcome {
                    ActionOutcome::Applied => "outcome=applied".to_string(),
                    ActionOutcome::Failed(r) => format!("outcome=failed;reason={r}"),
                },
            );
            engine.actions.push(action);
        };

        match plan.action {
            ActionKind::SuspendCert | ActionKind::RevokeCert => {
                let revoke = plan.action == ActionKind::RevokeCert;
                if serial.map(|s| matches!(self.ca.status_of(s), CertStatus::Revoked { .. }))
                    == Some(true)
                {
                    return Ok(()); // already terminally excluded
                }
                let action = execute_pki_exclusion(&plan, &mut self.ca, serial, revoke, now);
                record(self, action);
            }
            ActionKind::BlockSim => {
                if plan.target_supi.as_deref().map(|s| self.sim.is_blocked(s)) == Some(true) {
                    return Ok(());
                }
                let action = execute_sim_exclusion(&plan, &mut self.sim, now);
                record(self, action);
            }
            ActionKind::SuspendAndBlock => {
                let already_revoked = serial
                    .map(|s| matches!(self.ca.status_of(s), CertStatus::Revoked { .. }))
                    == Some(true);
                if !already_revoked {
                    let action = execute_pki_exclusion(&plan, &mut self.ca, serial, false, now);
                    record(self, action);
                }
                if plan.target_supi.as_deref().map(|s| self.sim.is_blocked(s)) != Some(true) {
                    let action = execute_sim_exclusion(&plan, &mut self.sim, now);
                    record(self, action);
                }
            }
            ActionKind::None => {}
        }
        Ok(())
    }

    fn auth_alert(&mut self, device: &str, label: &str, now: SimTime) -> Result<(), EngineError> {
        let alert = Alert::new(
            now,
            AlertKind::Auth,
            device.to_string(),
            1.0,
            0.0,
            format!("auth-failure:{label}"),
        );
        self.dispatch_alerts(vec![alert], now)
    }

    // ---- markers --------------------------------------------------------

    fn on_marker(&mut self, kind: &str, meta: &str, t: SimTime) -> Result<(), EngineError> {
        let fields: BTreeMap<&str, &str> =
            meta.split(';').filter_map(|p| p.split_once('=')).collect();
        match kind {
            "traffic" => {
                let id = fields["id"].to_string();
                self.send_traffic(&id, t)?;
                let period = self.traffics[&id].pattern.period;
                let next = t + period;
                // strictly before the horizon: a tick at the boundary
                // would open a degenerate final window
                if next < self.scenario.duration {
                    self.sim.schedule_marker(next, "traffic", format!("id={id}"))?;
                }
            }
            "auth-kick" => {
                let device = fields["device"].to_string();
                self.start_handshake(&device, 1, t)?;
            }
            "auth-periodic" => {
                self.run_periodic_auth(t)?;
                let next = t + self.scenario.auth_interval;
                if next <= self.scenario.duration {
                    self.sim.schedule_marker(next, "auth-periodic", String::new())?;
                }
            }
            "auth-timeout" => {
                let device = fields["device"].to_string();
                let session: u64 = fields["session"].parse().unwrap_or(0);
                let attempt: u32 = fields["attempt"].parse().unwrap_or(1);
                self.on_auth_timeout(&device, session, attempt, t)?;
            }
            "detect-train" => self.train_detector(),
            "detect-window" => {
                let len = self.scenario.detect.window_len;
                let current = t.as_us() / len.as_us();
                // two windows of grace so in-flight messages finalize
                while self.next_window_to_score + 2 <= current {
                    let w = self.next_window_to_score;
                    self.next_window_to_score += 1;
                    if SimTime::from_us(w * len.as_us()) >= self.scenario.train_window {
                        self.score_sensor_window(w, t)?;
                    }
                }
                let next = t + len;
                if next <= self.scenario.duration {
                    self.sim.schedule_marker(next, "detect-window", String::new())?;
                }
            }
            "admin" => {
                let idx: usize = fields["idx"].parse().unwrap_or(0);
                let action = self.scenario.admin[idx].clone();
                self.run_admin(&action, t)?;
            }
            "flood" => {
                let idx: usize = fields["idx"].parse().unwrap_or(0);
                self.run_flood_tick(idx, t)?;
            }
            "replay-fire" => {
                let idx: usize = fields["idx"].parse().unwrap_or(0);
                self.fire_replay(idx, t)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn run_admin(&mut self, action: &AdminAction, t: SimTime) -> Result<(), EngineError> {
        let target = &action.target;
        let supi = self.sim.node(target).and_then(|n| n.supi.clone());
        let serial = self.ida.identity_of(target).map(|i| i.cert_serial);
        let describe = |what: &str, outcome: &str| format!("admin {what} {target}: {outcome}");
        match action.op {
            AdminOp::SuspendCert | AdminOp::RevokeCert | AdminOp::Reinstate => {
                let change = match action.op {
                    AdminOp::SuspendCert => StatusChange::Suspended,
                    AdminOp::RevokeCert => {
                        StatusChange::Revoked(crate::pki::RevocationReason::Policy)
                    }
                    _ => StatusChange::Good,
                };
                let outcome = match serial {
                    Some(serial) => match self.ca.set_status(serial, change, t) {
                        Ok(s) => format!("status={s}"),
                        Err(e) => format!("failed: {e}"),
                    },
                    None => "failed: no certificate".to_string(),
                };
                let what = match action.op {
                    AdminOp::SuspendCert => "suspend_cert",
                    AdminOp::RevokeCert => "revoke_cert",
                    _ => "reinstate",
                };
                self.audit.append("admin", &describe(what, &outcome), t);
                self.sim.log_event(EventKind::Action, "admin", target, what, 0, outcome);
            }
            AdminOp::BlockSim | AdminOp::Attach => {
                let op = if action.op == AdminOp::BlockSim {
                    SubscriberAction::Block
                } else {
                    SubscriberAction::Attach
                };
                let what = if op == SubscriberAction::Block { "block_sim" } else { "attach" };
                let outcome = match &supi {
                    Some(supi) => match self.sim.manage_subscriber(supi, op) {
                        Ok(r) => format!("state={:?}", r.state),
                        Err(e) => format!("failed: {e}"),
                    },
                    None => "failed: no supi".to_string(),
                };
                self.audit.append("admin", &describe(what, &outcome), t);
                self.sim.log_event(EventKind::Action, "admin", target, what, 0, outcome);
            }
        }
        Ok(())
    }

    // ---- handshake protocol ---------------------------------------------

    /// One periodic round: every device whose last establishment is
    /// older than the interval gets a fresh handshake. Devices that
    /// will fall due within the next second re-authenticate now, so
    /// handshake latency cannot drift sessions past every other round.
    pub fn run_periodic_auth(&mut self, now: SimTime) -> Result<(), EngineError> {
        self.ida.expire_nonces(now);
        for device in self.ida.devices_due(now + SimTime::from_secs(1)) {
            if !self.active_hs.contains_key(&device) {
                self.start_handshake(&device, 1, now)?;
            }
        }
        Ok(())
    }

    fn start_handshake(&mut self, device: &str, attempt: u32, now: SimTime) -> Result<(), EngineError> {
        let (session_id, challenge) = match self.ida.initiate_auth(device, now) {
            Ok(x) => x,
            Err(_) => return Ok(()),
        };
        self.last_challenge.insert(device.to_string(), challenge.clone());
        self.active_hs.insert(
            device.to_string(),
            ActiveHs { session_id, attempt, service_done: false },
        );
        let service = self.scenario.service_node.clone();
        self.send_auth(&service, device, "auth-challenge", challenge.encode(), session_id, now)?;
        let backoff = self.backoff_for(attempt);
        self.sim.schedule_marker(
            now + backoff,
            "auth-timeout",
            format!("device={device};session={session_id};attempt={attempt}"),
        )?;
        Ok(())
    }

    fn backoff_for(&self, attempt: u32) -> SimTime {
        let backoffs = &self.ida.config().retry_backoff;
        let idx = ((attempt - 1) as usize).min(backoffs.len() - 1);
        backoffs[idx]
    }

    fn on_auth_timeout(
        &mut self,
        device: &str,
        session: u64,
        attempt: u32,
        t: SimTime,
    ) -> Result<(), EngineError> {
        let Some(hs) = self.active_hs.get(device) else {
            return Ok(());
        };
        if hs.session_id != session || hs.attempt != attempt || hs.service_done {
            return Ok(());
        }
        let budget = self.ida.config().retry_budget;
        if attempt < budget {
            self.start_handshake(device, attempt + 1, t)?;
        } else {
            self.active_hs.remove(device);
            self.ida.fail_session(session, AuthFailure::Timeout);
            self.sim.log_event(
                EventKind::Action,
                &self.scenario.service_node.clone(),
                device,
                "auth-failed",
                session,
                "reason=timeout".to_string(),
            );
            self.auth_alert(device, "timeout", t)?;
        }
        Ok(())
    }

    fn send_auth(
        &mut self,
        src: &str,
        dst: &str,
        msg_type: &str,
        payload: Vec<u8>,
        seq: u64,
        now: SimTime,
    ) -> Result<(), EngineError> {
        // a passive attacker in its capture window records the bytes
        for spec in self.sim.attack_specs().to_vec() {
            if let AttackSpec::Replay { capture_start, capture_end, .. } = spec {
                if now >= capture_start && now < capture_end {
                    self.captured.push(CapturedMsg {
                        dst: dst.to_string(),
                        msg_type: msg_type.to_string(),
                        seq,
                        payload: payload.clone(),
                    });
                }
            }
        }
        self.sim
            .transmit(TransmitSpec::new(src, dst, msg_type, seq, payload), now)?;
        Ok(())
    }

    fn maybe_impersonate(&mut self, target: &str, t: SimTime) -> Result<(), EngineError> {
        let Some(spec) = self.sim.attack_specs().iter().find_map(|s| match s {
            AttackSpec::Impersonation { attacker, target_device, start, end }
                if target_device == target && t >= *start && t < *end =>
            {
                Some((attacker.clone(), target_device.clone()))
            }
            _ => None,
        }) else {
            return Ok(());
        };
        let (attacker, target_device) = spec;
        let Some(challenge) = self.last_challenge.get(&target_device).cloned() else {
            return Ok(());
        };
        let Some(agent) = self.devices.get(&target_device) else {
            return Ok(());
        };
        // fresh self-generated key pair per attempt; real certificate,
        // wrong key
        let forged_key = SigningKey::generate(&mut self.rng_attacker);
        let eph = KexSecret::generate(&mut self.rng_attacker);
        let mut nonce = [0u8; 16];
        self.rng_attacker.fill_bytes(&mut nonce);
        let supi = agent.supi.clone();
        let transcript = crate::auth::transcript_hash(
            &challenge.service_nonce,
            &nonce,
            &challenge.service_id,
            &target_device,
            &supi,
            &challenge.service_eph_pub,
            &eph.public(),
        );
        let forged = ResponseMsg {
            device_nonce: nonce,
            device_id: target_device.clone(),
            supi,
            cert: agent.certificate.clone(),
            device_eph_pub: eph.public(),
            service_nonce: challenge.service_nonce,
            sig_d: forged_key.sign(&transcript),
        };
        let service = self.scenario.service_node.clone();
        self.send_auth(&attacker, &service, "auth-response", forged.encode(), 0, t)?;
        Ok(())
    }

    fn fire_replay(&mut self, idx: usize, t: SimTime) -> Result<(), EngineError> {
        let Some(AttackSpec::Replay { attacker, .. }) =
            self.sim.attack_specs().get(idx).cloned()
        else {
            return Ok(());
        };
        let captured = std::mem::take(&mut self.captured);
        for (i, msg) in captured.iter().enumerate() {
            let at = t + SimTime::from_ms(10 * i as u64);
            if at > self.scenario.duration {
                break;
            }
            self.sim.transmit(
                TransmitSpec::new(&attacker, &msg.dst, &msg.msg_type, msg.seq, msg.payload.clone()),
                at,
            )?;
        }
        self.captured = captured;
        Ok(())
    }

    fn run_flood_tick(&mut self, idx: usize, t: SimTime) -> Result<(), EngineError> {
        let Some(AttackSpec::Flood { device, dst, msg_type, rate_per_s, start, duration }) =
            self.sim.attack_specs().get(idx).cloned()
        else {
            return Ok(());
        };
        // the compromised device pushes extra messages through its own
        // legitimate traffic path
        let traffic_id = self
            .traffics
            .iter()
            .find(|(_, ts)| {
                ts.pattern.src == device
                    && ts.pattern.dst == dst
                    && ts.pattern.msg_type == msg_type
            })
            .map(|(id, _)| id.clone());
        if let Some(id) = traffic_id {
            self.send_traffic(&id, t)?;
        }
        let step = SimTime::from_us((1_000_000.0 / rate_per_s) as u64);
        let next = t + step;
        if next < start + duration && next <= self.scenario.duration {
            self.sim.schedule_marker(next, "flood", format!("idx={idx}"))?;
        }
        Ok(())
    }

    // ---- deliveries -------------------------------------------------------

    fn on_delivery(&mut self, delivery: crate::netsim::Delivery, t: SimTime) -> Result<(), EngineError> {
        match delivery.msg_type.as_str() {
            "auth-challenge" => self.on_challenge(delivery, t),
            "auth-response" => self.on_response(delivery, t),
            "auth-confirm" => self.on_confirm(delivery, t),
            _ => self.on_data(delivery, t),
        }
    }

    fn on_challenge(&mut self, d: crate::netsim::Delivery, t: SimTime) -> Result<(), EngineError> {
        let Ok(challenge) = ChallengeMsg::decode(&d.payload) else {
            return Ok(());
        };
        let Some(agent) = self.devices.get_mut(&d.dst) else {
            return Ok(());
        };
        let response = agent.respond_to_challenge(&challenge);
        let device = d.dst.clone();
        let service = self.scenario.service_node.clone();
        self.send_auth(&device, &service, "auth-response", response.encode(), d.seq, t)?;
        Ok(())
    }

    fn on_response(&mut self, d: crate::netsim::Delivery, t: SimTime) -> Result<(), EngineError> {
        let Ok(response) = ResponseMsg::decode(&d.payload) else {
            self.sim.log_event(
                EventKind::Action,
                &self.scenario.service_node.clone(),
                &d.src,
                "auth-failed",
                d.seq,
                "reason=malformed".to_string(),
            );
            return Ok(());
        };
        let device_id = response.device_id.clone();
        let anchor = self.ca.public_key();
        let outcome = {
            let source = StatusSource::Responder { responder: &self.responder, ca: &self.ca };
            self.ida.complete_auth(&response, t, &anchor, &source)
        };
        match outcome {
            Ok((session_id, confirm)) => {
                if let Some(hs) = self.active_hs.get_mut(&device_id) {
                    hs.service_done = true;
                    hs.session_id = session_id;
                }
                let service = self.scenario.service_node.clone();
                self.sim.log_event(
                    EventKind::Action,
                    &service,
                    &device_id,
                    "auth-established",
                    session_id,
                    String::new(),
                );
                self.send_auth(&service, &device_id, "auth-confirm", confirm.encode(), session_id, t)?;
            }
            Err(failure) => {
                self.sim.log_event(
                    EventKind::Action,
                    &self.scenario.service_node.clone(),
                    &device_id,
                    "auth-failed",
                    d.seq,
                    format!("reason={}", failure.label()),
                );
                self.auth_alert(&device_id, failure.label(), t)?;
            }
        }
        Ok(())
    }

    fn on_confirm(&mut self, d: crate::netsim::Delivery, t: SimTime) -> Result<(), EngineError> {
        let Ok(confirm) = ConfirmMsg::decode(&d.payload) else {
            return Ok(());
        };
        let device_id = d.dst.clone();
        let anchor = self.ca.public_key();
        let accepted = {
            let source = StatusSource::Responder { responder: &self.responder, ca: &self.ca };
            let Some(agent) = self.devices.get_mut(&device_id) else {
                return Ok(());
            };
            agent.accept_confirm(&confirm, t, &anchor, &source)
        };
        match accepted {
            Ok(_) => {
                let session_id = self
                    .active_hs
                    .get(&device_id)
                    .filter(|hs| hs.service_done)
                    .map(|hs| hs.session_id);
                self.active_hs.remove(&device_id);
                if let Some(session_id) = session_id {
                    self.install_keys_for(&device_id, session_id, t)?;
                }
            }
            Err(failure) => {
                // device rejected the service confirmation; replayed
                // confirms land here
                self.sim.log_event(
                    EventKind::Action,
                    &device_id,
                    &self.scenario.service_node.clone(),
                    "auth-failed",
                    d.seq,
                    format!("reason=device-side:{}", failure.label()),
                );
            }
        }
        Ok(())
    }

    /// Derives stream and process keys from the freshly established
    /// session and installs (or rotates) associations for every traffic
    /// pattern anchored at this device.
    fn install_keys_for(
        &mut self,
        device: &str,
        session_id: u64,
        now: SimTime,
    ) -> Result<(), EngineError> {
        let ids: Vec<String> = self
            .traffics
            .iter()
            .filter(|(_, ts)| ts.device_end.as_deref() == Some(device))
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            // keys are brokered per device pair; the label carries the
            // sorted endpoint pair plus a purpose scope
            let (src, dst) = {
                let p = &self.traffics[&id].pattern;
                (p.src.clone(), p.dst.clone())
            };
            let pair = if src <= dst { format!("{src}|{dst}") } else { format!("{dst}|{src}") };
            let psk = self.ida.derive_psk(session_id, &format!("{pair}:stream:{id}"))?;
            let process_psk = self.ida.derive_psk(session_id, &format!("{pair}:process:{id}"))?;
            let ts = self.traffics.get_mut(&id).unwrap();
            ts.generation += 1;
            if ts.pattern.pipelines.len() == 2 {
                let (tx, rx) = install_stream(
                    &id,
                    &psk,
                    ts.channel_ids[0],
                    ts.channel_ids[1],
                    now,
                )
                .map_err(|e| EngineError::Setup(e.to_string()))?;
                ts.stream_tx = Some(tx);
                ts.stream_rx = Some(rx);
            }
            ts.process_key = Some(process_psk.key);
            if !ts.pattern.process.is_empty() {
                self.decoder.set_key(&ts.pattern.src, process_psk.key);
            }
            self.sim.log_event(
                EventKind::Action,
                device,
                "",
                "keys-installed",
                u64::from(ts.generation),
                format!("traffic={id}"),
            );
        }
        Ok(())
    }

    // ---- data plane -------------------------------------------------------

    fn synth_values(pattern: &TrafficPattern, t: SimTime) -> Vec<(String, f64)> {
        pattern
            .process
            .iter()
            .map(|(name, lo, hi)| {
                let phase_seed =
                    crate::crypto::sha256(format!("{}|{name}", pattern.id).as_bytes())[0];
                let phase = phase_seed as f64 / 255.0 * std::f64::consts::TAU;
                let period_s = pattern.period.as_secs_f64() * 30.0;
                let x = (std::f64::consts::TAU * t.as_secs_f64() / period_s + phase).sin();
                let mid = (lo + hi) / 2.0;
                let half = (hi - lo) / 2.0 * 0.95;
                (name.clone(), mid + half * x)
            })
            .collect()
    }

    fn send_traffic(&mut self, id: &str, t: SimTime) -> Result<(), EngineError> {
        let ts = self.traffics.get_mut(id).expect("traffic exists");
        let pattern = ts.pattern.clone();

        // payload: encrypted process values when configured, filler
        // otherwise
        let needs_keys = !pattern.process.is_empty() || pattern.pipelines.len() == 2;
        if needs_keys && ts.process_key.is_none() {
            return Ok(()); // keys not yet established
        }
        if pattern.pipelines.len() == 2 {
            let Some(stream_tx) = ts.stream_tx.as_mut() else {
                return Ok(());
            };
            let seq_hint = stream_tx.last_seq() as u64 + 1;
            let app_payload = if pattern.process.is_empty() {
                vec![0x5A; pattern.size]
            } else {
                let values = Self::synth_values(&pattern, t);
                seal_process_payload(
                    &ts.process_key.unwrap(),
                    &pattern.src,
                    seq_hint,
                    &values,
                )
            };
            let frames = match stream_tx.replicate_send(&app_payload, pattern.encrypt) {
                Ok(f) => f,
                Err(e) => {
                    self.sim.log_event(
                        EventKind::Action,
                        &pattern.src,
                        &pattern.dst,
                        "stream-error",
                        0,
                        format!("reason={e}"),
                    );
                    return Ok(());
                }
            };
            let seq = stream_tx.last_seq() as u64;
            ts.redundancy.sent += 1;
            let ct_meta = if pattern.process.is_empty() {
                String::new()
            } else {
                format!("ct={}", hex::encode(&app_payload))
            };
            for (i, frame) in frames.into_iter().enumerate() {
                let suffix = if i == 0 { "a" } else { "b" };
                self.sim.transmit(
                    TransmitSpec {
                        src: pattern.src.clone(),
                        dst: pattern.dst.clone(),
                        msg_type: format!("{}/{suffix}", pattern.msg_type),
                        seq,
                        payload: frame.to_bytes(),
                        channel: Some(pattern.pipelines[i].clone()),
                        extra_meta: ct_meta.clone(),
                        tag_payload_hex: false,
                    },
                    t,
                )?;
            }
        } else {
            ts.next_plain_seq += 1;
            let seq = ts.next_plain_seq;
            let (payload, tag) = if pattern.process.is_empty() {
                (vec![0x5A; pattern.size], false)
            } else {
                let values = Self::synth_values(&pattern, t);
                let ct =
                    seal_process_payload(&ts.process_key.unwrap(), &pattern.src, seq, &values);
                (ct, true)
            };
            let channel = pattern.pipelines[0].clone();
            self.sim.transmit(
                TransmitSpec {
                    src: pattern.src.clone(),
                    dst: pattern.dst.clone(),
                    msg_type: pattern.msg_type.clone(),
                    seq,
                    payload,
                    channel: if channel == "default" { None } else { Some(channel) },
                    extra_meta: String::new(),
                    tag_payload_hex: tag,
                },
                t,
            )?;
        }
        Ok(())
    }

    fn on_data(&mut self, d: crate::netsim::Delivery, _t: SimTime) -> Result<(), EngineError> {
        // replicated stream frames carry a pipeline suffix
        let (base, pipeline) = match d.msg_type.rsplit_once('/') {
            Some((base, "a")) => (base, Some(0usize)),
            Some((base, "b")) => (base, Some(1usize)),
            _ => (d.msg_type.as_str(), None),
        };
        let Some(pipeline) = pipeline else {
            return Ok(()); // plain app message, nothing to unwrap
        };
        let id = self
            .traffics
            .iter()
            .find(|(_, ts)| {
                ts.pattern.src == d.src && ts.pattern.dst == d.dst && ts.pattern.msg_type == base
            })
            .map(|(id, _)| id.clone());
        let Some(id) = id else {
            return Ok(());
        };
        let ts = self.traffics.get_mut(&id).unwrap();
        let Some(stream_rx) = ts.stream_rx.as_mut() else {
            return Ok(());
        };
        let frame = match crate::linksec::SecureFrame::from_bytes(&d.payload) {
            Ok(f) => f,
            Err(e) => {
                ts.redundancy.rejected += 1;
                self.sim.log_event(
                    EventKind::Action,
                    &d.dst,
                    &d.src,
                    "frame-rejected",
                    d.seq,
                    format!("reason={e}"),
                );
                return Ok(());
            }
        };
        match stream_rx.receive(pipeline, &frame) {
            Ok(RxOutcome::Delivered { seq, .. }) => {
                let gen = ts.generation;
                if !ts.delivered_seqs.insert((gen, seq)) {
                    ts.redundancy.exactly_once_violations += 1;
                }
                ts.redundancy.delivered += 1;
            }
            Ok(RxOutcome::Duplicate { .. }) => ts.redundancy.duplicates += 1,
            Ok(RxOutcome::StaleSeq { .. }) => ts.redundancy.stale += 1,
            Err(e) => {
                ts.redundancy.rejected += 1;
                self.sim.log_event(
                    EventKind::Action,
                    &d.dst,
                    &d.src,
                    "frame-rejected",
                    d.seq,
                    format!("reason={e}"),
                );
            }
        }
        Ok(())
    }

    // ---- teardown ---------------------------------------------------------

    fn finalize(mut self) -> Result<RunArtifacts, EngineError> {
        let end = self.scenario.duration;
        let flushed = self.normalizer.flush(Some(&self.decoder));
        for te in flushed {
            self.on_trace_event(te, end)?;
        }
        if let Some(detector) = &mut self.detector {
            let alerts = detector.finish();
            self.dispatch_alerts(alerts, end)?;
        }
        // score any sensor windows still open
        let len = self.scenario.detect.window_len;
        let last = end.as_us() / len.as_us();
        while self.next_window_to_score <= last {
            let w = self.next_window_to_score;
            self.next_window_to_score += 1;
            if SimTime::from_us(w * len.as_us()) >= self.scenario.train_window {
                self.score_sensor_window(w, end)?;
            }
        }
        self.audit.append("admin", "scenario complete", end);

        let redundancy: BTreeMap<String, RedundancyStats> = self
            .traffics
            .iter()
            .filter(|(_, ts)| ts.pattern.pipelines.len() == 2)
            .map(|(id, ts)| (id.clone(), ts.redundancy.clone()))
            .collect();

        Ok(RunArtifacts {
            scenario_name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            duration: self.scenario.duration,
            events: self.sim.log().to_vec(),
            trace: self.trace_out,
            alerts: self.alerts,
            actions: self.actions,
            audit: self.audit,
            truth: self.sim.ground_truth().to_vec(),
            localizations: self.localizations,
            redundancy,
            detect_config: self.scenario.detect.clone(),
            baseline_noise_dbm: self.scenario.default_channel.noise_floor_dbm,
        })
    }
}

/// Parses, builds and runs a scenario in one call.
pub fn run_scenario(scenario: Scenario) -> Result<RunArtifacts, EngineError> {
    Engine::build(scenario)?.run()
}
