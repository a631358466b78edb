//! Scenario configuration.
//!
//! Plain-text `key = value` sections:
//!
//! ```text
//! [scenario]            name, seed (mandatory), duration_ms
//! [channel]             default channel parameters
//! [channel NAME]        named channel, inherits the default
//! [node ID]             role, position, tx_power_dbm, supi
//! [traffic ID]          src, dst, msg_type, period_ms, size,
//!                       pipelines (1 = plain, 2 = replicated),
//!                       process (name:lo:hi ...), encrypt
//! [attack ID]           kind = jam|impersonation|replay|tamper|flood + params
//! [admin]               action = <kind>, <target>, <t_ms>  (scripted operator)
//! [auth]                interval_ms, service
//! [detect]              detector thresholds, train_ms
//! [policy]              rule = detector, min_severity, action; escalation = N
//! ```
//!
//! Every parse error carries the offending line number.

use crate::detect::DetectorConfig;
use crate::netsim::{AttackSpec, ChannelModel, Node, NodeRole};
use crate::respond::ResponsePolicy;
use crate::time::SimTime;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("config error at line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError { line, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficPattern {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub msg_type: String,
    pub period: SimTime,
    pub size: usize,
    /// One channel name = plain transport; two = replicated stream.
    pub pipelines: Vec<String>,
    /// Variables synthesized into the payload: (name, low, high).
    pub process: Vec<(String, f64, f64)>,
    pub encrypt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdminOp {
    SuspendCert,
    RevokeCert,
    BlockSim,
    Reinstate,
    Attach,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdminAction {
    pub op: AdminOp,
    pub target: String,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: SimTime,
    pub default_channel: ChannelModel,
    pub channels: BTreeMap<String, ChannelModel>,
    pub nodes: Vec<Node>,
    pub traffic: Vec<TrafficPattern>,
    pub attacks: Vec<AttackSpec>,
    pub admin: Vec<AdminAction>,
    pub auth_interval: SimTime,
    pub service_node: String,
    pub detect: DetectorConfig,
    pub train_window: SimTime,
    pub policy: ResponsePolicy,
}

struct Section {
    header: String,
    header_line: usize,
    entries: Vec<(usize, String, String)>,
}

fn split_sections(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections = Vec::new();
    let mut current: Option<Section> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, "unterminated section header"))?;
            if let Some(s) = current.take() {
                sections.push(s);
            }
            current = Some(Section {
                header: header.trim().to_string(),
                header_line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected key = value"))?;
        let section = current
            .as_mut()
            .ok_or_else(|| err(line_no, "entry outside any [section]"))?;
        section
            .entries
            .push((line_no, key.trim().to_string(), value.trim().to_string()));
    }
    if let Some(s) = current.take() {
        sections.push(s);
    }
    Ok(sections)
}

fn parse_f64(line: usize, v: &str) -> Result<f64, ConfigError> {
    v.parse().map_err(|_| err(line, format!("bad number {v:?}")))
}

fn parse_u64(line: usize, v: &str) -> Result<u64, ConfigError> {
    v.parse().map_err(|_| err(line, format!("bad integer {v:?}")))
}

fn parse_ms(line: usize, v: &str) -> Result<SimTime, ConfigError> {
    // fractional milliseconds allowed (jitter bounds)
    let ms = parse_f64(line, v)?;
    if ms < 0.0 {
        return Err(err(line, "time must be nonnegative"));
    }
    Ok(SimTime::from_us((ms * 1000.0).round() as u64))
}

fn parse_position(line: usize, v: &str) -> Result<(f64, f64), ConfigError> {
    let parts: Vec<&str> = v.split([' ', ',']).filter(|s| !s.is_empty()).collect();
    if parts.len() != 2 {
        return Err(err(line, "position needs two coordinates"));
    }
    Ok((parse_f64(line, parts[0])?, parse_f64(line, parts[1])?))
}

fn apply_channel_key(
    ch: &mut ChannelModel,
    line: usize,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    match key {
        "pl0_db" => ch.pl0_db = parse_f64(line, value)?,
        "ref_distance_m" => ch.ref_distance_m = parse_f64(line, value)?,
        "path_loss_exp" => {
            let n = parse_f64(line, value)?;
            if n < 2.0 {
                return Err(err(line, "path loss exponent must be >= 2"));
            }
            ch.path_loss_exp = n;
        }
        "noise_floor_dbm" => ch.noise_floor_dbm = parse_f64(line, value)?,
        "shadowing_sigma_db" => ch.shadowing_sigma_db = parse_f64(line, value)?,
        "sinr_mid_db" => ch.sinr_mid_db = parse_f64(line, value)?,
        "sinr_slope" => ch.sinr_slope = parse_f64(line, value)?,
        "retransmission_limit" => ch.retransmission_limit = parse_u64(line, value)? as u32,
        "base_latency_ms" => ch.base_latency = parse_ms(line, value)?,
        "jitter_max_ms" => ch.jitter_max = parse_ms(line, value)?,
        "retransmit_delay_ms" => ch.retransmit_delay = parse_ms(line, value)?,
        "loss_probability" => {
            let p = parse_f64(line, value)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(err(line, "loss probability must be within [0, 1]"));
            }
            ch.loss_probability = Some(p);
        }
        other => return Err(err(line, format!("unknown channel key {other:?}"))),
    }
    Ok(())
}

fn get<'a>(
    entries: &'a [(usize, String, String)],
    key: &str,
) -> Option<(usize, &'a str)> {
    entries
        .iter()
        .find(|(_, k, _)| k == key)
        .map(|(l, _, v)| (*l, v.as_str()))
}

fn require<'a>(
    entries: &'a [(usize, String, String)],
    key: &str,
    header_line: usize,
) -> Result<(usize, &'a str), ConfigError> {
    get(entries, key).ok_or_else(|| err(header_line, format!("missing key {key:?}")))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ConfigError> {
        Self::parse_with_base(text, None)
    }

    /// `base` resolves relative paths in the config, e.g. an external
    /// policy file referenced with `[policy] file = ...`.
    pub fn parse_with_base(text: &str, base: Option<&Path>) -> Result<Scenario, ConfigError> {
        let sections = split_sections(text)?;

        let mut name = String::from("unnamed");
        let mut seed: Option<u64> = None;
        let mut duration = SimTime::from_secs(60);
        let mut default_channel = ChannelModel::default();
        let mut named_channel_sections: Vec<&Section> = Vec::new();
        let mut nodes = Vec::new();
        let mut traffic = Vec::new();
        let mut attacks = Vec::new();
        let mut admin = Vec::new();
        let mut auth_interval = SimTime::from_secs(30);
        let mut service_node = None;
        let mut detect = DetectorConfig::default();
        let mut train_window = SimTime::from_secs(30);
        let mut policy = ResponsePolicy::default();

        // default channel must be read before named ones inherit it
        for s in &sections {
            if s.header == "channel" {
                for (line, key, value) in &s.entries {
                    apply_channel_key(&mut default_channel, *line, key, value)?;
                }
            }
        }

        for s in &sections {
            let header_words: Vec<&str> = s.header.split_whitespace().collect();
            match header_words.as_slice() {
                ["scenario"] => {
                    for (line, key, value) in &s.entries {
                        match key.as_str() {
                            "name" => name = value.clone(),
                            "seed" => seed = Some(parse_u64(*line, value)?),
                            "duration_ms" => duration = parse_ms(*line, value)?,
                            other => {
                                return Err(err(*line, format!("unknown scenario key {other:?}")))
                            }
                        }
                    }
                }
                ["channel"] => {} // already applied
                ["channel", _name] => named_channel_sections.push(s),
                ["node", id] => {
                    let mut role = NodeRole::Device;
                    let mut position = (0.0, 0.0);
                    let mut tx_power_dbm = 20.0;
                    let mut supi = None;
                    for (line, key, value) in &s.entries {
                        match key.as_str() {
                            "role" => {
                                role = match value.as_str() {
                                    "device" => NodeRole::Device,
                                    "base_station" => NodeRole::BaseStation,
                                    "sensor" => NodeRole::Sensor,
                                    "attacker" => NodeRole::Attacker,
                                    other => {
                                        return Err(err(*line, format!("unknown role {other:?}")))
                                    }
                                }
                            }
                            "position" => position = parse_position(*line, value)?,
                            "tx_power_dbm" => tx_power_dbm = parse_f64(*line, value)?,
                            "supi" => supi = Some(value.clone()),
                            other => {
                                return Err(err(*line, format!("unknown node key {other:?}")))
                            }
                        }
                    }
                    if role == NodeRole::Device && supi.is_none() {
                        return Err(err(s.header_line, format!("device {id:?} needs a supi")));
                    }
                    nodes.push(Node {
                        node_id: id.to_string(),
                        position,
                        tx_power_dbm,
                        role,
                        supi,
                    });
                }
                ["traffic", id] => {
                    let hl = s.header_line;
                    let (_, src) = require(&s.entries, "src", hl)?;
                    let (_, dst) = require(&s.entries, "dst", hl)?;
                    let (_, msg_type) = require(&s.entries, "msg_type", hl)?;
                    let (pl, period) = require(&s.entries, "period_ms", hl)?;
                    let size = match get(&s.entries, "size") {
                        Some((l, v)) => parse_u64(l, v)? as usize,
                        None => 32,
                    };
                    let pipelines = match get(&s.entries, "pipelines") {
                        Some((l, v)) => {
                            let p: Vec<String> =
                                v.split_whitespace().map(str::to_string).collect();
                            if p.is_empty() || p.len() > 2 {
                                return Err(err(l, "expected one or two pipeline channels"));
                            }
                            p
                        }
                        None => vec!["default".to_string()],
                    };
                    let mut process = Vec::new();
                    if let Some((l, v)) = get(&s.entries, "process") {
                        for spec in v.split_whitespace() {
                            let parts: Vec<&str> = spec.split(':').collect();
                            if parts.len() != 3 {
                                return Err(err(l, "process variables are name:low:high"));
                            }
                            let lo = parse_f64(l, parts[1])?;
                            let hi = parse_f64(l, parts[2])?;
                            if lo >= hi {
                                return Err(err(l, "process low must be below high"));
                            }
                            process.push((parts[0].to_string(), lo, hi));
                        }
                    }
                    let encrypt = match get(&s.entries, "encrypt") {
                        Some((l, v)) => v
                            .parse::<bool>()
                            .map_err(|_| err(l, "encrypt must be true or false"))?,
                        None => true,
                    };
                    traffic.push(TrafficPattern {
                        id: id.to_string(),
                        src: src.to_string(),
                        dst: dst.to_string(),
                        msg_type: msg_type.to_string(),
                        period: parse_ms(pl, period)?,
                        size,
                        pipelines,
                        process,
                        encrypt,
                    });
                }
                ["attack", id] => {
                    let hl = s.header_line;
                    let (kl, kind) = require(&s.entries, "kind", hl)?;
                    let spec = match kind {
                        "jam" => {
                            let (l, pos) = require(&s.entries, "position", hl)?;
                            let (_, power) = require(&s.entries, "power_dbm", hl)?;
                            let (_, start) = require(&s.entries, "start_ms", hl)?;
                            let (_, dur) = require(&s.entries, "duration_ms", hl)?;
                            AttackSpec::Jam {
                                attacker: id.to_string(),
                                position: parse_position(l, pos)?,
                                power_dbm: parse_f64(l, power)?,
                                start: parse_ms(l, start)?,
                                duration: parse_ms(l, dur)?,
                            }
                        }
                        "impersonation" => {
                            let (l, attacker) = require(&s.entries, "attacker", hl)?;
                            let (_, target) = require(&s.entries, "target", hl)?;
                            let (_, start) = require(&s.entries, "start_ms", hl)?;
                            let (_, end) = require(&s.entries, "end_ms", hl)?;
                            AttackSpec::Impersonation {
                                attacker: attacker.to_string(),
                                target_device: target.to_string(),
                                start: parse_ms(l, start)?,
                                end: parse_ms(l, end)?,
                            }
                        }
                        "replay" => {
                            let (l, attacker) = require(&s.entries, "attacker", hl)?;
                            let (_, cs) = require(&s.entries, "capture_start_ms", hl)?;
                            let (_, ce) = require(&s.entries, "capture_end_ms", hl)?;
                            let (_, at) = require(&s.entries, "replay_at_ms", hl)?;
                            AttackSpec::Replay {
                                attacker: attacker.to_string(),
                                capture_start: parse_ms(l, cs)?,
                                capture_end: parse_ms(l, ce)?,
                                replay_at: parse_ms(l, at)?,
                            }
                        }
                        "tamper" => {
                            let (l, rate) = require(&s.entries, "bit_flip_rate", hl)?;
                            let (_, start) = require(&s.entries, "start_ms", hl)?;
                            let (_, end) = require(&s.entries, "end_ms", hl)?;
                            AttackSpec::Tamper {
                                bit_flip_rate: parse_f64(l, rate)?,
                                start: parse_ms(l, start)?,
                                end: parse_ms(l, end)?,
                                msg_type: get(&s.entries, "msg_type").map(|(_, v)| v.to_string()),
                            }
                        }
                        "flood" => {
                            let (l, device) = require(&s.entries, "device", hl)?;
                            let (_, dst) = require(&s.entries, "dst", hl)?;
                            let (_, msg_type) = require(&s.entries, "msg_type", hl)?;
                            let (_, rate) = require(&s.entries, "rate_per_s", hl)?;
                            let (_, start) = require(&s.entries, "start_ms", hl)?;
                            let (_, dur) = require(&s.entries, "duration_ms", hl)?;
                            AttackSpec::Flood {
                                device: device.to_string(),
                                dst: dst.to_string(),
                                msg_type: msg_type.to_string(),
                                rate_per_s: parse_f64(l, rate)?,
                                start: parse_ms(l, start)?,
                                duration: parse_ms(l, dur)?,
                            }
                        }
                        other => return Err(err(kl, format!("unknown attack kind {other:?}"))),
                    };
                    attacks.push(spec);
                }
                ["admin"] => {
                    for (line, key, value) in &s.entries {
                        if key != "action" {
                            return Err(err(*line, format!("unknown admin key {key:?}")));
                        }
                        let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                        if parts.len() != 3 {
                            return Err(err(*line, "expected action = kind, target, t_ms"));
                        }
                        let op = match parts[0] {
                            "suspend_cert" => AdminOp::SuspendCert,
                            "revoke_cert" => AdminOp::RevokeCert,
                            "block_sim" => AdminOp::BlockSim,
                            "reinstate" => AdminOp::Reinstate,
                            "attach" => AdminOp::Attach,
                            other => {
                                return Err(err(*line, format!("unknown admin op {other:?}")))
                            }
                        };
                        admin.push(AdminAction {
                            op,
                            target: parts[1].to_string(),
                            at: parse_ms(*line, parts[2])?,
                        });
                    }
                }
                ["auth"] => {
                    for (line, key, value) in &s.entries {
                        match key.as_str() {
                            "interval_ms" => auth_interval = parse_ms(*line, value)?,
                            "service" => service_node = Some(value.clone()),
                            other => {
                                return Err(err(*line, format!("unknown auth key {other:?}")))
                            }
                        }
                    }
                }
                ["detect"] => {
                    for (line, key, value) in &s.entries {
                        match key.as_str() {
                            "theta_t" => detect.theta_t = parse_f64(*line, value)?,
                            "consecutive" => detect.consecutive = parse_u64(*line, value)? as u32,
                            "theta_w" => detect.theta_w = parse_f64(*line, value)?,
                            "theta_j" => detect.theta_j = parse_f64(*line, value)?,
                            "gap_tolerance" => {
                                detect.gap_tolerance = parse_u64(*line, value)? as u32
                            }
                            "mad_floor_ms" => detect.mad_floor = parse_ms(*line, value)?,
                            "std_floor" => detect.std_floor = parse_f64(*line, value)?,
                            "window_ms" => detect.window_len = parse_ms(*line, value)?,
                            "min_train" => detect.min_train = parse_u64(*line, value)? as usize,
                            "process_margin" => detect.process_margin = parse_f64(*line, value)?,
                            "train_ms" => train_window = parse_ms(*line, value)?,
                            other => {
                                return Err(err(*line, format!("unknown detect key {other:?}")))
                            }
                        }
                    }
                }
                ["policy"] => {
                    if let Some((line, file)) = get(&s.entries, "file") {
                        if s.entries.len() != 1 {
                            return Err(err(line, "policy file reference excludes inline rules"));
                        }
                        let path = match base {
                            Some(base) => base.join(file),
                            None => std::path::PathBuf::from(file),
                        };
                        let text = std::fs::read_to_string(&path).map_err(|e| {
                            err(line, format!("cannot read policy file {}: {e}", path.display()))
                        })?;
                        policy = ResponsePolicy::parse(&text)
                            .map_err(|e| err(line, format!("{}: {}", path.display(), e)))?;
                        continue;
                    }
                    let text: String = s
                        .entries
                        .iter()
                        .map(|(_, k, v)| format!("{k} = {v}\n"))
                        .collect();
                    policy = ResponsePolicy::parse(&text).map_err(|e| {
                        // map the relative line back to the file
                        let abs = s.entries.get(e.line.saturating_sub(1)).map(|(l, _, _)| *l);
                        err(abs.unwrap_or(s.header_line), e.msg)
                    })?;
                }
                _ => return Err(err(s.header_line, format!("unknown section [{}]", s.header))),
            }
        }

        let seed = seed.ok_or_else(|| err(0, "seed is mandatory ([scenario] seed = N)"))?;

        let mut channels = BTreeMap::new();
        for s in named_channel_sections {
            let name = s.header.split_whitespace().nth(1).unwrap().to_string();
            let mut ch = default_channel.clone();
            for (line, key, value) in &s.entries {
                apply_channel_key(&mut ch, *line, key, value)?;
            }
            channels.insert(name, ch);
        }

        // referential integrity
        let node_ids: Vec<&str> = nodes.iter().map(|n| n.node_id.as_str()).collect();
        let known = |id: &str| node_ids.contains(&id);
        for t in &traffic {
            if !known(&t.src) {
                return Err(err(0, format!("traffic {:?} references undefined node {:?}", t.id, t.src)));
            }
            if !known(&t.dst) {
                return Err(err(0, format!("traffic {:?} references undefined node {:?}", t.id, t.dst)));
            }
            for p in &t.pipelines {
                if p != "default" && !channels.contains_key(p) {
                    return Err(err(0, format!("traffic {:?} references undefined channel {p:?}", t.id)));
                }
            }
        }
        for a in &attacks {
            let refs: Vec<&str> = match a {
                AttackSpec::Impersonation { attacker, target_device, .. } => {
                    vec![attacker, target_device]
                }
                AttackSpec::Replay { attacker, .. } => vec![attacker],
                AttackSpec::Flood { device, dst, .. } => vec![device, dst],
                _ => vec![],
            };
            for r in refs {
                if !known(r) {
                    return Err(err(0, format!("attack references undefined node {r:?}")));
                }
            }
        }
        let service_node = match service_node {
            Some(s) => {
                if !known(&s) {
                    return Err(err(0, format!("auth service references undefined node {s:?}")));
                }
                s
            }
            None => nodes
                .iter()
                .find(|n| n.role == NodeRole::BaseStation)
                .map(|n| n.node_id.clone())
                .ok_or_else(|| err(0, "no base station to host the authentication service"))?,
        };

        Ok(Scenario {
            name,
            seed,
            duration,
            default_channel,
            channels,
            nodes,
            traffic,
            attacks,
            admin,
            auth_interval,
            service_node,
            detect,
            train_window,
            policy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[scenario]
name = t
seed = 7
duration_ms = 1000

[node bs]
role = base_station
position = 0 0

[node dev]
role = device
position = 10 0
supi = 001
";

    #[test]
    fn minimal_scenario_parses() {
        let sc = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(sc.seed, 7);
        assert_eq!(sc.nodes.len(), 2);
        assert_eq!(sc.service_node, "bs");
        assert_eq!(sc.duration, SimTime::from_secs(1));
    }

    #[test]
    fn missing_seed_rejected() {
        let text = MINIMAL.replace("seed = 7\n", "");
        let e = Scenario::parse(&text).unwrap_err();
        assert!(e.msg.contains("seed"));
    }

    #[test]
    fn undefined_node_reference_rejected() {
        let text = format!(
            "{MINIMAL}\n[traffic t1]\nsrc = ghost\ndst = bs\nmsg_type = x\nperiod_ms = 100\n"
        );
        let e = Scenario::parse(&text).unwrap_err();
        assert!(e.msg.contains("ghost"), "{e}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "[scenario]\nseed = seven\n";
        let e = Scenario::parse(bad).unwrap_err();
        assert_eq!(e.line, 2);

        let bad = "[scenario]\nseed = 1\n[node x]\nrole = starship\n";
        let e = Scenario::parse(bad).unwrap_err();
        assert_eq!(e.line, 4);
    }

    #[test]
    fn device_without_supi_rejected() {
        let bad = "[scenario]\nseed = 1\n[node d]\nrole = device\nposition = 0 0\n";
        let e = Scenario::parse(bad).unwrap_err();
        assert!(e.msg.contains("supi"));
    }

    #[test]
    fn named_channel_inherits_default() {
        let text = format!(
            "{MINIMAL}\n[channel]\nnoise_floor_dbm = -90\n[channel pipe-a]\nloss_probability = 0.2\n"
        );
        let sc = Scenario::parse(&text).unwrap();
        assert_eq!(sc.default_channel.noise_floor_dbm, -90.0);
        let pipe = &sc.channels["pipe-a"];
        assert_eq!(pipe.noise_floor_dbm, -90.0);
        assert_eq!(pipe.loss_probability, Some(0.2));
    }

    #[test]
    fn full_sections_parse() {
        let text = format!(
            "{MINIMAL}
[channel pipe-a]
loss_probability = 0.1

[channel pipe-b]
loss_probability = 0.1

[traffic tele]
src = dev
dst = bs
msg_type = telemetry
period_ms = 100
size = 64
pipelines = pipe-a pipe-b
process = temp:18:22 pressure:1.0:2.0

[attack jam-1]
kind = jam
position = 20 20
power_dbm = 10
start_ms = 500
duration_ms = 100

[admin]
action = revoke_cert, dev, 800

[auth]
interval_ms = 300

[detect]
theta_t = 9
train_ms = 200

[policy]
rule = auth, 0, suspend_cert
escalation = 2
"
        );
        let sc = Scenario::parse(&text).unwrap();
        assert_eq!(sc.traffic.len(), 1);
        assert_eq!(sc.traffic[0].pipelines.len(), 2);
        assert_eq!(sc.traffic[0].process.len(), 2);
        assert_eq!(sc.attacks.len(), 1);
        assert_eq!(sc.admin.len(), 1);
        assert_eq!(sc.auth_interval, SimTime::from_ms(300));
        assert_eq!(sc.detect.theta_t, 9.0);
        assert_eq!(sc.train_window, SimTime::from_ms(200));
        assert_eq!(sc.policy.rules.len(), 1);
        assert_eq!(sc.policy.escalation, 2);
    }

    #[test]
    fn external_policy_file_reference() {
        let dir = std::env::temp_dir().join(format!("secfab-pol-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("strict.policy"), "rule = auth, 0, revoke_cert\nescalation = 1\n")
            .unwrap();
        let text = format!("{MINIMAL}\n[policy]\nfile = strict.policy\n");
        let sc = Scenario::parse_with_base(&text, Some(&dir)).unwrap();
        assert_eq!(sc.policy.rules.len(), 1);
        assert_eq!(sc.policy.escalation, 1);

        let bad = format!("{MINIMAL}\n[policy]\nfile = missing.policy\n");
        assert!(Scenario::parse_with_base(&bad, Some(&dir)).is_err());
    }

    #[test]
    fn policy_errors_map_to_file_lines() {
        let text = format!("{MINIMAL}\n[policy]\nrule = bogus, 0, none\n");
        let e = Scenario::parse(&text).unwrap_err();
        assert!(e.line > 0);
        assert!(e.msg.contains("detector"));
    }
}
