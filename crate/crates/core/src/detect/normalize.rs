//! Log normalization and trace import.
//!
//! Collapses each logical message (tx, retransmits, final rx or drop)
//! into one `TraceEvent`, emitted in original-transmit-time order.
//! Undelivered messages appear with `delivered = false`. A registered
//! payload decoder turns application ciphertext riding in event meta
//! (`ct=<hex>`) into named process values; a decoder that holds the
//! right session key models the escrowed-decryption hook, and anything
//! that fails to authenticate surfaces as a decode failure.

use super::{ProcessPayload, TraceEvent};
use crate::crypto::AeadKey;
use crate::netsim::{EventKind, SimEvent};
use crate::time::SimTime;
use crate::wire::{Decoder, Encoder};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImportError {
    #[error("line {line}: {msg}")]
    BadLine { line: usize, msg: String },
}

/// Decode result distinguishing "not monitored" from "corrupt".
#[derive(Debug, PartialEq)]
pub enum DecodeOutcome {
    NotMonitored,
    Values(Vec<(String, f64)>),
    Corrupt,
}

pub trait PayloadDecoder {
    fn decode(&self, src: &str, seq: u64, ciphertext: &[u8]) -> DecodeOutcome;
}

/// AEAD decoder keyed per source device with PSK-derived keys.
#[derive(Default)]
pub struct PskPayloadDecoder {
    keys: BTreeMap<String, [u8; 32]>,
}

impl PskPayloadDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs or rotates the key escrowed for one device.
    pub fn set_key(&mut self, device: &str, key: [u8; 32]) {
        self.keys.insert(device.to_string(), key);
    }
}

fn process_nonce(seq: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[4..12].copy_from_slice(&seq.to_be_bytes());
    n
}

impl PayloadDecoder for PskPayloadDecoder {
    fn decode(&self, src: &str, seq: u64, ciphertext: &[u8]) -> DecodeOutcome {
        let Some(key) = self.keys.get(src) else {
            return DecodeOutcome::NotMonitored;
        };
        let aead = AeadKey::new(key);
        match aead.open_combined(&process_nonce(seq), src.as_bytes(), ciphertext) {
            Ok(pt) => match parse_process_values(&pt) {
                Some(values) => DecodeOutcome::Values(values),
                None => DecodeOutcome::Corrupt,
            },
            Err(_) => DecodeOutcome::Corrupt,
        }
    }
}

/// Canonical encoding of named process scalars.
pub fn encode_process_values(values: &[(String, f64)]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u32(values.len() as u32);
    for (name, v) in values {
        e.str(name).u64(v.to_bits());
    }
    e.finish()
}

pub fn parse_process_values(buf: &[u8]) -> Option<Vec<(String, f64)>> {
    let mut d = Decoder::new(buf);
    let n = d.u32().ok()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let name = d.str().ok()?;
        let bits = d.u64().ok()?;
        out.push((name, f64::from_bits(bits)));
    }
    d.finish().ok()?;
    Some(out)
}

/// Encrypts process values the way devices publish them; the matching
/// `PskPayloadDecoder` key opens it.
pub fn seal_process_payload(key: &[u8; 32], src: &str, seq: u64, values: &[(String, f64)]) -> Vec<u8> {
    let aead = AeadKey::new(key);
    aead.seal_combined(&process_nonce(seq), src.as_bytes(), &encode_process_values(values))
}

#[derive(Debug)]
struct PendingMsg {
    t: SimTime,
    tid: u64,
    src: String,
    dst: String,
    msg_type: String,
    size: usize,
    seq: u64,
    retransmissions: u32,
    outcome: Option<Outcome>,
}

#[derive(Debug)]
struct Outcome {
    delivered: bool,
    rssi_dbm: Option<f64>,
    ct_hex: Option<String>,
}

/// Streaming normalizer. Feed raw events in log order; completed
/// messages come out in original-transmit-time order.
pub struct Normalizer {
    pending: BTreeMap<u64, PendingMsg>,
    done: BTreeMap<(SimTime, u64), PendingMsg>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Normalizer {
    pub fn new() -> Self {
        Normalizer { pending: BTreeMap::new(), done: BTreeMap::new() }
    }

    /// Consumes one raw event; returns every trace event that became
    /// safe to emit (all earlier transmissions resolved).
    ///
    /// Authentication-plane messages (`auth-*`) are not normalized:
    /// handshake traffic is supervised by the authentication service
    /// itself, and its session-driven cadence would only poison the
    /// industrial-traffic baselines.
    pub fn push(&mut self, ev: &SimEvent, decoder: Option<&dyn PayloadDecoder>) -> Vec<TraceEvent> {
        // jam emissions and other non-communication records have no dst
        if ev.dst.is_empty() {
            return Vec::new();
        }
        if ev.msg_type.starts_with("auth-") {
            return Vec::new();
        }
        let Some(tid) = ev.meta_u64("tid") else {
            return Vec::new();
        };
        match ev.kind {
            EventKind::Tx => {
                self.pending.insert(
                    tid,
                    PendingMsg {
                        t: ev.t,
                        tid,
                        src: ev.src.clone(),
                        dst: ev.dst.clone(),
                        msg_type: ev.msg_type.clone(),
                        size: ev.size,
                        seq: ev.seq,
                        retransmissions: 0,
                        outcome: None,
                    },
                );
            }
            EventKind::Retransmit => {
                if let Some(p) = self.pending.get_mut(&tid) {
                    p.retransmissions += 1;
                }
            }
            EventKind::Rx => {
                if let Some(mut p) = self.pending.remove(&tid) {
                    let ct_hex = ev.meta_map().get("ct").cloned();
                    p.outcome =
                        Some(Outcome { delivered: true, rssi_dbm: ev.rssi_dbm, ct_hex });
                    self.done.insert((p.t, p.tid), p);
                }
            }
            EventKind::Drop => {
                let meta = ev.meta_map();
                let is_final = meta.contains_key("final");
                if meta.contains_key("blocked") {
                    // blocked attempts have no tx event; synthesize the
                    // undelivered message directly
                    let p = PendingMsg {
                        t: ev.t,
                        tid,
                        src: ev.src.clone(),
                        dst: ev.dst.clone(),
                        msg_type: ev.msg_type.clone(),
                        size: ev.size,
                        seq: ev.seq,
                        retransmissions: 0,
                        outcome: Some(Outcome {
                            delivered: false,
                            rssi_dbm: None,
                            ct_hex: None,
                        }),
                    };
                    self.pending.remove(&tid);
                    self.done.insert((p.t, p.tid), p);
                } else if is_final {
                    if let Some(mut p) = self.pending.remove(&tid) {
                        p.outcome =
                            Some(Outcome { delivered: false, rssi_dbm: None, ct_hex: None });
                        self.done.insert((p.t, p.tid), p);
                    }
                }
            }
            _ => {}
        }
        self.drain_ready(decoder)
    }

    /// Flushes everything, treating still-unresolved messages as
    /// undelivered (truncated log tail).
    pub fn flush(&mut self, decoder: Option<&dyn PayloadDecoder>) -> Vec<TraceEvent> {
        let pending: Vec<u64> = self.pending.keys().copied().collect();
        for tid in pending {
            let mut p = self.pending.remove(&tid).unwrap();
            p.outcome = Some(Outcome { delivered: false, rssi_dbm: None, ct_hex: None });
            self.done.insert((p.t, p.tid), p);
        }
        let keys: Vec<(SimTime, u64)> = self.done.keys().copied().collect();
        keys.into_iter()
            .map(|k| emit(self.done.remove(&k).unwrap(), decoder))
            .collect()
    }

    fn drain_ready(&mut self, decoder: Option<&dyn PayloadDecoder>) -> Vec<TraceEvent> {
        let barrier = self.pending.values().map(|p| p.t).min();
        let mut out = Vec::new();
        while let Some((&key, _)) = self.done.iter().next() {
            if let Some(barrier) = barrier {
                if key.0 >= barrier {
                    break;
                }
            }
            let p = self.done.remove(&key).unwrap();
            out.push(emit(p, decoder));
        }
        out
    }
}

fn emit(p: PendingMsg, decoder: Option<&dyn PayloadDecoder>) -> TraceEvent {
    let outcome = p.outcome.expect("finalized message has an outcome");
    let process = match (&outcome.ct_hex, decoder) {
        (Some(hex_ct), Some(decoder)) => match hex::decode(hex_ct) {
            Ok(ct) => match decoder.decode(&p.src, p.seq, &ct) {
                DecodeOutcome::Values(v) => ProcessPayload::Values(v),
                DecodeOutcome::Corrupt => ProcessPayload::DecodeFailed,
                DecodeOutcome::NotMonitored => ProcessPayload::None,
            },
            Err(_) => ProcessPayload::DecodeFailed,
        },
        _ => ProcessPayload::None,
    };
    TraceEvent {
        t: p.t,
        src: p.src,
        dst: p.dst,
        msg_type: p.msg_type,
        size: p.size,
        seq: p.seq,
        delivered: outcome.delivered,
        retransmissions: p.retransmissions,
        rssi_dbm: outcome.rssi_dbm,
        process,
    }
}

/// Batch normalization of a full log.
pub fn normalize_log(
    events: &[SimEvent],
    decoder: Option<&dyn PayloadDecoder>,
) -> Vec<TraceEvent> {
    let mut n = Normalizer::new();
    let mut out = Vec::new();
    for ev in events {
        out.extend(n.push(ev, decoder));
    }
    out.extend(n.flush(decoder));
    out
}

/// IPAL-style message line: flat JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct IpalLine {
    timestamp: f64,
    src: String,
    dest: String,
    #[serde(rename = "type")]
    msg_type: String,
    #[serde(default)]
    data: IpalData,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IpalData {
    #[serde(default)]
    size: usize,
    #[serde(default)]
    seq: u64,
    #[serde(default = "default_true")]
    delivered: bool,
    #[serde(default)]
    retransmissions: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rssi_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    process: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    process_error: bool,
}

fn default_true() -> bool {
    true
}

/// Imports an IPAL-style JSON-lines trace. Timestamps are float seconds.
pub fn import_ipal_jsonl(text: &str) -> Result<Vec<TraceEvent>, ImportError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: IpalLine = serde_json::from_str(line).map_err(|e| ImportError::BadLine {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let process = if parsed.data.process_error {
            ProcessPayload::DecodeFailed
        } else {
            match parsed.data.process {
                Some(map) => ProcessPayload::Values(map.into_iter().collect()),
                None => ProcessPayload::None,
            }
        };
        out.push(TraceEvent {
            t: SimTime::from_us((parsed.timestamp * 1_000_000.0).round() as u64),
            src: parsed.src,
            dst: parsed.dest,
            msg_type: parsed.msg_type,
            size: parsed.data.size,
            seq: parsed.data.seq,
            delivered: parsed.data.delivered,
            retransmissions: parsed.data.retransmissions,
            rssi_dbm: parsed.data.rssi_dbm,
            process,
        });
    }
    out.sort_by_key(|e| e.t);
    Ok(out)
}

/// Converts trace events to the IPAL-style line format.
pub fn export_ipal_jsonl(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        let (process, process_error) = match &ev.process {
            ProcessPayload::Values(v) => {
                (Some(v.iter().cloned().collect::<BTreeMap<String, f64>>()), false)
            }
            ProcessPayload::DecodeFailed => (None, true),
            ProcessPayload::None => (None, false),
        };
        let line = IpalLine {
            timestamp: ev.t.as_us() as f64 / 1_000_000.0,
            src: ev.src.clone(),
            dest: ev.dst.clone(),
            msg_type: ev.msg_type.clone(),
            data: IpalData {
                size: ev.size,
                seq: ev.seq,
                delivered: ev.delivered,
                retransmissions: ev.retransmissions,
                rssi_dbm: ev.rssi_dbm,
                process,
                process_error,
            },
        };
        out.push_str(&serde_json::to_string(&line).expect("ipal line serializes"));
        out.push('\n');
    }
    out
}
