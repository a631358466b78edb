//! Event log records.
//!
//! One line per observable occurrence, totally ordered by
//! (timestamp, insertion counter). Serialized two ways: a TSV line
//! format for eyeballing and diffing, and a JSON-lines mirror for
//! tooling. Identical seeds reproduce identical logs byte for byte.

use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Tx,
    Rx,
    Drop,
    Retransmit,
    Attach,
    Block,
    Alert,
    Action,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Tx => "tx",
            EventKind::Rx => "rx",
            EventKind::Drop => "drop",
            EventKind::Retransmit => "retransmit",
            EventKind::Attach => "attach",
            EventKind::Block => "block",
            EventKind::Alert => "alert",
            EventKind::Action => "action",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for EventKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "tx" => EventKind::Tx,
            "rx" => EventKind::Rx,
            "drop" => EventKind::Drop,
            "retransmit" => EventKind::Retransmit,
            "attach" => EventKind::Attach,
            "block" => EventKind::Block,
            "alert" => EventKind::Alert,
            "action" => EventKind::Action,
            _ => return Err(()),
        })
    }
}

/// `t<TAB>kind<TAB>src<TAB>dst<TAB>msg_type<TAB>size<TAB>seq<TAB>rssi<TAB>meta`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    /// Microseconds of simulation time.
    pub t: SimTime,
    pub kind: EventKind,
    pub src: String,
    pub dst: String,
    pub msg_type: String,
    pub size: usize,
    pub seq: u64,
    pub rssi_dbm: Option<f64>,
    /// `key=value` pairs joined with `;`; empty allowed.
    pub meta: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event log parse error at line {line}: {msg}")]
pub struct LogParseError {
    pub line: usize,
    pub msg: String,
}

fn col(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

impl SimEvent {
    pub fn to_tsv(&self) -> String {
        let rssi = match self.rssi_dbm {
            Some(v) => format!("{v:.2}"),
            None => "-".to_string(),
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.t,
            self.kind,
            col(&self.src),
            col(&self.dst),
            col(&self.msg_type),
            self.size,
            self.seq,
            rssi,
            col(&self.meta),
        )
    }

    pub fn from_tsv(line: &str, line_no: usize) -> Result<Self, LogParseError> {
        let err = |msg: &str| LogParseError { line: line_no, msg: msg.to_string() };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 9 {
            return Err(err(&format!("expected 9 tab-separated columns, got {}", cols.len())));
        }
        let t = SimTime::from_us(cols[0].parse().map_err(|_| err("bad timestamp"))?);
        let kind: EventKind = cols[1].parse().map_err(|_| err("bad event kind"))?;
        let unc = |s: &str| if s == "-" { String::new() } else { s.to_string() };
        let rssi_dbm = if cols[7] == "-" {
            None
        } else {
            Some(cols[7].parse().map_err(|_| err("bad rssi"))?)
        };
        Ok(SimEvent {
            t,
            kind,
            src: unc(cols[2]),
            dst: unc(cols[3]),
            msg_type: unc(cols[4]),
            size: cols[5].parse().map_err(|_| err("bad size"))?,
            seq: cols[6].parse().map_err(|_| err("bad seq"))?,
            rssi_dbm,
            meta: unc(cols[8]),
        })
    }

    /// Splits the meta field into key/value pairs; bare keys map to "".
    pub fn meta_map(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for part in self.meta.split(';') {
            if part.is_empty() {
                continue;
            }
            match part.split_once('=') {
                Some((k, v)) => out.insert(k.to_string(), v.to_string()),
                None => out.insert(part.to_string(), String::new()),
            };
        }
        out
    }

    pub fn meta_u64(&self, key: &str) -> Option<u64> {
        self.meta_map().get(key)?.parse().ok()
    }
}

pub fn parse_tsv_log(text: &str) -> Result<Vec<SimEvent>, LogParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| SimEvent::from_tsv(l, i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimEvent {
        SimEvent {
            t: SimTime::from_us(12_345),
            kind: EventKind::Rx,
            src: "robot-01".into(),
            dst: "monitor".into(),
            msg_type: "telemetry".into(),
            size: 64,
            seq: 7,
            rssi_dbm: Some(-61.25),
            meta: "tid=4".into(),
        }
    }

    #[test]
    fn tsv_roundtrip() {
        let ev = sample();
        let line = ev.to_tsv();
        assert_eq!(line, "12345\trx\trobot-01\tmonitor\ttelemetry\t64\t7\t-61.25\ttid=4");
        assert_eq!(SimEvent::from_tsv(&line, 1).unwrap(), ev);
    }

    #[test]
    fn empty_fields_roundtrip_as_dash() {
        let mut ev = sample();
        ev.src = String::new();
        ev.rssi_dbm = None;
        ev.meta = String::new();
        let line = ev.to_tsv();
        assert_eq!(SimEvent::from_tsv(&line, 1).unwrap(), ev);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_tsv_log("12345\trx\tonly-three\n").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_tsv_log("12345\trx\ta\tb\tc\t1\t2\t-\tok\nnot-a-time\trx\ta\tb\tc\t1\t2\t-\tok\n")
            .unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn meta_parsing() {
        let ev = SimEvent { meta: "tid=9;attempt=2;final".into(), ..sample() };
        let m = ev.meta_map();
        assert_eq!(m.get("tid").unwrap(), "9");
        assert_eq!(m.get("attempt").unwrap(), "2");
        assert!(m.contains_key("final"));
        assert_eq!(ev.meta_u64("tid"), Some(9));
    }
}
