//! Wireless-aware anomaly detection.
//!
//! Raw simulator logs are normalized into one trace event per logical
//! message (retransmissions collapsed, drops kept as undelivered
//! events). A baseline trained on alert-free traffic captures per-
//! channel timing (median/MAD), message-order bigrams, per-window drop
//! and retransmission rates, and process-value bounds; scoring flags
//! departures from any of them. Radio sensors feed a separate jamming
//! detector with noise-floor and packet-delivery-ratio rules plus a
//! least-squares localizer.

mod baseline;
mod jamming;
mod normalize;
mod scorer;

pub use baseline::{train, BaselineModel, LinkStats, TimingStats};
pub use jamming::{detect_jamming, localize_jammer, Localization, LocalizeError, SensorWindow};
pub use normalize::{
    normalize_log,
    encode_process_values, export_ipal_jsonl, import_ipal_jsonl, parse_process_values,
    seal_process_payload, DecodeOutcome, ImportError, Normalizer, PayloadDecoder,
    PskPayloadDecoder,
};
pub use scorer::{score_all, DetectorEngine};

use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::fmt;

/// One logical message after normalization. `t` is the original
/// transmit time, so retransmission delay never skews timing scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: SimTime,
    pub src: String,
    pub dst: String,
    pub msg_type: String,
    pub size: usize,
    pub seq: u64,
    pub delivered: bool,
    pub retransmissions: u32,
    pub rssi_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "ProcessPayload::is_none")]
    pub process: ProcessPayload,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessPayload {
    #[default]
    None,
    Values(Vec<(String, f64)>),
    DecodeFailed,
}

impl ProcessPayload {
    pub fn is_none(&self) -> bool {
        matches!(self, ProcessPayload::None)
    }
}

impl TraceEvent {
    /// Timing/process channel key: src, dst and message type.
    pub fn channel_key(&self) -> String {
        format!("{}>{}:{}", self.src, self.dst, self.msg_type)
    }

    /// Link key for sequence and rate detectors: src and dst only.
    pub fn link_key(&self) -> String {
        format!("{}>{}", self.src, self.dst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertKind {
    Timing,
    Sequence,
    Wireless,
    Process,
    Jamming,
    Auth,
}

impl fmt::Display for AlertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AlertKind::Timing => "timing",
            AlertKind::Sequence => "sequence",
            AlertKind::Wireless => "wireless",
            AlertKind::Process => "process",
            AlertKind::Jamming => "jamming",
            AlertKind::Auth => "auth",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AlertKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "timing" => AlertKind::Timing,
            "sequence" => AlertKind::Sequence,
            "wireless" => AlertKind::Wireless,
            "process" => AlertKind::Process,
            "jamming" => AlertKind::Jamming,
            "auth" => AlertKind::Auth,
            _ => return Err(()),
        })
    }
}

/// Detector output. Invariant: `score > threshold` for every emitted
/// alert; `Alert::new` enforces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: u64,
    pub t: SimTime,
    pub detector: AlertKind,
    /// Channel ("src>dst[:type]") or, for jamming, the sensor region.
    pub channel: String,
    pub score: f64,
    pub threshold: f64,
    pub evidence: String,
}

impl Alert {
    pub fn new(
        t: SimTime,
        detector: AlertKind,
        channel: impl Into<String>,
        score: f64,
        threshold: f64,
        evidence: impl Into<String>,
    ) -> Self {
        assert!(score > threshold, "alert score must exceed its threshold");
        Alert {
            id: 0,
            t,
            detector,
            channel: channel.into(),
            score,
            threshold,
            evidence: evidence.into(),
        }
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }
}

/// All detector thresholds, scenario-configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Timing z-score threshold.
    pub theta_t: f64,
    /// Consecutive high-z events before a timing alert.
    pub consecutive: u32,
    /// Wireless rate threshold in trained standard deviations.
    pub theta_w: f64,
    /// Jamming noise-floor rise threshold, dB.
    pub theta_j: f64,
    /// Sequence gap tolerance: drops that may explain a transition.
    pub gap_tolerance: u32,
    /// MAD floor for timing scales.
    pub mad_floor: SimTime,
    /// Standard-deviation floor for wireless rates.
    pub std_floor: f64,
    /// Rate/PDR window length.
    pub window_len: SimTime,
    /// Minimum logical messages per channel before it counts as trained.
    pub min_train: usize,
    /// Process-bound margin as a fraction of the learned range.
    pub process_margin: f64,
    /// Noise rise for a sensor to qualify for localization, dB.
    pub noise_rise_min_db: f64,
    /// Coarse localization grid pitch, meters.
    pub grid_coarse_m: f64,
    /// Refinement grid pitch, meters.
    pub grid_fine_m: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            theta_t: 8.0,
            consecutive: 2,
            theta_w: 6.0,
            theta_j: 10.0,
            gap_tolerance: 2,
            mad_floor: SimTime::from_ms(1),
            std_floor: 0.01,
            window_len: SimTime::from_secs(1),
            min_train: 100,
            process_margin: 0.05,
            noise_rise_min_db: 3.0,
            grid_coarse_m: 1.0,
            grid_fine_m: 0.1,
        }
    }
}

/// Joins key parts with tabs; tab cannot appear in node or type names
/// (they come from TSV columns).
pub(crate) fn key2(src: &str, dst: &str) -> String {
    format!("{src}\t{dst}")
}

pub(crate) fn key3(src: &str, dst: &str, msg_type: &str) -> String {
    format!("{src}\t{dst}\t{msg_type}")
}
