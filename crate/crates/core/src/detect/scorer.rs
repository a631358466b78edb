//! Online scoring against a trained baseline.
//!
//! The engine consumes trace events in transmit-time order and emits
//! alerts for: timing deviations (robust z-score over `consecutive`
//! events), order violations not explained by recorded drops, windowed
//! drop/retransmission rate spikes, and process values outside learned
//! bounds (including decode failures). Sensor windows are scored
//! separately for jamming. Untrained channels score as no-ops.

use super::jamming::{detect_jamming, SensorWindow};
use super::{key2, key3, Alert, AlertKind, BaselineModel, DetectorConfig, ProcessPayload, TraceEvent};
use std::collections::BTreeMap;

#[derive(Debug, Default)]
struct TimingState {
    last_t_us: Option<u64>,
    consecutive_high: u32,
}

#[derive(Debug, Default)]
struct SequenceState {
    last_delivered: Option<String>,
    drops_between: Vec<String>,
}

#[derive(Debug)]
struct WindowAcc {
    index: u64,
    messages: u32,
    drops: u32,
    retransmissions: u32,
}

pub struct DetectorEngine {
    model: BaselineModel,
    cfg: DetectorConfig,
    timing: BTreeMap<String, TimingState>,
    sequence: BTreeMap<String, SequenceState>,
    windows: BTreeMap<String, WindowAcc>,
    next_alert_id: u64,
}

impl DetectorEngine {
    pub fn new(model: BaselineModel, cfg: DetectorConfig) -> Self {
        DetectorEngine {
            model,
            cfg,
            timing: BTreeMap::new(),
            sequence: BTreeMap::new(),
            windows: BTreeMap::new(),
            next_alert_id: 1,
        }
    }

    pub fn model(&self) -> &BaselineModel {
        &self.model
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    fn assign(&mut self, alert: Alert) -> Alert {
        let id = self.next_alert_id;
        self.next_alert_id += 1;
        alert.with_id(id)
    }

    /// Wraps an externally produced alert (auth failures) so ids stay
    /// globally unique and ordered.
    pub fn admit_external(&mut self, alert: Alert) -> Alert {
        self.assign(alert)
    }

    /// Scores one event; events must arrive in transmit-time order.
    pub fn score_event(&mut self, ev: &TraceEvent) -> Vec<Alert> {
        let mut drafts = Vec::new();
        self.score_wireless_window(ev, &mut drafts);
        self.score_timing(ev, &mut drafts);
        self.score_sequence(ev, &mut drafts);
        self.score_process(ev, &mut drafts);
        drafts.into_iter().map(|a| self.assign(a)).collect()
    }

    /// Flushes open rate windows at end of trace.
    pub fn finish(&mut self) -> Vec<Alert> {
        let mut drafts = Vec::new();
        let keys: Vec<String> = self.windows.keys().cloned().collect();
        for key in keys {
            if let Some(acc) = self.windows.remove(&key) {
                self.close_window(&key, &acc, &mut drafts);
            }
        }
        drafts.into_iter().map(|a| self.assign(a)).collect()
    }

    fn score_timing(&mut self, ev: &TraceEvent, alerts: &mut Vec<Alert>) {
        let key = key3(&ev.src, &ev.dst, &ev.msg_type);
        let Some(stats) = self.model.timing.get(&key) else {
            return;
        };
        if !stats.trained {
            return;
        }
        let state = self.timing.entry(key).or_default();
        let Some(last) = state.last_t_us else {
            state.last_t_us = Some(ev.t.as_us());
            return;
        };
        let dt = ev.t.as_us().saturating_sub(last) as f64;
        state.last_t_us = Some(ev.t.as_us());
        let z = (dt - stats.median_us).abs() / stats.scale_us();
        if z > self.cfg.theta_t {
            state.consecutive_high += 1;
        } else {
            state.consecutive_high = 0;
        }
        if state.consecutive_high >= self.cfg.consecutive {
            let alert = Alert::new(
                ev.t,
                AlertKind::Timing,
                ev.channel_key(),
                z,
                self.cfg.theta_t,
                format!(
                    "dt_us={dt:.0};median_us={:.0};scale_us={:.1};consecutive={}",
                    stats.median_us,
                    stats.scale_us(),
                    state.consecutive_high
                ),
            );
            alerts.push(alert);
        }
    }

    fn score_sequence(&mut self, ev: &TraceEvent, alerts: &mut Vec<Alert>) {
        let key = key2(&ev.src, &ev.dst);
        let Some(stats) = self.model.links.get(&key) else {
            return;
        };
        if !stats.trained {
            return;
        }
        let state = self.sequence.entry(key.clone()).or_default();
        if !ev.delivered {
            state.drops_between.push(ev.msg_type.clone());
            return;
        }
        if let Some(prev) = state.last_delivered.clone() {
            let pair = (prev.clone(), ev.msg_type.clone());
            if !stats.transitions.contains(&pair) {
                let gap = &state.drops_between;
                let explained = !gap.is_empty()
                    && gap.len() as u32 <= self.cfg.gap_tolerance
                    && chain_explained(&stats.transitions, &prev, gap, &ev.msg_type);
                if !explained {
                    let alert = Alert::new(
                        ev.t,
                        AlertKind::Sequence,
                        ev.link_key(),
                        1.0,
                        0.0,
                        format!(
                            "transition={prev}->{};drop_evidence={}",
                            ev.msg_type,
                            gap.len()
                        ),
                    );
                    alerts.push(alert);
                }
            }
        }
        state.last_delivered = Some(ev.msg_type.clone());
        state.drops_between.clear();
    }

    fn score_wireless_window(&mut self, ev: &TraceEvent, alerts: &mut Vec<Alert>) {
        let key = key2(&ev.src, &ev.dst);
        if !self.model.links.get(&key).is_some_and(|s| s.trained) {
            return;
        }
        let w = ev.t.as_us() / self.cfg.window_len.as_us();
        let closed = match self.windows.get(&key) {
            Some(acc) if acc.index != w => self.windows.remove(&key),
            _ => None,
        };
        if let Some(acc) = closed {
            self.close_window(&key, &acc, alerts);
        }
        let acc = self.windows.entry(key).or_insert(WindowAcc {
            index: w,
            messages: 0,
            drops: 0,
            retransmissions: 0,
        });
        acc.messages += 1;
        if !ev.delivered {
            acc.drops += 1;
        }
        acc.retransmissions += ev.retransmissions;
    }

    fn close_window(&self, key: &str, acc: &WindowAcc, alerts: &mut Vec<Alert>) {
        let Some(stats) = self.model.links.get(key) else {
            return;
        };
        if !stats.trained || acc.messages == 0 {
            return;
        }
        let t = crate::time::SimTime::from_us(acc.index * self.cfg.window_len.as_us());
        let channel = key.replace('\t', ">");
        let drop_rate = acc.drops as f64 / acc.messages as f64;
        let drop_bound =
            stats.drop_mean + self.cfg.theta_w * stats.drop_std.max(self.cfg.std_floor);
        if drop_rate > drop_bound {
            let alert = Alert::new(
                t,
                AlertKind::Wireless,
                channel.clone(),
                drop_rate,
                drop_bound,
                format!(
                    "window={};drop_rate={drop_rate:.3};mean={:.3};std={:.3}",
                    acc.index, stats.drop_mean, stats.drop_std
                ),
            );
            alerts.push(alert);
        }
        let retrans_rate = acc.retransmissions as f64 / acc.messages as f64;
        let retrans_bound =
            stats.retrans_mean + self.cfg.theta_w * stats.retrans_std.max(self.cfg.std_floor);
        if retrans_rate > retrans_bound {
            let alert = Alert::new(
                t,
                AlertKind::Wireless,
                channel,
                retrans_rate,
                retrans_bound,
                format!(
                    "window={};retrans_rate={retrans_rate:.3};mean={:.3};std={:.3}",
                    acc.index, stats.retrans_mean, stats.retrans_std
                ),
            );
            alerts.push(alert);
        }
    }

    fn score_process(&mut self, ev: &TraceEvent, alerts: &mut Vec<Alert>) {
        match &ev.process {
            ProcessPayload::None => {}
            ProcessPayload::DecodeFailed => {
                let alert = Alert::new(
                    ev.t,
                    AlertKind::Process,
                    ev.channel_key(),
                    1.0,
                    0.0,
                    "decode-error",
                );
                alerts.push(alert);
            }
            ProcessPayload::Values(values) => {
                for (name, v) in values {
                    let key = format!("{}\t{name}", key3(&ev.src, &ev.dst, &ev.msg_type));
                    let Some(&(lo, hi)) = self.model.process_bounds.get(&key) else {
                        continue;
                    };
                    let range = (hi - lo).max(f64::MIN_POSITIVE);
                    let excess = if *v < lo {
                        (lo - v) / range
                    } else if *v > hi {
                        (v - hi) / range
                    } else {
                        0.0
                    };
                    if excess > self.cfg.process_margin {
                        let alert = Alert::new(
                            ev.t,
                            AlertKind::Process,
                            ev.channel_key(),
                            excess,
                            self.cfg.process_margin,
                            format!("var={name};value={v:.4};bounds=[{lo:.4},{hi:.4}]"),
                        );
                        alerts.push(alert);
                    }
                }
            }
        }
    }

    /// Scores one batch of sensor windows for jamming.
    pub fn score_sensors(
        &mut self,
        baseline_noise_dbm: f64,
        windows: &[SensorWindow],
    ) -> Option<Alert> {
        detect_jamming(baseline_noise_dbm, windows, &self.cfg).map(|a| self.assign(a))
    }
}

/// True when prev -> d1 -> ... -> dk -> next walks entirely through
/// learned transitions.
fn chain_explained(
    transitions: &std::collections::BTreeSet<(String, String)>,
    prev: &str,
    drops: &[String],
    next: &str,
) -> bool {
    let mut cur = prev;
    for d in drops {
        if !transitions.contains(&(cur.to_string(), d.clone())) {
            return false;
        }
        cur = d;
    }
    transitions.contains(&(cur.to_string(), next.to_string()))
}

/// Convenience for offline replay: trains on a prefix, scores the rest.
pub fn score_all(
    model: BaselineModel,
    cfg: DetectorConfig,
    events: &[TraceEvent],
) -> Vec<Alert> {
    let mut engine = DetectorEngine::new(model, cfg);
    let mut alerts = Vec::new();
    for ev in events {
        alerts.extend(engine.score_event(ev));
    }
    alerts.extend(engine.finish());
    alerts
}

#[cfg(test)]
mod tests {
    use super::super::{train, ProcessPayload, TraceEvent};
    use super::*;
    use crate::time::SimTime;

    fn event(t_us: u64, msg_type: &str, delivered: bool, retrans: u32) -> TraceEvent {
        TraceEvent {
            t: SimTime::from_us(t_us),
            src: "dev".into(),
            dst: "bs".into(),
            msg_type: msg_type.into(),
            size: 16,
            seq: t_us,
            delivered,
            retransmissions: retrans,
            rssi_dbm: None,
            process: ProcessPayload::None,
        }
    }

    fn periodic(n: u64, period_us: u64) -> Vec<TraceEvent> {
        (0..n).map(|i| event(i * period_us, "telemetry", true, 0)).collect()
    }

    #[test]
    fn timing_z_matches_arithmetic_oracle() {
        // median 100 ms, MAD 2 ms -> scale 2.9652 ms
        // dt = 200 ms -> z = 100 / 2.9652 = 33.72...
        let cfg = DetectorConfig::default();
        let mut training = Vec::new();
        // alternate +-2 ms jitter so the MAD lands exactly on 2 ms
        for i in 0..200u64 {
            let jitter: i64 = if i % 2 == 0 { 2_000 } else { -2_000 };
            let t = (i as i64 * 100_000 + if i > 0 { jitter } else { 0 }) as u64;
            training.push(event(t, "telemetry", true, 0));
        }
        let model = train(&training, &cfg);
        let stats = &model.timing["dev\tbs\ttelemetry"];
        assert!((stats.mad_us - 2_000.0).abs() < 1e-9, "mad {}", stats.mad_us);

        let scale = stats.scale_us();
        let z_anomalous = (200_000.0f64 - stats.median_us).abs() / scale;
        let z_normal = (101_000.0f64 - stats.median_us).abs() / scale;
        assert!(z_anomalous > 8.0, "z {z_anomalous}");
        assert!(z_normal < 8.0, "z {z_normal}");
    }

    #[test]
    fn timing_alert_after_consecutive_threshold() {
        let cfg = DetectorConfig::default();
        let model = train(&periodic(200, 100_000), &cfg);
        let mut engine = DetectorEngine::new(model, cfg);

        let mut alerts = Vec::new();
        // two consecutive 500 ms gaps
        for ev in [
            event(0, "telemetry", true, 0),
            event(100_000, "telemetry", true, 0),
            event(600_000, "telemetry", true, 0),
            event(1_100_000, "telemetry", true, 0),
        ] {
            alerts.extend(engine.score_event(&ev));
        }
        let timing: Vec<&Alert> =
            alerts.iter().filter(|a| a.detector == AlertKind::Timing).collect();
        assert_eq!(timing.len(), 1, "{alerts:?}");
        assert!(timing[0].score > timing[0].threshold);
    }

    #[test]
    fn single_outlier_does_not_alert_at_c2() {
        let cfg = DetectorConfig::default();
        let model = train(&periodic(200, 100_000), &cfg);
        let mut engine = DetectorEngine::new(model, cfg);
        let mut alerts = Vec::new();
        for ev in [
            event(0, "telemetry", true, 0),
            event(500_000, "telemetry", true, 0),     // one long gap
            event(600_000, "telemetry", true, 0),     // back to cadence
            event(700_000, "telemetry", true, 0),
        ] {
            alerts.extend(engine.score_event(&ev));
        }
        assert!(alerts.iter().all(|a| a.detector != AlertKind::Timing));
    }

    #[test]
    fn first_event_of_channel_never_scored() {
        let cfg = DetectorConfig::default();
        let model = train(&periodic(200, 100_000), &cfg);
        let mut engine = DetectorEngine::new(model, cfg);
        assert!(engine.score_event(&event(999_000, "telemetry", true, 0)).is_empty());
    }

    fn cycle_training(cfg: &DetectorConfig) -> BaselineModel {
        // A -> B -> C -> A ...
        let types = ["A", "B", "C"];
        let events: Vec<TraceEvent> =
            (0..300u64).map(|i| event(i * 100_000, types[(i % 3) as usize], true, 0)).collect();
        train(&events, cfg)
    }

    #[test]
    fn gap_tolerant_sequence_scoring() {
        let cfg = DetectorConfig::default();
        let model = cycle_training(&cfg);
        let mut engine = DetectorEngine::new(model, cfg);

        let mut alerts = Vec::new();
        // A, then B dropped (recorded), then C: explained
        alerts.extend(engine.score_event(&event(0, "A", true, 0)));
        alerts.extend(engine.score_event(&event(100_000, "B", false, 0)));
        alerts.extend(engine.score_event(&event(200_000, "C", true, 0)));
        assert!(alerts.iter().all(|a| a.detector != AlertKind::Sequence), "{alerts:?}");

        // A then C with no drop evidence: alert
        alerts.clear();
        alerts.extend(engine.score_event(&event(300_000, "A", true, 0)));
        alerts.extend(engine.score_event(&event(400_000, "C", true, 0)));
        assert_eq!(
            alerts.iter().filter(|a| a.detector == AlertKind::Sequence).count(),
            1,
            "{alerts:?}"
        );
    }

    #[test]
    fn unknown_message_type_alerts() {
        let cfg = DetectorConfig::default();
        let model = cycle_training(&cfg);
        let mut engine = DetectorEngine::new(model, cfg);
        let mut alerts = Vec::new();
        alerts.extend(engine.score_event(&event(0, "A", true, 0)));
        alerts.extend(engine.score_event(&event(100_000, "X", true, 0)));
        assert_eq!(alerts.iter().filter(|a| a.detector == AlertKind::Sequence).count(), 1);
    }

    #[test]
    fn wireless_rate_oracle() {
        // training drop rate 0.02, std floored at 0.01:
        // bound = 0.02 + 6 * 0.01 = 0.08; a 0.30 window must alert
        let cfg = DetectorConfig::default();
        let mut training = Vec::new();
        for i in 0..3_000u64 {
            // 100 messages per 1 s window at 10 ms period, 2% drops
            training.push(event(i * 10_000, "telemetry", i % 50 != 0, 0));
        }
        let model = train(&training, &cfg);
        let link = &model.links["dev\tbs"];
        assert!((link.drop_mean - 0.02).abs() < 1e-9);

        let mut engine = DetectorEngine::new(model, cfg);
        let mut alerts = Vec::new();
        // one clean window then one with 30% drops
        for i in 0..100u64 {
            alerts.extend(engine.score_event(&event(i * 10_000, "telemetry", i % 50 != 0, 0)));
        }
        for i in 100..200u64 {
            alerts.extend(engine.score_event(&event(i * 10_000, "telemetry", i % 10 > 2, 0)));
        }
        alerts.extend(engine.finish());
        let wireless: Vec<&Alert> =
            alerts.iter().filter(|a| a.detector == AlertKind::Wireless).collect();
        assert_eq!(wireless.len(), 1, "{wireless:?}");
        assert!(wireless[0].score > 0.08);
    }

    #[test]
    fn process_bounds_and_decode_errors() {
        let cfg = DetectorConfig::default();
        let mut training = Vec::new();
        for i in 0..150u64 {
            let mut ev = event(i * 100_000, "telemetry", true, 0);
            ev.process = ProcessPayload::Values(vec![(
                "temp".into(),
                10.0 + 10.0 * (i % 2) as f64,
            )]);
            training.push(ev);
        }
        let model = train(&training, &cfg);
        assert_eq!(model.process_bounds["dev\tbs\ttelemetry\ttemp"], (10.0, 20.0));
        let mut engine = DetectorEngine::new(model, cfg);

        let mut ok = event(0, "telemetry", true, 0);
        ok.process = ProcessPayload::Values(vec![("temp".into(), 15.0)]);
        assert!(engine.score_event(&ok).is_empty());

        let mut out_of_bounds = event(100_000, "telemetry", true, 0);
        out_of_bounds.process = ProcessPayload::Values(vec![("temp".into(), 25.0)]);
        let alerts = engine.score_event(&out_of_bounds);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].detector, AlertKind::Process);

        let mut corrupt = event(200_000, "telemetry", true, 0);
        corrupt.process = ProcessPayload::DecodeFailed;
        let alerts = engine.score_event(&corrupt);
        assert_eq!(alerts.len(), 1);
        assert!(alerts[0].evidence.contains("decode-error"));
    }

    #[test]
    fn training_trace_scores_clean() {
        let cfg = DetectorConfig::default();
        let training = periodic(500, 100_000);
        let model = train(&training, &cfg);
        let alerts = score_all(model, cfg, &training);
        assert!(alerts.is_empty(), "{alerts:?}");
    }

    #[test]
    fn training_trace_with_all_features_scores_clean() {
        // cyclic types, benign drops and retransmissions, process values:
        // replaying the exact training trace must stay silent on every
        // detector
        let cfg = DetectorConfig::default();
        let types = ["A", "B", "C"];
        let mut training = Vec::new();
        for i in 0..600u64 {
            let mut ev = event(i * 100_000, types[(i % 3) as usize], i % 40 != 0, (i % 13 == 0) as u32);
            if ev.delivered {
                ev.process = ProcessPayload::Values(vec![(
                    "temp".into(),
                    20.0 + (i % 10) as f64,
                )]);
            }
            training.push(ev);
        }
        let model = train(&training, &cfg);
        let alerts = score_all(model, cfg, &training);
        assert!(alerts.is_empty(), "{alerts:?}");
    }

    #[test]
    fn retransmissions_do_not_change_timing_scores() {
        let cfg = DetectorConfig::default();
        let clean = periodic(300, 100_000);
        let model = train(&clean, &cfg);

        let mut with_retrans = clean.clone();
        for (i, ev) in with_retrans.iter_mut().enumerate() {
            if i % 7 == 0 {
                ev.retransmissions = 2;
            }
        }
        let alerts = score_all(model, cfg, &with_retrans);
        assert!(alerts.iter().all(|a| a.detector != AlertKind::Timing));
    }

    #[test]
    fn alert_ids_unique_and_increasing() {
        let cfg = DetectorConfig::default();
        let model = cycle_training(&cfg);
        let mut engine = DetectorEngine::new(model, cfg);
        let mut alerts = Vec::new();
        alerts.extend(engine.score_event(&event(0, "A", true, 0)));
        alerts.extend(engine.score_event(&event(1000, "X", true, 0)));
        alerts.extend(engine.score_event(&event(2000, "A", true, 0)));
        alerts.extend(engine.score_event(&event(3000, "X", true, 0)));
        let ids: Vec<u64> = alerts.iter().map(|a| a.id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }
}
