//! Baseline training.
//!
//! All statistics are learned from an alert-free trace. Timing uses
//! median and MAD (floored) rather than mean/std: wireless jitter is
//! heavy-tailed and a single retransmitted burst must not stretch the
//! scale. Channels with fewer messages than the training minimum stay
//! untrained and score as no-ops.

use super::{key2, key3, DetectorConfig, ProcessPayload, TraceEvent};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_us: f64,
    pub mad_us: f64,
    pub samples: usize,
    pub trained: bool,
}

impl TimingStats {
    /// Robust scale: 1.4826 * MAD estimates sigma for normal data.
    pub fn scale_us(&self) -> f64 {
        1.4826 * self.mad_us
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub transitions: BTreeSet<(String, String)>,
    pub drop_mean: f64,
    pub drop_std: f64,
    pub retrans_mean: f64,
    pub retrans_std: f64,
    pub messages: usize,
    pub windows: usize,
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineModel {
    /// Keyed by src\tdst\tmsg_type.
    pub timing: BTreeMap<String, TimingStats>,
    /// Keyed by src\tdst.
    pub links: BTreeMap<String, LinkStats>,
    /// Keyed by src\tdst\tmsg_type\tvariable -> (min, max).
    pub process_bounds: BTreeMap<String, (f64, f64)>,
    pub trained: bool,
}

impl BaselineModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var =
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / samples.len() as f64;
    (mean, var.sqrt())
}

/// Trains a baseline over normalized events (assumed alert-free).
pub fn train(events: &[TraceEvent], cfg: &DetectorConfig) -> BaselineModel {
    let mut model = BaselineModel { trained: true, ..BaselineModel::default() };

    // timing: inter-arrival of original transmit times per channel
    let mut arrivals: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for ev in events {
        arrivals.entry(key3(&ev.src, &ev.dst, &ev.msg_type)).or_default().push(ev.t.as_us());
    }
    for (key, ts) in arrivals {
        let trained = ts.len() >= cfg.min_train;
        let mut diffs: Vec<f64> =
            ts.windows(2).map(|w| w[1].saturating_sub(w[0]) as f64).collect();
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = median(&diffs);
        let mut devs: Vec<f64> = diffs.iter().map(|d| (d - med).abs()).collect();
        devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = median(&devs).max(cfg.mad_floor.as_us() as f64);
        model.timing.insert(
            key,
            TimingStats { median_us: med, mad_us: mad, samples: ts.len(), trained },
        );
    }

    // per-link order bigrams and windowed wireless rates
    let mut per_link: BTreeMap<String, Vec<&TraceEvent>> = BTreeMap::new();
    for ev in events {
        per_link.entry(key2(&ev.src, &ev.dst)).or_default().push(ev);
    }
    for (key, evs) in per_link {
        let mut transitions = BTreeSet::new();
        for w in evs.windows(2) {
            transitions.insert((w[0].msg_type.clone(), w[1].msg_type.clone()));
        }
        // rates per absolute window index
        let mut windows: BTreeMap<u64, (u32, u32, u32)> = BTreeMap::new();
        for ev in &evs {
            let w = ev.t.as_us() / cfg.window_len.as_us();
            let acc = windows.entry(w).or_default();
            acc.0 += 1;
            if !ev.delivered {
                acc.1 += 1;
            }
            acc.2 += ev.retransmissions;
        }
        let drop_rates: Vec<f64> =
            windows.values().map(|(m, d, _)| *d as f64 / *m as f64).collect();
        let retrans_rates: Vec<f64> =
            windows.values().map(|(m, _, r)| *r as f64 / *m as f64).collect();
        let (drop_mean, drop_std) = mean_std(&drop_rates);
        let (retrans_mean, retrans_std) = mean_std(&retrans_rates);
        model.links.insert(
            key,
            LinkStats {
                transitions,
                drop_mean,
                drop_std,
                retrans_mean,
                retrans_std,
                messages: evs.len(),
                windows: drop_rates.len(),
                trained: evs.len() >= cfg.min_train,
            },
        );
    }

    // process bounds over decoded values
    for ev in events {
        if let ProcessPayload::Values(values) = &ev.process {
            for (name, v) in values {
                let key = format!("{}\t{name}", key3(&ev.src, &ev.dst, &ev.msg_type));
                model
                    .process_bounds
                    .entry(key)
                    .and_modify(|(lo, hi)| {
                        *lo = lo.min(*v);
                        *hi = hi.max(*v);
                    })
                    .or_insert((*v, *v));
            }
        }
    }

    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimTime;

    fn event(t_ms: u64, msg_type: &str, delivered: bool, retrans: u32) -> TraceEvent {
        TraceEvent {
            t: SimTime::from_ms(t_ms),
            src: "dev".into(),
            dst: "bs".into(),
            msg_type: msg_type.into(),
            size: 16,
            seq: t_ms,
            delivered,
            retransmissions: retrans,
            rssi_dbm: None,
            process: ProcessPayload::None,
        }
    }

    #[test]
    fn constant_period_gives_median_and_floored_mad() {
        let cfg = DetectorConfig::default();
        let events: Vec<TraceEvent> =
            (0..200).map(|i| event(i * 100, "telemetry", true, 0)).collect();
        let model = train(&events, &cfg);
        let stats = &model.timing["dev\tbs\ttelemetry"];
        assert!(stats.trained);
        assert_eq!(stats.median_us, 100_000.0);
        assert_eq!(stats.mad_us, 1_000.0); // zero dispersion -> floor
    }

    #[test]
    fn cycle_learns_both_transitions() {
        let cfg = DetectorConfig { min_train: 4, ..DetectorConfig::default() };
        let mut events = Vec::new();
        for i in 0..50u64 {
            events.push(event(i * 200, if i % 2 == 0 { "A" } else { "B" }, true, 0));
        }
        let model = train(&events, &cfg);
        let link = &model.links["dev\tbs"];
        assert!(link.transitions.contains(&("A".into(), "B".into())));
        assert!(link.transitions.contains(&("B".into(), "A".into())));
        assert_eq!(link.transitions.len(), 2);
    }

    #[test]
    fn drop_free_training_zero_drop_mean() {
        let cfg = DetectorConfig::default();
        let events: Vec<TraceEvent> =
            (0..300).map(|i| event(i * 100, "telemetry", true, 0)).collect();
        let model = train(&events, &cfg);
        assert_eq!(model.links["dev\tbs"].drop_mean, 0.0);
    }

    #[test]
    fn sparse_channel_stays_untrained() {
        let cfg = DetectorConfig::default();
        let events: Vec<TraceEvent> =
            (0..10).map(|i| event(i * 100, "rare", true, 0)).collect();
        let model = train(&events, &cfg);
        assert!(!model.timing["dev\tbs\trare"].trained);
        assert!(!model.links["dev\tbs"].trained);
    }

    #[test]
    fn process_bounds_cover_observed_range() {
        let cfg = DetectorConfig::default();
        let mut events = Vec::new();
        for i in 0..20u64 {
            let mut ev = event(i * 100, "telemetry", true, 0);
            ev.process =
                ProcessPayload::Values(vec![("temp".into(), 10.0 + (i % 11) as f64)]);
            events.push(ev);
        }
        let model = train(&events, &cfg);
        assert_eq!(model.process_bounds["dev\tbs\ttelemetry\ttemp"], (10.0, 20.0));
    }

    #[test]
    fn model_json_roundtrip() {
        let cfg = DetectorConfig::default();
        let events: Vec<TraceEvent> =
            (0..150).map(|i| event(i * 100, "telemetry", true, i as u32 % 2)).collect();
        let model = train(&events, &cfg);
        let back = BaselineModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
    }
}
