//! Jamming detection and localization from radio sensor windows.
//!
//! Detection fires on either signature of a jammer: the noise floor
//! rising past a threshold at any sensor, or the packet delivery ratio
//! collapsing at two or more sensors under offered load (reactive
//! jammers that defeat energy detection still defeat delivery).
//!
//! Localization profiles a candidate transmit power out per grid
//! position and minimizes the squared error between observed and
//! predicted noise-floor excesses under the closed-form path loss
//! model: coarse grid, then local refinement.

use super::{Alert, AlertKind, DetectorConfig};
use crate::netsim::{db_to_lin, dist, ChannelModel};
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One sensor's view of one time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub sensor_id: String,
    pub position: (f64, f64),
    pub window_start: SimTime,
    pub window_len: SimTime,
    pub noise_floor_dbm: f64,
    /// delivered/expected; `None` when nothing was offered.
    pub pdr: Option<f64>,
    pub offered_load: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LocalizeError {
    #[error("fewer than 3 sensors with sufficient noise rise")]
    InsufficientSensors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub position: (f64, f64),
    pub power_dbm: f64,
    pub residual: f64,
    pub qualifying_sensors: usize,
}

/// Noise-rise or PDR-collapse rule over one batch of windows.
pub fn detect_jamming(
    baseline_noise_dbm: f64,
    windows: &[SensorWindow],
    cfg: &DetectorConfig,
) -> Option<Alert> {
    if windows.is_empty() {
        return None;
    }
    let t = windows[0].window_start;

    let mut max_excess = f64::NEG_INFINITY;
    let mut max_sensor = "";
    for w in windows {
        let excess = w.noise_floor_dbm - baseline_noise_dbm;
        if excess > max_excess {
            max_excess = excess;
            max_sensor = &w.sensor_id;
        }
    }
    if max_excess >= cfg.theta_j {
        let region: Vec<&str> = windows
            .iter()
            .filter(|w| w.noise_floor_dbm - baseline_noise_dbm >= cfg.theta_j)
            .map(|w| w.sensor_id.as_str())
            .collect();
        return Some(Alert::new(
            t,
            AlertKind::Jamming,
            region.join(","),
            max_excess,
            cfg.theta_j,
            format!("noise-rise;peak_sensor={max_sensor};excess_db={max_excess:.2}"),
        ));
    }

    // reactive jammer: delivery collapse at >= 2 loaded sensors
    let collapsed: Vec<&SensorWindow> = windows
        .iter()
        .filter(|w| w.offered_load > 0 && w.pdr.is_some_and(|p| p < 0.5))
        .collect();
    if collapsed.len() >= 2 {
        let min_pdr = collapsed.iter().map(|w| w.pdr.unwrap()).fold(1.0f64, f64::min);
        let region: Vec<&str> = collapsed.iter().map(|w| w.sensor_id.as_str()).collect();
        return Some(Alert::new(
            t,
            AlertKind::Jamming,
            region.join(","),
            1.0 - min_pdr,
            0.5,
            format!("pdr-collapse;sensors={};min_pdr={min_pdr:.3}", collapsed.len()),
        ));
    }
    None
}

/// Predicted noise-floor excess at a sensor for a jammer at `pos`
/// transmitting `power_dbm`, closed form, zero shadowing.
fn predicted_excess_db(
    channel: &ChannelModel,
    baseline_noise_dbm: f64,
    pos: (f64, f64),
    power_dbm: f64,
    sensor: (f64, f64),
) -> f64 {
    let pl = channel.path_loss_db(dist(pos, sensor), 0.0);
    let jam_rx = power_dbm - pl;
    10.0 * (1.0 + db_to_lin(jam_rx - baseline_noise_dbm)).log10()
}

struct Qualified {
    position: (f64, f64),
    excess_db: f64,
}

fn sse_for(
    channel: &ChannelModel,
    baseline: f64,
    sensors: &[Qualified],
    pos: (f64, f64),
    power_dbm: f64,
) -> f64 {
    sensors
        .iter()
        .map(|s| {
            let e = predicted_excess_db(channel, baseline, pos, power_dbm, s.position);
            (s.excess_db - e) * (s.excess_db - e)
        })
        .sum()
}

/// Profiles the jammer power out by golden-section search on the SSE.
fn profile_power(
    channel: &ChannelModel,
    baseline: f64,
    sensors: &[Qualified],
    pos: (f64, f64),
) -> (f64, f64) {
    // implied transmit power per sensor gives the bracket
    let implied: Vec<f64> = sensors
        .iter()
        .map(|s| {
            let jam_lin = db_to_lin(baseline) * (db_to_lin(s.excess_db) - 1.0).max(1e-12);
            let jam_rx = 10.0 * jam_lin.log10();
            jam_rx + channel.path_loss_db(dist(pos, s.position), 0.0)
        })
        .collect();
    let center = implied.iter().sum::<f64>() / implied.len() as f64;
    let (mut lo, mut hi) = (center - 10.0, center + 10.0);

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = sse_for(channel, baseline, sensors, pos, x1);
    let mut f2 = sse_for(channel, baseline, sensors, pos, x2);
    for _ in 0..40 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = sse_for(channel, baseline, sensors, pos, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = sse_for(channel, baseline, sensors, pos, x2);
        }
    }
    let power = (lo + hi) / 2.0;
    (power, sse_for(channel, baseline, sensors, pos, power))
}

/// Least-squares position estimate from noise-floor excesses.
pub fn localize_jammer(
    windows: &[SensorWindow],
    baseline_noise_dbm: f64,
    channel: &ChannelModel,
    cfg: &DetectorConfig,
) -> Result<Localization, LocalizeError> {
    let sensors: Vec<Qualified> = windows
        .iter()
        .filter_map(|w| {
            let excess = w.noise_floor_dbm - baseline_noise_dbm;
            (excess > cfg.noise_rise_min_db)
                .then_some(Qualified { position: w.position, excess_db: excess })
        })
        .collect();
    if sensors.len() < 3 {
        return Err(LocalizeError::InsufficientSensors);
    }

    let min_x = sensors.iter().map(|s| s.position.0).fold(f64::INFINITY, f64::min);
    let max_x = sensors.iter().map(|s| s.position.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = sensors.iter().map(|s| s.position.1).fold(f64::INFINITY, f64::min);
    let max_y = sensors.iter().map(|s| s.position.1).fold(f64::NEG_INFINITY, f64::max);
    let diag = ((max_x - min_x).powi(2) + (max_y - min_y).powi(2)).sqrt();
    let margin = (0.25 * diag).max(5.0).ceil();

    // integer-aligned coarse grid so symmetric geometries land exactly
    let x0 = (min_x - margin).floor();
    let y0 = (min_y - margin).floor();
    let x1 = (max_x + margin).ceil();
    let y1 = (max_y + margin).ceil();

    let scan = |xa: f64, ya: f64, xb: f64, yb: f64, step: f64| {
        let mut best: Option<(f64, (f64, f64), f64)> = None;
        let nx = ((xb - xa) / step).round() as i64;
        let ny = ((yb - ya) / step).round() as i64;
        for iy in 0..=ny {
            for ix in 0..=nx {
                let pos = (xa + ix as f64 * step, ya + iy as f64 * step);
                let (power, sse) = profile_power(channel, baseline_noise_dbm, &sensors, pos);
                if best.as_ref().is_none_or(|(b, _, _)| sse < *b) {
                    best = Some((sse, pos, power));
                }
            }
        }
        best.expect("grid has at least one candidate")
    };

    let coarse = scan(x0, y0, x1, y1, cfg.grid_coarse_m);
    let fine = scan(
        coarse.1 .0 - cfg.grid_coarse_m,
        coarse.1 .1 - cfg.grid_coarse_m,
        coarse.1 .0 + cfg.grid_coarse_m,
        coarse.1 .1 + cfg.grid_coarse_m,
        cfg.grid_fine_m,
    );
    // the refinement grid contains the coarse optimum, so it can only
    // improve or tie
    let (residual, position, power_dbm) = if fine.0 <= coarse.0 { fine } else { coarse };
    Ok(Localization { position, power_dbm, residual, qualifying_sensors: sensors.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::lin_to_db;

    fn cfg() -> DetectorConfig {
        DetectorConfig::default()
    }

    fn window(id: &str, pos: (f64, f64), noise: f64, pdr: Option<f64>, load: u32) -> SensorWindow {
        SensorWindow {
            sensor_id: id.into(),
            position: pos,
            window_start: SimTime::from_secs(5),
            window_len: SimTime::from_secs(1),
            noise_floor_dbm: noise,
            pdr,
            offered_load: load,
        }
    }

    #[test]
    fn noise_rise_threshold() {
        // baseline -94, reading -70 -> excess 24 >= 10 -> alert
        let windows = vec![window("s1", (0.0, 0.0), -70.0, Some(1.0), 10)];
        let alert = detect_jamming(-94.0, &windows, &cfg()).unwrap();
        assert!((alert.score - 24.0).abs() < 1e-9);

        // reading -93 -> excess 1 -> quiet
        let windows = vec![window("s1", (0.0, 0.0), -93.0, Some(1.0), 10)];
        assert!(detect_jamming(-94.0, &windows, &cfg()).is_none());
    }

    #[test]
    fn reactive_jammer_pdr_rule() {
        let windows = vec![
            window("s1", (0.0, 0.0), -94.0, Some(0.2), 50),
            window("s2", (10.0, 0.0), -94.0, Some(0.3), 50),
        ];
        let alert = detect_jamming(-94.0, &windows, &cfg()).unwrap();
        assert!(alert.evidence.contains("pdr-collapse"));

        // one sensor alone is not enough
        let windows = vec![
            window("s1", (0.0, 0.0), -94.0, Some(0.2), 50),
            window("s2", (10.0, 0.0), -94.0, Some(0.9), 50),
        ];
        assert!(detect_jamming(-94.0, &windows, &cfg()).is_none());

        // no offered load -> pdr undefined -> no score
        let windows = vec![
            window("s1", (0.0, 0.0), -94.0, None, 0),
            window("s2", (10.0, 0.0), -94.0, None, 0),
        ];
        assert!(detect_jamming(-94.0, &windows, &cfg()).is_none());
    }

    /// Sensor windows produced by the closed-form channel for a jammer
    /// at `pos` with `power` dBm.
    fn synth_windows(
        channel: &ChannelModel,
        sensors: &[((f64, f64), &str)],
        pos: (f64, f64),
        power: f64,
    ) -> Vec<SensorWindow> {
        sensors
            .iter()
            .map(|(sp, id)| {
                let pl = channel.path_loss_db(dist(pos, *sp), 0.0);
                let noise = lin_to_db(
                    db_to_lin(channel.noise_floor_dbm) + db_to_lin(power - pl),
                );
                window(id, *sp, noise, Some(1.0), 10)
            })
            .collect()
    }

    #[test]
    fn symmetric_square_localizes_to_center() {
        let channel = ChannelModel::default();
        let sensors =
            [((0.0, 0.0), "s1"), ((40.0, 0.0), "s2"), ((0.0, 40.0), "s3"), ((40.0, 40.0), "s4")];
        let windows = synth_windows(&channel, &sensors, (20.0, 20.0), 10.0);
        let loc = localize_jammer(&windows, channel.noise_floor_dbm, &channel, &cfg()).unwrap();
        let err = dist(loc.position, (20.0, 20.0));
        assert!(err <= 0.1 + 1e-9, "error {err} m at {:?}", loc.position);
        assert_eq!(loc.qualifying_sensors, 4);
    }

    #[test]
    fn jammer_at_sensor_position_found_within_grid_resolution() {
        let channel = ChannelModel::default();
        let sensors =
            [((0.0, 0.0), "s1"), ((40.0, 0.0), "s2"), ((0.0, 40.0), "s3"), ((40.0, 40.0), "s4")];
        let truth = (40.0, 40.0);
        let windows = synth_windows(&channel, &sensors, truth, 10.0);
        // that sensor must show the maximal excess
        let max = windows
            .iter()
            .max_by(|a, b| a.noise_floor_dbm.partial_cmp(&b.noise_floor_dbm).unwrap())
            .unwrap();
        assert_eq!(max.sensor_id, "s4");
        let loc = localize_jammer(&windows, channel.noise_floor_dbm, &channel, &cfg()).unwrap();
        let err = dist(loc.position, truth);
        assert!(err <= 1.0, "error {err} m at {:?}", loc.position);
    }

    #[test]
    fn off_center_jammer_recovered() {
        let channel = ChannelModel::default();
        let sensors =
            [((0.0, 0.0), "s1"), ((40.0, 0.0), "s2"), ((0.0, 40.0), "s3"), ((40.0, 40.0), "s4")];
        let truth = (27.0, 9.0);
        let windows = synth_windows(&channel, &sensors, truth, 5.0);
        let loc = localize_jammer(&windows, channel.noise_floor_dbm, &channel, &cfg()).unwrap();
        let err = dist(loc.position, truth);
        assert!(err <= 1.0, "error {err} m at {:?}", loc.position);
        assert!((loc.power_dbm - 5.0).abs() < 1.0, "power {}", loc.power_dbm);
    }

    #[test]
    fn two_qualifying_sensors_insufficient() {
        let channel = ChannelModel::default();
        let windows = vec![
            window("s1", (0.0, 0.0), -70.0, Some(1.0), 10),
            window("s2", (40.0, 0.0), -75.0, Some(1.0), 10),
            window("s3", (0.0, 40.0), -94.0, Some(1.0), 10), // no rise
        ];
        assert_eq!(
            localize_jammer(&windows, channel.noise_floor_dbm, &channel, &cfg()).unwrap_err(),
            LocalizeError::InsufficientSensors
        );
    }
}
