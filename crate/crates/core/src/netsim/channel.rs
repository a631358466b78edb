//! Wireless channel model.
//!
//! Log-distance path loss with optional shadowing, SINR from linear
//! power composition, and a logistic delivery-probability curve. The
//! same closed forms drive packet delivery, sensor noise floors and
//! jammer localization, so detector predictions and simulator behavior
//! agree exactly when shadowing is off.

use crate::time::SimTime;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Sum of two powers expressed in dBm.
pub fn dbm_add(a_dbm: f64, b_dbm: f64) -> f64 {
    lin_to_db(db_to_lin(a_dbm) + db_to_lin(b_dbm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Path loss at the reference distance, dB.
    pub pl0_db: f64,
    /// Reference distance d0, meters.
    pub ref_distance_m: f64,
    /// Path loss exponent n (>= 2).
    pub path_loss_exp: f64,
    /// Thermal noise floor, dBm.
    pub noise_floor_dbm: f64,
    /// Log-normal shadowing sigma, dB (0 disables).
    pub shadowing_sigma_db: f64,
    /// SINR at which delivery probability is 0.5, dB.
    pub sinr_mid_db: f64,
    /// Logistic slope k.
    pub sinr_slope: f64,
    /// Link-layer retransmissions per message.
    pub retransmission_limit: u32,
    /// Propagation plus processing latency.
    pub base_latency: SimTime,
    /// Jitter is uniform in [0, jitter_max].
    pub jitter_max: SimTime,
    /// Gap between an attempt failing and the next attempt.
    pub retransmit_delay: SimTime,
    /// Test/scenario override: fixed Bernoulli loss probability instead
    /// of the SINR curve.
    pub loss_probability: Option<f64>,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            pl0_db: 40.0,
            ref_distance_m: 1.0,
            path_loss_exp: 2.7,
            noise_floor_dbm: -94.0,
            shadowing_sigma_db: 0.0,
            sinr_mid_db: 5.0,
            sinr_slope: 1.0,
            retransmission_limit: 3,
            base_latency: SimTime::from_ms(1),
            jitter_max: SimTime::from_us(500),
            retransmit_delay: SimTime::from_ms(2),
            loss_probability: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeliveryOutcome {
    Delivered { rssi_dbm: f64 },
    Dropped,
}

impl ChannelModel {
    /// Log-distance path loss. Distances below the reference distance
    /// are clamped to it.
    pub fn path_loss_db(&self, distance_m: f64, shadowing_db: f64) -> f64 {
        let d = distance_m.max(self.ref_distance_m);
        self.pl0_db + 10.0 * self.path_loss_exp * (d / self.ref_distance_m).log10() + shadowing_db
    }

    /// SINR against noise plus interference, all dB-domain inputs.
    /// `interference_dbm` of -inf means none.
    pub fn sinr_db(&self, rx_power_dbm: f64, interference_dbm: f64) -> f64 {
        let denom = db_to_lin(self.noise_floor_dbm) + db_to_lin(interference_dbm);
        rx_power_dbm - lin_to_db(denom)
    }

    /// Logistic delivery probability, nondecreasing in SINR.
    pub fn delivery_probability(&self, sinr_db: f64) -> f64 {
        1.0 / (1.0 + (-self.sinr_slope * (sinr_db - self.sinr_mid_db)).exp())
    }

    pub fn delivery_outcome(
        &self,
        rx_power_dbm: f64,
        interference_dbm: f64,
        rng: &mut impl Rng,
    ) -> DeliveryOutcome {
        let p = match self.loss_probability {
            Some(loss) => 1.0 - loss,
            None => self.delivery_probability(self.sinr_db(rx_power_dbm, interference_dbm)),
        };
        if rng.gen::<f64>() < p {
            DeliveryOutcome::Delivered { rssi_dbm: rx_power_dbm }
        } else {
            DeliveryOutcome::Dropped
        }
    }

    /// Gaussian shadowing sample (Box-Muller); zero when sigma is zero.
    pub fn shadowing_sample(&self, rng: &mut impl Rng) -> f64 {
        if self.shadowing_sigma_db == 0.0 {
            return 0.0;
        }
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * self.shadowing_sigma_db
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::subrng;

    #[test]
    fn path_loss_reference_point() {
        let ch = ChannelModel::default();
        assert!((ch.path_loss_db(1.0, 0.0) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn path_loss_decade_slope() {
        // oracle: 10 * n * log10(10) = 20 dB for n = 2
        let ch = ChannelModel { path_loss_exp: 2.0, ..ChannelModel::default() };
        let expect = 40.0 + 10.0 * 2.0 * (10f64).log10();
        assert!((ch.path_loss_db(10.0, 0.0) - expect).abs() < 1e-12);
        assert!((ch.path_loss_db(10.0, 0.0) - 60.0).abs() < 1e-12);
    }

    #[test]
    fn path_loss_monotone_and_clamped() {
        let ch = ChannelModel::default();
        assert!(ch.path_loss_db(20.0, 0.0) >= ch.path_loss_db(10.0, 0.0));
        assert_eq!(ch.path_loss_db(0.1, 0.0), ch.path_loss_db(1.0, 0.0));
    }

    #[test]
    fn logistic_midpoint_and_asymptotes() {
        let ch = ChannelModel::default();
        assert!((ch.delivery_probability(ch.sinr_mid_db) - 0.5).abs() < 1e-12);
        assert!(ch.delivery_probability(100.0) > 0.999_999);
        assert!(ch.delivery_probability(-100.0) < 1e-6);
    }

    #[test]
    fn interference_dominates_signal() {
        let ch = ChannelModel::default();
        // interference 60 dB over the signal pushes SINR deep negative
        let sinr = ch.sinr_db(-60.0, 0.0);
        assert!(sinr < -50.0);
        assert!(ch.delivery_probability(sinr) < 1e-6);
    }

    #[test]
    fn empirical_delivery_rate_matches_closed_form() {
        let ch = ChannelModel::default();
        let sinr = 6.0;
        let p = ch.delivery_probability(sinr);
        // rx power making that SINR with no interference
        let rx = sinr + ch.noise_floor_dbm;
        let mut rng = subrng(9, "channel-mc");
        let n = 100_000;
        let mut delivered = 0;
        for _ in 0..n {
            if matches!(
                ch.delivery_outcome(rx, f64::NEG_INFINITY, &mut rng),
                DeliveryOutcome::Delivered { .. }
            ) {
                delivered += 1;
            }
        }
        let rate = delivered as f64 / n as f64;
        assert!((rate - p).abs() < 0.01, "rate {rate} vs p {p}");
    }

    #[test]
    fn dbm_sum() {
        // equal powers sum to +3.0103 dB
        assert!((dbm_add(-94.0, -94.0) - (-94.0 + 10.0 * 2f64.log10())).abs() < 1e-9);
    }
}
