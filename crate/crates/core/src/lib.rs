//! Desk-scale security toolbox for industrial wireless deployments.
//!
//! Everything runs against a deterministic discrete-event simulator:
//!
//! - [`pki`] — miniature certificate authority, status responder,
//!   signed revocation lists
//! - [`auth`] — device registry with identity/SIM binding, periodic
//!   challenge-response mutual authentication, PSK establishment
//! - [`linksec`] — AEAD frame protection with replay windows and
//!   two-pipeline redundant streams with duplicate elimination
//! - [`netsim`] — wireless channel (path loss, SINR-driven drops,
//!   retransmissions, jitter), subscriber core, attack injection
//! - [`detect`] — timing/sequence/wireless/process anomaly detection,
//!   jamming detection and localization
//! - [`respond`] — policy-driven exclusion (certificate suspension or
//!   revocation, SIM blocking) and a hash-chained audit log
//! - [`scenario`] — config parsing, end-to-end engine, metrics
//!
//! A scenario file plus a seed fully determines every artifact byte.

pub mod auth;
pub mod crypto;
pub mod detect;
pub mod linksec;
pub mod netsim;
pub mod pki;
pub mod respond;
pub mod scenario;
pub mod time;
pub mod wire;

/// Hex-encoded `Vec<u8>` fields in JSON artifacts.
pub(crate) mod serde_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(&text).map_err(serde::de::Error::custom)
    }
}

/// Hex-encoded `[u8; 32]` fields.
pub(crate) mod serde_key32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let v = hex::decode(&text).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

/// Signing keys persist as their 32-byte seed (admin state files only).
pub(crate) mod serde_seed {
    use crate::crypto::SigningKey;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &SigningKey, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(key.seed_bytes()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SigningKey, D::Error> {
        let text = String::deserialize(d)?;
        let v = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let seed: [u8; 32] = v
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32-byte seed"))?;
        Ok(SigningKey::from_seed(seed))
    }
}
