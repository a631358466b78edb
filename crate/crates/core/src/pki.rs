//! Miniature certificate authority, online status responder and signed
//! revocation lists.
//!
//! Single-level hierarchy: one CA signs device and service certificates
//! directly, no intermediates. Certificate status lives in the CA
//! registry; the status responder and revocation lists are two views of
//! the same registry. All validity checks run against the simulation
//! clock.

use crate::crypto::{SigningKey, VerifyingKey};
use crate::time::SimTime;
use crate::wire::{Decoder, Encoder, WireError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectKind {
    Device,
    Service,
    Ca,
}

impl SubjectKind {
    fn tag(self) -> u8 {
        match self {
            SubjectKind::Device => 0,
            SubjectKind::Service => 1,
            SubjectKind::Ca => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self, WireError> {
        match t {
            0 => Ok(SubjectKind::Device),
            1 => Ok(SubjectKind::Service),
            2 => Ok(SubjectKind::Ca),
            other => Err(WireError::BadTag(other)),
        }
    }
}

impl fmt::Display for SubjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubjectKind::Device => f.write_str("device"),
            SubjectKind::Service => f.write_str("service"),
            SubjectKind::Ca => f.write_str("ca"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RevocationReason {
    Compromise,
    Policy,
    Exclusion,
}

impl fmt::Display for RevocationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RevocationReason::Compromise => f.write_str("compromise"),
            RevocationReason::Policy => f.write_str("policy"),
            RevocationReason::Exclusion => f.write_str("exclusion"),
        }
    }
}

impl std::str::FromStr for RevocationReason {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "compromise" => Ok(RevocationReason::Compromise),
            "policy" => Ok(RevocationReason::Policy),
            "exclusion" => Ok(RevocationReason::Exclusion),
            _ => Err(()),
        }
    }
}

/// Certificate status lattice. `Revoked` is terminal; `Suspended` can
/// return to `Good` or advance to `Revoked`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state")]
pub enum CertStatus {
    Good,
    Suspended { since: SimTime },
    Revoked { reason: RevocationReason, at: SimTime },
    Unknown,
}

impl CertStatus {
    pub fn is_good(&self) -> bool {
        matches!(self, CertStatus::Good)
    }
}

impl fmt::Display for CertStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertStatus::Good => f.write_str("good"),
            CertStatus::Suspended { .. } => f.write_str("suspended"),
            CertStatus::Revoked { reason, .. } => write!(f, "revoked:{reason}"),
            CertStatus::Unknown => f.write_str("unknown"),
        }
    }
}

/// Requested status transition; timestamps are filled from the call's
/// `now`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusChange {
    Good,
    Suspended,
    Revoked(RevocationReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub serial: u64,
    pub subject_kind: SubjectKind,
    pub subject_id: String,
    pub supi_binding: Option<String>,
    #[serde(with = "crate::serde_hex")]
    pub public_key: Vec<u8>,
    pub not_before: SimTime,
    pub not_after: SimTime,
    pub issuer_id: String,
    #[serde(with = "crate::serde_hex")]
    pub signature: Vec<u8>,
}

impl Certificate {
    /// Canonical encoding of everything the issuer signs.
    pub fn to_be_signed(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.serial)
            .u8(self.subject_kind.tag())
            .str(&self.subject_id)
            .opt_str(self.supi_binding.as_deref())
            .bytes(&self.public_key)
            .u64(self.not_before.as_us())
            .u64(self.not_after.as_us())
            .str(&self.issuer_id);
        e.finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(&self.to_be_signed()).bytes(&self.signature);
        e.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut outer = Decoder::new(buf);
        let tbs = outer.bytes()?;
        let signature = outer.bytes()?;
        outer.finish()?;

        let mut d = Decoder::new(&tbs);
        let cert = Certificate {
            serial: d.u64()?,
            subject_kind: SubjectKind::from_tag(d.u8()?)?,
            subject_id: d.str()?,
            supi_binding: d.opt_str()?,
            public_key: d.bytes()?,
            not_before: SimTime::from_us(d.u64()?),
            not_after: SimTime::from_us(d.u64()?),
            issuer_id: d.str()?,
            signature,
        };
        d.finish()?;
        Ok(cert)
    }

    pub fn subject_public_key(&self) -> Result<VerifyingKey, PkiError> {
        VerifyingKey::from_bytes(&self.public_key).map_err(|_| PkiError::MalformedKey)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedIdentity {
    pub subject_kind: SubjectKind,
    pub subject_id: String,
    pub supi_binding: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PkiError {
    #[error("subject {0:?} already holds a live certificate")]
    DuplicateSubject(String),
    #[error("device certificates require a non-empty SUPI binding")]
    MissingSupiBinding,
    #[error("non-device certificates must not carry a SUPI binding")]
    UnexpectedSupiBinding,
    #[error("validity window is empty")]
    EmptyValidityWindow,
    #[error("unknown serial {0}")]
    UnknownSerial(u64),
    #[error("illegal status transition from {0}")]
    IllegalTransition(CertStatus),
    #[error("malformed subject public key")]
    MalformedKey,
}

/// Verification failures, ordered by check sequence: signature, window,
/// status-source freshness, status.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("certificate signature invalid")]
    BadSignature,
    #[error("certificate not yet valid")]
    NotYetValid,
    #[error("certificate expired")]
    Expired,
    #[error("status source older than max staleness")]
    StaleStatusSource,
    #[error("certificate status is {0}")]
    StatusNotGood(CertStatus),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CertRecord {
    cert: Certificate,
    status: CertStatus,
}

/// CA state: issuing key plus the registry of every issued certificate
/// and its current status. Serials increase strictly from 1.
#[derive(Clone, Serialize, Deserialize)]
pub struct CertificateAuthority {
    ca_id: String,
    #[serde(with = "crate::serde_seed")]
    signing_key: SigningKey,
    next_serial: u64,
    records: BTreeMap<u64, CertRecord>,
}

impl CertificateAuthority {
    pub fn new(ca_id: impl Into<String>, signing_key: SigningKey) -> Self {
        CertificateAuthority {
            ca_id: ca_id.into(),
            signing_key,
            next_serial: 1,
            records: BTreeMap::new(),
        }
    }

    pub fn ca_id(&self) -> &str {
        &self.ca_id
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.signing_key.verifying_key()
    }

    pub fn issue(
        &mut self,
        subject_kind: SubjectKind,
        subject_id: &str,
        supi_binding: Option<&str>,
        public_key: &[u8],
        not_before: SimTime,
        not_after: SimTime,
    ) -> Result<Certificate, PkiError> {
        if not_before >= not_after {
            return Err(PkiError::EmptyValidityWindow);
        }
        match subject_kind {
            SubjectKind::Device => {
                if supi_binding.is_none_or(str::is_empty) {
                    return Err(PkiError::MissingSupiBinding);
                }
            }
            _ => {
                if supi_binding.is_some() {
                    return Err(PkiError::UnexpectedSupiBinding);
                }
            }
        }
        let live_dup = self.records.values().any(|r| {
            r.cert.subject_id == subject_id && !matches!(r.status, CertStatus::Revoked { .. })
        });
        if live_dup {
            return Err(PkiError::DuplicateSubject(subject_id.to_string()));
        }

        let mut cert = Certificate {
            serial: self.next_serial,
            subject_kind,
            subject_id: subject_id.to_string(),
            supi_binding: supi_binding.map(str::to_string),
            public_key: public_key.to_vec(),
            not_before,
            not_after,
            issuer_id: self.ca_id.clone(),
            signature: Vec::new(),
        };
        cert.signature = self.signing_key.sign(&cert.to_be_signed());
        self.next_serial += 1;
        self.records.insert(
            cert.serial,
            CertRecord { cert: cert.clone(), status: CertStatus::Good },
        );
        Ok(cert)
    }

    /// Applies a status transition. Identity transitions are no-ops;
    /// anything out of `Revoked` is rejected.
    pub fn set_status(
        &mut self,
        serial: u64,
        change: StatusChange,
        now: SimTime,
    ) -> Result<CertStatus, PkiError> {
        let rec = self
            .records
            .get_mut(&serial)
            .ok_or(PkiError::UnknownSerial(serial))?;
        let next = match (rec.status, change) {
            (CertStatus::Revoked { .. }, _) => {
                return Err(PkiError::IllegalTransition(rec.status));
            }
            (CertStatus::Suspended { since }, StatusChange::Suspended) => {
                CertStatus::Suspended { since }
            }
            (_, StatusChange::Good) => CertStatus::Good,
            (_, StatusChange::Suspended) => CertStatus::Suspended { since: now },
            (_, StatusChange::Revoked(reason)) => CertStatus::Revoked { reason, at: now },
        };
        rec.status = next;
        Ok(next)
    }

    pub fn status_of(&self, serial: u64) -> CertStatus {
        self.records
            .get(&serial)
            .map(|r| r.status)
            .unwrap_or(CertStatus::Unknown)
    }

    pub fn certificate(&self, serial: u64) -> Option<&Certificate> {
        self.records.get(&serial).map(|r| &r.cert)
    }

    pub fn serials(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.keys().copied()
    }

    /// Signed list of every currently suspended or revoked serial,
    /// sorted by serial.
    pub fn build_revocation_list(&self, now: SimTime) -> RevocationList {
        let entries: Vec<(u64, CertStatus)> = self
            .records
            .iter()
            .filter(|(_, r)| !matches!(r.status, CertStatus::Good))
            .map(|(s, r)| (*s, r.status))
            .collect();
        let mut list = RevocationList {
            issuer_id: self.ca_id.clone(),
            issued_at: now,
            entries,
            signature: Vec::new(),
        };
        list.signature = self.signing_key.sign(&list.to_be_signed());
        list
    }
}

impl fmt::Debug for CertificateAuthority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CertificateAuthority")
            .field("ca_id", &self.ca_id)
            .field("next_serial", &self.next_serial)
            .field("records", &self.records.len())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevocationList {
    pub issuer_id: String,
    pub issued_at: SimTime,
    pub entries: Vec<(u64, CertStatus)>,
    pub signature: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("revocation list parse error at line {line}: {msg}")]
pub struct CrlParseError {
    pub line: usize,
    pub msg: String,
}

impl RevocationList {
    fn to_be_signed(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str(&self.issuer_id).u64(self.issued_at.as_us());
        e.u32(self.entries.len() as u32);
        for (serial, status) in &self.entries {
            e.u64(*serial);
            match status {
                CertStatus::Suspended { since } => {
                    e.u8(1).u64(since.as_us());
                }
                CertStatus::Revoked { reason, at } => {
                    let r = match reason {
                        RevocationReason::Compromise => 0u8,
                        RevocationReason::Policy => 1,
                        RevocationReason::Exclusion => 2,
                    };
                    e.u8(2).u8(r).u64(at.as_us());
                }
                // good/unknown never appear in a list
                CertStatus::Good | CertStatus::Unknown => {
                    e.u8(0);
                }
            }
        }
        e.finish()
    }

    pub fn verify(&self, issuer_key: &VerifyingKey) -> bool {
        let sorted = self.entries.windows(2).all(|w| w[0].0 < w[1].0);
        sorted && issuer_key.verify(&self.to_be_signed(), &self.signature)
    }

    /// Status implied by the list: listed serials report their listed
    /// status, everything else reports `Good` (a revocation list cannot
    /// distinguish unknown serials).
    pub fn status_of(&self, serial: u64) -> CertStatus {
        self.entries
            .iter()
            .find(|(s, _)| *s == serial)
            .map(|(_, st)| *st)
            .unwrap_or(CertStatus::Good)
    }

    /// Line format: `serial<TAB>status<TAB>timestamp`, a `#`-prefixed
    /// header carrying issuer and issue time, and a trailing hex
    /// signature line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# issuer={} issued_at={}\n",
            self.issuer_id,
            self.issued_at.as_us()
        ));
        for (serial, status) in &self.entries {
            let ts = match status {
                CertStatus::Suspended { since } => since.as_us(),
                CertStatus::Revoked { at, .. } => at.as_us(),
                _ => 0,
            };
            out.push_str(&format!("{serial}\t{status}\t{ts}\n"));
        }
        out.push_str(&hex::encode(&self.signature));
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CrlParseError> {
        let err = |line: usize, msg: &str| CrlParseError { line, msg: msg.to_string() };
        let mut issuer_id = None;
        let mut issued_at = None;
        let mut entries = Vec::new();
        let mut signature = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("issuer", v)) => issuer_id = Some(v.to_string()),
                        Some(("issued_at", v)) => {
                            let us = v
                                .parse::<u64>()
                                .map_err(|_| err(line_no, "bad issued_at"))?;
                            issued_at = Some(SimTime::from_us(us));
                        }
                        _ => return Err(err(line_no, "unknown header field")),
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() == 1 {
                // trailing signature line
                let sig = hex::decode(cols[0]).map_err(|_| err(line_no, "bad signature hex"))?;
                signature = Some(sig);
                continue;
            }
            if cols.len() != 3 {
                return Err(err(line_no, "expected serial<TAB>status<TAB>timestamp"));
            }
            let serial: u64 = cols[0].parse().map_err(|_| err(line_no, "bad serial"))?;
            let ts =
                SimTime::from_us(cols[2].parse().map_err(|_| err(line_no, "bad timestamp"))?);
            let status = if cols[1] == "suspended" {
                CertStatus::Suspended { since: ts }
            } else if let Some(reason) = cols[1].strip_prefix("revoked:") {
                let reason = reason
                    .parse::<RevocationReason>()
                    .map_err(|_| err(line_no, "bad revocation reason"))?;
                CertStatus::Revoked { reason, at: ts }
            } else {
                return Err(err(line_no, "bad status"));
            };
            entries.push((serial, status));
        }

        Ok(RevocationList {
            issuer_id: issuer_id.ok_or_else(|| err(0, "missing issuer header"))?,
            issued_at: issued_at.ok_or_else(|| err(0, "missing issued_at header"))?,
            entries,
            signature: signature.ok_or_else(|| err(0, "missing signature line"))?,
        })
    }
}

/// Signed point-in-time status answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub serial: u64,
    pub status: CertStatus,
    pub produced_at: SimTime,
    pub responder_id: String,
    #[serde(with = "crate::serde_hex")]
    pub responder_signature: Vec<u8>,
}

impl StatusResponse {
    fn to_be_signed(serial: u64, status: &CertStatus, produced_at: SimTime, id: &str) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(serial).str(&status.to_string());
        match status {
            CertStatus::Suspended { since } => e.u64(since.as_us()),
            CertStatus::Revoked { at, .. } => e.u64(at.as_us()),
            _ => e.u64(0),
        };
        e.u64(produced_at.as_us()).str(id);
        e.finish()
    }

    pub fn verify(&self, responder_key: &VerifyingKey) -> bool {
        let msg = Self::to_be_signed(self.serial, &self.status, self.produced_at, &self.responder_id);
        responder_key.verify(&msg, &self.responder_signature)
    }
}

/// Online status responder. Reads the CA registry, answers with its own
/// signature; unknown serials get a signed `Unknown`.
pub struct StatusResponder {
    responder_id: String,
    key: SigningKey,
}

impl StatusResponder {
    pub fn new(responder_id: impl Into<String>, key: SigningKey) -> Self {
        StatusResponder { responder_id: responder_id.into(), key }
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn query(&self, ca: &CertificateAuthority, serial: u64, now: SimTime) -> StatusResponse {
        let status = ca.status_of(serial);
        let msg = StatusResponse::to_be_signed(serial, &status, now, &self.responder_id);
        StatusResponse {
            serial,
            status,
            produced_at: now,
            responder_id: self.responder_id.clone(),
            responder_signature: self.key.sign(&msg),
        }
    }
}

/// Where `verify_certificate` gets its revocation status from.
pub enum StatusSource<'a> {
    /// Live responder backed by the CA registry.
    Responder {
        responder: &'a StatusResponder,
        ca: &'a CertificateAuthority,
    },
    /// Offline list; rejected once older than `max_staleness`.
    List {
        list: &'a RevocationList,
        max_staleness: SimTime,
    },
}

/// Default revocation-list staleness bound: 60 simulated seconds.
pub const DEFAULT_MAX_STALENESS: SimTime = SimTime::from_secs(60);

/// Full certificate check: issuer signature, validity window, status.
pub fn verify_certificate(
    cert: &Certificate,
    trust_anchor: &VerifyingKey,
    now: SimTime,
    source: &StatusSource<'_>,
) -> Result<VerifiedIdentity, VerifyError> {
    if !trust_anchor.verify(&cert.to_be_signed(), &cert.signature) {
        return Err(VerifyError::BadSignature);
    }
    if now < cert.not_before {
        return Err(VerifyError::NotYetValid);
    }
    if now > cert.not_after {
        return Err(VerifyError::Expired);
    }
    let status = match source {
        StatusSource::Responder { responder, ca } => responder.query(ca, cert.serial, now).status,
        StatusSource::List { list, max_staleness } => {
            if now.saturating_sub(list.issued_at) > *max_staleness {
                return Err(VerifyError::StaleStatusSource);
            }
            list.status_of(cert.serial)
        }
    };
    if !status.is_good() {
        return Err(VerifyError::StatusNotGood(status));
    }
    Ok(VerifiedIdentity {
        subject_kind: cert.subject_kind,
        subject_id: cert.subject_id.clone(),
        supi_binding: cert.supi_binding.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::subrng;

    fn ca() -> CertificateAuthority {
        CertificateAuthority::new("ca-root", SigningKey::from_seed([1u8; 32]))
    }

    fn device_key(n: u8) -> SigningKey {
        SigningKey::from_seed([n; 32])
    }

    fn issue_device(ca: &mut CertificateAuthority, id: &str, supi: &str) -> Certificate {
        ca.issue(
            SubjectKind::Device,
            id,
            Some(supi),
            &device_key(9).verifying_key().to_bytes(),
            SimTime::ZERO,
            SimTime::from_ms(86_400_000),
        )
        .unwrap()
    }

    #[test]
    fn first_issuance_gets_serial_one_and_good_status() {
        let mut ca = ca();
        let cert = issue_device(&mut ca, "robot-01", "001010000000001");
        assert_eq!(cert.serial, 1);
        assert_eq!(ca.status_of(1), CertStatus::Good);
    }

    #[test]
    fn duplicate_live_subject_rejected() {
        let mut ca = ca();
        issue_device(&mut ca, "robot-01", "001010000000001");
        let err = ca
            .issue(
                SubjectKind::Device,
                "robot-01",
                Some("001010000000002"),
                &device_key(9).verifying_key().to_bytes(),
                SimTime::ZERO,
                SimTime::from_ms(1000),
            )
            .unwrap_err();
        assert_eq!(err, PkiError::DuplicateSubject("robot-01".into()));
    }

    #[test]
    fn reissue_allowed_after_revocation() {
        let mut ca = ca();
        let cert = issue_device(&mut ca, "robot-01", "001010000000001");
        ca.set_status(cert.serial, StatusChange::Revoked(RevocationReason::Policy), SimTime::ZERO)
            .unwrap();
        let again = issue_device(&mut ca, "robot-01", "001010000000001");
        assert_eq!(again.serial, 2);
    }

    #[test]
    fn device_without_supi_rejected() {
        let mut ca = ca();
        let err = ca
            .issue(
                SubjectKind::Device,
                "robot-01",
                None,
                &device_key(9).verifying_key().to_bytes(),
                SimTime::ZERO,
                SimTime::from_ms(1000),
            )
            .unwrap_err();
        assert_eq!(err, PkiError::MissingSupiBinding);
        let err = ca
            .issue(
                SubjectKind::Device,
                "robot-01",
                Some(""),
                &device_key(9).verifying_key().to_bytes(),
                SimTime::ZERO,
                SimTime::from_ms(1000),
            )
            .unwrap_err();
        assert_eq!(err, PkiError::MissingSupiBinding);
    }

    #[test]
    fn issued_signature_verifies_over_canonical_encoding() {
        let mut ca = ca();
        let cert = issue_device(&mut ca, "robot-01", "001010000000001");
        // independent oracle: recompute the signature with the CA key
        let oracle = SigningKey::from_seed([1u8; 32]).sign(&cert.to_be_signed());
        assert_eq!(oracle, cert.signature);
        assert!(ca.public_key().verify(&cert.to_be_signed(), &cert.signature));
    }

    #[test]
    fn status_lattice_walk() {
        let mut ca = ca();
        let c = issue_device(&mut ca, "robot-01", "001010000000001");
        let s = c.serial;
        ca.set_status(s, StatusChange::Suspended, SimTime::from_ms(5)).unwrap();
        assert_eq!(ca.status_of(s), CertStatus::Suspended { since: SimTime::from_ms(5) });
        ca.set_status(s, StatusChange::Good, SimTime::from_ms(6)).unwrap();
        assert_eq!(ca.status_of(s), CertStatus::Good);
        ca.set_status(s, StatusChange::Revoked(RevocationReason::Compromise), SimTime::from_ms(7))
            .unwrap();
        let err = ca.set_status(s, StatusChange::Suspended, SimTime::from_ms(8)).unwrap_err();
        assert!(matches!(err, PkiError::IllegalTransition(_)));
        let err = ca.set_status(s, StatusChange::Good, SimTime::from_ms(8)).unwrap_err();
        assert!(matches!(err, PkiError::IllegalTransition(_)));
    }

    #[test]
    fn unknown_serial_errors_on_set_but_answers_unknown_on_query() {
        let mut ca = ca();
        assert_eq!(
            ca.set_status(999, StatusChange::Suspended, SimTime::ZERO).unwrap_err(),
            PkiError::UnknownSerial(999)
        );
        let responder = StatusResponder::new("ocsp-1", SigningKey::from_seed([2u8; 32]));
        let resp = responder.query(&ca, 999, SimTime::from_ms(3));
        assert_eq!(resp.status, CertStatus::Unknown);
        assert!(resp.verify(&responder.public_key()));
    }

    #[test]
    fn responder_echoes_registry_state() {
        let mut ca = ca();
        let c = issue_device(&mut ca, "robot-01", "001010000000001");
        let responder = StatusResponder::new("ocsp-1", SigningKey::from_seed([2u8; 32]));
        assert_eq!(responder.query(&ca, c.serial, SimTime::ZERO).status, CertStatus::Good);
        ca.set_status(c.serial, StatusChange::Revoked(RevocationReason::Compromise), SimTime::from_ms(7))
            .unwrap();
        let resp = responder.query(&ca, c.serial, SimTime::from_ms(8));
        assert_eq!(
            resp.status,
            CertStatus::Revoked { reason: RevocationReason::Compromise, at: SimTime::from_ms(7) }
        );
        assert_eq!(resp.produced_at, SimTime::from_ms(8));
    }

    #[test]
    fn revocation_list_sorted_and_matches_registry() {
        let mut ca = ca();
        for i in 1..=4u8 {
            issue_device(&mut ca, &format!("dev-{i}"), &format!("00101000000000{i}"));
        }
        ca.set_status(3, StatusChange::Revoked(RevocationReason::Policy), SimTime::from_ms(1)).unwrap();
        ca.set_status(1, StatusChange::Suspended, SimTime::from_ms(2)).unwrap();
        let list = ca.build_revocation_list(SimTime::from_ms(10));
        let serials: Vec<u64> = list.entries.iter().map(|(s, _)| *s).collect();
        assert_eq!(serials, vec![1, 3]);
        assert!(list.verify(&ca.public_key()));

        // oracle: membership equals the set of non-good, non-unknown serials
        let responder = StatusResponder::new("ocsp-1", SigningKey::from_seed([2u8; 32]));
        let expect: Vec<u64> = ca
            .serials()
            .filter(|s| {
                let st = responder.query(&ca, *s, SimTime::from_ms(10)).status;
                !st.is_good() && st != CertStatus::Unknown
            })
            .collect();
        assert_eq!(serials, expect);
    }

    #[test]
    fn empty_revocation_list_still_signed() {
        let ca = ca();
        let list = ca.build_revocation_list(SimTime::from_ms(1));
        assert!(list.entries.is_empty());
        assert!(list.verify(&ca.public_key()));
    }

    #[test]
    fn revocation_list_text_roundtrip() {
        let mut ca = ca();
        issue_device(&mut ca, "a", "001010000000001");
        issue_device(&mut ca, "b", "001010000000002");
        ca.set_status(1, StatusChange::Suspended, SimTime::from_ms(2)).unwrap();
        ca.set_status(2, StatusChange::Revoked(RevocationReason::Exclusion), SimTime::from_ms(3))
            .unwrap();
        let list = ca.build_revocation_list(SimTime::from_ms(10));
        let text = list.to_text();
        let parsed = RevocationList::from_text(&text).unwrap();
        assert_eq!(parsed, list);
        assert!(parsed.verify(&ca.public_key()));
    }

    #[test]
    fn revocation_list_text_rejects_garbage_with_line_number() {
        let err = RevocationList::from_text("# issuer=x issued_at=0\nnot-a-serial\tgood\t0\nff\n")
            .unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn verify_certificate_happy_path_and_failures() {
        let mut ca = ca();
        let cert = issue_device(&mut ca, "robot-01", "001010000000001");
        let responder = StatusResponder::new("ocsp-1", SigningKey::from_seed([2u8; 32]));
        let anchor = ca.public_key();

        let src = StatusSource::Responder { responder: &responder, ca: &ca };
        let id = verify_certificate(&cert, &anchor, SimTime::from_ms(1), &src).unwrap();
        assert_eq!(id.subject_id, "robot-01");
        assert_eq!(id.supi_binding.as_deref(), Some("001010000000001"));

        assert_eq!(
            verify_certificate(&cert, &anchor, SimTime::from_ms(86_400_001), &src).unwrap_err(),
            VerifyError::Expired
        );

        let mut early = cert.clone();
        early.not_before = SimTime::from_ms(10);
        early.signature = SigningKey::from_seed([1u8; 32]).sign(&early.to_be_signed());
        assert_eq!(
            verify_certificate(&early, &anchor, SimTime::from_ms(1), &src).unwrap_err(),
            VerifyError::NotYetValid
        );

        ca.set_status(cert.serial, StatusChange::Suspended, SimTime::from_ms(5)).unwrap();
        let src = StatusSource::Responder { responder: &responder, ca: &ca };
        assert!(matches!(
            verify_certificate(&cert, &anchor, SimTime::from_ms(6), &src).unwrap_err(),
            VerifyError::StatusNotGood(CertStatus::Suspended { .. })
        ));
    }

    #[test]
    fn verify_against_list_enforces_staleness() {
        let mut ca = ca();
        let cert = issue_device(&mut ca, "robot-01", "001010000000001");
        let list = ca.build_revocation_list(SimTime::ZERO);
        let anchor = ca.public_key();

        let src = StatusSource::List { list: &list, max_staleness: DEFAULT_MAX_STALENESS };
        assert!(verify_certificate(&cert, &anchor, SimTime::from_secs(59), &src).is_ok());
        assert_eq!(
            verify_certificate(&cert, &anchor, SimTime::from_secs(61), &src).unwrap_err(),
            VerifyError::StaleStatusSource
        );
    }

    #[test]
    fn single_bit_flips_break_verification() {
        let mut ca = ca();
        let cert = issue_device(&mut ca, "robot-01", "001010000000001");
        let responder = StatusResponder::new("ocsp-1", SigningKey::from_seed([2u8; 32]));
        let anchor = ca.public_key();
        let encoded = cert.encode();

        // sampled single-bit mutation of the canonical encoding
        let mut rng = subrng(11, "pki-bitflip");
        for _ in 0..64 {
            use rand::Rng;
            let bit = rng.gen_range(0..encoded.len() * 8);
            let mut mutated = encoded.clone();
            mutated[bit / 8] ^= 1 << (bit % 8);
            let outcome = match Certificate::decode(&mutated) {
                Ok(c) => verify_certificate(
                    &c,
                    &anchor,
                    SimTime::from_ms(1),
                    &StatusSource::Responder { responder: &responder, ca: &ca },
                )
                .map(|_| ()),
                Err(_) => Err(VerifyError::BadSignature),
            };
            assert!(outcome.is_err(), "bit {bit} mutation was accepted");
        }
    }

    #[test]
    fn revoked_stays_failed_for_all_later_times() {
        let mut ca = ca();
        let cert = issue_device(&mut ca, "robot-01", "001010000000001");
        ca.set_status(cert.serial, StatusChange::Revoked(RevocationReason::Exclusion), SimTime::from_ms(7))
            .unwrap();
        let responder = StatusResponder::new("ocsp-1", SigningKey::from_seed([2u8; 32]));
        let anchor = ca.public_key();
        for t in [8u64, 100, 10_000, 86_400_000] {
            let src = StatusSource::Responder { responder: &responder, ca: &ca };
            assert!(matches!(
                verify_certificate(&cert, &anchor, SimTime::from_ms(t), &src).unwrap_err(),
                VerifyError::StatusNotGood(CertStatus::Revoked { .. })
            ));
        }
    }

    #[test]
    fn certificate_encode_decode_roundtrip() {
        let mut ca = ca();
        let cert = issue_device(&mut ca, "robot-01", "001010000000001");
        assert_eq!(Certificate::decode(&cert.encode()).unwrap(), cert);
    }
}
