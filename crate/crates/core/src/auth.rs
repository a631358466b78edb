//! Industrial device authentication service.
//!
//! Device registry binding device identity to SIM subscription (SUPI)
//! and certificate, a three-message nonce-and-signature mutual entity
//! authentication protocol with ephemeral key agreement folded into the
//! signed transcript, and pre-shared-key derivation for downstream
//! link protection.
//!
//! Message flow:
//!
//! ```text
//! service -> device : service_id, service_nonce, service_eph_pub
//! device  -> service: device_nonce, device_id, supi, cert,
//!                     device_eph_pub, sig_d over transcript
//! service -> device : service cert, nonce echoes, sig_s over
//!                     transcript-hash || "confirm"
//! ```
//!
//! The transcript hash covers both nonces, both identities, the SUPI and
//! both ephemeral shares in canonical order, so either side detects any
//! substitution. Service nonces are single-use with a bounded lifetime;
//! replaying any captured message yields a `ReplayedNonce` rejection.

use crate::crypto::{hkdf32, sha256, KexPublic, KexSecret, SigningKey, VerifyingKey};
use crate::pki::{verify_certificate, Certificate, CertificateAuthority, StatusSource, SubjectKind, VerifyError};
use crate::time::SimTime;
use crate::wire::{Decoder, Encoder, WireError};
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const NONCE_LEN: usize = 16;

/// Registry entry binding the three identifiers a device presents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceIdentity {
    pub device_id: String,
    pub supi: String,
    pub cert_serial: u64,
}

/// Software stand-in for a hardware security token: holds the device
/// signing key and only ever emits signatures, never the key itself.
pub struct TokenStore {
    device_id: String,
    key: SigningKey,
    sealed: bool,
}

impl TokenStore {
    pub fn new(device_id: impl Into<String>, key: SigningKey) -> Self {
        TokenStore { device_id: device_id.into(), key, sealed: true }
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        self.key.sign(msg)
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }
}

#[derive(Debug, Clone)]
pub struct AuthConfig {
    /// How often every registered device must re-authenticate.
    pub periodic_interval: SimTime,
    /// Lifetime of an outstanding challenge nonce.
    pub nonce_ttl: SimTime,
    /// Established sessions expire after this; defaults to twice the
    /// periodic interval so re-authentication actually matters.
    pub session_lifetime: SimTime,
    /// Handshake attempts per periodic cycle.
    pub retry_budget: u32,
    /// Backoff before each retry attempt.
    pub retry_backoff: Vec<SimTime>,
}

impl Default for AuthConfig {
    fn default() -> Self {
        let interval = SimTime::from_secs(30);
        AuthConfig {
            periodic_interval: interval,
            nonce_ttl: SimTime::from_secs(10),
            session_lifetime: interval * 2,
            retry_budget: 3,
            retry_backoff: vec![SimTime::from_ms(100), SimTime::from_ms(200), SimTime::from_ms(400)],
        }
    }
}

impl AuthConfig {
    pub fn with_interval(interval: SimTime) -> Self {
        AuthConfig {
            periodic_interval: interval,
            session_lifetime: interval * 2,
            ..AuthConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionState {
    Challenged,
    Responded,
    Established,
    Failed(AuthFailure),
}

/// Handshake rejection reasons, surfaced verbatim in alerts and logs.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthFailure {
    #[error("certificate invalid: {0}")]
    CertInvalid(String),
    #[error("certificate status not good")]
    StatusNotGood,
    #[error("identity/SUPI binding mismatch")]
    BindingMismatch,
    #[error("signature verification failed")]
    BadSignature,
    #[error("replayed or unknown nonce")]
    ReplayedNonce,
    #[error("session expired")]
    SessionExpired,
    #[error("no response within retry budget")]
    Timeout,
    #[error("device not registered")]
    Unregistered,
}

impl AuthFailure {
    pub fn label(&self) -> &'static str {
        match self {
            AuthFailure::CertInvalid(_) => "cert-invalid",
            AuthFailure::StatusNotGood => "status-not-good",
            AuthFailure::BindingMismatch => "binding-mismatch",
            AuthFailure::BadSignature => "bad-signature",
            AuthFailure::ReplayedNonce => "replayed-nonce",
            AuthFailure::SessionExpired => "session-expired",
            AuthFailure::Timeout => "timeout",
            AuthFailure::Unregistered => "unregistered",
        }
    }
}

fn classify_verify_error(e: VerifyError) -> AuthFailure {
    match e {
        VerifyError::StatusNotGood(_) => AuthFailure::StatusNotGood,
        other => AuthFailure::CertInvalid(other.to_string()),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("device {0:?} is not registered")]
    Unregistered(String),
    #[error("(device_id, supi) pair already registered")]
    DuplicateRegistration,
    #[error("certificate supi binding does not match the presented supi")]
    BindingMismatch,
    #[error("unknown certificate serial {0}")]
    UnknownCertificate(u64),
    #[error("certificate {0} is not a device certificate")]
    NotADeviceCertificate(u64),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session {0} is not established")]
    NotEstablished(u64),
}

/// Service-side session record.
pub struct AuthSession {
    pub session_id: u64,
    pub peer_device_id: String,
    pub service_nonce: [u8; NONCE_LEN],
    pub device_nonce: Option<[u8; NONCE_LEN]>,
    pub service_eph_pub: KexPublic,
    pub device_eph_pub: Option<KexPublic>,
    pub transcript_hash: Option<[u8; 32]>,
    pub state: SessionState,
    pub challenged_at: SimTime,
    pub established_at: Option<SimTime>,
    pub expiry: Option<SimTime>,
    service_eph_secret: KexSecret,
    shared_secret: Option<[u8; 32]>,
}

/// Symmetric key both peers derive independently from an established
/// session. Distinct labels give computationally independent keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresharedKey {
    #[serde(with = "crate::serde_key32")]
    pub key: [u8; 32],
    pub label: String,
    pub bound_session: u64,
    pub valid_until: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeMsg {
    pub service_id: String,
    pub service_nonce: [u8; NONCE_LEN],
    pub service_eph_pub: KexPublic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMsg {
    pub device_nonce: [u8; NONCE_LEN],
    pub device_id: String,
    pub supi: String,
    pub cert: Certificate,
    pub device_eph_pub: KexPublic,
    pub service_nonce: [u8; NONCE_LEN],
    pub sig_d: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfirmMsg {
    pub service_id: String,
    pub service_cert: Certificate,
    pub service_nonce: [u8; NONCE_LEN],
    pub device_nonce: [u8; NONCE_LEN],
    pub sig_s: Vec<u8>,
}

const TAG_CHALLENGE: u8 = 1;
const TAG_RESPONSE: u8 = 2;
const TAG_CONFIRM: u8 = 3;

impl ChallengeMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u8(TAG_CHALLENGE)
            .str(&self.service_id)
            .bytes(&self.service_nonce)
            .bytes(&self.service_eph_pub.to_bytes());
        e.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(buf);
        let tag = d.u8()?;
        if tag != TAG_CHALLENGE {
            return Err(WireError::BadTag(tag));
        }
        let service_id = d.str()?;
        let nonce = d.bytes()?;
        let pubkey = d.bytes()?;
        d.finish()?;
        Ok(ChallengeMsg {
            service_id,
            service_nonce: nonce.try_into().map_err(|_| WireError::BadLength(16))?,
            service_eph_pub: KexPublic::from_bytes(&pubkey).map_err(|_| WireError::BadLength(32))?,
        })
    }
}

impl ResponseMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u8(TAG_RESPONSE)
            .bytes(&self.device_nonce)
            .str(&self.device_id)
            .str(&self.supi)
            .bytes(&self.cert.encode())
            .bytes(&self.device_eph_pub.to_bytes())
            .bytes(&self.service_nonce)
            .bytes(&self.sig_d);
        e.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(buf);
        let tag = d.u8()?;
        if tag != TAG_RESPONSE {
            return Err(WireError::BadTag(tag));
        }
        let device_nonce = d.bytes()?;
        let device_id = d.str()?;
        let supi = d.str()?;
        let cert = Certificate::decode(&d.bytes()?)?;
        let eph = d.bytes()?;
        let service_nonce = d.bytes()?;
        let sig_d = d.bytes()?;
        d.finish()?;
        Ok(ResponseMsg {
            device_nonce: device_nonce.try_into().map_err(|_| WireError::BadLength(16))?,
            device_id,
            supi,
            cert,
            device_eph_pub: KexPublic::from_bytes(&eph).map_err(|_| WireError::BadLength(32))?,
            service_nonce: service_nonce.try_into().map_err(|_| WireError::BadLength(16))?,
            sig_d,
        })
    }
}

impl ConfirmMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u8(TAG_CONFIRM)
            .str(&self.service_id)
            .bytes(&self.service_cert.encode())
            .bytes(&self.service_nonce)
            .bytes(&self.device_nonce)
            .bytes(&self.sig_s);
        e.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(buf);
        let tag = d.u8()?;
        if tag != TAG_CONFIRM {
            return Err(WireError::BadTag(tag));
        }
        let service_id = d.str()?;
        let service_cert = Certificate::decode(&d.bytes()?)?;
        let service_nonce = d.bytes()?;
        let device_nonce = d.bytes()?;
        let sig_s = d.bytes()?;
        d.finish()?;
        Ok(ConfirmMsg {
            service_id,
            service_cert,
            service_nonce: service_nonce.try_into().map_err(|_| WireError::BadLength(16))?,
            device_nonce: device_nonce.try_into().map_err(|_| WireError::BadLength(16))?,
            sig_s,
        })
    }
}

/// Transcript hash in canonical order: nonces, identities, SUPI,
/// ephemeral shares.
pub fn transcript_hash(
    service_nonce: &[u8; NONCE_LEN],
    device_nonce: &[u8; NONCE_LEN],
    service_id: &str,
    device_id: &str,
    supi: &str,
    service_eph: &KexPublic,
    device_eph: &KexPublic,
) -> [u8; 32] {
    let mut e = Encoder::new();
    e.bytes(service_nonce)
        .bytes(device_nonce)
        .str(service_id)
        .str(device_id)
        .str(supi)
        .bytes(&service_eph.to_bytes())
        .bytes(&device_eph.to_bytes());
    sha256(&e.finish())
}

fn confirm_message(transcript: &[u8; 32]) -> Vec<u8> {
    let mut m = transcript.to_vec();
    m.extend_from_slice(b"confirm");
    m
}

fn derive_psk_key(shared: &[u8; 32], transcript: &[u8; 32], label: &str) -> [u8; 32] {
    hkdf32(shared, transcript, label.as_bytes())
}

struct OutstandingNonce {
    session_id: u64,
    expires: SimTime,
}

/// The authentication service: registry, sessions, outstanding nonces.
pub struct IdaService {
    service_id: String,
    signing_key: SigningKey,
    certificate: Certificate,
    config: AuthConfig,
    registry: BTreeMap<String, DeviceIdentity>,
    sessions: BTreeMap<u64, AuthSession>,
    next_session_id: u64,
    outstanding: BTreeMap<[u8; NONCE_LEN], OutstandingNonce>,
    last_established: BTreeMap<String, SimTime>,
    rng: ChaCha20Rng,
}

impl IdaService {
    pub fn new(
        service_id: impl Into<String>,
        signing_key: SigningKey,
        certificate: Certificate,
        config: AuthConfig,
        rng: ChaCha20Rng,
    ) -> Self {
        IdaService {
            service_id: service_id.into(),
            signing_key,
            certificate,
            config,
            registry: BTreeMap::new(),
            sessions: BTreeMap::new(),
            next_session_id: 1,
            outstanding: BTreeMap::new(),
            last_established: BTreeMap::new(),
            rng,
        }
    }

    pub fn service_id(&self) -> &str {
        &self.service_id
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn registered_devices(&self) -> impl Iterator<Item = &DeviceIdentity> {
        self.registry.values()
    }

    pub fn identity_of(&self, device_id: &str) -> Option<&DeviceIdentity> {
        self.registry.get(device_id)
    }

    /// Registers a device after checking that its certificate exists, is
    /// a device certificate, and binds exactly the presented SUPI.
    pub fn register_device(
        &mut self,
        ca: &CertificateAuthority,
        device_id: &str,
        supi: &str,
        cert_serial: u64,
    ) -> Result<DeviceIdentity, AuthError> {
        let cert = ca
            .certificate(cert_serial)
            .ok_or(AuthError::UnknownCertificate(cert_serial))?;
        if cert.subject_kind != SubjectKind::Device {
            return Err(AuthError::NotADeviceCertificate(cert_serial));
        }
        if cert.supi_binding.as_deref() != Some(supi) {
            return Err(AuthError::BindingMismatch);
        }
        let dup = self
            .registry
            .values()
            .any(|d| d.device_id == device_id && d.supi == supi);
        if dup {
            return Err(AuthError::DuplicateRegistration);
        }
        let identity = DeviceIdentity {
            device_id: device_id.to_string(),
            supi: supi.to_string(),
            cert_serial,
        };
        self.registry.insert(device_id.to_string(), identity.clone());
        Ok(identity)
    }

    /// Opens a session with a fresh nonce and a fresh ephemeral share.
    pub fn initiate_auth(
        &mut self,
        device_id: &str,
        now: SimTime,
    ) -> Result<(u64, ChallengeMsg), AuthError> {
        if !self.registry.contains_key(device_id) {
            return Err(AuthError::Unregistered(device_id.to_string()));
        }
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let eph = KexSecret::generate(&mut self.rng);
        let session_id = self.next_session_id;
        self.next_session_id += 1;

        let msg = ChallengeMsg {
            service_id: self.service_id.clone(),
            service_nonce: nonce,
            service_eph_pub: eph.public(),
        };
        self.sessions.insert(
            session_id,
            AuthSession {
                session_id,
                peer_device_id: device_id.to_string(),
                service_nonce: nonce,
                device_nonce: None,
                service_eph_pub: eph.public(),
                device_eph_pub: None,
                transcript_hash: None,
                state: SessionState::Challenged,
                challenged_at: now,
                established_at: None,
                expiry: None,
                service_eph_secret: eph,
                shared_secret: None,
            },
        );
        self.outstanding.insert(
            nonce,
            OutstandingNonce { session_id, expires: now + self.config.nonce_ttl },
        );
        Ok((session_id, msg))
    }

    /// Verifies a device response: certificate, registry binding, and
    /// transcript signature; on success returns the confirmation message
    /// and marks the session established.
    pub fn complete_auth(
        &mut self,
        response: &ResponseMsg,
        now: SimTime,
        trust_anchor: &VerifyingKey,
        status_source: &StatusSource<'_>,
    ) -> Result<(u64, ConfirmMsg), AuthFailure> {
        let Some(entry) = self.outstanding.get(&response.service_nonce) else {
            return Err(AuthFailure::ReplayedNonce);
        };
        let session_id = entry.session_id;
        if now > entry.expires {
            self.outstanding.remove(&response.service_nonce);
            self.fail_session(session_id, AuthFailure::SessionExpired);
            return Err(AuthFailure::SessionExpired);
        }
        let session = self.sessions.get(&session_id).expect("outstanding nonce has a session");
        if session.state != SessionState::Challenged {
            return Err(AuthFailure::ReplayedNonce);
        }

        // Rejections below leave the nonce outstanding: a garbage message
        // must not lock the honest device out of its own handshake. The
        // nonce is consumed on success or reaped at expiry.
        let identity = verify_certificate(&response.cert, trust_anchor, now, status_source)
            .map_err(classify_verify_error)?;
        if identity.subject_kind != SubjectKind::Device {
            return Err(AuthFailure::CertInvalid("not a device certificate".into()));
        }

        let registered = match self.registry.get(&response.device_id) {
            Some(r) => r.clone(),
            None => return Err(AuthFailure::Unregistered),
        };
        let bound = identity.supi_binding.as_deref() == Some(response.supi.as_str())
            && registered.supi == response.supi
            && registered.device_id == response.device_id
            && registered.cert_serial == response.cert.serial
            && identity.subject_id == response.device_id;
        if !bound {
            return Err(AuthFailure::BindingMismatch);
        }

        let session = self.sessions.get(&session_id).unwrap();
        let transcript = transcript_hash(
            &session.service_nonce,
            &response.device_nonce,
            &self.service_id,
            &response.device_id,
            &response.supi,
            &session.service_eph_pub,
            &response.device_eph_pub,
        );
        let device_key = response
            .cert
            .subject_public_key()
            .map_err(|_| AuthFailure::CertInvalid("malformed key".into()))?;
        if !device_key.verify(&transcript, &response.sig_d) {
            return Err(AuthFailure::BadSignature);
        }

        // success: consume the nonce and establish
        self.outstanding.remove(&response.service_nonce);
        let sig_s = self.signing_key.sign(&confirm_message(&transcript));
        let session = self.sessions.get_mut(&session_id).unwrap();
        session.device_nonce = Some(response.device_nonce);
        session.device_eph_pub = Some(response.device_eph_pub);
        session.transcript_hash = Some(transcript);
        session.shared_secret = Some(session.service_eph_secret.agree(&response.device_eph_pub));
        session.state = SessionState::Established;
        session.established_at = Some(now);
        session.expiry = Some(now + self.config.session_lifetime);
        self.last_established.insert(response.device_id.clone(), now);

        let confirm = ConfirmMsg {
            service_id: self.service_id.clone(),
            service_cert: self.certificate.clone(),
            service_nonce: response.service_nonce,
            device_nonce: response.device_nonce,
            sig_s,
        };
        Ok((session_id, confirm))
    }

    /// Marks a session failed; terminal.
    pub fn fail_session(&mut self, session_id: u64, reason: AuthFailure) {
        if let Some(s) = self.sessions.get_mut(&session_id) {
            if !matches!(s.state, SessionState::Established | SessionState::Failed(_)) {
                s.state = SessionState::Failed(reason);
            }
        }
    }

    pub fn session(&self, session_id: u64) -> Option<&AuthSession> {
        self.sessions.get(&session_id)
    }

    pub fn derive_psk(&self, session_id: u64, label: &str) -> Result<PresharedKey, AuthError> {
        let session = self
            .sessions
            .get(&session_id)
            .ok_or(AuthError::UnknownSession(session_id))?;
        if session.state != SessionState::Established {
            return Err(AuthError::NotEstablished(session_id));
        }
        let shared = session.shared_secret.as_ref().expect("established session has a secret");
        let transcript = session.transcript_hash.as_ref().unwrap();
        Ok(PresharedKey {
            key: derive_psk_key(shared, transcript, label),
            label: label.to_string(),
            bound_session: session_id,
            valid_until: session.expiry.unwrap(),
        })
    }

    /// Devices whose last establishment is older than the interval (or
    /// that never established), i.e. due for periodic re-authentication.
    pub fn devices_due(&self, now: SimTime) -> Vec<String> {
        self.registry
            .keys()
            .filter(|id| match self.last_established.get(*id) {
                Some(t) => now.saturating_sub(*t) >= self.config.periodic_interval,
                None => true,
            })
            .cloned()
            .collect()
    }

    pub fn last_established(&self, device_id: &str) -> Option<SimTime> {
        self.last_established.get(device_id).copied()
    }

    /// Drops expired outstanding nonces; bounded replay-set memory.
    pub fn expire_nonces(&mut self, now: SimTime) {
        let expired: Vec<[u8; NONCE_LEN]> = self
            .outstanding
            .iter()
            .filter(|(_, v)| now > v.expires)
            .map(|(k, _)| *k)
            .collect();
        for nonce in expired {
            let entry = self.outstanding.remove(&nonce).unwrap();
            self.fail_session(entry.session_id, AuthFailure::Timeout);
        }
    }
}

/// Device-side state for one challenge it answered.
pub struct DeviceSession {
    pub local_id: u64,
    pub service_nonce: [u8; NONCE_LEN],
    pub device_nonce: [u8; NONCE_LEN],
    pub transcript_hash: Option<[u8; 32]>,
    pub state: SessionState,
    pub expiry: Option<SimTime>,
    service_eph_pub: KexPublic,
    eph_secret: KexSecret,
    shared_secret: Option<[u8; 32]>,
}

/// Device-side protocol agent: answers challenges with token-backed
/// signatures, verifies the service's confirmation before trusting the
/// session.
pub struct DeviceAgent {
    pub device_id: String,
    pub supi: String,
    pub certificate: Certificate,
    token: TokenStore,
    config: AuthConfig,
    sessions: BTreeMap<u64, DeviceSession>,
    by_device_nonce: BTreeMap<[u8; NONCE_LEN], u64>,
    next_local_id: u64,
    rng: ChaCha20Rng,
}

impl DeviceAgent {
    pub fn new(
        device_id: impl Into<String>,
        supi: impl Into<String>,
        certificate: Certificate,
        token: TokenStore,
        config: AuthConfig,
        rng: ChaCha20Rng,
    ) -> Self {
        DeviceAgent {
            device_id: device_id.into(),
            supi: supi.into(),
            certificate,
            token,
            config,
            sessions: BTreeMap::new(),
            by_device_nonce: BTreeMap::new(),
            next_local_id: 1,
            rng,
        }
    }

    pub fn token(&self) -> &TokenStore {
        &self.token
    }

    /// Answers a challenge. The device cannot yet judge the service, so
    /// this never fails; a fresh device nonce and ephemeral share go out
    /// with every response.
    pub fn respond_to_challenge(&mut self, challenge: &ChallengeMsg) -> ResponseMsg {
        let mut device_nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut device_nonce);
        let eph = KexSecret::generate(&mut self.rng);

        let transcript = transcript_hash(
            &challenge.service_nonce,
            &device_nonce,
            &challenge.service_id,
            &self.device_id,
            &self.supi,
            &challenge.service_eph_pub,
            &eph.public(),
        );
        let sig_d = self.token.sign(&transcript);

        let local_id = self.next_local_id;
        self.next_local_id += 1;
        self.sessions.insert(
            local_id,
            DeviceSession {
                local_id,
                service_nonce: challenge.service_nonce,
                device_nonce,
                transcript_hash: Some(transcript),
                state: SessionState::Responded,
                expiry: None,
                service_eph_pub: challenge.service_eph_pub,
                eph_secret: eph.clone(),
                shared_secret: None,
            },
        );
        self.by_device_nonce.insert(device_nonce, local_id);

        ResponseMsg {
            device_nonce,
            device_id: self.device_id.clone(),
            supi: self.supi.clone(),
            cert: self.certificate.clone(),
            device_eph_pub: eph.public(),
            service_nonce: challenge.service_nonce,
            sig_d,
        }
    }

    /// Verifies the service certificate and confirmation signature; on
    /// success the device-side session is established.
    pub fn accept_confirm(
        &mut self,
        confirm: &ConfirmMsg,
        now: SimTime,
        trust_anchor: &VerifyingKey,
        status_source: &StatusSource<'_>,
    ) -> Result<u64, AuthFailure> {
        let Some(&local_id) = self.by_device_nonce.get(&confirm.device_nonce) else {
            return Err(AuthFailure::ReplayedNonce);
        };
        {
            let session = &self.sessions[&local_id];
            if session.state != SessionState::Responded {
                return Err(AuthFailure::ReplayedNonce);
            }
            if session.service_nonce != confirm.service_nonce {
                return Err(AuthFailure::ReplayedNonce);
            }
        }

        let identity = verify_certificate(&confirm.service_cert, trust_anchor, now, status_source)
            .map_err(classify_verify_error)?;
        if identity.subject_kind != SubjectKind::Service
            || identity.subject_id != confirm.service_id
        {
            return Err(AuthFailure::CertInvalid("not the expected service".into()));
        }

        let session = self.sessions.get_mut(&local_id).unwrap();
        let transcript = session.transcript_hash.unwrap();
        let service_key = confirm
            .service_cert
            .subject_public_key()
            .map_err(|_| AuthFailure::CertInvalid("malformed key".into()))?;
        if !service_key.verify(&confirm_message(&transcript), &confirm.sig_s) {
            return Err(AuthFailure::BadSignature);
        }

        // the service share was pinned into the signed transcript when
        // the device responded, so it is taken from local session state
        session.shared_secret = Some(session.eph_secret.agree(&session.service_eph_pub));
        session.state = SessionState::Established;
        session.expiry = Some(now + self.config.session_lifetime);
        Ok(local_id)
    }

    pub fn session(&self, local_id: u64) -> Option<&DeviceSession> {
        self.sessions.get(&local_id)
    }

    pub fn derive_psk(&self, local_id: u64, label: &str) -> Result<PresharedKey, AuthError> {
        let session = self
            .sessions
            .get(&local_id)
            .ok_or(AuthError::UnknownSession(local_id))?;
        if session.state != SessionState::Established {
            return Err(AuthError::NotEstablished(local_id));
        }
        Ok(PresharedKey {
            key: derive_psk_key(
                session.shared_secret.as_ref().unwrap(),
                &session.transcript_hash.unwrap(),
                label,
            ),
            label: label.to_string(),
            bound_session: local_id,
            valid_until: session.expiry.unwrap(),
        })
    }
}
