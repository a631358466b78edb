//! Cryptographic primitives behind a small, fixed-suite interface.
//!
//! One suite for the whole workspace: Ed25519 signatures (deterministic),
//! X25519 key agreement, HKDF-SHA256 key derivation, AES-256-GCM AEAD
//! with 128-bit tags. There is no per-object algorithm agility.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use ed25519_dalek::{Signature, Signer};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SIGNATURE_LEN: usize = 64;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const TAG_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed public key")]
    BadPublicKey,
    #[error("AEAD authentication failed")]
    AeadFailure,
}

/// Ed25519 signing key. Signatures are deterministic for a given
/// (key, message) pair.
#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

impl SigningKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        SigningKey(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        self.0.sign(msg).to_bytes().to_vec()
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey(self.0.verifying_key())
    }

    pub fn seed_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyingKey(ed25519_dalek::VerifyingKey);

impl VerifyingKey {
    pub fn from_bytes(b: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] = b.try_into().map_err(|_| CryptoError::BadPublicKey)?;
        ed25519_dalek::VerifyingKey::from_bytes(&arr)
            .map(VerifyingKey)
            .map_err(|_| CryptoError::BadPublicKey)
    }

    pub fn to_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.0.to_bytes()
    }

    pub fn verify(&self, msg: &[u8], sig: &[u8]) -> bool {
        let Ok(arr): Result<[u8; SIGNATURE_LEN], _> = sig.try_into() else {
            return false;
        };
        let sig = Signature::from_bytes(&arr);
        self.0.verify_strict(msg, &sig).is_ok()
    }
}

/// X25519 key-agreement secret, generated fresh per handshake.
#[derive(Clone)]
pub struct KexSecret(x25519_dalek::StaticSecret);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KexPublic(x25519_dalek::PublicKey);

impl KexSecret {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        KexSecret(x25519_dalek::StaticSecret::from(seed))
    }

    pub fn public(&self) -> KexPublic {
        KexPublic(x25519_dalek::PublicKey::from(&self.0))
    }

    pub fn agree(&self, peer: &KexPublic) -> [u8; 32] {
        *self.0.diffie_hellman(&peer.0).as_bytes()
    }
}

impl std::fmt::Debug for KexSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("KexSecret(..)")
    }
}

impl KexPublic {
    pub fn from_bytes(b: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = b.try_into().map_err(|_| CryptoError::BadPublicKey)?;
        Ok(KexPublic(x25519_dalek::PublicKey::from(arr)))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        *self.0.as_bytes()
    }
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(data);
    h.finalize().into()
}

/// HKDF-SHA256, 32-byte output.
pub fn hkdf32(ikm: &[u8], salt: &[u8], info: &[u8]) -> [u8; 32] {
    let hk = hkdf::Hkdf::<Sha256>::new(Some(salt), ikm);
    let mut okm = [0u8; 32];
    hk.expand(info, &mut okm).expect("32 bytes is a valid HKDF length");
    okm
}

/// AES-256-GCM key handle.
pub struct AeadKey(Aes256Gcm);

impl AeadKey {
    pub fn new(key: &[u8; 32]) -> Self {
        AeadKey(Aes256Gcm::new(key.into()))
    }

    /// Encrypts and returns (ciphertext, tag) separately.
    pub fn seal(&self, nonce: &[u8; NONCE_LEN], aad: &[u8], plaintext: &[u8]) -> (Vec<u8>, [u8; TAG_LEN]) {
        let mut out = self
            .0
            .encrypt(Nonce::from_slice(nonce), Payload { msg: plaintext, aad })
            .expect("AES-GCM encryption is infallible for in-range lengths");
        let tag_at = out.len() - TAG_LEN;
        let tag: [u8; TAG_LEN] = out[tag_at..].try_into().unwrap();
        out.truncate(tag_at);
        (out, tag)
    }

    pub fn open(
        &self,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        ciphertext: &[u8],
        tag: &[u8; TAG_LEN],
    ) -> Result<Vec<u8>, CryptoError> {
        let mut buf = Vec::with_capacity(ciphertext.len() + TAG_LEN);
        buf.extend_from_slice(ciphertext);
        buf.extend_from_slice(tag);
        self.0
            .decrypt(Nonce::from_slice(nonce), Payload { msg: &buf, aad })
            .map_err(|_| CryptoError::AeadFailure)
    }

    /// Integrity-only mode: tag over the associated data, empty body.
    pub fn tag_only(&self, nonce: &[u8; NONCE_LEN], aad: &[u8]) -> [u8; TAG_LEN] {
        self.seal(nonce, aad, &[]).1
    }

    pub fn verify_tag(&self, nonce: &[u8; NONCE_LEN], aad: &[u8], tag: &[u8; TAG_LEN]) -> bool {
        self.open(nonce, aad, &[], tag).is_ok()
    }

    /// One-shot convenience: ciphertext with the tag appended.
    pub fn seal_combined(&self, nonce: &[u8; NONCE_LEN], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
        let (mut ct, tag) = self.seal(nonce, aad, plaintext);
        ct.extend_from_slice(&tag);
        ct
    }

    pub fn open_combined(
        &self,
        nonce: &[u8; NONCE_LEN],
        aad: &[u8],
        combined: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        if combined.len() < TAG_LEN {
            return Err(CryptoError::AeadFailure);
        }
        let (ct, tag) = combined.split_at(combined.len() - TAG_LEN);
        self.open(nonce, aad, ct, tag.try_into().unwrap())
    }
}

/// Derives an independent, reproducible RNG substream from a scenario
/// seed and a subsystem label.
pub fn subrng(seed: u64, label: &str) -> ChaCha20Rng {
    let mut input = Vec::with_capacity(8 + label.len());
    input.extend_from_slice(&seed.to_be_bytes());
    input.extend_from_slice(label.as_bytes());
    ChaCha20Rng::from_seed(sha256(&input))
}
