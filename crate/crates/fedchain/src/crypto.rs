//! Information protection: X25519 key agreement, per-round symmetric keys,
//! key wrapping, and authenticated encryption of model payloads.
//!
//! Key derivation is `h(sk, pk) = SHA-256(x25519(sk, pk))`, i.e. the hash of
//! the raw shared point. Payloads are sealed with ChaCha20-Poly1305; the
//! serialized layout is always `nonce || body || tag` so transfer sizes and
//! gas charges are exact. Nonces are derived deterministically from
//! `(domain, sender, round, counter)`, which keeps simulations reproducible
//! without ever reusing a nonce under the same key.

use std::collections::HashSet;

use chacha20poly1305::{aead::Aead, ChaCha20Poly1305, KeyInit};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use x25519_dalek::StaticSecret;

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const KEY_LEN: usize = 32;

/// Nonce domain for round-key wrapping.
pub const DOMAIN_WRAP: u8 = 1;
/// Nonce domain for model/update payloads.
pub const DOMAIN_PAYLOAD: u8 = 2;

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// A 32-byte SHA-256 digest: content ids, configuration commitments, and
/// endorsed result digests are all values of this type.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(data: &[u8]) -> Self {
        Self(sha256(data))
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Self(arr))
    }
}

/// Serde helper: byte vectors as hex strings inside JSON dumps.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    /// The peer public key is not a usable curve point (non-contributory
    /// exchange, e.g. a low-order point).
    #[error("invalid peer public key")]
    InvalidPoint,
    /// Authentication failed: wrong key or modified ciphertext.
    #[error("authentication failure")]
    AuthFailure,
}

/// A curve point as registered on-chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("public key must be 32 bytes"))?;
        Ok(Self(arr))
    }
}

/// An X25519 key pair. The secret never leaves the owning participant; only
/// [`PublicKey`] bytes appear in contract state.
#[derive(Clone)]
pub struct KeyPair {
    secret: StaticSecret,
    public: PublicKey,
}

impl KeyPair {
    /// Generates a key pair from the given RNG; deterministic under a fixed
    /// seed.
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut sk = [0u8; 32];
        rng.fill_bytes(&mut sk);
        Self::from_secret_bytes(sk)
    }

    pub fn from_secret_bytes(sk: [u8; 32]) -> Self {
        let secret = StaticSecret::from(sk);
        let public = PublicKey(x25519_dalek::PublicKey::from(&secret).to_bytes());
        Self { secret, public }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    /// Computes the shared secret with a peer: `SHA-256(x25519(sk, pk))`.
    ///
    /// Symmetric in roles: `a.derive_shared(b.public()) ==
    /// b.derive_shared(a.public())`.
    pub fn derive_shared(&self, peer: PublicKey) -> Result<SharedSecret, CryptoError> {
        let point = x25519_dalek::PublicKey::from(peer.0);
        let raw = self.secret.diffie_hellman(&point);
        if !raw.was_contributory() {
            return Err(CryptoError::InvalidPoint);
        }
        Ok(SharedSecret(sha256(raw.as_bytes())))
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public.to_hex())
            .finish_non_exhaustive()
    }
}

/// Pairwise secret derived via key agreement. Used directly as a symmetric
/// key and for wrapping round keys.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret([u8; 32]);

impl SharedSecret {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

/// Temporary symmetric key for one training iteration.
#[derive(Clone, PartialEq, Eq)]
pub struct RoundKey {
    pub key: [u8; 32],
    pub round: u64,
    pub expiry: u64,
}

impl RoundKey {
    pub fn generate(rng: &mut impl RngCore, round: u64) -> Self {
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        Self {
            key,
            round,
            expiry: round,
        }
    }
}

impl std::fmt::Debug for RoundKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RoundKey")
            .field("round", &self.round)
            .field("expiry", &self.expiry)
            .finish_non_exhaustive()
    }
}

/// Issues the symmetric key for each round. Rotation defaults on, giving a
/// fresh key per iteration; with rotation off the first key is reused for the
/// whole project (overhead-ablation mode).
#[derive(Debug, Clone)]
pub struct RoundKeySchedule {
    rotate: bool,
    current: Option<RoundKey>,
}

impl RoundKeySchedule {
    pub fn new(rotate: bool) -> Self {
        Self {
            rotate,
            current: None,
        }
    }

    pub fn key_for_round(&mut self, rng: &mut impl RngCore, round: u64) -> RoundKey {
        let key = match (&self.current, self.rotate) {
            (Some(prev), false) => RoundKey {
                key: prev.key,
                round,
                expiry: u64::MAX,
            },
            _ => RoundKey::generate(rng, round),
        };
        self.current = Some(key.clone());
        key
    }
}

/// Deterministic AEAD nonce: `domain || sender || round || counter`.
///
/// `counter` must stay below 2^24; the simulator never gets close.
pub fn derive_nonce(domain: u8, sender: u32, round: u32, counter: u32) -> [u8; NONCE_LEN] {
    debug_assert!(counter < 1 << 24, "nonce counter overflow");
    let mut nonce = [0u8; NONCE_LEN];
    nonce[0] = domain;
    nonce[1..5].copy_from_slice(&sender.to_le_bytes());
    nonce[5..9].copy_from_slice(&round.to_le_bytes());
    nonce[9..12].copy_from_slice(&counter.to_le_bytes()[..3]);
    nonce
}

/// Authenticated ciphertext. Serialized as `nonce || body || tag` (the tag is
/// appended to the encrypted body).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
}

impl Ciphertext {
    /// Total wire size in bytes.
    pub fn wire_len(&self) -> usize {
        NONCE_LEN + self.body.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return Err(CryptoError::AuthFailure);
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[..NONCE_LEN]);
        Ok(Self {
            nonce,
            body: bytes[NONCE_LEN..].to_vec(),
        })
    }
}

/// Encrypts a payload under a symmetric key. The nonce must be unique per
/// (key, message); use [`derive_nonce`] or a [`SealContext`].
pub fn seal(plaintext: &[u8], key: &[u8; KEY_LEN], nonce: [u8; NONCE_LEN]) -> Ciphertext {
    let cipher = ChaCha20Poly1305::new(key.into());
    let body = cipher
        .encrypt(&nonce.into(), plaintext)
        .expect("in-memory encryption cannot fail");
    Ciphertext { nonce, body }
}

/// Decrypts and authenticates; any modification of nonce, body, or tag fails.
pub fn open(ct: &Ciphertext, key: &[u8; KEY_LEN]) -> Result<Vec<u8>, CryptoError> {
    let cipher = ChaCha20Poly1305::new(key.into());
    cipher
        .decrypt(&ct.nonce.into(), ct.body.as_slice())
        .map_err(|_| CryptoError::AuthFailure)
}

/// Stateful sealer that asserts nonce uniqueness in debug builds.
#[derive(Debug)]
pub struct SealContext {
    key: [u8; KEY_LEN],
    used: HashSet<[u8; NONCE_LEN]>,
}

impl SealContext {
    pub fn new(key: [u8; KEY_LEN]) -> Self {
        Self {
            key,
            used: HashSet::new(),
        }
    }

    pub fn seal(&mut self, plaintext: &[u8], nonce: [u8; NONCE_LEN]) -> Ciphertext {
        let fresh = self.used.insert(nonce);
        debug_assert!(fresh, "nonce reuse under one key");
        seal(plaintext, &self.key, nonce)
    }
}

/// A round key encrypted under one trainer's pairwise secret. These bytes are
/// what the contract stores on-chain; the fixed 76-byte layout is
/// `nonce(12) || body(48) || tag(16)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrappedKey {
    pub round: u64,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

/// Serialized size of a wrapped round key.
pub const WRAPPED_KEY_LEN: usize = NONCE_LEN + 8 + 8 + KEY_LEN + TAG_LEN;

/// Encrypts a round key under a pairwise shared secret.
pub fn wrap_round_key(round_key: &RoundKey, shared: &SharedSecret) -> WrappedKey {
    let mut plain = Vec::with_capacity(48);
    plain.extend_from_slice(&round_key.round.to_le_bytes());
    plain.extend_from_slice(&round_key.expiry.to_le_bytes());
    plain.extend_from_slice(&round_key.key);
    let nonce = derive_nonce(DOMAIN_WRAP, 0, round_key.round as u32, 0);
    let ct = seal(&plain, shared.as_bytes(), nonce);
    WrappedKey {
        round: round_key.round,
        bytes: ct.to_bytes(),
    }
}

/// Recovers the round key; fails on a wrong secret or tampered bytes.
pub fn unwrap_round_key(
    wrapped: &WrappedKey,
    shared: &SharedSecret,
) -> Result<RoundKey, CryptoError> {
    let ct = Ciphertext::from_bytes(&wrapped.bytes)?;
    let plain = open(&ct, shared.as_bytes())?;
    if plain.len() != 48 {
        return Err(CryptoError::AuthFailure);
    }
    let round = u64::from_le_bytes(plain[0..8].try_into().unwrap());
    let expiry = u64::from_le_bytes(plain[8..16].try_into().unwrap());
    let mut key = [0u8; 32];
    key.copy_from_slice(&plain[16..48]);
    Ok(RoundKey { key, round, expiry })
}
