//! Hashing, Merkle roots, the hash puzzle and block signatures.
//!
//! Everything here is built on SHA-256. Digests compare as 256-bit
//! big-endian unsigned integers, which is what the puzzle target check needs.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Width of a header digest in bits.
pub const HASH_BITS: u64 = 256;
/// Default Merkle leaf width in bits.
pub const DEFAULT_LEAF_BITS: u64 = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("cannot build a Merkle root over an empty body")]
    EmptyBody,
    #[error("leaf width {0} bits is not a positive multiple of 8")]
    BadLeafWidth(u64),
    #[error("no nonce in the 32-bit space satisfies the puzzle target")]
    NonceSpaceExhausted,
    #[error("difficulty of {0} leading zero bits is out of range")]
    BadDifficulty(u32),
}

/// A 256-bit SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub const ZERO: Digest256 = Digest256([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str) -> Option<Digest256> {
        if hex.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).ok()?;
            out[i] = u8::from_str_radix(s, 16).ok()?;
        }
        Some(Digest256(out))
    }

    /// Number of leading zero bits.
    pub fn leading_zeros(&self) -> u32 {
        let mut n = 0;
        for b in self.0 {
            if b == 0 {
                n += 8;
            } else {
                n += b.leading_zeros();
                break;
            }
        }
        n
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

fn finish(h: Sha256) -> Digest256 {
    let out = h.finalize();
    let mut d = [0u8; 32];
    d.copy_from_slice(&out);
    Digest256(d)
}

/// SHA-256 of a byte string.
pub fn hash_bytes(data: &[u8]) -> Digest256 {
    let mut h = Sha256::new();
    h.update(data);
    finish(h)
}

/// SHA-256 over the concatenation of several byte strings.
pub fn hash_concat(parts: &[&[u8]]) -> Digest256 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    finish(h)
}

/// Combines a list of leaf digests into a root. An odd node at any level is
/// paired with itself.
pub fn merkle_root_from_leaves(mut level: Vec<Digest256>) -> Result<Digest256, CryptoError> {
    if level.is_empty() {
        return Err(CryptoError::EmptyBody);
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            let right = pair.get(1).unwrap_or(&pair[0]);
            next.push(hash_concat(&[&pair[0].0, &right.0]));
        }
        level = next;
    }
    Ok(level[0])
}

/// Merkle root over `body` split into `leaf_bits`-wide leaves. The last leaf
/// may be shorter than the others.
pub fn merkle_root(body: &[u8], leaf_bits: u64) -> Result<Digest256, CryptoError> {
    let leaf_bytes = leaf_width_bytes(leaf_bits)?;
    if body.is_empty() {
        return Err(CryptoError::EmptyBody);
    }
    let leaves = body.chunks(leaf_bytes).map(hash_bytes).collect();
    merkle_root_from_leaves(leaves)
}

pub(crate) fn leaf_width_bytes(leaf_bits: u64) -> Result<usize, CryptoError> {
    if leaf_bits == 0 || !leaf_bits.is_multiple_of(8) {
        return Err(CryptoError::BadLeafWidth(leaf_bits));
    }
    Ok((leaf_bits / 8) as usize)
}

/// Puzzle target ρ. A digest satisfies the puzzle when it is numerically
/// `<= rho`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Difficulty {
    rho: Digest256,
}

impl Difficulty {
    /// ρ = 2^(256-k) - 1, i.e. the digest needs `k` leading zero bits.
    pub fn leading_zero_bits(k: u32) -> Result<Difficulty, CryptoError> {
        if k > 256 {
            return Err(CryptoError::BadDifficulty(k));
        }
        let mut rho = [0xffu8; 32];
        let full = (k / 8) as usize;
        for b in rho.iter_mut().take(full) {
            *b = 0;
        }
        if full < 32 {
            rho[full] = 0xff >> (k % 8);
        }
        Ok(Difficulty { rho: Digest256(rho) })
    }

    /// Every digest passes.
    pub fn trivial() -> Difficulty {
        Difficulty { rho: Digest256([0xff; 32]) }
    }

    pub fn from_target(rho: Digest256) -> Difficulty {
        Difficulty { rho }
    }

    pub fn target(&self) -> Digest256 {
        self.rho
    }

    pub fn is_met_by(&self, d: &Digest256) -> bool {
        *d <= self.rho
    }
}

/// Searches nonces 0, 1, 2, ... and returns the first with
/// `H(preimage || nonce_be32) <= rho`.
pub fn find_nonce(preimage: &[u8], difficulty: &Difficulty) -> Result<u32, CryptoError> {
    let mut prefix = Sha256::new();
    prefix.update(preimage);
    let mut nonce: u32 = 0;
    loop {
        let mut h = prefix.clone();
        h.update(nonce.to_be_bytes());
        if difficulty.is_met_by(&finish(h)) {
            return Ok(nonce);
        }
        nonce = nonce.checked_add(1).ok_or(CryptoError::NonceSpaceExhausted)?;
    }
}

pub fn puzzle_digest(preimage: &[u8], nonce: u32) -> Digest256 {
    hash_concat(&[preimage, &nonce.to_be_bytes()])
}

/// Verification key distributed alongside the topology.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey(pub [u8; 32]);

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretKey(pub [u8; 32]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}..)", &Digest256(self.0).to_hex()[..8])
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// 256-bit signature tag.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Signature(pub [u8; 32]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &Digest256(self.0).to_hex()[..8])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// A deterministic signing scheme over 256-bit tags.
pub trait SignatureScheme {
    fn keypair_from_seed(&self, seed: &[u8]) -> KeyPair;
    fn sign(&self, message: &[u8], secret: &SecretKey) -> Signature;
    fn verify(&self, message: &[u8], signature: &Signature, public: &PublicKey) -> bool;
}

/// Keyed-digest tags: `tag = SHA-256(domain || key || message)`.
///
/// The verification key handed to other nodes equals the signing key, so this
/// authenticates origin only among nodes that share the key registry. It is
/// the stand-in used by the simulator; adversaries in this model corrupt
/// bits rather than forge tags.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeyedDigest;

const SIG_DOMAIN: &[u8] = b"2ldag/keyed-digest/v1";

impl SignatureScheme for KeyedDigest {
    fn keypair_from_seed(&self, seed: &[u8]) -> KeyPair {
        let k = hash_concat(&[b"2ldag/key/", seed]).0;
        KeyPair { public: PublicKey(k), secret: SecretKey(k) }
    }

    fn sign(&self, message: &[u8], secret: &SecretKey) -> Signature {
        Signature(hash_concat(&[SIG_DOMAIN, &secret.0, message]).0)
    }

    fn verify(&self, message: &[u8], signature: &Signature, public: &PublicKey) -> bool {
        let expected = hash_concat(&[SIG_DOMAIN, &public.0, message]).0;
        // Constant-time comparison is irrelevant in a simulator, but cheap.
        expected.iter().zip(signature.0.iter()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
    }
}

pub fn sign(message: &[u8], secret: &SecretKey) -> Signature {
    KeyedDigest.sign(message, secret)
}

pub fn verify(message: &[u8], signature: &Signature, public: &PublicKey) -> bool {
    KeyedDigest.verify(message, signature, public)
}
