// Copyright 2026 The EdgeLinker Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Secure device-to-fog channel.
//!
//! Every message carries a timestamp, a per-sender counter nonce and the
//! sender's public key. Sending hashes the canonical message encoding, signs
//! the hash, appends the signature and encrypts the whole thing under a
//! pairwise Diffie-Hellman key. Receiving reverses those steps and refuses to
//! return a message unless decryption, parsing and signature verification all
//! succeed. Replay and ordering are enforced separately by [`ReplayState`].

mod keys;
mod replay;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

pub use keys::{derive_shared_key, generate_keypair, verify, KeyPair, PublicKey, Signature, SymmetricKey};
pub use replay::{ReplayReject, ReplayState, DEFAULT_CLOCK_SKEW_MS};

use crate::codec::{put_bytes, put_u64, Decode, DecodeError, Encode, Reader};
use crate::hash::sha256;

pub const AEAD_NONCE_LEN: usize = 12;
pub const AEAD_TAG_LEN: usize = 16;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("invalid public key")]
    InvalidPublicKey,
    #[error("message identification does not match the signing key")]
    IdentityMismatch,
    #[error("decryption failed")]
    DecryptFailed,
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("malformed message: {0}")]
    Malformed(#[from] DecodeError),
}

/// The plaintext unit carried by the channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMessage {
    /// Unix milliseconds at the sender.
    pub timestamp: u64,
    /// Per-sender counter starting at 1.
    pub nonce: u64,
    /// Public key of the sender.
    pub identification: PublicKey,
    /// Opaque payload, normally an encoded request.
    pub body: Vec<u8>,
}

impl Encode for ChannelMessage {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.timestamp);
        put_u64(out, self.nonce);
        self.identification.encode_to(out);
        put_bytes(out, &self.body);
    }
}

impl Decode for ChannelMessage {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            timestamp: r.u64()?,
            nonce: r.u64()?,
            identification: PublicKey::decode_from(r)?,
            body: r.bytes()?,
        })
    }
}

/// Wire unit: `sender_hint (32) ∥ aead_nonce (12) ∥ aead_ciphertext`.
/// `ciphertext` holds the AEAD nonce followed by the AEAD output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureEnvelope {
    pub sender_hint: PublicKey,
    pub ciphertext: Vec<u8>,
}

impl SecureEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.ciphertext.len());
        out.extend_from_slice(&self.sender_hint.0);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChannelError> {
        if bytes.len() < 32 + AEAD_NONCE_LEN + AEAD_TAG_LEN {
            return Err(ChannelError::Malformed(DecodeError::UnexpectedEnd));
        }
        Ok(Self {
            sender_hint: PublicKey::from_slice(&bytes[..32])?,
            ciphertext: bytes[32..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        32 + self.ciphertext.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Seals `m` for `recipient` using the OS random source for the AEAD nonce.
pub fn seal_message(
    m: &ChannelMessage,
    sender: &KeyPair,
    recipient: &PublicKey,
) -> Result<SecureEnvelope, ChannelError> {
    seal_message_with_rng(m, sender, recipient, &mut rand::rngs::OsRng)
}

pub fn seal_message_with_rng<R: RngCore + CryptoRng>(
    m: &ChannelMessage,
    sender: &KeyPair,
    recipient: &PublicKey,
    rng: &mut R,
) -> Result<SecureEnvelope, ChannelError> {
    if m.identification != sender.public_key() {
        return Err(ChannelError::IdentityMismatch);
    }
    seal_message_unchecked(m, sender, recipient, rng)
}

/// Same as [`seal_message_with_rng`] without the identification check.
/// Only fault injection needs this, to build spoofed envelopes.
pub fn seal_message_unchecked<R: RngCore + CryptoRng>(
    m: &ChannelMessage,
    sender: &KeyPair,
    recipient: &PublicKey,
    rng: &mut R,
) -> Result<SecureEnvelope, ChannelError> {
    let key = derive_shared_key(sender, recipient)?;
    let mut plaintext = m.encode();
    let sig = sender.sign(&sha256(&plaintext).0);
    plaintext.extend_from_slice(&sig.0);

    let mut nonce = [0u8; AEAD_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let sealed = ChaCha20Poly1305::new(Key::from_slice(&key.0))
        .encrypt(Nonce::from_slice(&nonce), plaintext.as_slice())
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");

    let mut ciphertext = Vec::with_capacity(AEAD_NONCE_LEN + sealed.len());
    ciphertext.extend_from_slice(&nonce);
    ciphertext.extend_from_slice(&sealed);
    Ok(SecureEnvelope { sender_hint: sender.public_key(), ciphertext })
}

/// Opens an envelope sent by `sender`. Returns the message only when the
/// ciphertext authenticates, parses, and carries a valid signature by
/// `sender` over the hash of the message.
pub fn open_message(
    env: &SecureEnvelope,
    recipient: &KeyPair,
    sender: &PublicKey,
) -> Result<ChannelMessage, ChannelError> {
    let key = derive_shared_key(recipient, sender)?;
    if env.ciphertext.len() < AEAD_NONCE_LEN {
        return Err(ChannelError::DecryptFailed);
    }
    let (nonce, sealed) = env.ciphertext.split_at(AEAD_NONCE_LEN);
    let plaintext = ChaCha20Poly1305::new(Key::from_slice(&key.0))
        .decrypt(Nonce::from_slice(nonce), sealed)
        .map_err(|_| ChannelError::DecryptFailed)?;

    if plaintext.len() < SIGNATURE_LEN {
        return Err(ChannelError::Malformed(DecodeError::UnexpectedEnd));
    }
    let (body, sig) = plaintext.split_at(plaintext.len() - SIGNATURE_LEN);
    let m = ChannelMessage::decode(body)?;
    let sig = Signature(sig.try_into().expect("64 bytes"));

    let h = sha256(&m.encode());
    if !verify(sender, &h.0, &sig) {
        return Err(ChannelError::SignatureInvalid);
    }
    if m.identification != *sender {
        return Err(ChannelError::IdentityMismatch);
    }
    Ok(m)
}
