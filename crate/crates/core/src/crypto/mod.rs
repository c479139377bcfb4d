//! Stateless cryptographic primitives: a prime-order subgroup of `Z_p*`,
//! SHA-256, Schnorr signatures and the Paillier cryptosystem.
//!
//! Randomness is always an explicit argument so that every value can be
//! reproduced from a seed.

mod fixed_base;
mod group;
mod hash;
mod paillier;
mod schnorr;

pub use group::{GroupElement, GroupParams, Scalar};
pub use hash::{hash, hash_encoded, Digest};
pub use paillier::{
    paillier_keygen, PaillierCiphertext, PaillierPublicKey, PaillierSecretKey, MIN_PAILLIER_BITS,
};
pub use schnorr::{std_verify, StdKeyPair, StdSignature};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Encoder;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("paillier modulus of {0} bits is below the {1}-bit minimum")]
    KeyTooSmall(u64, u64),
    #[error("plaintext is outside [0, n)")]
    PlaintextOutOfRange,
    #[error("encryption randomness must lie in [1, n) and be coprime to n")]
    BadRandomness,
    #[error("ciphertext is not a unit modulo n^2")]
    InvalidCiphertext,
    #[error("value is not an element of the prime-order subgroup")]
    NotInSubgroup,
    #[error("invalid group parameters: {0}")]
    InvalidParams(&'static str),
}

/// Key-size regime. Test mode allows tiny keys for desk-scale runs and stamps
/// every artifact as insecure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyMode {
    #[default]
    InsecureTest,
    Production,
}

impl KeyMode {
    pub fn min_paillier_bits(self) -> u64 {
        match self {
            KeyMode::InsecureTest => MIN_PAILLIER_BITS,
            KeyMode::Production => 2048,
        }
    }

    pub fn group_params(self) -> &'static GroupParams {
        match self {
            KeyMode::InsecureTest => GroupParams::insecure_test(),
            KeyMode::Production => GroupParams::production(),
        }
    }

    pub fn stamp(self) -> &'static str {
        match self {
            KeyMode::InsecureTest => "INSECURE-TEST",
            KeyMode::Production => "PRODUCTION",
        }
    }
}

/// Independent ChaCha20 stream derived from a master seed and a label.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha20Rng {
    let mut enc = Encoder::with_domain("etp/rng");
    enc.u64(seed).str(label);
    ChaCha20Rng::from_seed(hash(enc.as_bytes()).0)
}
