use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{hash_encoded, GroupElement, GroupParams, Scalar};
use crate::encoding::{Encode, Encoder};

const SIG_DOMAIN: &str = "etp/std-sig";

/// Standard (non-group) signing key of a principal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StdKeyPair {
    pub secret: Scalar,
    pub public: GroupElement,
}

/// Schnorr signature `(c, z)` with `c = H(pk, g^k, m)` and `z = k + c·sk`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StdSignature {
    pub challenge: Scalar,
    pub response: Scalar,
}

impl Encode for StdSignature {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.challenge).field(&self.response);
    }
}

fn challenge(params: &GroupParams, public: &GroupElement, commitment: &GroupElement, message: &[u8]) -> Scalar {
    let mut enc = Encoder::with_domain(SIG_DOMAIN);
    enc.field(public).field(commitment).bytes(message);
    params.scalar_from_digest(&hash_encoded(&enc))
}

impl StdKeyPair {
    pub fn generate<R: RngCore + ?Sized>(params: &GroupParams, rng: &mut R) -> Self {
        let secret = params.random_nonzero_scalar(rng);
        let public = params.exp_g(&secret);
        StdKeyPair { secret, public }
    }

    pub fn sign<R: RngCore + ?Sized>(&self, params: &GroupParams, message: &[u8], rng: &mut R) -> StdSignature {
        let nonce = params.random_nonzero_scalar(rng);
        let commitment = params.exp_g(&nonce);
        let c = challenge(params, &self.public, &commitment, message);
        let z = params.add(&nonce, &params.mul_scalar(&c, &self.secret));
        StdSignature { challenge: c, response: z }
    }
}

/// Recomputes `g^z · pk^(-c)` and checks it hashes back to `c`.
pub fn std_verify(params: &GroupParams, public: &GroupElement, message: &[u8], sig: &StdSignature) -> bool {
    if !params.is_scalar(&sig.challenge) || !params.is_scalar(&sig.response) {
        return false;
    }
    let neg_c = params.neg(&sig.challenge);
    let commitment = params.mul(&params.exp_g(&sig.response), &params.exp_fixed(public, &neg_c));
    challenge(params, public, &commitment, message) == sig.challenge
}
