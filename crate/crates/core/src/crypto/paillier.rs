use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::CryptoError;
use crate::encoding::{serde_hex, Encode, Encoder};

/// Smallest modulus accepted in any mode.
pub const MIN_PAILLIER_BITS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaillierPublicKey {
    #[serde(with = "serde_hex")]
    pub n: BigUint,
    #[serde(with = "serde_hex")]
    pub n_squared: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaillierSecretKey {
    #[serde(with = "serde_hex")]
    pub p: BigUint,
    #[serde(with = "serde_hex")]
    pub q: BigUint,
    #[serde(with = "serde_hex")]
    pub lambda: BigUint,
    #[serde(with = "serde_hex")]
    pub mu: BigUint,
    pub public: PaillierPublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PaillierCiphertext(#[serde(with = "serde_hex")] pub BigUint);

impl Encode for PaillierCiphertext {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.uint(&self.0);
    }
}

pub(crate) fn is_probable_prime(n: &BigUint) -> bool {
    num_prime::nt_funcs::is_prime(n, None).probably()
}

/// Random prime of exactly `bits` bits with the top two bits set, so that a
/// product of two such primes has exactly the sum of their lengths.
pub(crate) fn random_prime<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    assert!(bits >= 3);
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate) {
            return candidate;
        }
    }
}

/// Generates a key whose modulus has exactly `bits` bits (`g = n + 1`).
pub fn paillier_keygen<R: RngCore + ?Sized>(
    bits: u64,
    rng: &mut R,
) -> Result<(PaillierPublicKey, PaillierSecretKey), CryptoError> {
    if bits < MIN_PAILLIER_BITS {
        return Err(CryptoError::KeyTooSmall(bits, MIN_PAILLIER_BITS));
    }
    let p_bits = bits / 2;
    let q_bits = bits - p_bits;
    loop {
        let p = random_prime(p_bits, rng);
        let q = random_prime(q_bits, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        if !n.gcd(&phi).is_one() {
            continue;
        }
        let lambda = (&p - 1u32).lcm(&(&q - 1u32));
        let Some(mu) = lambda.modinv(&n) else { continue };
        let public = PaillierPublicKey { n_squared: &n * &n, n };
        let secret = PaillierSecretKey { p, q, lambda, mu, public: public.clone() };
        return Ok((public, secret));
    }
}

impl PaillierPublicKey {
    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    pub fn is_valid_randomness(&self, r: &BigUint) -> bool {
        !r.is_zero() && r < &self.n && r.gcd(&self.n).is_one()
    }

    pub fn random_randomness<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// `(1+n)^m · r^n mod n^2`
    pub fn encrypt(&self, m: &BigUint, r: &BigUint) -> Result<PaillierCiphertext, CryptoError> {
        if m >= &self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        if !self.is_valid_randomness(r) {
            return Err(CryptoError::BadRandomness);
        }
        // (1+n)^m = 1 + m·n (mod n^2)
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        Ok(PaillierCiphertext((gm * rn) % &self.n_squared))
    }

    pub fn encrypt_u64(&self, m: u64, r: &BigUint) -> Result<PaillierCiphertext, CryptoError> {
        self.encrypt(&BigUint::from(m), r)
    }

    /// Homomorphic addition: the product of ciphertexts encrypts the sum.
    pub fn add(&self, c1: &PaillierCiphertext, c2: &PaillierCiphertext) -> PaillierCiphertext {
        PaillierCiphertext((&c1.0 * &c2.0) % &self.n_squared)
    }

    pub fn is_valid_ciphertext(&self, c: &PaillierCiphertext) -> bool {
        !c.0.is_zero() && c.0 < self.n_squared && c.0.gcd(&self.n).is_one()
    }
}

impl PaillierSecretKey {
    pub fn public(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &PaillierCiphertext) -> Result<BigUint, CryptoError> {
        let pk = &self.public;
        if !pk.is_valid_ciphertext(c) {
            return Err(CryptoError::InvalidCiphertext);
        }
        let u = c.0.modpow(&self.lambda, &pk.n_squared);
        let l = (u - 1u32) / &pk.n;
        Ok((l * &self.mu) % &pk.n)
    }

    /// Decrypts a value known to fit in `u64` (fee totals in cents).
    pub fn decrypt_u64(&self, c: &PaillierCiphertext) -> Result<u64, CryptoError> {
        let m = self.decrypt(c)?;
        u64::try_from(m).map_err(|_| CryptoError::PlaintextOutOfRange)
    }
}
