use std::sync::OnceLock;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{Num, One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{CryptoError, Digest};
use crate::encoding::{serde_hex, Encode, Encoder};

/// Exponent modulo the subgroup order `q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scalar(#[serde(with = "serde_hex")] BigUint);

/// Element of the order-`q` subgroup generated by `g`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupElement(#[serde(with = "serde_hex")] BigUint);

impl Scalar {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    /// Wraps without reduction. Callers outside this module go through
    /// [`GroupParams::scalar`].
    #[cfg(test)]
    pub(crate) fn from_raw(v: BigUint) -> Self {
        Scalar(v)
    }
}

impl GroupElement {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    #[cfg(test)]
    pub(crate) fn from_raw(v: BigUint) -> Self {
        GroupElement(v)
    }

    pub fn to_hex(&self) -> String {
        self.0.to_str_radix(16)
    }
}

impl Encode for Scalar {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.uint(&self.0);
    }
}

impl Encode for GroupElement {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.uint(&self.0);
    }
}

/// Schnorr group: `q | p - 1` and `g` of exact order `q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupParams {
    #[serde(with = "serde_hex")]
    pub modulus_p: BigUint,
    #[serde(with = "serde_hex")]
    pub order_q: BigUint,
    #[serde(with = "serde_hex")]
    pub generator_g: BigUint,
}

// 512-bit p, 256-bit q. Generated from SHA-256("etp-test-group-512") seeds:
// q = next prime above the seed, p = kq + 1, g = 2^((p-1)/q).
const TEST_P: &str = "fa2437b8e9fa0a9ffad2e0073aa239fb0f23853b86fef2fbe232aa0a6067b619ec38621a99651efe619ce86bffefe3214c4a6d04bc5219b0eff541d54539f5cd";
const TEST_Q: &str = "a71742cb03515022647f92d6ffafd408c917144e82f1d2e7ebaac0be544745fd";
const TEST_G: &str = "b262b724ad769e93c70624917802d531ae0f1ee81c845bb0afd02dc469ebbb386ee5562bece3f54d903e972cdf0ac8316777b6c60c579eac9778adc9ca24acfa";

// 2048-bit p, 256-bit q, same procedure seeded with "etp-production-group-2048".
const PROD_P: &str = "d72a253092cbdb89ee065a097502436df24639e0208193998d4cfa87a6b549929384e1d5e3aa7c9b28a3efa7083457037d2a769f058739c774c425afe85e0a660949460ed0402fcf008b226b2c0a4c4481b70fa40af68275248dc33aa8558ed044fdfb0014482e76fa9513fb398725597b95c416dad1080f61e72a189e556549791123c0a2cae20695a6f2b30fe9eb08692441bf547099aa43bcc2468db9f62b9b98a79464a053aa9537c859a274c7983a7874d3e709e6745edb7afdac60f31b97c9df361533fd5df3608f7267d161ae27a3ca3d9161e89375541047487fa5eda75fdad3d9d5404cc21d768a0945e496774477e9dfd7f770f2c5492b1bb632f5";
const PROD_Q: &str = "b2d47a63d0683040ca8205761214b3144319e3a29984c396d177853372c2b93d";
const PROD_G: &str = "20e9d2e2b7585262dd4e9023fb97cb771b15de65bd89193bc89249e9a688075cf21c3a8d83da4bb10705d53d25b157371dfadc0ded901aa7dabaa0ef1e362ed3c2d7bcc282ec1b9653001851b1fa6b55a4f5be85ed0b96ec0b80f5a7499ee417696447a10e73730699043f9256149a55e15678f953ef864007bfec3c8667b558c4b0327ff7531973738b797236832388fb5623165e30fcfe09de314566ac5dcb8c86f154d47b6cf8706c10d9814d24f67fd799e3216f66abffb05ccc828972f32d5e508684753bdbe6ac88960104729daea0d43a94316d138aefda4554ac6bee7d2a2bafc83a8a399c02698db390bb98624170c4484fb7cc0cfa51e57652a2f";

fn hex_const(s: &str) -> BigUint {
    BigUint::from_str_radix(s, 16).expect("valid hex constant")
}

impl GroupParams {
    pub fn insecure_test() -> &'static GroupParams {
        static PARAMS: OnceLock<GroupParams> = OnceLock::new();
        PARAMS.get_or_init(|| GroupParams {
            modulus_p: hex_const(TEST_P),
            order_q: hex_const(TEST_Q),
            generator_g: hex_const(TEST_G),
        })
    }

    pub fn production() -> &'static GroupParams {
        static PARAMS: OnceLock<GroupParams> = OnceLock::new();
        PARAMS.get_or_init(|| GroupParams {
            modulus_p: hex_const(PROD_P),
            order_q: hex_const(PROD_Q),
            generator_g: hex_const(PROD_G),
        })
    }

    /// Fresh Schnorr group with a `p_bits`-bit modulus and `q_bits`-bit order.
    pub fn generate<R: RngCore>(p_bits: u64, q_bits: u64, rng: &mut R) -> Result<Self, CryptoError> {
        if q_bits < 16 || p_bits <= q_bits + 1 {
            return Err(CryptoError::InvalidParams("need p_bits > q_bits + 1 and q_bits >= 16"));
        }
        let q = super::paillier::random_prime(q_bits, rng);
        let low = BigUint::one() << (p_bits - 1);
        let high = BigUint::one() << p_bits;
        let p = loop {
            let k = rng.gen_biguint_range(&(&low / &q), &(&high / &q));
            let k = if k.is_odd() { k + 1u32 } else { k };
            let p = &k * &q + 1u32;
            if p.bits() == p_bits && super::paillier::is_probable_prime(&p) {
                break p;
            }
        };
        let cofactor = (&p - 1u32) / &q;
        let mut h = BigUint::from(2u32);
        let g = loop {
            let g = h.modpow(&cofactor, &p);
            if !g.is_one() {
                break g;
            }
            h += 1u32;
        };
        let params = GroupParams { modulus_p: p, order_q: q, generator_g: g };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), CryptoError> {
        let p = &self.modulus_p;
        let q = &self.order_q;
        let g = &self.generator_g;
        if !((p - 1u32) % q).is_zero() {
            return Err(CryptoError::InvalidParams("q does not divide p - 1"));
        }
        if g.is_one() || g.is_zero() || g >= p {
            return Err(CryptoError::InvalidParams("generator out of range"));
        }
        if !g.modpow(q, p).is_one() {
            return Err(CryptoError::InvalidParams("generator does not have order q"));
        }
        if !super::paillier::is_probable_prime(p) || !super::paillier::is_probable_prime(q) {
            return Err(CryptoError::InvalidParams("p or q is composite"));
        }
        Ok(())
    }

    pub fn generator(&self) -> GroupElement {
        GroupElement(self.generator_g.clone())
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement(BigUint::one())
    }

    pub fn scalar(&self, v: BigUint) -> Scalar {
        Scalar(v % &self.order_q)
    }

    pub fn scalar_from_u64(&self, v: u64) -> Scalar {
        self.scalar(BigUint::from(v))
    }

    /// Reduce a digest into `Z_q` (Fiat–Shamir challenges).
    pub fn scalar_from_digest(&self, d: &Digest) -> Scalar {
        self.scalar(BigUint::from_bytes_be(d.as_bytes()))
    }

    pub fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Scalar {
        Scalar(rng.gen_biguint_below(&self.order_q))
    }

    /// Uniform in `[1, q)`.
    pub fn random_nonzero_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Scalar {
        Scalar(rng.gen_biguint_range(&BigUint::one(), &self.order_q))
    }

    pub fn is_scalar(&self, s: &Scalar) -> bool {
        s.0 < self.order_q
    }

    pub fn add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &b.0) % &self.order_q)
    }

    pub fn sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &self.order_q - (&b.0 % &self.order_q)) % &self.order_q)
    }

    pub fn mul_scalar(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 * &b.0) % &self.order_q)
    }

    pub fn neg(&self, a: &Scalar) -> Scalar {
        self.sub(&Scalar(BigUint::zero()), a)
    }

    /// `g^e`
    pub fn exp_g(&self, e: &Scalar) -> GroupElement {
        GroupElement(super::fixed_base::pow(&self.generator_g, &e.0, &self.modulus_p, self.order_q.bits()))
    }

    /// Same result as [`exp`](Self::exp), tuned for a base that recurs
    /// across many calls, such as a long-term public key.
    pub fn exp_fixed(&self, base: &GroupElement, e: &Scalar) -> GroupElement {
        GroupElement(super::fixed_base::pow(&base.0, &e.0, &self.modulus_p, self.order_q.bits()))
    }

    pub fn exp(&self, base: &GroupElement, e: &Scalar) -> GroupElement {
        GroupElement(base.0.modpow(&e.0, &self.modulus_p))
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement((&a.0 * &b.0) % &self.modulus_p)
    }

    pub fn inv(&self, a: &GroupElement) -> GroupElement {
        let inv = a
            .0
            .modinv(&self.modulus_p)
            .expect("subgroup elements are units mod p");
        GroupElement(inv)
    }

    pub fn div(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.mul(a, &self.inv(b))
    }

    pub fn is_member(&self, x: &GroupElement) -> bool {
        !x.0.is_zero() && x.0 < self.modulus_p && x.0.modpow(&self.order_q, &self.modulus_p).is_one()
    }

    /// Checked constructor for elements received from other principals.
    pub fn element(&self, v: BigUint) -> Result<GroupElement, CryptoError> {
        let e = GroupElement(v);
        if self.is_member(&e) {
            Ok(e)
        } else {
            Err(CryptoError::NotInSubgroup)
        }
    }
}
