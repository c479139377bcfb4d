use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use etp_core::crypto::*;
use etp_core::groupsig::*;
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::Rng;

fn params() -> &'static GroupParams {
    GroupParams::insecure_test()
}

fn paillier() -> &'static (PaillierPublicKey, PaillierSecretKey) {
    static KEY: OnceLock<(PaillierPublicKey, PaillierSecretKey)> = OnceLock::new();
    KEY.get_or_init(|| paillier_keygen(128, &mut derive_rng(11, "prop-paillier")).unwrap())
}

fn below(bytes: &[u8], n: &BigUint) -> BigUint {
    BigUint::from_bytes_be(bytes) % n
}

fn flip(v: &BigUint, bit: u64) -> BigUint {
    let mut v = v.clone();
    v.set_bit(bit, !v.bit(bit));
    v
}

fn scalar_with(v: &BigUint) -> Scalar {
    serde_json::from_value(serde_json::Value::String(v.to_str_radix(16))).unwrap()
}

fn element_with(v: &BigUint) -> GroupElement {
    serde_json::from_value(serde_json::Value::String(v.to_str_radix(16))).unwrap()
}

struct Group {
    gpk: GroupPublicKey,
    gmk: GroupManagerKey,
    members: Vec<MemberSecretKey>,
}

fn group(size: usize, seed: u64) -> Group {
    let rng = &mut derive_rng(seed, "prop-group");
    let (mut gpk, gmk) = gs_setup(params(), GroupId::new("G"), rng);
    let members = (0..size)
        .map(|_| {
            let (s, h) = gs_member_keygen(params(), rng);
            let e = gmk.join(params(), &mut gpk, h, rng).unwrap();
            MemberSecretKey { group_id: gpk.group_id.clone(), member_index: e.index, secret: s }
        })
        .collect();
    Group { gpk, gmk, members }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn paillier_is_additively_homomorphic(a in any::<[u8; 24]>(), b in any::<[u8; 24]>(), seed in any::<u64>()) {
        let (pk, sk) = paillier();
        let (m1, m2) = (below(&a, &pk.n), below(&b, &pk.n));
        let rng = &mut derive_rng(seed, "hom");
        let c1 = pk.encrypt(&m1, &pk.random_randomness(rng)).unwrap();
        let c2 = pk.encrypt(&m2, &pk.random_randomness(rng)).unwrap();
        prop_assert_eq!(sk.decrypt(&pk.add(&c1, &c2)).unwrap(), (m1 + m2) % &pk.n);
    }

    #[test]
    fn std_signature_rejects_any_single_bit_flip(seed in any::<u64>(), msg in prop::collection::vec(any::<u8>(), 1..64), pick in any::<u64>()) {
        let rng = &mut derive_rng(seed, "fuzz");
        let key = StdKeyPair::generate(params(), rng);
        let sig = key.sign(params(), &msg, rng);
        prop_assert!(std_verify(params(), &key.public, &msg, &sig));
        let q_bits = params().order_q.bits();
        match pick % 3 {
            0 => {
                let mut m = msg.clone();
                let bit = (pick / 3) as usize % (m.len() * 8);
                m[bit / 8] ^= 1 << (bit % 8);
                prop_assert!(!std_verify(params(), &key.public, &m, &sig));
            }
            1 => {
                let bad = StdSignature { challenge: scalar_with(&flip(sig.challenge.value(), (pick / 3) % q_bits)), ..sig.clone() };
                prop_assert!(!std_verify(params(), &key.public, &msg, &bad));
            }
            _ => {
                let bad = StdSignature { response: scalar_with(&flip(sig.response.value(), (pick / 3) % q_bits)), ..sig.clone() };
                prop_assert!(!std_verify(params(), &key.public, &msg, &bad));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn paillier_round_trips(a in any::<[u8; 24]>(), seed in any::<u64>()) {
        let (pk, sk) = paillier();
        let m = below(&a, &pk.n);
        let r = pk.random_randomness(&mut derive_rng(seed, "rt"));
        prop_assert_eq!(sk.decrypt(&pk.encrypt(&m, &r).unwrap()).unwrap(), m);
    }

    #[test]
    fn subgroup_is_closed(a in any::<[u8; 32]>(), b in any::<[u8; 32]>()) {
        let p = params();
        let x = p.exp_g(&p.scalar(BigUint::from_bytes_be(&a)));
        let y = p.exp_g(&p.scalar(BigUint::from_bytes_be(&b)));
        for z in [p.mul(&x, &y), p.exp(&x, &p.scalar(BigUint::from_bytes_be(&b))), p.inv(&y)] {
            prop_assert!(z.value().modpow(&p.order_q, &p.modulus_p) == BigUint::from(1u32));
        }
    }

    #[test]
    fn explicit_randomness_makes_signing_deterministic(seed in any::<u64>(), msg in any::<Vec<u8>>()) {
        let key = StdKeyPair::generate(params(), &mut derive_rng(seed, "k"));
        let a = key.sign(params(), &msg, &mut derive_rng(seed, "s"));
        let b = key.sign(params(), &msg, &mut derive_rng(seed, "s"));
        prop_assert_eq!(a, b);
        let (pk, _) = paillier();
        let r = pk.random_randomness(&mut derive_rng(seed, "r"));
        prop_assert_eq!(pk.encrypt_u64(seed, &r).unwrap(), pk.encrypt_u64(seed, &r).unwrap());
    }
}

fn mutate(sig: &GroupSignature, msg: &[u8], rng: &mut impl Rng) -> (GroupSignature, Vec<u8>) {
    let mut s = sig.clone();
    let mut m = msg.to_vec();
    let q_bits = params().order_q.bits();
    let p_bits = params().modulus_p.bits();
    let k = rng.gen_range(0..s.clauses.len());
    match rng.gen_range(0..8) {
        0 => s.t1 = element_with(&flip(s.t1.value(), rng.gen_range(0..p_bits))),
        1 => s.t2 = element_with(&flip(s.t2.value(), rng.gen_range(0..p_bits))),
        2 => s.clauses[k].challenge = scalar_with(&flip(s.clauses[k].challenge.value(), rng.gen_range(0..q_bits))),
        3 => s.clauses[k].z_r = scalar_with(&flip(s.clauses[k].z_r.value(), rng.gen_range(0..q_bits))),
        4 => s.clauses[k].z_s = scalar_with(&flip(s.clauses[k].z_s.value(), rng.gen_range(0..q_bits))),
        5 => s.roster_version -= 1 + rng.gen_range(0..s.roster_version),
        6 => s.group_id = GroupId::new(format!("G{}", rng.gen_range(0..10))),
        _ => {
            let bit = rng.gen_range(0..m.len() * 8);
            m[bit / 8] ^= 1 << (bit % 8);
        }
    }
    (s, m)
}

#[test]
fn single_field_mutations_fail_verification() {
    let g = group(4, 21);
    let rng = &mut derive_rng(21, "mutate");
    let mut failures = 0;
    for i in 0..1000 {
        let msg = format!("48.510000|2.310000|{i}").into_bytes();
        let sig = gs_sign(params(), &g.gpk, &g.members[i % 4], &msg, rng).unwrap();
        let (bad, m) = mutate(&sig, &msg, rng);
        if g.gpk.is_valid(params(), &m, &bad) {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn manager_cannot_sign_for_members() {
    let g = group(5, 22);
    let rng = &mut derive_rng(22, "forge");
    for i in 0..100u32 {
        let fake = MemberSecretKey {
            group_id: g.gmk.group_id.clone(),
            member_index: i % 5,
            secret: params().random_nonzero_scalar(rng),
        };
        let msg = i.to_be_bytes();
        if let Ok(sig) = gs_sign(params(), &g.gpk, &fake, &msg, rng) {
            assert!(!g.gpk.is_valid(params(), &msg, &sig), "attempt {i}");
        }
    }
}

#[test]
fn signatures_by_one_member_never_repeat_a_field() {
    let g = group(3, 23);
    let rng = &mut derive_rng(23, "link");
    let mut seen = HashSet::new();
    let mut fields = 0;
    for _ in 0..200 {
        let sig = gs_sign(params(), &g.gpk, &g.members[1], b"same message", rng).unwrap();
        let mut values = vec![sig.t1.value().clone(), sig.t2.value().clone()];
        for c in &sig.clauses {
            values.extend([c.challenge.value().clone(), c.z_r.value().clone(), c.z_s.value().clone()]);
        }
        fields += values.len();
        seen.extend(values);
    }
    assert_eq!(seen.len(), fields);
}

/// Share of values above `q/2`, per clause position and field.
fn upper_half_rates(sigs: &[GroupSignature]) -> Vec<f64> {
    let half = &params().order_q >> 1;
    let n = sigs[0].clauses.len();
    let mut rates = Vec::new();
    for k in 0..n {
        for f in 0..3 {
            let hits = sigs
                .iter()
                .filter(|s| {
                    let c = &s.clauses[k];
                    [&c.challenge, &c.z_r, &c.z_s][f].value() > &half
                })
                .count();
            rates.push(hits as f64 / sigs.len() as f64);
        }
    }
    rates
}

#[test]
fn non_escrow_fields_look_alike_across_signers() {
    let g = group(3, 24);
    let rng = &mut derive_rng(24, "anon");
    let sign = |k: usize, rng: &mut _| -> Vec<GroupSignature> {
        (0..200).map(|_| gs_sign(params(), &g.gpk, &g.members[k], b"fixed", rng).unwrap()).collect()
    };
    let a = sign(0, rng);
    let b = sign(2, rng);
    let shape = |s: &GroupSignature| (s.group_id.clone(), s.roster_version, s.clauses.len());
    assert!(a.iter().chain(&b).all(|s| shape(s) == shape(&a[0])));
    for (ra, rb) in upper_half_rates(&a).into_iter().zip(upper_half_rates(&b)) {
        assert!((ra - rb).abs() < 0.2, "{ra} vs {rb}");
        assert!((0.3..0.7).contains(&ra) && (0.3..0.7).contains(&rb), "{ra} {rb}");
    }
}

#[test]
fn old_signatures_verify_after_later_joins() {
    let mut g = group(2, 25);
    let rng = &mut derive_rng(25, "version");
    let old = gs_sign(params(), &g.gpk, &g.members[1], b"early", rng).unwrap();
    for _ in 0..3 {
        let (_, h) = gs_member_keygen(params(), rng);
        g.gmk.join(params(), &mut g.gpk, h, rng).unwrap();
    }
    assert_eq!(g.gpk.roster_version, 5);
    assert_eq!(old.roster_version, 2);
    g.gpk.verify(params(), b"early", &old).unwrap();
    assert_eq!(g.gmk.open(params(), &g.gpk, &old).unwrap(), 1);
    let new = gs_sign(params(), &g.gpk, &g.members[0], b"late", rng).unwrap();
    assert_eq!(new.clauses.len(), 5);
    let mut downgraded = new.clone();
    downgraded.roster_version = 2;
    assert!(!g.gpk.is_valid(params(), b"late", &downgraded));
}

#[test]
fn wrong_manager_key_cannot_open() {
    let g = group(4, 26);
    let rng = &mut derive_rng(26, "open");
    let mut opened = BTreeSet::new();
    for i in 0..100 {
        let sig = gs_sign(params(), &g.gpk, &g.members[i % 4], b"m", rng).unwrap();
        let (_, other) = gs_setup(params(), GroupId::new("G"), rng);
        if let Ok(k) = other.open(params(), &g.gpk, &sig) {
            opened.insert(k);
        }
    }
    assert!(opened.is_empty());
}
