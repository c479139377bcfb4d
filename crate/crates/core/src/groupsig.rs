//! Group signatures from ElGamal identity escrow and a 1-of-n OR proof.
//!
//! A signer with secret `s_i` and roster key `h_i = g^{s_i}` encrypts `h_i`
//! under the manager's escrow key `y = g^{x}` as `(T1, T2) = (g^r, h_i·y^r)`
//! and proves, for some roster index `j`, knowledge of `(r, s_j)` with
//!
//! ```text
//! T1 = g^r   and   T2 / h_j = y^r   and   h_j = g^{s_j}
//! ```
//!
//! The true clause is proven honestly and every other clause is simulated.
//! The clause challenges must sum to the Fiat–Shamir challenge, which binds
//! the group id, roster version, escrow pair, message, the roster snapshot and
//! all clause commitments. Only the manager can open `(T1, T2)` back to `h_i`.
//!
//! Signatures grow linearly with the roster.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    hash_encoded, std_verify, GroupElement, GroupParams, Scalar, StdKeyPair, StdSignature,
};
use crate::encoding::{Encode, Encoder};
use crate::par::Execution;

const FS_DOMAIN: &str = "etp/gs-fs";
const CERT_DOMAIN: &str = "etp/gs-cert";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub String);

impl GroupId {
    pub fn new(s: impl Into<String>) -> Self {
        GroupId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Encode for GroupId {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GsError {
    #[error("member public key is not a subgroup element")]
    InvalidMemberKey,
    #[error("member public key already in roster")]
    DuplicateMember,
    #[error("key belongs to group {0}, expected {1}")]
    GroupMismatch(GroupId, GroupId),
    #[error("member index {0} not in roster")]
    UnknownMember(u32),
    #[error("roster is empty")]
    EmptyRoster,
    #[error("signature refers to unknown roster version {0}")]
    UnknownRosterVersion(u32),
    #[error("signature has {found} clauses, roster snapshot has {expected}")]
    ClauseCount { expected: usize, found: usize },
    #[error("signature component outside its domain")]
    Malformed,
    #[error("proof does not verify")]
    ProofRejected,
    #[error("opened key is not in the roster (untraceable signature)")]
    Untraceable,
    #[error("roster certificate {0} does not verify")]
    BadCertificate(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub index: u32,
    pub public: GroupElement,
    pub cert: StdSignature,
}

/// `gpk(G)`: escrow key, certifying key and the append-only roster.
///
/// The roster only grows, so the snapshot at version `v` is its first `v`
/// entries and old signatures keep verifying after later joins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPublicKey {
    pub group_id: GroupId,
    pub escrow_public: GroupElement,
    pub manager_public: GroupElement,
    pub roster: Vec<RosterEntry>,
    pub roster_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupManagerKey {
    pub group_id: GroupId,
    pub escrow_secret: Scalar,
    pub cert_key: StdKeyPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSecretKey {
    pub group_id: GroupId,
    pub member_index: u32,
    pub secret: Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClauseProof {
    pub challenge: Scalar,
    pub z_r: Scalar,
    pub z_s: Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSignature {
    pub group_id: GroupId,
    pub roster_version: u32,
    pub t1: GroupElement,
    pub t2: GroupElement,
    pub clauses: Vec<ClauseProof>,
}

impl GroupSignature {
    /// The fields hashed ahead of the message: `(group_id, roster_version, T1, T2)`.
    pub fn prefix_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(&self.group_id)
            .u64(self.roster_version as u64)
            .field(&self.t1)
            .field(&self.t2);
        enc.finish()
    }
}

impl Encode for ClauseProof {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.challenge).field(&self.z_r).field(&self.z_s);
    }
}

impl Encode for GroupSignature {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.group_id)
            .u64(self.roster_version as u64)
            .field(&self.t1)
            .field(&self.t2);
        for clause in &self.clauses {
            enc.field(clause);
        }
    }
}

fn cert_message(group_id: &GroupId, index: u32, public: &GroupElement) -> Vec<u8> {
    let mut enc = Encoder::with_domain(CERT_DOMAIN);
    enc.field(group_id).u64(index as u64).field(public);
    enc.finish()
}

type Commitment = [GroupElement; 3];

fn fiat_shamir(
    params: &GroupParams,
    sig_prefix: &[u8],
    message: &[u8],
    roster: &[RosterEntry],
    commitments: &[Commitment],
) -> Scalar {
    let mut enc = Encoder::with_domain(FS_DOMAIN);
    enc.bytes(sig_prefix).bytes(message);
    enc.u64(roster.len() as u64);
    for entry in roster {
        enc.field(&entry.public);
    }
    for [a, b, c] in commitments {
        enc.field(a).field(b).field(c);
    }
    params.scalar_from_digest(&hash_encoded(&enc))
}

/// `Setup`: empty roster, fresh escrow key and certifying key.
pub fn gs_setup<R: RngCore + ?Sized>(
    params: &GroupParams,
    group_id: GroupId,
    rng: &mut R,
) -> (GroupPublicKey, GroupManagerKey) {
    let escrow_secret = params.random_nonzero_scalar(rng);
    let cert_key = StdKeyPair::generate(params, rng);
    let gpk = GroupPublicKey {
        group_id: group_id.clone(),
        escrow_public: params.exp_g(&escrow_secret),
        manager_public: cert_key.public.clone(),
        roster: Vec::new(),
        roster_version: 0,
    };
    let gmk = GroupManagerKey { group_id, escrow_secret, cert_key };
    (gpk, gmk)
}

/// Member-side half of `Join`: the secret never leaves the member.
pub fn gs_member_keygen<R: RngCore + ?Sized>(params: &GroupParams, rng: &mut R) -> (Scalar, GroupElement) {
    let s = params.random_nonzero_scalar(rng);
    let h = params.exp_g(&s);
    (s, h)
}

impl GroupManagerKey {
    /// `Join`: certify `h_i` and append it to the roster.
    pub fn join<R: RngCore + ?Sized>(
        &self,
        params: &GroupParams,
        gpk: &mut GroupPublicKey,
        member_public: GroupElement,
        rng: &mut R,
    ) -> Result<RosterEntry, GsError> {
        if gpk.group_id != self.group_id {
            return Err(GsError::GroupMismatch(gpk.group_id.clone(), self.group_id.clone()));
        }
        if !params.is_member(&member_public) || member_public == params.identity() {
            return Err(GsError::InvalidMemberKey);
        }
        if gpk.roster.iter().any(|e| e.public == member_public) {
            return Err(GsError::DuplicateMember);
        }
        let index = gpk.roster_version;
        let cert = self
            .cert_key
            .sign(params, &cert_message(&self.group_id, index, &member_public), rng);
        let entry = RosterEntry { index, public: member_public, cert };
        gpk.roster.push(entry.clone());
        gpk.roster_version += 1;
        Ok(entry)
    }

    /// `Open`: decrypt the escrow pair and look the key up in the signature's
    /// roster snapshot. Callers verify the signature first.
    pub fn open(&self, params: &GroupParams, gpk: &GroupPublicKey, sig: &GroupSignature) -> Result<u32, GsError> {
        if sig.group_id != self.group_id {
            return Err(GsError::GroupMismatch(sig.group_id.clone(), self.group_id.clone()));
        }
        let roster = gpk
            .snapshot(sig.roster_version)
            .ok_or(GsError::UnknownRosterVersion(sig.roster_version))?;
        let mask = params.exp(&sig.t1, &self.escrow_secret);
        let h = params.div(&sig.t2, &mask);
        roster
            .iter()
            .find(|e| e.public == h)
            .map(|e| e.index)
            .ok_or(GsError::Untraceable)
    }
}

impl GroupPublicKey {
    pub fn snapshot(&self, version: u32) -> Option<&[RosterEntry]> {
        if version > self.roster_version || version as usize > self.roster.len() {
            return None;
        }
        Some(&self.roster[..version as usize])
    }

    pub fn member(&self, index: u32) -> Option<&RosterEntry> {
        self.roster.get(index as usize)
    }

    /// Checks every certificate and that member keys are distinct.
    pub fn validate_roster(&self, params: &GroupParams) -> Result<(), GsError> {
        for (pos, entry) in self.roster.iter().enumerate() {
            if entry.index as usize != pos {
                return Err(GsError::BadCertificate(entry.index));
            }
            let msg = cert_message(&self.group_id, entry.index, &entry.public);
            if !std_verify(params, &self.manager_public, &msg, &entry.cert) {
                return Err(GsError::BadCertificate(entry.index));
            }
            if self.roster[..pos].iter().any(|e| e.public == entry.public) {
                return Err(GsError::DuplicateMember);
            }
        }
        if self.roster.len() != self.roster_version as usize {
            return Err(GsError::UnknownRosterVersion(self.roster_version));
        }
        Ok(())
    }

    pub fn verify(&self, params: &GroupParams, message: &[u8], sig: &GroupSignature) -> Result<(), GsError> {
        if sig.group_id != self.group_id {
            return Err(GsError::GroupMismatch(sig.group_id.clone(), self.group_id.clone()));
        }
        let roster = self
            .snapshot(sig.roster_version)
            .ok_or(GsError::UnknownRosterVersion(sig.roster_version))?;
        if roster.is_empty() {
            return Err(GsError::EmptyRoster);
        }
        if sig.clauses.len() != roster.len() {
            return Err(GsError::ClauseCount { expected: roster.len(), found: sig.clauses.len() });
        }
        if !params.is_member(&sig.t1) || !params.is_member(&sig.t2) {
            return Err(GsError::Malformed);
        }
        let mut challenge_sum = params.scalar_from_u64(0);
        let mut commitments = Vec::with_capacity(roster.len());
        for (entry, clause) in roster.iter().zip(&sig.clauses) {
            if !params.is_scalar(&clause.challenge) || !params.is_scalar(&clause.z_r) || !params.is_scalar(&clause.z_s) {
                return Err(GsError::Malformed);
            }
            commitments.push(self.reconstruct(params, sig, entry, clause));
            challenge_sum = params.add(&challenge_sum, &clause.challenge);
        }
        let expected = fiat_shamir(params, &sig.prefix_bytes(), message, roster, &commitments);
        if expected == challenge_sum {
            Ok(())
        } else {
            Err(GsError::ProofRejected)
        }
    }

    pub fn is_valid(&self, params: &GroupParams, message: &[u8], sig: &GroupSignature) -> bool {
        self.verify(params, message, sig).is_ok()
    }

    /// Verifies independent `(message, signature)` pairs; output order matches input.
    pub fn verify_batch(
        &self,
        params: &GroupParams,
        items: &[(Vec<u8>, GroupSignature)],
        exec: Execution,
    ) -> Vec<Result<(), GsError>> {
        exec.map(items, |(msg, sig)| self.verify(params, msg, sig))
    }

    /// Commitments implied by a clause transcript:
    /// `g^{z_r}·T1^{-c}`, `y^{z_r}·(T2/h_j)^{-c}`, `g^{z_s}·h_j^{-c}`.
    fn reconstruct(&self, params: &GroupParams, sig: &GroupSignature, entry: &RosterEntry, clause: &ClauseProof) -> Commitment {
        let neg_c = params.neg(&clause.challenge);
        let t2_over_h = params.div(&sig.t2, &entry.public);
        [
            params.mul(&params.exp_g(&clause.z_r), &params.exp(&sig.t1, &neg_c)),
            params.mul(&params.exp_fixed(&self.escrow_public, &clause.z_r), &params.exp(&t2_over_h, &neg_c)),
            params.mul(&params.exp_g(&clause.z_s), &params.exp_fixed(&entry.public, &neg_c)),
        ]
    }
}

/// `Sign` against the current roster version of `gpk`.
///
/// Only the member's group and index are checked here; a wrong secret yields
/// a signature that fails verification.
pub fn gs_sign<R: RngCore + ?Sized>(
    params: &GroupParams,
    gpk: &GroupPublicKey,
    msk: &MemberSecretKey,
    message: &[u8],
    rng: &mut R,
) -> Result<GroupSignature, GsError> {
    if msk.group_id != gpk.group_id {
        return Err(GsError::GroupMismatch(msk.group_id.clone(), gpk.group_id.clone()));
    }
    let roster = &gpk.roster[..gpk.roster_version as usize];
    if roster.is_empty() {
        return Err(GsError::EmptyRoster);
    }
    let me = msk.member_index as usize;
    let own = roster.get(me).ok_or(GsError::UnknownMember(msk.member_index))?;

    let r = params.random_nonzero_scalar(rng);
    let t1 = params.exp_g(&r);
    let t2 = params.mul(&own.public, &params.exp_fixed(&gpk.escrow_public, &r));
    let mut sig = GroupSignature {
        group_id: gpk.group_id.clone(),
        roster_version: gpk.roster_version,
        t1,
        t2,
        clauses: Vec::with_capacity(roster.len()),
    };

    let k_r = params.random_scalar(rng);
    let k_s = params.random_scalar(rng);
    let mut commitments = Vec::with_capacity(roster.len());
    for (j, entry) in roster.iter().enumerate() {
        if j == me {
            sig.clauses.push(ClauseProof {
                challenge: params.scalar_from_u64(0),
                z_r: k_r.clone(),
                z_s: k_s.clone(),
            });
            commitments.push([params.exp_g(&k_r), params.exp_fixed(&gpk.escrow_public, &k_r), params.exp_g(&k_s)]);
        } else {
            let clause = ClauseProof {
                challenge: params.random_scalar(rng),
                z_r: params.random_scalar(rng),
                z_s: params.random_scalar(rng),
            };
            commitments.push(gpk.reconstruct(params, &sig, entry, &clause));
            sig.clauses.push(clause);
        }
    }

    let total = fiat_shamir(params, &sig.prefix_bytes(), message, roster, &commitments);
    let simulated = sig
        .clauses
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != me)
        .fold(params.scalar_from_u64(0), |acc, (_, c)| params.add(&acc, &c.challenge));
    let c_me = params.sub(&total, &simulated);
    let clause = &mut sig.clauses[me];
    clause.z_r = params.add(&k_r, &params.mul_scalar(&c_me, &r));
    clause.z_s = params.add(&k_s, &params.mul_scalar(&c_me, &msk.secret));
    clause.challenge = c_me;
    Ok(sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::derive_rng;
    use rand_chacha::ChaCha20Rng;

    fn params() -> &'static GroupParams {
        GroupParams::insecure_test()
    }

    fn group(size: usize, rng: &mut ChaCha20Rng) -> (GroupPublicKey, GroupManagerKey, Vec<MemberSecretKey>) {
        let (mut gpk, gmk) = gs_setup(params(), GroupId::new("G1"), rng);
        let members = (0..size)
            .map(|_| {
                let (s, h) = gs_member_keygen(params(), rng);
                let entry = gmk.join(params(), &mut gpk, h, rng).unwrap();
                MemberSecretKey { group_id: gpk.group_id.clone(), member_index: entry.index, secret: s }
            })
            .collect();
        (gpk, gmk, members)
    }

    #[test]
    fn setup_initial_state() {
        let mut rng = derive_rng(1, "gs");
        let (gpk, gmk) = gs_setup(params(), GroupId::new("G1"), &mut rng);
        assert!(gpk.roster.is_empty());
        assert_eq!(gpk.roster_version, 0);
        assert_eq!(gpk.escrow_public, params().exp_g(&gmk.escrow_secret));
        assert!(params().is_member(&gpk.escrow_public));
    }

    #[test]
    fn distinct_seeds_distinct_escrow_keys() {
        let keys: std::collections::BTreeSet<_> = (0..100)
            .map(|s| gs_setup(params(), GroupId::new("G"), &mut derive_rng(s, "setup")).1.escrow_secret)
            .collect();
        assert_eq!(keys.len(), 100);
    }

    #[test]
    fn join_counter_and_duplicates() {
        let mut rng = derive_rng(2, "join");
        let (mut gpk, gmk, _) = group(3, &mut rng);
        assert_eq!(gpk.roster_version, 3);
        gpk.validate_roster(params()).unwrap();
        let dup = gpk.roster[1].public.clone();
        assert_eq!(gmk.join(params(), &mut gpk, dup, &mut rng).unwrap_err(), GsError::DuplicateMember);
        let bad = GroupElement::from_raw(&params().modulus_p - 1u32);
        assert_eq!(gmk.join(params(), &mut gpk, bad, &mut rng).unwrap_err(), GsError::InvalidMemberKey);
        assert_eq!(gpk.roster_version, 3);
    }

    #[test]
    fn sign_verify_open_every_member() {
        let mut rng = derive_rng(3, "trace");
        let (gpk, gmk, members) = group(5, &mut rng);
        for (k, msk) in members.iter().enumerate() {
            let sig = gs_sign(params(), &gpk, msk, b"loc", &mut rng).unwrap();
            gpk.verify(params(), b"loc", &sig).unwrap();
            assert_eq!(gmk.open(params(), &gpk, &sig).unwrap(), k as u32);
        }
    }

    #[test]
    fn single_member_group() {
        let mut rng = derive_rng(4, "one");
        let (gpk, gmk, members) = group(1, &mut rng);
        let sig = gs_sign(params(), &gpk, &members[0], b"m", &mut rng).unwrap();
        assert!(gpk.is_valid(params(), b"m", &sig));
        assert_eq!(gmk.open(params(), &gpk, &sig).unwrap(), 0);
    }

    #[test]
    fn cross_group_rejected() {
        let mut rng = derive_rng(5, "cross");
        let (gpk1, _, m1) = group(2, &mut rng);
        let (mut gpk2, gmk2) = gs_setup(params(), GroupId::new("G2"), &mut rng);
        for e in &gpk1.roster {
            gmk2.join(params(), &mut gpk2, e.public.clone(), &mut rng).unwrap();
        }
        let sig = gs_sign(params(), &gpk1, &m1[0], b"m", &mut rng).unwrap();
        assert!(matches!(gpk2.verify(params(), b"m", &sig), Err(GsError::GroupMismatch(..))));
        let mut renamed = sig.clone();
        renamed.group_id = GroupId::new("G2");
        assert!(gpk2.verify(params(), b"m", &renamed).is_err());
    }

    #[test]
    fn old_versions_verify_after_joins() {
        let mut rng = derive_rng(6, "version");
        let (mut gpk, gmk, members) = group(2, &mut rng);
        let sig = gs_sign(params(), &gpk, &members[1], b"m", &mut rng).unwrap();
        for _ in 0..3 {
            let (_, h) = gs_member_keygen(params(), &mut rng);
            gmk.join(params(), &mut gpk, h, &mut rng).unwrap();
        }
        gpk.verify(params(), b"m", &sig).unwrap();
        assert_eq!(gmk.open(params(), &gpk, &sig).unwrap(), 1);
        let mut future = sig.clone();
        future.roster_version = 9;
        assert_eq!(gpk.verify(params(), b"m", &future).unwrap_err(), GsError::UnknownRosterVersion(9));
    }

    #[test]
    fn wrong_manager_cannot_open() {
        let mut rng = derive_rng(7, "open");
        let (gpk, gmk, members) = group(4, &mut rng);
        let mut failures = 0;
        for _ in 0..100 {
            let sig = gs_sign(params(), &gpk, &members[2], b"m", &mut rng).unwrap();
            let impostor = GroupManagerKey {
                escrow_secret: params().random_nonzero_scalar(&mut rng),
                ..gmk.clone()
            };
            if impostor.open(params(), &gpk, &sig) == Err(GsError::Untraceable) {
                failures += 1;
            }
        }
        assert_eq!(failures, 100);
    }

    #[test]
    fn mismatched_member_key_rejected_at_sign() {
        let mut rng = derive_rng(8, "mismatch");
        let (gpk, _, members) = group(2, &mut rng);
        let mut foreign = members[0].clone();
        foreign.group_id = GroupId::new("other");
        assert!(matches!(gs_sign(params(), &gpk, &foreign, b"m", &mut rng), Err(GsError::GroupMismatch(..))));
        let mut missing = members[0].clone();
        missing.member_index = 7;
        assert_eq!(gs_sign(params(), &gpk, &missing, b"m", &mut rng).unwrap_err(), GsError::UnknownMember(7));
    }

    #[test]
    fn batch_verification_matches_single() {
        let mut rng = derive_rng(9, "batch");
        let (gpk, _, members) = group(3, &mut rng);
        let mut items: Vec<_> = (0..8u8)
            .map(|i| {
                let msg = vec![i];
                let sig = gs_sign(params(), &gpk, &members[i as usize % 3], &msg, &mut rng).unwrap();
                (msg, sig)
            })
            .collect();
        items[5].0 = vec![99];
        for exec in [Execution::Sequential, Execution::Parallel] {
            let out = gpk.verify_batch(params(), &items, exec);
            assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 7);
            assert!(out[5].is_err());
        }
    }
}
