use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::spot_check::{spot_check, Observation, SpotCheckParams, SpotCheckRecord};
use super::types::*;
use super::ProtocolError;
use crate::crypto::{std_verify, Digest, GroupElement, GroupParams, PaillierPublicKey, PaillierSecretKey, StdKeyPair};
use crate::groupsig::{GroupId, GroupPublicKey, GsError};
use crate::par::Execution;
use crate::tolling::{
    derive_fee_randomness, empty_commitment, make_fee_tuples, ChargingPolicy, LocationRecord, TollSession, TollingError,
};

/// Scripted server misbehaviour.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerBehaviour {
    /// Published fee offsets (cents) for the tuples with these hashes.
    pub wrong_fees: Vec<(Digest, i64)>,
    /// Tuples left out of `L'`.
    pub drop_tuples: Vec<Digest>,
    /// Users whose settled commitments are dropped from the books.
    pub omit_payments: BTreeSet<UserId>,
    /// Users whose commitment is booked as a commitment to zero.
    pub tamper_commitments: BTreeSet<UserId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum IngestOutcome {
    Accepted,
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "balance", rename_all = "snake_case")]
pub enum Balance {
    Balanced,
    /// `expected − paid` in cents.
    Imbalanced { deficit: i64 },
}

/// `a − b` saturated to the range of `i64`.
fn cents_diff(a: u128, b: u128) -> i64 {
    let d = a as i128 - b as i128;
    d.clamp(i64::MIN as i128, i64::MAX as i128) as i64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjustment {
    pub user: UserId,
    pub real_cents: u64,
    pub claimed_cents: u64,
    pub unpaid_cents: i64,
}

/// Everything the server holds from the driving phase and the published
/// fee sets. Settlement records are excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerView {
    pub location_db: BTreeMap<GroupId, Vec<LocationRecord>>,
    pub rejected: u64,
    pub fee_sets: BTreeMap<GroupId, PublishedFeeSet>,
}

pub struct TollServer {
    pub behaviour: ServerBehaviour,
    params: &'static GroupParams,
    keys: StdKeyPair,
    paillier: PaillierSecretKey,
    policy: ChargingPolicy,
    session: TollSession,
    pins: BTreeMap<UserId, Secret16>,
    user_keys: BTreeMap<UserId, GroupElement>,
    plates: BTreeMap<String, UserId>,
    groups: BTreeMap<GroupId, GroupPublicKey>,
    members: BTreeMap<GroupId, BTreeSet<UserId>>,
    location_db: BTreeMap<GroupId, Vec<LocationRecord>>,
    rejected: u64,
    fee_sets: BTreeMap<GroupId, PublishedFeeSet>,
    commitments: BTreeMap<GroupId, BTreeMap<UserId, PaymentCommitment>>,
    receipts: BTreeMap<UserId, Receipt>,
    adjustments: Vec<Adjustment>,
    exec: Execution,
    rng: ChaCha20Rng,
}

impl TollServer {
    pub fn new(
        params: &'static GroupParams,
        paillier: PaillierSecretKey,
        policy: ChargingPolicy,
        session: TollSession,
        exec: Execution,
        mut rng: ChaCha20Rng,
    ) -> Self {
        let keys = StdKeyPair::generate(params, &mut rng);
        TollServer {
            behaviour: ServerBehaviour::default(),
            params,
            keys,
            paillier,
            policy,
            session,
            pins: BTreeMap::new(),
            user_keys: BTreeMap::new(),
            plates: BTreeMap::new(),
            groups: BTreeMap::new(),
            members: BTreeMap::new(),
            location_db: BTreeMap::new(),
            rejected: 0,
            fee_sets: BTreeMap::new(),
            commitments: BTreeMap::new(),
            receipts: BTreeMap::new(),
            adjustments: Vec::new(),
            exec,
            rng,
        }
    }

    pub fn public(&self) -> &GroupElement {
        &self.keys.public
    }

    pub fn paillier_public(&self) -> &PaillierPublicKey {
        &self.paillier.public
    }

    pub fn session(&self) -> &TollSession {
        &self.session
    }

    pub fn user_keys(&self) -> &BTreeMap<UserId, GroupElement> {
        &self.user_keys
    }

    // --- set-up ---

    /// Issues a fresh 128-bit pin, delivered out of band with the plate.
    pub fn enroll(&mut self, user: &UserId, plate: &str) -> Result<Secret16, ProtocolError> {
        if self.pins.contains_key(user) {
            return Err(ProtocolError::AlreadyEnrolled(user.clone()));
        }
        let pin = Secret16::random(&mut self.rng);
        self.pins.insert(user.clone(), pin);
        self.plates.insert(plate.to_string(), user.clone());
        Ok(pin)
    }

    /// Checks `Sig_c(pin ∥ pk(c))` against the pin enrolled for that user
    /// and answers with `Sig_S(pk(c))`.
    pub fn register_key(&mut self, reg: &KeyRegistration) -> Result<KeyCertificate, ProtocolError> {
        let pin = self.pins.get(&reg.user).ok_or_else(|| ProtocolError::UnknownUser(reg.user.clone()))?;
        if !self.params.is_member(&reg.public)
            || !std_verify(self.params, &reg.public, &pin_message(pin, &reg.public), &reg.pin_sig)
        {
            return Err(ProtocolError::BadPinSignature);
        }
        self.user_keys.insert(reg.user.clone(), reg.public.clone());
        let server_sig = self
            .keys
            .sign(self.params, &key_cert_message(&reg.user, &reg.public), &mut self.rng);
        Ok(KeyCertificate { user: reg.user.clone(), public: reg.public.clone(), server_sig })
    }

    /// Group public keys and member lists as published by the authority.
    pub fn learn_group(&mut self, gpk: GroupPublicKey, users: impl IntoIterator<Item = UserId>) {
        self.members.entry(gpk.group_id.clone()).or_default().extend(users);
        self.groups.insert(gpk.group_id.clone(), gpk);
    }

    pub fn plate_owner(&self, plate: &str) -> Option<&UserId> {
        self.plates.get(plate)
    }

    // --- driving ---

    fn check_record(&self, record: &LocationRecord) -> Result<&GroupPublicKey, String> {
        let gpk = self
            .groups
            .get(&record.tuple.group)
            .ok_or_else(|| format!("unknown group {}", record.tuple.group))?;
        if !self.session.contains(record.tuple.time) {
            return Err(format!("time {} outside session", record.tuple.time));
        }
        Ok(gpk)
    }

    fn store(&mut self, record: LocationRecord, verdict: Result<(), String>) -> IngestOutcome {
        match verdict {
            Ok(()) => {
                self.location_db.entry(record.tuple.group.clone()).or_default().push(record);
                IngestOutcome::Accepted
            }
            Err(reason) => {
                self.rejected += 1;
                IngestOutcome::Rejected(reason)
            }
        }
    }

    /// Verifies `Gs(h(ℓ,t))` under the group key; only the record is kept.
    pub fn ingest(&mut self, record: LocationRecord) -> IngestOutcome {
        let verdict = self.check_record(&record).and_then(|gpk| {
            gpk.verify(self.params, record.tuple.loc_hash().as_bytes(), &record.signature)
                .map_err(|e| e.to_string())
        });
        self.store(record, verdict)
    }

    /// Verification fans out; storage order matches input order.
    pub fn ingest_batch(&mut self, records: Vec<LocationRecord>) -> Vec<IngestOutcome> {
        let verdicts: Vec<Result<(), String>> = self.exec.map(&records, |record| {
            self.check_record(record).and_then(|gpk| {
                gpk.verify(self.params, record.tuple.loc_hash().as_bytes(), &record.signature)
                    .map_err(|e: GsError| e.to_string())
            })
        });
        records
            .into_iter()
            .zip(verdicts)
            .map(|(record, verdict)| self.store(record, verdict))
            .collect()
    }

    /// Stores a record without verification (forged-location misbehaviour).
    pub fn inject_record(&mut self, record: LocationRecord) {
        self.location_db.entry(record.tuple.group.clone()).or_default().push(record);
    }

    pub fn records(&self, group: &GroupId) -> &[LocationRecord] {
        self.location_db.get(group).map(Vec::as_slice).unwrap_or(&[])
    }

    // --- toll calculation ---

    /// Builds and signs `L'` once per group; later calls return the stored set.
    pub fn publish_fees(&mut self, group: &GroupId) -> Result<PublishedFeeSet, ProtocolError> {
        if let Some(set) = self.fee_sets.get(group) {
            return Ok(set.clone());
        }
        if !self.groups.contains_key(group) {
            return Err(ProtocolError::UnknownGroup(group.clone()));
        }
        let tuples: Vec<_> = self.records(group).iter().map(|r| r.tuple.clone()).collect();
        let pk = &self.paillier.public;
        let mut fee_tuples = make_fee_tuples(&self.policy, &tuples, pk, &self.session, self.exec)?;
        fee_tuples.retain(|t| !self.behaviour.drop_tuples.contains(&t.loc_hash));
        for (target, delta) in &self.behaviour.wrong_fees {
            let Some(slot) = fee_tuples.iter_mut().find(|t| &t.loc_hash == target) else { continue };
            let Some(rec) = tuples.iter().find(|t| &t.loc_hash() == target) else { continue };
            let fee = self.policy.compute_fee(&rec.location, rec.time) as i128 + *delta as i128;
            let fee = u64::try_from(fee.max(0)).unwrap_or(u64::MAX);
            let r = derive_fee_randomness(pk, &self.session.sid, target);
            slot.enc_fee = pk.encrypt_u64(fee, &r).map_err(TollingError::from)?;
        }
        let msg = PublishedFeeSet::signed_message(group, &self.session.sid, &fee_tuples);
        let signature = self.keys.sign(self.params, &msg, &mut self.rng);
        let set = PublishedFeeSet { group: group.clone(), sid: self.session.sid.clone(), tuples: fee_tuples, signature };
        self.fee_sets.insert(group.clone(), set.clone());
        Ok(set)
    }

    /// Verifies the binding to this server's own `Sig_S(L', sid)`, decrypts
    /// the toll and signs a receipt.
    pub fn settle(&mut self, c: &PaymentCommitment) -> Result<Receipt, ProtocolError> {
        let fee_set = self
            .fee_sets
            .get(&c.group)
            .ok_or_else(|| ProtocolError::FeeSetNotPublished(c.group.clone()))?;
        let user_key = self.user_keys.get(&c.user).ok_or_else(|| ProtocolError::UnknownUser(c.user.clone()))?;
        if c.sid != self.session.sid || c.fee_set_sig != fee_set.signature || !c.verify(self.params, user_key) {
            return Err(ProtocolError::BadBindingSignature);
        }
        let cost_cents = self.paillier.decrypt_u64(&c.toll)?;
        let msg = Receipt::signed_message(&c.sid, &c.user, cost_cents, &c.toll);
        let signature = self.keys.sign(self.params, &msg, &mut self.rng);
        let receipt = Receipt { sid: c.sid.clone(), user: c.user.clone(), cost_cents, toll: c.toll.clone(), signature };
        if !self.behaviour.omit_payments.contains(&c.user) {
            let mut booked = c.clone();
            if self.behaviour.tamper_commitments.contains(&c.user) {
                booked.toll = empty_commitment(&self.paillier.public, &c.sid, c.user.as_str());
            }
            self.commitments.entry(c.group.clone()).or_default().insert(c.user.clone(), booked);
        }
        self.receipts.insert(c.user.clone(), receipt.clone());
        Ok(receipt)
    }

    pub fn commitments(&self, group: &GroupId) -> impl Iterator<Item = &PaymentCommitment> {
        self.commitments.get(group).into_iter().flat_map(|m| m.values())
    }

    /// Signed claims for every group member with no commitment on the books.
    pub fn non_payment_statements(&mut self, group: &GroupId) -> Vec<NonPaymentStatement> {
        let members = self.members.get(group).cloned().unwrap_or_default();
        let paid = self.commitments.get(group).cloned().unwrap_or_default();
        members
            .into_iter()
            .filter(|u| !paid.contains_key(u))
            .map(|user| {
                let msg = NonPaymentStatement::signed_message(group, &self.session.sid, &user);
                let signature = self.keys.sign(self.params, &msg, &mut self.rng);
                NonPaymentStatement { group: group.clone(), sid: self.session.sid.clone(), user, signature }
            })
            .collect()
    }

    /// Σ decrypted commitments against Σ policy fees over stored records.
    pub fn check_balance(&self, group: &GroupId) -> Result<Balance, ProtocolError> {
        let expected: u128 = self
            .records(group)
            .iter()
            .map(|r| self.policy.compute_fee(&r.tuple.location, r.tuple.time) as u128)
            .sum();
        let mut paid: u128 = 0;
        for c in self.commitments(group) {
            paid += self.paillier.decrypt_u64(&c.toll)? as u128;
        }
        paid += self
            .adjustments
            .iter()
            .filter(|a| self.members.get(group).is_some_and(|m| m.contains(&a.user)))
            .map(|a| a.unpaid_cents.max(0) as u128)
            .sum::<u128>();
        Ok(if expected == paid {
            Balance::Balanced
        } else {
            Balance::Imbalanced { deficit: cents_diff(expected, paid) }
        })
    }

    /// Builds `S` (one entry per stored record) and `T` (every commitment on
    /// the books) and signs the bundle.
    pub fn build_dispute(&mut self, group: &GroupId) -> Result<DisputeBundle, ProtocolError> {
        let fee_set = self.publish_fees(group)?;
        let pk = self.paillier.public.clone();
        let set_s: Vec<SetSEntry> = self
            .records(group)
            .iter()
            .map(|r| {
                let loc_hash = r.tuple.loc_hash();
                let enc_fee = match fee_set.lookup(&loc_hash) {
                    Some(t) => t.enc_fee.clone(),
                    None => {
                        let fee = self.policy.compute_fee(&r.tuple.location, r.tuple.time);
                        pk.encrypt_u64(fee, &derive_fee_randomness(&pk, &self.session.sid, &loc_hash))
                            .expect("derived randomness is a unit")
                    }
                };
                SetSEntry { loc_hash, enc_fee, signature: r.signature.clone() }
            })
            .collect();
        let set_t: Vec<SetTEntry> = self
            .commitments(group)
            .map(|c| SetTEntry { user: c.user.clone(), toll: c.toll.clone(), binding_sig: c.binding_sig.clone() })
            .collect();
        let msg = DisputeBundle::message_for(group, &self.session.sid, &set_s, &set_t, &fee_set.signature);
        let server_sig = self.keys.sign(self.params, &msg, &mut self.rng);
        Ok(DisputeBundle { group: group.clone(), sid: self.session.sid.clone(), set_s, set_t, fee_set_sig: fee_set.signature, server_sig })
    }

    /// `unpaid = real − claimed` for each accused user, with a missing
    /// commitment counting as zero.
    pub fn finalize_dispute(
        &mut self,
        result: &DisputeResult,
        authority_public: &GroupElement,
    ) -> Result<Vec<Adjustment>, ProtocolError> {
        if !result.verify(self.params, authority_public) {
            return Err(ProtocolError::BadAuthoritySignature);
        }
        let mut out = Vec::new();
        for accused in result.verdict.accused() {
            let real_cents = self.paillier.decrypt_u64(&accused.real_toll)?;
            let claimed_cents = match self.commitments.get(&result.group).and_then(|m| m.get(&accused.user)) {
                Some(c) => self.paillier.decrypt_u64(&c.toll)?,
                None => 0,
            };
            let adj = Adjustment {
                user: accused.user.clone(),
                real_cents,
                claimed_cents,
                unpaid_cents: cents_diff(real_cents as u128, claimed_cents as u128),
            };
            self.adjustments.push(adj.clone());
            out.push(adj);
        }
        Ok(out)
    }

    /// Withdraws an adjustment the user has refuted with a receipt.
    pub fn withdraw_adjustment(&mut self, user: &UserId) {
        self.adjustments.retain(|a| &a.user != user);
    }

    pub fn decrypt_cents(&self, c: &crate::crypto::PaillierCiphertext) -> Result<u64, ProtocolError> {
        Ok(self.paillier.decrypt_u64(c)?)
    }

    pub fn view(&self) -> ServerView {
        ServerView { location_db: self.location_db.clone(), rejected: self.rejected, fee_sets: self.fee_sets.clone() }
    }

    // --- spot checks ---

    /// Maps the plate to its owner's group, evaluates the predicate against
    /// that group's records and signs the outcome.
    pub fn spot_check(&mut self, obs: &Observation, params: &SpotCheckParams) -> Result<SpotCheckRecord, ProtocolError> {
        let user = self
            .plates
            .get(&obs.plate)
            .cloned()
            .ok_or_else(|| ProtocolError::UnknownUser(UserId::new(obs.plate.clone())))?;
        let group = self
            .members
            .iter()
            .find(|(_, users)| users.contains(&user))
            .map(|(g, _)| g.clone())
            .ok_or(ProtocolError::NotJoined)?;
        let outcome = spot_check(
            obs,
            self.records(&group).iter().map(|r| (&r.tuple.location, r.tuple.time)),
            params,
        );
        let msg = SpotCheckRecord::signed_message(obs, &user, &group, outcome.is_flagged());
        let signature = self.keys.sign(self.params, &msg, &mut self.rng);
        Ok(SpotCheckRecord { observation: obs.clone(), user, group, outcome, signature })
    }
}

impl std::fmt::Debug for TollServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TollServer")
            .field("groups", &self.groups.keys().collect::<Vec<_>>())
            .field("rejected", &self.rejected)
            .finish()
    }
}
