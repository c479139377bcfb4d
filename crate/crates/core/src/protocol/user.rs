use num_traits::ToPrimitive;
use rand::seq::index::sample;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::types::*;
use super::ProtocolError;
use crate::crypto::{GroupElement, GroupParams, PaillierCiphertext, PaillierPublicKey, Scalar, StdKeyPair};
use crate::groupsig::{gs_member_keygen, gs_sign, GroupPublicKey, MemberSecretKey};
use crate::tolling::{empty_commitment, fee_tuple_for, ChargingPolicy, Location, LocationRecord, LocationTuple, TollSession};

/// OBU tampering during `[from, until)`: silence when `replacement` is
/// `None`, otherwise report the replacement position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObuManipulation {
    pub from: u64,
    pub until: u64,
    pub replacement: Option<Location>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserBehaviour {
    /// Fraction of own fee tuples left out of the toll product.
    pub skip_fraction: f64,
    pub refuse_pay: bool,
    pub obu: Vec<ObuManipulation>,
}

impl UserBehaviour {
    pub fn is_honest(&self) -> bool {
        self.skip_fraction == 0.0 && !self.refuse_pay && self.obu.is_empty()
    }
}

/// Why a user refused to commit to a published fee set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "abort", rename_all = "snake_case")]
pub enum TollAbort {
    BadFeeSetSignature,
    IncompleteFeeSet { location: Location, time: u64 },
    WrongFee { location: Location, time: u64, published: PaillierCiphertext, expected: PaillierCiphertext },
}

impl std::fmt::Display for TollAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TollAbort::BadFeeSetSignature => f.write_str("fee set signature does not verify"),
            TollAbort::IncompleteFeeSet { location, time } => {
                write!(f, "incomplete fee set: no tuple for {location}|{time}")
            }
            TollAbort::WrongFee { location, time, .. } => write!(f, "wrong fee for {location}|{time}"),
        }
    }
}

struct Membership {
    msk: MemberSecretKey,
    gpk: GroupPublicKey,
}

/// A user together with the OBU and its travelled store `R_c`.
pub struct UserAgent {
    pub id: UserId,
    pub plate: String,
    pub region: String,
    pub behaviour: UserBehaviour,
    params: &'static GroupParams,
    keys: StdKeyPair,
    pin: Option<Secret16>,
    serial: Option<Secret16>,
    certificate: Option<KeyCertificate>,
    pending_member: Option<(Scalar, GroupElement)>,
    membership: Option<Membership>,
    travelled: Vec<LocationTuple>,
    fee_set: Option<PublishedFeeSet>,
    commitment: Option<PaymentCommitment>,
    receipt: Option<Receipt>,
    rng: ChaCha20Rng,
}

impl UserAgent {
    pub fn new(id: UserId, plate: String, region: String, params: &'static GroupParams, mut rng: ChaCha20Rng) -> Self {
        let keys = StdKeyPair::generate(params, &mut rng);
        UserAgent {
            id,
            plate,
            region,
            behaviour: UserBehaviour::default(),
            params,
            keys,
            pin: None,
            serial: None,
            certificate: None,
            pending_member: None,
            membership: None,
            travelled: Vec::new(),
            fee_set: None,
            commitment: None,
            receipt: None,
            rng,
        }
    }

    pub fn public(&self) -> &GroupElement {
        &self.keys.public
    }

    pub fn receive_pin(&mut self, pin: Secret16) {
        self.pin = Some(pin);
    }

    pub fn receive_serial(&mut self, serial: Secret16) {
        self.serial = Some(serial);
    }

    /// `{pk(c), Sig_c(pin ∥ pk(c))}`
    pub fn key_registration(&mut self) -> Result<KeyRegistration, ProtocolError> {
        let pin = self.pin.ok_or(ProtocolError::NotJoined)?;
        let pin_sig = self.keys.sign(self.params, &pin_message(&pin, &self.keys.public), &mut self.rng);
        Ok(KeyRegistration { user: self.id.clone(), public: self.keys.public.clone(), pin_sig })
    }

    pub fn accept_certificate(&mut self, cert: KeyCertificate, server_public: &GroupElement) -> Result<(), ProtocolError> {
        if cert.user != self.id || cert.public != self.keys.public || !cert.verify(self.params, server_public) {
            return Err(ProtocolError::BadServerSignature);
        }
        self.certificate = Some(cert);
        Ok(())
    }

    /// Generates `s_i` locally on first use; a retried request is identical.
    pub fn join_request(&mut self) -> Result<JoinRequest, ProtocolError> {
        let certificate = self.certificate.clone().ok_or(ProtocolError::NotJoined)?;
        let serial = self.serial.ok_or(ProtocolError::UnknownSerial)?;
        if self.pending_member.is_none() {
            self.pending_member = Some(gs_member_keygen(self.params, &mut self.rng));
        }
        let (_, member_public) = self.pending_member.clone().expect("set above");
        Ok(JoinRequest { certificate, serial, region: self.region.clone(), member_public })
    }

    pub fn accept_join(&mut self, resp: JoinResponse) -> Result<(), ProtocolError> {
        let (secret, public) = self.pending_member.clone().ok_or(ProtocolError::NotJoined)?;
        resp.gpk.validate_roster(self.params)?;
        let entry = resp
            .gpk
            .member(resp.member_index)
            .ok_or(ProtocolError::UnknownMember)?;
        if entry.public != public || entry.cert != resp.cert || resp.gpk.group_id != resp.group_id {
            return Err(ProtocolError::UnknownMember);
        }
        let msk = MemberSecretKey { group_id: resp.group_id, member_index: resp.member_index, secret };
        self.membership = Some(Membership { msk, gpk: resp.gpk });
        Ok(())
    }

    /// Roster updates after later joins; signatures use the newest version.
    pub fn update_group_key(&mut self, gpk: &GroupPublicKey) {
        if let Some(m) = &mut self.membership {
            if m.gpk.group_id == gpk.group_id && gpk.roster_version >= m.gpk.roster_version {
                m.gpk = gpk.clone();
            }
        }
    }

    pub fn group(&self) -> Option<&crate::groupsig::GroupId> {
        self.membership.as_ref().map(|m| &m.msk.group_id)
    }

    pub fn member_index(&self) -> Option<u32> {
        self.membership.as_ref().map(|m| m.msk.member_index)
    }

    pub fn travelled(&self) -> &[LocationTuple] {
        &self.travelled
    }

    /// Position the OBU will report for the true position at `time`.
    fn reported(&self, location: Location, time: u64) -> Option<Location> {
        match self.behaviour.obu.iter().find(|m| m.from <= time && time < m.until) {
            None => Some(location),
            Some(m) => m.replacement,
        }
    }

    /// Driving phase: group-sign `h(ℓ, t)` and remember the tuple. `None`
    /// when the OBU has been silenced.
    pub fn obu_record(&mut self, location: Location, time: u64) -> Result<Option<LocationRecord>, ProtocolError> {
        let Some(reported) = self.reported(location, time) else { return Ok(None) };
        let m = self.membership.as_ref().ok_or(ProtocolError::NotJoined)?;
        let tuple = LocationTuple { location: reported, time, group: m.msk.group_id.clone() };
        let signature = gs_sign(self.params, &m.gpk, &m.msk, tuple.loc_hash().as_bytes(), &mut self.rng)?;
        self.travelled.push(tuple.clone());
        Ok(Some(LocationRecord { tuple, signature }))
    }

    /// Fig. 2 on the user side: check the signed set, check every own tuple
    /// against a recomputation, then fold the product and bind it.
    pub fn compute_toll(
        &mut self,
        fee_set: &PublishedFeeSet,
        server_public: &GroupElement,
        policy: &ChargingPolicy,
        pk: &PaillierPublicKey,
        session: &TollSession,
    ) -> Result<PaymentCommitment, TollAbort> {
        self.fee_set = Some(fee_set.clone());
        if fee_set.sid != session.sid || !fee_set.verify(self.params, server_public) {
            return Err(TollAbort::BadFeeSetSignature);
        }
        let mut factors = Vec::with_capacity(self.travelled.len());
        for tuple in &self.travelled {
            let Some(published) = fee_set.lookup(&tuple.loc_hash()) else {
                return Err(TollAbort::IncompleteFeeSet { location: tuple.location, time: tuple.time });
            };
            let expected = fee_tuple_for(policy, pk, &session.sid, &tuple.location, tuple.time)
                .expect("own tuples are valid")
                .enc_fee;
            if published.enc_fee != expected {
                return Err(TollAbort::WrongFee {
                    location: tuple.location,
                    time: tuple.time,
                    published: published.enc_fee.clone(),
                    expected,
                });
            }
            factors.push(expected);
        }

        let skip = (self.behaviour.skip_fraction * factors.len() as f64).round().to_usize().unwrap_or(0);
        if skip > 0 {
            let mut dropped = sample(&mut self.rng, factors.len(), skip.min(factors.len())).into_vec();
            dropped.sort_unstable();
            for i in dropped.into_iter().rev() {
                factors.remove(i);
            }
        }

        let toll = factors
            .iter()
            .skip(1)
            .fold(factors.first().cloned(), |acc, c| acc.map(|a| pk.add(&a, c)))
            .unwrap_or_else(|| empty_commitment(pk, &session.sid, self.id.as_str()));
        let binding_sig = self.keys.sign(self.params, &binding_message(&toll, &fee_set.signature), &mut self.rng);
        let commitment = PaymentCommitment {
            user: self.id.clone(),
            group: fee_set.group.clone(),
            sid: session.sid.clone(),
            toll,
            fee_set_sig: fee_set.signature.clone(),
            binding_sig,
        };
        self.commitment = Some(commitment.clone());
        Ok(commitment)
    }

    pub fn accept_receipt(&mut self, receipt: Receipt, server_public: &GroupElement) -> bool {
        let ok = receipt.user == self.id
            && receipt.verify(self.params, server_public)
            && self.commitment.as_ref().is_some_and(|c| c.toll == receipt.toll);
        if ok {
            self.receipt = Some(receipt);
        }
        ok
    }

    pub fn fee_set(&self) -> Option<&PublishedFeeSet> {
        self.fee_set.as_ref()
    }

    pub fn commitment(&self) -> Option<&PaymentCommitment> {
        self.commitment.as_ref()
    }

    pub fn receipt(&self) -> Option<&Receipt> {
        self.receipt.as_ref()
    }

    /// Signs an arbitrary commitment for tests that need a foreign binding.
    pub fn sign_binding(&mut self, toll: &PaillierCiphertext, fee_set_sig: &crate::crypto::StdSignature) -> crate::crypto::StdSignature {
        self.keys.sign(self.params, &binding_message(toll, fee_set_sig), &mut self.rng)
    }
}

impl std::fmt::Debug for UserAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserAgent")
            .field("id", &self.id)
            .field("group", &self.group())
            .field("travelled", &self.travelled.len())
            .finish()
    }
}
