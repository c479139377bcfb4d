use std::fmt;

use rand::RngCore;
use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{std_verify, GroupElement, GroupParams, PaillierCiphertext, StdSignature};
use crate::encoding::{Encode, Encoder};
use crate::groupsig::{GroupId, GroupPublicKey, GroupSignature};
use crate::tolling::{FeeTuple, SessionId};

/// Alg. 1 line 7 verdict, bit-exact.
pub const VERDICT_CHECK_OF_T_FAILED: &str = "check of T failed";
/// Alg. 1 line 11 verdict, bit-exact.
pub const VERDICT_FAKED_LOCATION_SIGNATURES: &str = "Faked location signatures";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

impl UserId {
    pub fn new(s: impl Into<String>) -> Self {
        UserId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Encode for UserId {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Principal {
    User(UserId),
    Server,
    Authority,
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::User(u) => write!(f, "user {u}"),
            Principal::Server => f.write_str("server"),
            Principal::Authority => f.write_str("authority"),
        }
    }
}

/// 128-bit shared secret: a server-issued pin or an OBU serial number.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Secret16(pub [u8; 16]);

impl Secret16 {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        Secret16(b)
    }
}

impl fmt::Debug for Secret16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret16(..)")
    }
}

impl Serialize for Secret16 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Secret16 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = hex::decode(String::deserialize(d)?).map_err(D::Error::custom)?;
        Ok(Secret16(raw.try_into().map_err(|_| D::Error::custom("expected 16 bytes"))?))
    }
}

impl Encode for Secret16 {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

pub(crate) fn pin_message(pin: &Secret16, public: &GroupElement) -> Vec<u8> {
    let mut enc = Encoder::with_domain("etp/pin");
    enc.field(pin).field(public);
    enc.finish()
}

pub(crate) fn key_cert_message(user: &UserId, public: &GroupElement) -> Vec<u8> {
    let mut enc = Encoder::with_domain("etp/user-key");
    enc.field(user).field(public);
    enc.finish()
}

/// `{pk(c), Sig_c(pin ∥ pk(c))}` sent to the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRegistration {
    pub user: UserId,
    pub public: GroupElement,
    pub pin_sig: StdSignature,
}

impl Encode for KeyRegistration {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.user).field(&self.public).field(&self.pin_sig);
    }
}

/// `Sig_S(pk(c))`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyCertificate {
    pub user: UserId,
    pub public: GroupElement,
    pub server_sig: StdSignature,
}

impl KeyCertificate {
    pub fn verify(&self, params: &GroupParams, server_public: &GroupElement) -> bool {
        std_verify(params, server_public, &key_cert_message(&self.user, &self.public), &self.server_sig)
    }
}

impl Encode for KeyCertificate {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.user).field(&self.public).field(&self.server_sig);
    }
}

/// Sent to the authority: the server-certified key, the OBU serial, the
/// user's region and the freshly generated member key `h_i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRequest {
    pub certificate: KeyCertificate,
    pub serial: Secret16,
    pub region: String,
    pub member_public: GroupElement,
}

impl Encode for JoinRequest {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.certificate)
            .field(&self.serial)
            .str(&self.region)
            .field(&self.member_public);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinResponse {
    pub group_id: GroupId,
    pub member_index: u32,
    pub cert: StdSignature,
    pub gpk: GroupPublicKey,
}

impl Encode for JoinResponse {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.group_id).u64(self.member_index as u64).field(&self.cert);
    }
}

/// `L'` with `Sig_S(L', sid)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedFeeSet {
    pub group: GroupId,
    pub sid: SessionId,
    pub tuples: Vec<FeeTuple>,
    pub signature: StdSignature,
}

impl PublishedFeeSet {
    pub fn signed_message(group: &GroupId, sid: &SessionId, tuples: &[FeeTuple]) -> Vec<u8> {
        let mut enc = Encoder::with_domain("etp/fee-set");
        enc.field(group).field(sid).list(tuples);
        enc.finish()
    }

    pub fn verify(&self, params: &GroupParams, server_public: &GroupElement) -> bool {
        let msg = Self::signed_message(&self.group, &self.sid, &self.tuples);
        std_verify(params, server_public, &msg, &self.signature)
    }

    /// Tuples are sorted by hash, so lookups are binary searches.
    pub fn lookup(&self, loc_hash: &crate::crypto::Digest) -> Option<&FeeTuple> {
        self.tuples
            .binary_search_by(|t| t.loc_hash.cmp(loc_hash))
            .ok()
            .map(|i| &self.tuples[i])
    }
}

impl Encode for PublishedFeeSet {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.group).field(&self.sid).list(&self.tuples).field(&self.signature);
    }
}

pub(crate) fn binding_message(toll: &PaillierCiphertext, fee_set_sig: &StdSignature) -> Vec<u8> {
    let mut enc = Encoder::with_domain("etp/toll");
    enc.field(toll).field(fee_set_sig);
    enc.finish()
}

/// `toll_c` with `Sig_c(toll_c, Sig_S(L', sid))`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentCommitment {
    pub user: UserId,
    pub group: GroupId,
    pub sid: SessionId,
    pub toll: PaillierCiphertext,
    pub fee_set_sig: StdSignature,
    pub binding_sig: StdSignature,
}

impl PaymentCommitment {
    pub fn verify(&self, params: &GroupParams, user_public: &GroupElement) -> bool {
        std_verify(params, user_public, &binding_message(&self.toll, &self.fee_set_sig), &self.binding_sig)
    }
}

impl Encode for PaymentCommitment {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.user)
            .field(&self.group)
            .field(&self.sid)
            .field(&self.toll)
            .field(&self.fee_set_sig)
            .field(&self.binding_sig);
    }
}

/// Server signature over the settled amount. The committed ciphertext is
/// bound in as well so that the receipt can be matched against a dispute
/// result without decryption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub sid: SessionId,
    pub user: UserId,
    pub cost_cents: u64,
    pub toll: PaillierCiphertext,
    pub signature: StdSignature,
}

impl Receipt {
    pub fn signed_message(sid: &SessionId, user: &UserId, cost_cents: u64, toll: &PaillierCiphertext) -> Vec<u8> {
        let mut enc = Encoder::with_domain("etp/receipt");
        enc.field(sid).field(user).u64(cost_cents).field(toll);
        enc.finish()
    }

    pub fn verify(&self, params: &GroupParams, server_public: &GroupElement) -> bool {
        let msg = Self::signed_message(&self.sid, &self.user, self.cost_cents, &self.toll);
        std_verify(params, server_public, &msg, &self.signature)
    }
}

impl Encode for Receipt {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.sid)
            .field(&self.user)
            .u64(self.cost_cents)
            .field(&self.toll)
            .field(&self.signature);
    }
}

/// Server's signed claim that a user never committed a payment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonPaymentStatement {
    pub group: GroupId,
    pub sid: SessionId,
    pub user: UserId,
    pub signature: StdSignature,
}

impl NonPaymentStatement {
    pub fn signed_message(group: &GroupId, sid: &SessionId, user: &UserId) -> Vec<u8> {
        let mut enc = Encoder::with_domain("etp/non-payment");
        enc.field(group).field(sid).field(user);
        enc.finish()
    }

    pub fn verify(&self, params: &GroupParams, server_public: &GroupElement) -> bool {
        let msg = Self::signed_message(&self.group, &self.sid, &self.user);
        std_verify(params, server_public, &msg, &self.signature)
    }
}

impl Encode for NonPaymentStatement {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.group).field(&self.sid).field(&self.user).field(&self.signature);
    }
}

/// Element of `S`: a stored record's hash, its published encrypted fee and
/// its group signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSEntry {
    pub loc_hash: crate::crypto::Digest,
    pub enc_fee: PaillierCiphertext,
    pub signature: GroupSignature,
}

impl Encode for SetSEntry {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.loc_hash).field(&self.enc_fee).field(&self.signature);
    }
}

/// Element of `T`: `(c, toll_c, Sig_c(toll_c, Sig_S(L', sid)))`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetTEntry {
    pub user: UserId,
    pub toll: PaillierCiphertext,
    pub binding_sig: StdSignature,
}

impl Encode for SetTEntry {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.user).field(&self.toll).field(&self.binding_sig);
    }
}

/// The server's dispute submission, signed so that a faulty bundle is
/// attributable to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisputeBundle {
    pub group: GroupId,
    pub sid: SessionId,
    pub set_s: Vec<SetSEntry>,
    pub set_t: Vec<SetTEntry>,
    pub fee_set_sig: StdSignature,
    pub server_sig: StdSignature,
}

impl DisputeBundle {
    pub fn message_for(
        group: &GroupId,
        sid: &SessionId,
        set_s: &[SetSEntry],
        set_t: &[SetTEntry],
        fee_set_sig: &StdSignature,
    ) -> Vec<u8> {
        let mut enc = Encoder::with_domain("etp/bundle");
        enc.field(group).field(sid).list(set_s).list(set_t).field(fee_set_sig);
        enc.finish()
    }

    pub fn signed_message(&self) -> Vec<u8> {
        Self::message_for(&self.group, &self.sid, &self.set_s, &self.set_t, &self.fee_set_sig)
    }

    pub fn verify(&self, params: &GroupParams, server_public: &GroupElement) -> bool {
        std_verify(params, server_public, &self.signed_message(), &self.server_sig)
    }
}

impl Encode for DisputeBundle {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.bytes(&self.signed_message()).field(&self.server_sig);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accused {
    pub user: UserId,
    pub real_toll: PaillierCiphertext,
}

impl Encode for Accused {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.user).field(&self.real_toll);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// `res`: users whose recomputed toll differs from the committed one.
    Resolved { res: Vec<Accused> },
    CheckOfTFailed,
    FakedLocationSignatures,
}

impl Verdict {
    /// The failure string, when the checks did not pass.
    pub fn failure(&self) -> Option<&'static str> {
        match self {
            Verdict::Resolved { .. } => None,
            Verdict::CheckOfTFailed => Some(VERDICT_CHECK_OF_T_FAILED),
            Verdict::FakedLocationSignatures => Some(VERDICT_FAKED_LOCATION_SIGNATURES),
        }
    }

    pub fn accused(&self) -> &[Accused] {
        match self {
            Verdict::Resolved { res } => res,
            _ => &[],
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Resolved { res } if res.is_empty() => f.write_str("no cheating users"),
            Verdict::Resolved { res } => {
                let names: Vec<&str> = res.iter().map(|a| a.user.as_str()).collect();
                write!(f, "cheating users: {}", names.join(", "))
            }
            other => f.write_str(other.failure().unwrap_or_default()),
        }
    }
}

impl Encode for Verdict {
    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Verdict::Resolved { res } => {
                enc.u64(0).list(res);
            }
            Verdict::CheckOfTFailed => {
                enc.u64(1).str(VERDICT_CHECK_OF_T_FAILED);
            }
            Verdict::FakedLocationSignatures => {
                enc.u64(2).str(VERDICT_FAKED_LOCATION_SIGNATURES);
            }
        }
    }
}

/// Authority-signed outcome of `DisRes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisputeResult {
    pub group: GroupId,
    pub sid: SessionId,
    pub verdict: Verdict,
    pub signature: StdSignature,
}

impl DisputeResult {
    pub fn signed_message(group: &GroupId, sid: &SessionId, verdict: &Verdict) -> Vec<u8> {
        let mut enc = Encoder::with_domain("etp/dis-res");
        enc.field(group).field(sid).field(verdict);
        enc.finish()
    }

    pub fn verify(&self, params: &GroupParams, authority_public: &GroupElement) -> bool {
        let msg = Self::signed_message(&self.group, &self.sid, &self.verdict);
        std_verify(params, authority_public, &msg, &self.signature)
    }

    /// Canonical bytes of the verdict alone, for replay comparison.
    pub fn verdict_bytes(&self) -> Vec<u8> {
        Self::signed_message(&self.group, &self.sid, &self.verdict)
    }
}

impl Encode for DisputeResult {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.group).field(&self.sid).field(&self.verdict).field(&self.signature);
    }
}
