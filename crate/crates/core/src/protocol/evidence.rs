use std::fmt;

use serde::{Deserialize, Serialize};

use super::spot_check::SpotCheckRecord;
use super::types::*;
use super::PublicDirectory;
use crate::groupsig::GroupId;
use crate::tolling::{fee_tuple_for, Location};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misbehaviour {
    /// The user commits a smaller toll.
    Beta1,
    /// The user never commits.
    Beta2,
    /// The server publishes a wrong fee.
    Beta3,
    /// The server forges location records.
    Beta4,
    /// The server under-reports a user's payment.
    Beta5,
    /// The OBU reports false tuples or stays silent.
    ObuManipulation,
}

/// A scripted action `α` together with its attacker.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attack {
    UserSkipFees { user: UserId },
    UserRefusePay { user: UserId },
    ServerWrongFee { victim: UserId },
    ServerForgeLocation { group: GroupId },
    ServerOmitPayment { user: UserId },
    ServerTamperCommitment { user: UserId },
    ObuFalseTuple { user: UserId },
}

impl Attack {
    pub fn misbehaviour(&self) -> Misbehaviour {
        match self {
            Attack::UserSkipFees { .. } => Misbehaviour::Beta1,
            Attack::UserRefusePay { .. } => Misbehaviour::Beta2,
            Attack::ServerWrongFee { .. } => Misbehaviour::Beta3,
            Attack::ServerForgeLocation { .. } => Misbehaviour::Beta4,
            Attack::ServerOmitPayment { .. } | Attack::ServerTamperCommitment { .. } => Misbehaviour::Beta5,
            Attack::ObuFalseTuple { .. } => Misbehaviour::ObuManipulation,
        }
    }

    pub fn attacker(&self) -> Principal {
        match self {
            Attack::UserSkipFees { user } | Attack::UserRefusePay { user } | Attack::ObuFalseTuple { user } => {
                Principal::User(user.clone())
            }
            _ => Principal::Server,
        }
    }

    /// The user the evidence is about, when the attack concerns one.
    pub fn subject(&self) -> Option<&UserId> {
        match self {
            Attack::UserSkipFees { user }
            | Attack::UserRefusePay { user }
            | Attack::ServerWrongFee { victim: user }
            | Attack::ServerOmitPayment { user }
            | Attack::ServerTamperCommitment { user }
            | Attack::ObuFalseTuple { user } => Some(user),
            Attack::ServerForgeLocation { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceKind {
    Signature,
    Receipt,
    FeeSet,
    DisputeVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum EvidenceItem {
    /// A user-signed toll commitment.
    Commitment { commitment: PaymentCommitment },
    /// A server-signed claim that a user never committed.
    NonPayment { statement: NonPaymentStatement },
    /// A server-signed dispute submission.
    Bundle { bundle: DisputeBundle },
    /// A server-signed spot-check outcome.
    SpotCheck { record: SpotCheckRecord },
    Receipt { receipt: Receipt },
    /// A server-signed fee set plus the tuple the holder disputes in it.
    FeeChallenge { fee_set: PublishedFeeSet, location: Location, time: u64 },
    Verdict { result: DisputeResult },
}

impl EvidenceItem {
    pub fn kind(&self) -> EvidenceKind {
        match self {
            EvidenceItem::Commitment { .. }
            | EvidenceItem::NonPayment { .. }
            | EvidenceItem::Bundle { .. }
            | EvidenceItem::SpotCheck { .. } => EvidenceKind::Signature,
            EvidenceItem::Receipt { .. } => EvidenceKind::Receipt,
            EvidenceItem::FeeChallenge { .. } => EvidenceKind::FeeSet,
            EvidenceItem::Verdict { .. } => EvidenceKind::DisputeVerdict,
        }
    }

    /// Checks the item's signature against the public directory.
    pub fn verify(&self, dir: &PublicDirectory) -> bool {
        let p = dir.params;
        match self {
            EvidenceItem::Commitment { commitment } => {
                dir.user_keys.get(&commitment.user).is_some_and(|pk| commitment.verify(p, pk))
            }
            EvidenceItem::NonPayment { statement } => statement.verify(p, &dir.server_public),
            EvidenceItem::Bundle { bundle } => bundle.verify(p, &dir.server_public),
            EvidenceItem::SpotCheck { record } => record.verify(p, &dir.server_public),
            EvidenceItem::Receipt { receipt } => receipt.verify(p, &dir.server_public),
            EvidenceItem::FeeChallenge { fee_set, .. } => fee_set.verify(p, &dir.server_public),
            EvidenceItem::Verdict { result } => result.verify(p, &dir.authority_public),
        }
    }
}

/// An item and the principal who holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub holder: Principal,
    #[serde(flatten)]
    pub item: EvidenceItem,
}

impl Evidence {
    pub fn new(holder: Principal, item: EvidenceItem) -> Self {
        Evidence { holder, item }
    }

    pub fn kind(&self) -> EvidenceKind {
        self.item.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inconclusive(pub String);

impl fmt::Display for Inconclusive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "inconclusive: {}", self.0)
    }
}

impl std::error::Error for Inconclusive {}

fn inconclusive<T>(why: impl Into<String>) -> Result<T, Inconclusive> {
    Err(Inconclusive(why.into()))
}

/// Only items whose signatures check out are considered.
struct Valid<'a> {
    items: Vec<&'a EvidenceItem>,
}

impl<'a> Valid<'a> {
    fn new(dir: &PublicDirectory, evidence: &'a [Evidence]) -> Self {
        Valid { items: evidence.iter().map(|e| &e.item).filter(|i| i.verify(dir)).collect() }
    }

    fn verdicts(&self) -> impl Iterator<Item = &'a DisputeResult> + '_ {
        self.items.iter().filter_map(|i| match i {
            EvidenceItem::Verdict { result } => Some(result),
            _ => None,
        })
    }

    fn bundles(&self) -> impl Iterator<Item = &'a DisputeBundle> + '_ {
        self.items.iter().filter_map(|i| match i {
            EvidenceItem::Bundle { bundle } => Some(bundle),
            _ => None,
        })
    }

    fn receipt_for(&self, user: &UserId) -> Option<&'a Receipt> {
        self.items.iter().find_map(|i| match i {
            EvidenceItem::Receipt { receipt } if &receipt.user == user => Some(receipt),
            _ => None,
        })
    }

    fn commitment_for(&self, user: &UserId) -> Option<&'a PaymentCommitment> {
        self.items.iter().find_map(|i| match i {
            EvidenceItem::Commitment { commitment } if &commitment.user == user => Some(commitment),
            _ => None,
        })
    }
}

/// `find(E', α)`: names the principal the evidence proves responsible for
/// the misbehaviour class of `α`, or reports that it proves nothing.
pub fn find(dir: &PublicDirectory, evidence: &[Evidence], attack: &Attack) -> Result<Principal, Inconclusive> {
    let valid = Valid::new(dir, evidence);
    match attack.misbehaviour() {
        Misbehaviour::Beta1 | Misbehaviour::Beta5 => find_dispute(dir, &valid, attack.subject()),
        Misbehaviour::Beta2 => find_non_payment(&valid, attack.subject()),
        Misbehaviour::Beta3 => find_wrong_fee(dir, &valid),
        Misbehaviour::Beta4 => find_forgery(dir, &valid),
        Misbehaviour::ObuManipulation => find_spot_check(dir, &valid, attack.subject()),
    }
}

/// Resolved verdicts accusing a user are attributed by comparing the real
/// toll with what each side signed; a failed T check is traced to the
/// server-signed bundle.
fn find_dispute(dir: &PublicDirectory, valid: &Valid, subject: Option<&UserId>) -> Result<Principal, Inconclusive> {
    for result in valid.verdicts() {
        match &result.verdict {
            Verdict::Resolved { res } => {
                for accused in res.iter().filter(|a| subject.is_none_or(|s| s == &a.user)) {
                    if valid.receipt_for(&accused.user).is_some_and(|r| r.toll == accused.real_toll) {
                        return Ok(Principal::Server);
                    }
                    if valid.commitment_for(&accused.user).is_some_and(|c| c.toll != accused.real_toll) {
                        return Ok(Principal::User(accused.user.clone()));
                    }
                }
            }
            Verdict::CheckOfTFailed => {
                let bad_t = valid.bundles().filter(|b| b.group == result.group).any(|b| {
                    b.set_t.iter().any(|e| {
                        let c = PaymentCommitment {
                            user: e.user.clone(),
                            group: b.group.clone(),
                            sid: b.sid.clone(),
                            toll: e.toll.clone(),
                            fee_set_sig: b.fee_set_sig.clone(),
                            binding_sig: e.binding_sig.clone(),
                        };
                        !dir.user_keys.get(&e.user).is_some_and(|pk| c.verify(dir.params, pk))
                    })
                });
                if bad_t {
                    return Ok(Principal::Server);
                }
            }
            Verdict::FakedLocationSignatures => {}
        }
    }
    inconclusive("no verdict ties a signed toll to the accused principal")
}

fn find_non_payment(valid: &Valid, subject: Option<&UserId>) -> Result<Principal, Inconclusive> {
    let Some(user) = subject else { return inconclusive("no user named") };
    if valid.receipt_for(user).is_some() {
        return Ok(Principal::Server);
    }
    let claimed = valid.items.iter().any(|i| matches!(i, EvidenceItem::NonPayment { statement } if &statement.user == user));
    if claimed {
        return Ok(Principal::User(user.clone()));
    }
    inconclusive("no signed non-payment claim")
}

fn find_wrong_fee(dir: &PublicDirectory, valid: &Valid) -> Result<Principal, Inconclusive> {
    for item in &valid.items {
        let EvidenceItem::FeeChallenge { fee_set, location, time } = item else { continue };
        let expected = fee_tuple_for(&dir.policy, &dir.paillier, &fee_set.sid, location, *time)
            .map_err(|e| Inconclusive(e.to_string()))?;
        match fee_set.lookup(&expected.loc_hash) {
            Some(published) if published.enc_fee != expected.enc_fee => return Ok(Principal::Server),
            Some(_) => {}
            None => return inconclusive("disputed tuple is absent from the fee set"),
        }
    }
    inconclusive("no fee challenge shows a deviation from the policy")
}

fn find_forgery(dir: &PublicDirectory, valid: &Valid) -> Result<Principal, Inconclusive> {
    for result in valid.verdicts() {
        if result.verdict != Verdict::FakedLocationSignatures {
            continue;
        }
        let Some(gpk) = dir.groups.get(&result.group) else { continue };
        let forged = valid.bundles().filter(|b| b.group == result.group).any(|b| {
            b.set_s
                .iter()
                .any(|e| !gpk.is_valid(dir.params, e.loc_hash.as_bytes(), &e.signature))
        });
        if forged {
            return Ok(Principal::Server);
        }
    }
    inconclusive("no server-signed bundle with a failing location signature")
}

fn find_spot_check(dir: &PublicDirectory, valid: &Valid, subject: Option<&UserId>) -> Result<Principal, Inconclusive> {
    for item in &valid.items {
        let EvidenceItem::SpotCheck { record } = item else { continue };
        if !record.outcome.is_flagged() || subject.is_some_and(|s| s != &record.user) {
            continue;
        }
        if dir.plates.get(&record.observation.plate) == Some(&record.user) {
            return Ok(Principal::User(record.user.clone()));
        }
    }
    inconclusive("no flagged spot check for the plate")
}
