//! The four protocol phases as deterministic actors.
//!
//! * Set-up: pin enrollment and key registration with the server, then a
//!   serial-number authenticated group join with the authority.
//! * Driving: the OBU group-signs `h(ℓ, t)` and the server stores verified
//!   records without any sender identity.
//! * Toll calculation: the server publishes a signed fee-tuple set per group,
//!   users check it and commit a homomorphic toll, the server settles.
//! * Dispute resolving: on imbalance the authority opens every location
//!   signature and recomputes each user's encrypted toll.

mod authority;
mod evidence;
mod messages;
mod server;
mod spot_check;
mod types;
mod user;

pub use authority::Authority;
pub use evidence::{find, Attack, Evidence, EvidenceItem, EvidenceKind, Inconclusive, Misbehaviour};
pub use messages::{Message, Phase};
pub use server::{Adjustment, Balance, IngestOutcome, ServerBehaviour, ServerView, TollServer};
pub use spot_check::{
    format_observation, parse_observation, spot_check, InequalityTerms, Observation, SpotCheckOutcome, SpotCheckParams,
    SpotCheckRecord,
};
pub use types::*;
pub use user::{ObuManipulation, TollAbort, UserAgent, UserBehaviour};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{CryptoError, GroupElement, GroupParams, PaillierPublicKey};
use crate::groupsig::{GroupId, GroupPublicKey, GsError};
use crate::tolling::{ChargingPolicy, TollSession, TollingError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("user {0} is already enrolled")]
    AlreadyEnrolled(UserId),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("pin signature does not verify")]
    BadPinSignature,
    #[error("server signature does not verify")]
    BadServerSignature,
    #[error("authority signature does not verify")]
    BadAuthoritySignature,
    #[error("unknown serial number")]
    UnknownSerial,
    #[error("serial number already used for a different join request")]
    AlreadyJoined,
    #[error("no group covers region {0:?}")]
    UnknownRegion(String),
    #[error("user has not completed set-up")]
    NotJoined,
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("no fee set published for group {0}")]
    FeeSetNotPublished(GroupId),
    #[error("commitment signature does not verify against the published fee set")]
    BadBindingSignature,
    #[error("signature opened to a roster entry with no registered user")]
    UnknownMember,
    #[error(transparent)]
    GroupSignature(#[from] GsError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Tolling(#[from] TollingError),
}

/// Everything that is public after set-up: keys, policy, session and the
/// group public keys. Any third party can check evidence with it.
#[derive(Debug, Clone)]
pub struct PublicDirectory {
    pub params: &'static GroupParams,
    pub server_public: GroupElement,
    pub authority_public: GroupElement,
    pub paillier: PaillierPublicKey,
    pub policy: ChargingPolicy,
    pub session: TollSession,
    pub groups: BTreeMap<GroupId, GroupPublicKey>,
    pub user_keys: BTreeMap<UserId, GroupElement>,
    pub plates: BTreeMap<String, UserId>,
}
