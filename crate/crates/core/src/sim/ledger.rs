use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bus::PhaseCount;
use super::scenario::Scenario;
use crate::crypto::{GroupElement, PaillierPublicKey};
use crate::groupsig::{GroupId, GroupPublicKey};
use crate::protocol::{
    Adjustment, Attack, Balance, DisputeBundle, DisputeResult, Evidence, Inconclusive, Misbehaviour, Phase, Principal,
    SpotCheckRecord, TollAbort, UserId,
};

pub const LEDGER_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKeys {
    pub server: GroupElement,
    pub authority: GroupElement,
    pub paillier: PaillierPublicKey,
    pub groups: Vec<GroupPublicKey>,
    pub users: BTreeMap<UserId, GroupElement>,
    pub plates: BTreeMap<String, UserId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSummary {
    pub user: UserId,
    pub group: GroupId,
    pub plate: String,
    pub records: usize,
    /// Amount settled from the user's own commitment.
    pub claimed_cents: u64,
    /// Plaintext oracle: Σ f(ℓ, t) over the tuples the user transmitted.
    pub real_cents: u64,
    pub paid_cents: u64,
    pub accused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisputeRecord {
    pub bundle: DisputeBundle,
    pub result: DisputeResult,
    pub adjustments: Vec<Adjustment>,
    /// Users who refuted their adjustment with a matching receipt.
    pub contested: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: GroupId,
    pub members: Vec<UserId>,
    pub records: usize,
    pub fee_total_cents: u64,
    pub aborted: bool,
    pub balance: Option<Balance>,
    pub dispute: Option<DisputeRecord>,
    pub balance_after: Option<Balance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub user: UserId,
    pub group: GroupId,
    pub abort: TollAbort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accusation {
    pub attack: Attack,
    pub misbehaviour: Misbehaviour,
    pub activation_time: u64,
    pub expected: Principal,
    pub found: Result<Principal, Inconclusive>,
    /// Indices into [`SessionLedger::evidence`].
    pub evidence: Vec<usize>,
}

impl Accusation {
    pub fn is_correct(&self) -> bool {
        self.found.as_ref() == Ok(&self.expected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLedger {
    pub schema: u32,
    pub stamp: String,
    pub scenario: Scenario,
    pub keys: PublicKeys,
    pub users: Vec<UserSummary>,
    pub groups: Vec<GroupSummary>,
    pub rejected_records: u64,
    pub aborts: Vec<AbortRecord>,
    pub accusations: Vec<Accusation>,
    pub evidence: Vec<Evidence>,
    pub spot_checks: Vec<SpotCheckRecord>,
    pub message_counts: BTreeMap<Phase, PhaseCount>,
}

impl SessionLedger {
    pub fn disputes(&self) -> impl Iterator<Item = (&GroupSummary, &DisputeRecord)> {
        self.groups.iter().filter_map(|g| g.dispute.as_ref().map(|d| (g, d)))
    }

    pub fn total_paid(&self) -> u64 {
        self.users.iter().map(|u| u.paid_cents).sum()
    }

    pub fn total_fees(&self) -> u64 {
        self.groups.iter().map(|g| g.fee_total_cents).sum()
    }

    pub fn user(&self, id: &UserId) -> Option<&UserSummary> {
        self.users.iter().find(|u| &u.user == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub const CSV_HEADER: &'static str = "user_id,claimed_cents,real_cents,paid_cents,accused";

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for u in &self.users {
            out.push_str(&format!("{},{},{},{},{}\n", u.user, u.claimed_cents, u.real_cents, u.paid_cents, u.accused));
        }
        out
    }
}
