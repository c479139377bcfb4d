use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ledger::SessionLedger;
use crate::encoding::Encode;
use crate::groupsig::{GroupId, GroupSignature};
use crate::protocol::{ServerView, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub passed: bool,
    pub details: Vec<String>,
}

impl Check {
    fn from_findings(details: Vec<String>) -> Self {
        Check { passed: details.is_empty(), details }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlinkabilityReport {
    /// (a) no user identifier anywhere in the serialized driving-phase view.
    pub no_identifiers: Check,
    /// (b) no non-constant signature field repeats for any member.
    pub no_repeats: Check,
    /// (c) swap-pair view comparison, when a second run was supplied.
    pub swap: Option<Check>,
    pub anonymity_sets: BTreeMap<GroupId, usize>,
    /// Groups whose anonymity set is a single user.
    pub singleton_groups: Vec<GroupId>,
}

impl UnlinkabilityReport {
    pub fn passed(&self) -> bool {
        self.no_identifiers.passed && self.no_repeats.passed && self.swap.as_ref().is_none_or(|c| c.passed)
    }
}

/// Identifiers that must never appear in the server's driving-phase data.
pub fn identifiers(ledger: &SessionLedger) -> Vec<String> {
    let mut out = Vec::new();
    for u in &ledger.users {
        out.push(u.user.to_string());
        out.push(u.plate.clone());
    }
    for pk in ledger.keys.users.values() {
        out.push(pk.to_hex());
    }
    out
}

/// Identifiers occurring in a serialized view.
pub fn scan_for_identifiers(serialized: &str, identifiers: &[String]) -> Vec<String> {
    identifiers
        .iter()
        .filter(|id| serialized.contains(id.as_str()))
        .map(|id| format!("identifier {id:?} present in server view"))
        .collect()
}

/// Field values of one member's signatures that occur more than once,
/// ignoring the constant group id and roster version.
pub fn repeated_fields(signatures: &[GroupSignature]) -> Vec<String> {
    let mut seen: BTreeMap<Vec<u8>, &'static str> = BTreeMap::new();
    let mut repeats = Vec::new();
    let mut note = |name: &'static str, bytes: Vec<u8>| {
        if let Some(prev) = seen.insert(bytes, name) {
            repeats.push(format!("{name} repeats a value seen in {prev}"));
        }
    };
    for sig in signatures {
        note("t1", sig.t1.to_canonical_bytes());
        note("t2", sig.t2.to_canonical_bytes());
        for c in &sig.clauses {
            note("challenge", c.challenge.to_canonical_bytes());
            note("z_r", c.z_r.to_canonical_bytes());
            note("z_s", c.z_s.to_canonical_bytes());
        }
    }
    repeats
}

/// Two views are swap-equivalent when they agree everywhere except at two
/// records of one group whose tuples are exchanged.
pub fn swap_differences(a: &ServerView, b: &ServerView) -> Vec<String> {
    let mut findings = Vec::new();
    if a.rejected != b.rejected {
        findings.push(format!("rejected counts differ: {} vs {}", a.rejected, b.rejected));
    }
    if a.fee_sets != b.fee_sets {
        findings.push("published fee sets differ".into());
    }
    let groups: BTreeSet<&GroupId> = a.location_db.keys().chain(b.location_db.keys()).collect();
    let mut differing = Vec::new();
    for g in groups {
        let (ra, rb) = (a.location_db.get(g), b.location_db.get(g));
        let (Some(ra), Some(rb)) = (ra, rb) else {
            findings.push(format!("group {g} missing from one view"));
            continue;
        };
        if ra.len() != rb.len() {
            findings.push(format!("group {g} holds {} vs {} records", ra.len(), rb.len()));
            continue;
        }
        differing.extend((0..ra.len()).filter(|&i| ra[i] != rb[i]).map(|i| (g, i)));
    }
    match differing.as_slice() {
        [] => {}
        [(g1, i), (g2, j)] if g1 == g2 => {
            let (ra, rb) = (&a.location_db[*g1], &b.location_db[*g1]);
            if ra[*i].tuple != rb[*j].tuple || ra[*j].tuple != rb[*i].tuple {
                findings.push(format!("records {i} and {j} of {g1} differ beyond a transposition"));
            }
        }
        other => findings.push(format!("{} records differ", other.len())),
    }
    findings
}

pub fn evaluate_unlinkability(
    ledger: &SessionLedger,
    view: &ServerView,
    member_signatures: &BTreeMap<UserId, Vec<GroupSignature>>,
    swapped_view: Option<&ServerView>,
) -> UnlinkabilityReport {
    let serialized = serde_json::to_string(view).expect("view serializes");
    let no_identifiers = Check::from_findings(scan_for_identifiers(&serialized, &identifiers(ledger)));
    let no_repeats = Check::from_findings(
        member_signatures
            .iter()
            .flat_map(|(user, sigs)| repeated_fields(sigs).into_iter().map(move |f| format!("{user}: {f}")))
            .collect(),
    );
    let swap = swapped_view.map(|b| Check::from_findings(swap_differences(view, b)));
    let anonymity_sets: BTreeMap<GroupId, usize> =
        ledger.groups.iter().map(|g| (g.group.clone(), g.members.len())).collect();
    let singleton_groups = anonymity_sets.iter().filter(|(_, n)| **n == 1).map(|(g, _)| g.clone()).collect();
    UnlinkabilityReport { no_identifiers, no_repeats, swap, anonymity_sets, singleton_groups }
}
