use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use super::types::*;
use super::ProtocolError;
use crate::crypto::{GroupElement, GroupParams, PaillierCiphertext, PaillierPublicKey, StdKeyPair};
use crate::encoding::Encode;
use crate::groupsig::{gs_setup, GroupId, GroupManagerKey, GroupPublicKey};
use crate::par::Execution;
use crate::tolling::empty_commitment;

struct ManagedGroup {
    gpk: GroupPublicKey,
    gmk: GroupManagerKey,
}

/// A used serial remembers the exact request it answered.
struct SerialUse {
    request: Vec<u8>,
    response: JoinResponse,
}

pub struct Authority {
    params: &'static GroupParams,
    keys: StdKeyPair,
    server_public: GroupElement,
    paillier: PaillierPublicKey,
    groups: BTreeMap<GroupId, ManagedGroup>,
    region_groups: BTreeMap<String, GroupId>,
    serials: BTreeMap<Secret16, Option<SerialUse>>,
    members: BTreeMap<(GroupId, u32), UserId>,
    user_keys: BTreeMap<UserId, GroupElement>,
    exec: Execution,
    rng: ChaCha20Rng,
}

impl Authority {
    pub fn new(
        params: &'static GroupParams,
        server_public: GroupElement,
        paillier: PaillierPublicKey,
        exec: Execution,
        mut rng: ChaCha20Rng,
    ) -> Self {
        let keys = StdKeyPair::generate(params, &mut rng);
        Authority {
            params,
            keys,
            server_public,
            paillier,
            groups: BTreeMap::new(),
            region_groups: BTreeMap::new(),
            serials: BTreeMap::new(),
            members: BTreeMap::new(),
            user_keys: BTreeMap::new(),
            exec,
            rng,
        }
    }

    pub fn public(&self) -> &GroupElement {
        &self.keys.public
    }

    /// `Setup` for a new group; the region is assigned to it.
    pub fn create_group(&mut self, group: GroupId, region: &str) -> GroupPublicKey {
        let gpk = match self.groups.get(&group) {
            Some(g) => g.gpk.clone(),
            None => {
                let (gpk, gmk) = gs_setup(self.params, group.clone(), &mut self.rng);
                self.groups.insert(group.clone(), ManagedGroup { gpk: gpk.clone(), gmk });
                gpk
            }
        };
        self.region_groups.insert(region.to_string(), group);
        gpk
    }

    /// A fresh serial number shipped with an OBU.
    pub fn issue_serial(&mut self) -> Secret16 {
        let sn = Secret16::random(&mut self.rng);
        self.serials.insert(sn, None);
        sn
    }

    /// Checks `Sig_S(pk(c))` and the serial, then joins `h_i` to the region's
    /// group. A byte-identical retry returns the stored response.
    pub fn join(&mut self, req: &JoinRequest) -> Result<JoinResponse, ProtocolError> {
        if !req.certificate.verify(self.params, &self.server_public) {
            return Err(ProtocolError::BadServerSignature);
        }
        let request = req.to_canonical_bytes();
        match self.serials.get(&req.serial) {
            None => return Err(ProtocolError::UnknownSerial),
            Some(Some(used)) if used.request == request => return Ok(used.response.clone()),
            Some(Some(_)) => return Err(ProtocolError::AlreadyJoined),
            Some(None) => {}
        }
        let group_id = self
            .region_groups
            .get(&req.region)
            .cloned()
            .ok_or_else(|| ProtocolError::UnknownRegion(req.region.clone()))?;
        let group = self.groups.get_mut(&group_id).expect("region maps to a created group");
        let entry = group.gmk.join(self.params, &mut group.gpk, req.member_public.clone(), &mut self.rng)?;
        let user = req.certificate.user.clone();
        self.members.insert((group_id.clone(), entry.index), user.clone());
        self.user_keys.insert(user, req.certificate.public.clone());
        let response = JoinResponse {
            group_id,
            member_index: entry.index,
            cert: entry.cert,
            gpk: group.gpk.clone(),
        };
        self.serials.insert(req.serial, Some(SerialUse { request, response: response.clone() }));
        Ok(response)
    }

    pub fn group_public(&self, group: &GroupId) -> Option<&GroupPublicKey> {
        self.groups.get(group).map(|g| &g.gpk)
    }

    pub fn group_publics(&self) -> impl Iterator<Item = &GroupPublicKey> {
        self.groups.values().map(|g| &g.gpk)
    }

    /// Users of a group in roster order.
    pub fn group_users(&self, group: &GroupId) -> Vec<UserId> {
        self.members
            .range((group.clone(), 0)..=(group.clone(), u32::MAX))
            .map(|(_, u)| u.clone())
            .collect()
    }

    /// `DisRes`. The returned result is always signed, including the two
    /// failure verdicts.
    pub fn dis_res(&mut self, bundle: &DisputeBundle) -> Result<DisputeResult, ProtocolError> {
        let verdict = self.evaluate(bundle)?;
        let msg = DisputeResult::signed_message(&bundle.group, &bundle.sid, &verdict);
        let signature = self.keys.sign(self.params, &msg, &mut self.rng);
        Ok(DisputeResult { group: bundle.group.clone(), sid: bundle.sid.clone(), verdict, signature })
    }

    fn evaluate(&self, bundle: &DisputeBundle) -> Result<Verdict, ProtocolError> {
        let group = self
            .groups
            .get(&bundle.group)
            .ok_or_else(|| ProtocolError::UnknownGroup(bundle.group.clone()))?;

        let t_ok = self.exec.map(&bundle.set_t, |entry| {
            self.user_keys.get(&entry.user).is_some_and(|pk| {
                let c = PaymentCommitment {
                    user: entry.user.clone(),
                    group: bundle.group.clone(),
                    sid: bundle.sid.clone(),
                    toll: entry.toll.clone(),
                    fee_set_sig: bundle.fee_set_sig.clone(),
                    binding_sig: entry.binding_sig.clone(),
                };
                c.verify(self.params, pk)
            })
        });
        if t_ok.contains(&false) {
            return Ok(Verdict::CheckOfTFailed);
        }

        let openings = self.exec.map(&bundle.set_s, |entry| {
            group
                .gpk
                .verify(self.params, entry.loc_hash.as_bytes(), &entry.signature)
                .ok()
                .map(|()| group.gmk.open(self.params, &group.gpk, &entry.signature))
        });
        if openings.iter().any(Option::is_none) {
            return Ok(Verdict::FakedLocationSignatures);
        }

        let mut real: BTreeMap<UserId, PaillierCiphertext> = BTreeMap::new();
        for (entry, opened) in bundle.set_s.iter().zip(openings) {
            let index = opened.expect("checked above")?;
            let user = self
                .members
                .get(&(bundle.group.clone(), index))
                .ok_or(ProtocolError::UnknownMember)?;
            match real.get_mut(user) {
                Some(acc) => *acc = self.paillier.add(acc, &entry.enc_fee),
                None => {
                    real.insert(user.clone(), entry.enc_fee.clone());
                }
            }
        }

        let claimed: BTreeMap<&UserId, &PaillierCiphertext> = bundle.set_t.iter().map(|e| (&e.user, &e.toll)).collect();
        for user in claimed.keys() {
            if !real.contains_key(*user) {
                real.insert((*user).clone(), empty_commitment(&self.paillier, &bundle.sid, user.as_str()));
            }
        }
        let res = real
            .into_iter()
            .filter(|(user, toll)| claimed.get(user) != Some(&toll))
            .map(|(user, real_toll)| Accused { user, real_toll })
            .collect();
        Ok(Verdict::Resolved { res })
    }
}

impl std::fmt::Debug for Authority {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Authority")
            .field("groups", &self.groups.keys().collect::<Vec<_>>())
            .field("members", &self.members.len())
            .finish()
    }
}
