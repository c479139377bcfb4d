use std::collections::{BTreeMap, BTreeSet};

use super::bus::{Bus, Channel};
use super::ledger::*;
use super::scenario::{AdversaryAction, Scenario};
use super::trips::{generate_trips, position_at, Trace};
use crate::crypto::{derive_rng, paillier_keygen, GroupParams};
use crate::groupsig::{GroupId, GroupSignature};
use crate::par::Execution;
use crate::protocol::*;
use crate::tolling::{hash_location, Location, LocationRecord, LocationTuple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Swap {
    pub a: usize,
    pub b: usize,
    pub point: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub exec: Execution,
    /// Users (by position) exchange the position of one trace point.
    pub swap: Option<Swap>,
}

pub struct RunOutput {
    pub ledger: SessionLedger,
    pub server_view: ServerView,
    pub member_signatures: BTreeMap<UserId, Vec<GroupSignature>>,
}

impl RunOutput {
    /// At least one user aborted toll calculation holding evidence.
    pub fn aborted(&self) -> bool {
        !self.ledger.aborts.is_empty()
    }
}

/// All principals after set-up.
pub struct World {
    pub scenario: Scenario,
    pub params: &'static GroupParams,
    pub server: TollServer,
    pub authority: Authority,
    pub users: Vec<UserAgent>,
    pub bus: Bus,
    pub exec: Execution,
}

impl World {
    /// Phase 1: enrollment, key registration and group join, in user order.
    pub fn setup(scenario: &Scenario, exec: Execution) -> Result<World, ProtocolError> {
        let params = scenario.mode.group_params();
        let (pk, sk) = paillier_keygen(scenario.paillier_bits, &mut derive_rng(scenario.seed, "paillier"))?;
        let mut server = TollServer::new(
            params,
            sk,
            scenario.policy.clone(),
            scenario.session.clone(),
            exec,
            derive_rng(scenario.seed, "server"),
        );
        let mut authority =
            Authority::new(params, server.public().clone(), pk, exec, derive_rng(scenario.seed, "authority"));
        for g in &scenario.groups {
            authority.create_group(g.id.clone(), &g.region);
        }

        let mut bus = Bus::default();
        let mut users = Vec::with_capacity(scenario.users.count);
        for (i, id) in scenario.user_ids().into_iter().enumerate() {
            let mut rng = derive_rng(scenario.seed, &format!("user/{id}"));
            let plate = plate_for(&mut rng);
            let mut user = UserAgent::new(id.clone(), plate.clone(), scenario.region_of(i).to_string(), params, rng);
            user.behaviour = behaviour_for(scenario, &id);

            user.receive_pin(server.enroll(&id, &plate)?);
            let reg = user.key_registration()?;
            bus.send(Channel::Authenticated, &Message::RegisterKey(reg.clone()));
            let cert = server.register_key(&reg)?;
            bus.send(Channel::Authenticated, &Message::KeyCertificate(cert.clone()));
            user.accept_certificate(cert, server.public())?;

            user.receive_serial(authority.issue_serial());
            let req = user.join_request()?;
            bus.send(Channel::Authenticated, &Message::JoinRequest(req.clone()));
            let resp = authority.join(&req)?;
            bus.send(Channel::Authenticated, &Message::JoinResponse(Box::new(resp.clone())));
            user.accept_join(resp)?;
            users.push(user);
        }

        for gpk in authority.group_publics() {
            for user in users.iter_mut() {
                user.update_group_key(gpk);
            }
            server.learn_group(gpk.clone(), authority.group_users(&gpk.group_id));
        }
        Ok(World { scenario: scenario.clone(), params, server, authority, users, bus, exec })
    }

    pub fn directory(&self) -> PublicDirectory {
        PublicDirectory {
            params: self.params,
            server_public: self.server.public().clone(),
            authority_public: self.authority.public().clone(),
            paillier: self.server.paillier_public().clone(),
            policy: self.scenario.policy.clone(),
            session: self.scenario.session.clone(),
            groups: self.authority.group_publics().map(|g| (g.group_id.clone(), g.clone())).collect(),
            user_keys: self.server.user_keys().clone(),
            plates: self.users.iter().map(|u| (u.plate.clone(), u.id.clone())).collect(),
        }
    }

    fn public_keys(&self) -> PublicKeys {
        let dir = self.directory();
        PublicKeys {
            server: dir.server_public,
            authority: dir.authority_public,
            paillier: dir.paillier,
            groups: dir.groups.into_values().collect(),
            users: dir.user_keys,
            plates: dir.plates,
        }
    }
}

fn plate_for(rng: &mut impl rand::Rng) -> String {
    let letters: String = (0..3).map(|_| rng.gen_range(b'A'..=b'Z') as char).collect();
    format!("{letters}-{:03}", rng.gen_range(0..1000))
}

fn behaviour_for(scenario: &Scenario, id: &UserId) -> UserBehaviour {
    let mut b = UserBehaviour::default();
    for action in &scenario.adversary {
        match action {
            AdversaryAction::UserSkipFees { user, fraction } if user == id => b.skip_fraction = *fraction,
            AdversaryAction::UserRefusePay { user } if user == id => b.refuse_pay = true,
            AdversaryAction::ObuFalseTuple { user, from, until, .. } if user == id => b.obu.push(ObuManipulation {
                from: *from,
                until: *until,
                replacement: action.replacement().expect("validated scenario"),
            }),
            _ => {}
        }
    }
    b
}

fn server_behaviour(scenario: &Scenario, traces: &BTreeMap<UserId, Trace>) -> ServerBehaviour {
    let mut b = ServerBehaviour::default();
    for action in &scenario.adversary {
        match action {
            AdversaryAction::ServerWrongFee { user, index, delta } => {
                let (loc, t) = traces[user][*index];
                b.wrong_fees.push((hash_location(&loc, t), *delta));
            }
            AdversaryAction::ServerOmitPayment { user } => {
                b.omit_payments.insert(user.clone());
            }
            AdversaryAction::ServerTamperCommitment { user } => {
                b.tamper_commitments.insert(user.clone());
            }
            _ => {}
        }
    }
    b
}

/// A forged record reuses a genuine signature of the group on another hash.
fn forged_records(scenario: &Scenario, server: &TollServer) -> Vec<LocationRecord> {
    let mut out = Vec::new();
    for action in &scenario.adversary {
        let AdversaryAction::ServerForgeLocation { group, lat, lon, time } = action else { continue };
        let Some(donor) = server.records(group).first() else { continue };
        let location = Location::from_degrees(*lat, *lon).expect("validated scenario");
        out.push(LocationRecord {
            tuple: LocationTuple { location, time: *time, group: group.clone() },
            signature: donor.signature.clone(),
        });
    }
    out
}

/// Evidence items bearing on an attack, by index.
fn support(attack: &Attack, evidence: &[Evidence], groups: &BTreeMap<UserId, GroupId>) -> Vec<usize> {
    let subject = attack.subject();
    let group = match attack {
        Attack::ServerForgeLocation { group } => Some(group),
        _ => subject.and_then(|u| groups.get(u)),
    };
    evidence
        .iter()
        .enumerate()
        .filter(|(_, e)| match (&e.item, attack.misbehaviour()) {
            (EvidenceItem::Verdict { result }, Misbehaviour::Beta1 | Misbehaviour::Beta4 | Misbehaviour::Beta5) => {
                Some(&result.group) == group
            }
            (EvidenceItem::Bundle { bundle }, Misbehaviour::Beta4 | Misbehaviour::Beta5) => Some(&bundle.group) == group,
            (EvidenceItem::Commitment { commitment }, Misbehaviour::Beta1 | Misbehaviour::Beta5) => {
                Some(&commitment.user) == subject
            }
            (EvidenceItem::Receipt { receipt }, Misbehaviour::Beta1 | Misbehaviour::Beta2 | Misbehaviour::Beta5) => {
                Some(&receipt.user) == subject
            }
            (EvidenceItem::NonPayment { statement }, Misbehaviour::Beta2) => Some(&statement.user) == subject,
            (EvidenceItem::FeeChallenge { fee_set, .. }, Misbehaviour::Beta3) => Some(&fee_set.group) == group,
            (EvidenceItem::SpotCheck { record }, Misbehaviour::ObuManipulation) => Some(&record.user) == subject,
            _ => false,
        })
        .map(|(i, _)| i)
        .collect()
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, ProtocolError> {
    run_scenario_with(scenario, RunOptions::default())
}

pub fn run_scenario_with(scenario: &Scenario, options: RunOptions) -> Result<RunOutput, ProtocolError> {
    let mut world = World::setup(scenario, options.exec)?;
    let mut traces = generate_trips(scenario);
    if let Some(Swap { a, b, point }) = options.swap {
        let ids = scenario.user_ids();
        let pa = traces[&ids[a]][point].0;
        let pb = traces[&ids[b]][point].0;
        traces.get_mut(&ids[a]).expect("user exists")[point].0 = pb;
        traces.get_mut(&ids[b]).expect("user exists")[point].0 = pa;
    }
    world.server.behaviour = server_behaviour(scenario, &traces);
    let mut evidence: Vec<Evidence> = Vec::new();

    // Phase 2: every OBU signs its own trace with its own randomness.
    let signed: Vec<Result<Vec<LocationRecord>, ProtocolError>> = options.exec.map_mut(&mut world.users, |user| {
        let mut out = Vec::new();
        for (loc, t) in &traces[&user.id] {
            if let Some(record) = user.obu_record(*loc, *t)? {
                out.push(record);
            }
        }
        Ok(out)
    });
    let mut member_signatures = BTreeMap::new();
    let mut stream: Vec<(u64, usize, LocationRecord)> = Vec::new();
    for (i, records) in signed.into_iter().enumerate() {
        let records = records?;
        member_signatures.insert(
            world.users[i].id.clone(),
            records.iter().map(|r| r.signature.clone()).collect::<Vec<_>>(),
        );
        stream.extend(records.into_iter().map(|r| (r.tuple.time, i, r)));
    }
    stream.sort_by_key(|(t, i, _)| (*t, *i));
    let records: Vec<LocationRecord> = stream.into_iter().map(|(_, _, r)| r).collect();
    for r in &records {
        world.bus.send(Channel::Anonymous, &Message::Driving(r.clone()));
    }
    world.server.ingest_batch(records);
    for forged in forged_records(scenario, &world.server) {
        world.server.inject_record(forged);
    }

    // Phase 3, per group.
    let directory = world.directory();
    let sid = scenario.session.sid.clone();
    let groups: Vec<GroupId> = scenario.groups.iter().map(|g| g.id.clone()).collect();
    let mut aborts = Vec::new();
    let mut aborted_groups = BTreeSet::new();
    for group in &groups {
        let fee_set = world.server.publish_fees(group)?;
        for user in world.users.iter_mut().filter(|u| u.group() == Some(group)) {
            world.bus.send(Channel::Authenticated, &Message::FeeSetRequest { group: group.clone(), sid: sid.clone() });
            world.bus.send(Channel::Authenticated, &Message::FeeSet(fee_set.clone()));
            let outcome =
                user.compute_toll(&fee_set, &directory.server_public, &scenario.policy, &directory.paillier, &scenario.session);
            match outcome {
                Err(abort) => {
                    if let TollAbort::WrongFee { location, time, .. } | TollAbort::IncompleteFeeSet { location, time } = &abort {
                        evidence.push(Evidence::new(
                            Principal::User(user.id.clone()),
                            EvidenceItem::FeeChallenge { fee_set: fee_set.clone(), location: *location, time: *time },
                        ));
                    }
                    aborts.push(AbortRecord { user: user.id.clone(), group: group.clone(), abort });
                    aborted_groups.insert(group.clone());
                }
                Ok(_) if user.behaviour.refuse_pay => {}
                Ok(commitment) => {
                    world.bus.send(Channel::Authenticated, &Message::Commitment(commitment.clone()));
                    let receipt = world.server.settle(&commitment)?;
                    world.bus.send(Channel::Authenticated, &Message::Receipt(receipt.clone()));
                    user.accept_receipt(receipt.clone(), &directory.server_public);
                    evidence.push(Evidence::new(Principal::Server, EvidenceItem::Commitment { commitment }));
                    evidence.push(Evidence::new(Principal::User(user.id.clone()), EvidenceItem::Receipt { receipt }));
                }
            }
        }
    }

    // Phase 4, only for imbalanced groups that did not abort.
    let mut summaries = Vec::new();
    let mut paid_adjustments: BTreeMap<UserId, i64> = BTreeMap::new();
    for group in &groups {
        let members = world.authority.group_users(group);
        let stored = world.server.records(group);
        let fee_total_cents = stored
            .iter()
            .map(|r| scenario.policy.compute_fee(&r.tuple.location, r.tuple.time))
            .sum();
        let mut summary = GroupSummary {
            group: group.clone(),
            members: members.clone(),
            records: stored.len(),
            fee_total_cents,
            aborted: aborted_groups.contains(group),
            balance: None,
            dispute: None,
            balance_after: None,
        };
        if summary.aborted {
            summaries.push(summary);
            continue;
        }
        let balance = world.server.check_balance(group)?;
        summary.balance = Some(balance);
        if balance != Balance::Balanced {
            for statement in world.server.non_payment_statements(group) {
                evidence.push(Evidence::new(Principal::Authority, EvidenceItem::NonPayment { statement }));
            }
            let bundle = world.server.build_dispute(group)?;
            world.bus.send(Channel::Authenticated, &Message::DisputeBundle(bundle.clone()));
            let result = world.authority.dis_res(&bundle)?;
            world.bus.send(Channel::Authenticated, &Message::DisputeResult(result.clone()));
            evidence.push(Evidence::new(Principal::Authority, EvidenceItem::Bundle { bundle: bundle.clone() }));
            evidence.push(Evidence::new(Principal::Server, EvidenceItem::Verdict { result: result.clone() }));

            let adjustments = world.server.finalize_dispute(&result, &directory.authority_public)?;
            let mut contested = Vec::new();
            for adj in &adjustments {
                let real = result.verdict.accused().iter().find(|a| a.user == adj.user).map(|a| &a.real_toll);
                let refuted = world
                    .users
                    .iter()
                    .find(|u| u.id == adj.user)
                    .and_then(|u| u.receipt())
                    .is_some_and(|r| Some(&r.toll) == real);
                if refuted {
                    world.server.withdraw_adjustment(&adj.user);
                    contested.push(adj.user.clone());
                } else {
                    *paid_adjustments.entry(adj.user.clone()).or_default() += adj.unpaid_cents;
                }
            }
            summary.balance_after = Some(world.server.check_balance(group)?);
            summary.dispute = Some(DisputeRecord { bundle, result, adjustments, contested });
        }
        summaries.push(summary);
    }

    // Spot checks observe the true position.
    let params = scenario.spot_check_params();
    let mut spot_checks = Vec::new();
    for check in &scenario.spot_checks {
        let user = world.users.iter().find(|u| u.id == check.user).expect("validated scenario");
        let location = position_at(&traces[&user.id], check.time).expect("non-empty trace");
        let obs = Observation { location, time: check.time, plate: user.plate.clone() };
        let record = world.server.spot_check(&obs, &params)?;
        evidence.push(Evidence::new(Principal::Server, EvidenceItem::SpotCheck { record: record.clone() }));
        spot_checks.push(record);
    }

    let user_groups: BTreeMap<UserId, GroupId> = world
        .users
        .iter()
        .filter_map(|u| u.group().map(|g| (u.id.clone(), g.clone())))
        .collect();
    let accusations: Vec<Accusation> = scenario
        .adversary
        .iter()
        .map(|action| {
            let attack = action.attack();
            Accusation {
                misbehaviour: attack.misbehaviour(),
                activation_time: action.activation_time(&scenario.session),
                expected: attack.attacker(),
                found: find(&directory, &evidence, &attack),
                evidence: support(&attack, &evidence, &user_groups),
                attack,
            }
        })
        .collect();
    let accused: BTreeSet<&UserId> = accusations
        .iter()
        .filter_map(|a| match &a.found {
            Ok(Principal::User(u)) => Some(u),
            _ => None,
        })
        .collect();

    let users = world
        .users
        .iter()
        .map(|u| {
            let claimed_cents = u.receipt().map(|r| r.cost_cents).unwrap_or(0);
            let adj = paid_adjustments.get(&u.id).copied().unwrap_or(0);
            UserSummary {
                user: u.id.clone(),
                group: u.group().cloned().expect("joined"),
                plate: u.plate.clone(),
                records: u.travelled().len(),
                claimed_cents,
                real_cents: u.travelled().iter().map(|t| scenario.policy.compute_fee(&t.location, t.time)).sum(),
                paid_cents: u64::try_from(claimed_cents as i128 + adj as i128).unwrap_or(0),
                accused: accused.contains(&u.id),
            }
        })
        .collect();

    let server_view = world.server.view();
    let ledger = SessionLedger {
        schema: LEDGER_SCHEMA,
        stamp: scenario.mode.stamp().to_string(),
        scenario: scenario.clone(),
        keys: world.public_keys(),
        users,
        groups: summaries,
        rejected_records: server_view.rejected,
        aborts,
        accusations,
        evidence,
        spot_checks,
        message_counts: world.bus.counts().clone(),
    };
    Ok(RunOutput { ledger, server_view, member_signatures })
}

/// Re-runs `DisRes` on a recorded bundle with the authority rebuilt from the
/// scenario seed, returning the fresh result.
pub fn replay_dispute(scenario: &Scenario, bundle: &DisputeBundle) -> Result<DisputeResult, ProtocolError> {
    let mut world = World::setup(scenario, Execution::default())?;
    world.authority.dis_res(bundle)
}
