//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{drive, scenario, small, uid};
use etp_core::crypto::*;
use etp_core::encoding::Encode;
use etp_core::groupsig::*;
use etp_core::io::KEYGEN_TEST_BITS;
use etp_core::par::Execution;
use etp_core::protocol::*;
use etp_core::sim::*;
use etp_core::tolling::Location;
use num_bigint::{BigUint, RandBigInt};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn homomorphism() -> Outcome {
    let start = Instant::now();
    let rng = &mut derive_rng(1, "acceptance/paillier");
    let (pk, sk) = paillier_keygen(KEYGEN_TEST_BITS, rng).map_err(|e| e.to_string())?;
    let mut failures = 0;
    for _ in 0..1000 {
        let m1 = rng.gen_biguint_below(&pk.n);
        let m2 = rng.gen_biguint_below(&pk.n);
        let c1 = pk.encrypt(&m1, &pk.random_randomness(rng)).map_err(|e| e.to_string())?;
        let c2 = pk.encrypt(&m2, &pk.random_randomness(rng)).map_err(|e| e.to_string())?;
        if sk.decrypt(&pk.add(&c1, &c2)).ok() != Some((m1 + m2) % &pk.n) {
            failures += 1;
        }
    }
    let t = start.elapsed();
    check!(failures == 0, "{failures} of 1000 pairs failed");
    check!(t < Duration::from_secs(10), "took {}", secs(t));
    Ok(format!("1000 pairs, {}-bit modulus, {}", pk.n.bits(), secs(t)))
}

fn flip(v: &BigUint, bit: u64) -> BigUint {
    let mut v = v.clone();
    v.set_bit(bit, !v.bit(bit));
    v
}

fn hex_value<T: serde::de::DeserializeOwned>(v: &BigUint) -> T {
    serde_json::from_value(serde_json::Value::String(v.to_str_radix(16))).unwrap()
}

fn build_group(size: usize, rng: &mut impl rand::RngCore) -> (GroupPublicKey, GroupManagerKey, Vec<MemberSecretKey>) {
    let p = GroupParams::insecure_test();
    let (mut gpk, gmk) = gs_setup(p, GroupId::new(format!("G{size}")), rng);
    let members = (0..size)
        .map(|_| {
            let (s, h) = gs_member_keygen(p, rng);
            let e = gmk.join(p, &mut gpk, h, rng).unwrap();
            MemberSecretKey { group_id: gpk.group_id.clone(), member_index: e.index, secret: s }
        })
        .collect();
    (gpk, gmk, members)
}

fn group_signatures() -> Outcome {
    let start = Instant::now();
    let p = GroupParams::insecure_test();
    let rng = &mut derive_rng(2, "acceptance/gs");
    let mut signed = 0;
    for size in 1..=16 {
        let (gpk, gmk, members) = build_group(size, rng);
        for i in 0..100 {
            let k = i % size;
            let msg: [u8; 16] = rng.gen();
            let sig = gs_sign(p, &gpk, &members[k], &msg, rng).map_err(|e| e.to_string())?;
            check!(gpk.verify(p, &msg, &sig).is_ok(), "size {size}, message {i}: verify failed");
            check!(gmk.open(p, &gpk, &sig) == Ok(k as u32), "size {size}, message {i}: open failed");
            signed += 1;
        }
    }

    let (gpk, gmk, members) = build_group(5, rng);
    let (p_bits, q_bits) = (p.modulus_p.bits(), p.order_q.bits());
    let mut accepted = 0;
    for i in 0..1000 {
        let mut msg: Vec<u8> = rng.gen::<[u8; 16]>().to_vec();
        let mut sig = gs_sign(p, &gpk, &members[i % 5], &msg, rng).unwrap();
        let k = rng.gen_range(0..sig.clauses.len());
        match i % 8 {
            0 => sig.t1 = hex_value(&flip(sig.t1.value(), rng.gen_range(0..p_bits))),
            1 => sig.t2 = hex_value(&flip(sig.t2.value(), rng.gen_range(0..p_bits))),
            2 => sig.clauses[k].challenge = hex_value(&flip(sig.clauses[k].challenge.value(), rng.gen_range(0..q_bits))),
            3 => sig.clauses[k].z_r = hex_value(&flip(sig.clauses[k].z_r.value(), rng.gen_range(0..q_bits))),
            4 => sig.clauses[k].z_s = hex_value(&flip(sig.clauses[k].z_s.value(), rng.gen_range(0..q_bits))),
            5 => sig.roster_version = rng.gen_range(0..sig.roster_version),
            6 => sig.group_id = GroupId::new("G-other"),
            _ => msg[rng.gen_range(0..16)] ^= 1 << rng.gen_range(0..8),
        }
        if gpk.is_valid(p, &msg, &sig) {
            accepted += 1;
        }
    }
    check!(accepted == 0, "{accepted} of 1000 mutated signatures verified");

    let mut forged = 0;
    for i in 0..100u32 {
        let fake = MemberSecretKey {
            group_id: gmk.group_id.clone(),
            member_index: i % 5,
            secret: p.random_nonzero_scalar(rng),
        };
        if let Ok(sig) = gs_sign(p, &gpk, &fake, &i.to_be_bytes(), rng) {
            if gpk.is_valid(p, &i.to_be_bytes(), &sig) {
                forged += 1;
            }
        }
    }
    check!(forged == 0, "{forged} of 100 manager forgeries verified");
    let t = start.elapsed();
    check!(t < Duration::from_secs(60), "took {}", secs(t));
    Ok(format!("{signed} signatures over rosters 1-16, 1000 mutations and 100 forgeries rejected, {}", secs(t)))
}

/// Fee in cents recomputed from the scenario's zone table and the single
/// 07:00-09:00 peak window, independently of the policy code.
fn oracle_fee(s: &Scenario, loc: &Location, t: u64) -> u64 {
    let cell = s.policy.grid_cell_micro;
    let key = format!("{}:{}", loc.lat_micro().div_euclid(cell), loc.lon_micro().div_euclid(cell));
    let rate = s.policy.zone_rates.get(&key).copied().unwrap_or(s.policy.default_rate);
    let hour = t / 3600 % 24;
    if (7..9).contains(&hour) { rate * 3 / 2 } else { rate }
}

fn oracle_costs(s: &Scenario) -> std::collections::BTreeMap<UserId, u64> {
    generate_trips(s)
        .into_iter()
        .map(|(u, trace)| (u, trace.iter().map(|(l, t)| oracle_fee(s, l, *t)).sum()))
        .collect()
}

struct Shared {
    honest: Scenario,
    runs: Vec<RunOutput>,
    run_time: Duration,
}

fn correctness(shared: &mut Shared) -> Outcome {
    let s = &shared.honest;
    check!(s.users.count == 20 && s.groups.len() == 2, "honest scenario is not 20 users in 2 groups");
    check!(s.session.end - s.session.start == 3600 && s.transmission_interval == 60, "not a 60-minute window at 60 s");
    check!(s.policy.peak_windows.len() == 1, "oracle assumes a single peak window");
    let start = Instant::now();
    for _ in 0..3 {
        shared.runs.push(run_scenario(s).map_err(|e| e.to_string())?);
    }
    let t = start.elapsed();
    shared.run_time = t / 3;
    let l = &shared.runs[0].ledger;
    let oracle = oracle_costs(s);
    let expected: u64 = oracle.values().sum();
    check!(l.total_paid() == expected, "paid {} but the oracle says {expected}", l.total_paid());
    check!(l.total_fees() == expected, "stored fees {} but the oracle says {expected}", l.total_fees());
    for u in &l.users {
        check!(u.paid_cents == oracle[&u.user], "{} paid {} of {}", u.user, u.paid_cents, oracle[&u.user]);
    }
    check!(l.disputes().count() == 0, "honest run disputed");
    let json = l.to_json();
    check!(shared.runs.iter().all(|r| r.ledger.to_json() == json), "ledgers differ across runs");
    check!(t < Duration::from_secs(60), "three runs took {}", secs(t));
    Ok(format!("{expected} cents paid of {expected}, 0 disputes, 3 identical ledgers, {}", secs(t)))
}

fn beta1() -> Outcome {
    let s = scenario("beta1");
    let l = run_scenario(&s).map_err(|e| e.to_string())?.ledger;
    let disputes: Vec<_> = l.disputes().collect();
    check!(disputes.len() == 1, "{} disputes", disputes.len());
    let (g, d) = disputes[0];
    let accused: Vec<&UserId> = d.result.verdict.accused().iter().map(|a| &a.user).collect();
    check!(accused == [&uid("u01")], "accused {accused:?}");
    let oracle = oracle_costs(&s)[&uid("u01")];
    let server = World::setup(&s, Execution::Sequential).map_err(|e| e.to_string())?.server;
    let real = server.decrypt_cents(&d.result.verdict.accused()[0].real_toll).map_err(|e| e.to_string())?;
    check!(real == oracle, "decrypted real toll {real} vs oracle {oracle}");
    check!(d.adjustments.len() == 1 && d.adjustments[0].real_cents == oracle, "real toll {:?} vs oracle {oracle}", d.adjustments);
    check!(g.balance_after == Some(Balance::Balanced), "balance after finalize {:?}", g.balance_after);
    check!(l.total_paid() == l.total_fees(), "paid {} of {}", l.total_paid(), l.total_fees());
    let cheater = l.user(&uid("u01")).unwrap();
    Ok(format!("u01 claimed {} cents, real toll {oracle} cents, balanced after finalize", cheater.claimed_cents))
}

fn found(name: &str) -> Result<(SessionLedger, Principal), String> {
    let l = run_scenario(&scenario(name)).map_err(|e| e.to_string())?.ledger;
    check!(l.accusations.len() == 1, "{name}: {} accusations", l.accusations.len());
    let a = &l.accusations[0];
    check!(a.is_correct(), "{name}: expected {}, found {:?}", a.expected, a.found);
    let who = a.expected.clone();
    Ok((l, who))
}

fn beta2_to_5() -> Outcome {
    let mut parts = Vec::new();
    for name in ["beta2", "beta3", "beta4", "beta5"] {
        let (_, who) = found(name)?;
        parts.push(format!("{name}={who}"));
    }
    let (l4, _) = found("beta4")?;
    let verdict = l4.disputes().next().map(|(_, d)| d.result.verdict.to_string());
    check!(verdict.as_deref() == Some("Faked location signatures"), "beta4 verdict {verdict:?}");

    let (lt, who) = found("beta5_tamper")?;
    let verdict = lt.disputes().next().map(|(_, d)| d.result.verdict.to_string());
    check!(verdict.as_deref() == Some("check of T failed"), "tamper verdict {verdict:?}");
    parts.push(format!("beta5_tamper={who}"));

    let l1 = run_scenario(&scenario("beta1")).map_err(|e| e.to_string())?.ledger;
    let (_, d) = l1.disputes().next().ok_or("beta1 has no dispute")?;
    let mut bundle = d.bundle.clone();
    bundle.set_t[0].toll = bundle.set_t[1].toll.clone();
    let replay = replay_dispute(&l1.scenario, &bundle).map_err(|e| e.to_string())?;
    check!(replay.verdict.to_string() == "check of T failed", "tampered bundle verdict {}", replay.verdict);
    Ok(parts.join(", ") + "; verdict strings exact")
}

fn lemma1() -> Outcome {
    let mut w = World::setup(&small(4), Execution::Sequential).map_err(|e| e.to_string())?;
    let records = drive(&mut w);
    let victim = records[0].tuple.clone();
    let owner = w.users.iter().position(|u| u.travelled().contains(&victim)).ok_or("victim has no owner")?;
    w.server.ingest_batch(records);
    let g = victim.group.clone();

    let first = w.server.publish_fees(&g).map_err(|e| e.to_string())?;
    let second = w.server.publish_fees(&g).map_err(|e| e.to_string())?;
    check!(first.to_canonical_bytes() == second.to_canonical_bytes(), "fee set changed between publications");

    let mut checked = 0;
    for grp in w.scenario.groups.clone() {
        let set = w.server.publish_fees(&grp.id).map_err(|e| e.to_string())?;
        for r in w.server.records(&grp.id) {
            let t = set.lookup(&r.tuple.loc_hash()).ok_or("record missing from fee set")?;
            let fee = oracle_fee(&w.scenario, &r.tuple.location, r.tuple.time);
            check!(w.server.decrypt_cents(&t.enc_fee).ok() == Some(fee), "fee mismatch at {}", r.tuple.location);
            checked += 1;
        }
    }

    let mut w2 = World::setup(&small(4), Execution::Sequential).map_err(|e| e.to_string())?;
    let records = drive(&mut w2);
    w2.server.behaviour.drop_tuples.push(victim.loc_hash());
    w2.server.ingest_batch(records);
    let set = w2.server.publish_fees(&g).map_err(|e| e.to_string())?;
    let dir = w2.directory();
    let abort = w2.users[owner].compute_toll(&set, &dir.server_public, &dir.policy, &dir.paillier, &dir.session);
    let expected = TollAbort::IncompleteFeeSet { location: victim.location, time: victim.time };
    check!(abort.as_ref().err() == Some(&expected), "owner did not abort: {abort:?}");
    check!(set.verify(w2.params, w2.server.public()), "incomplete fee set is not server-signed evidence");
    Ok(format!("publish twice identical, {checked} fees decrypt to the policy fee, dropped tuple aborts"))
}

fn unlinkability(shared: &Shared) -> Outcome {
    let base = &shared.runs[0];
    let swapped = run_scenario_with(
        &shared.honest,
        RunOptions { swap: Some(Swap { a: 0, b: 2, point: 30 }), ..Default::default() },
    )
    .map_err(|e| e.to_string())?;
    let diffs = swap_differences(&base.server_view, &swapped.server_view);
    let report = evaluate_unlinkability(&base.ledger, &base.server_view, &base.member_signatures, Some(&swapped.server_view));
    check!(report.no_identifiers.passed, "identifier check: {:?}", report.no_identifiers);
    check!(report.no_repeats.passed, "repeat check: {:?}", report.no_repeats);
    check!(report.swap.as_ref().is_some_and(|c| c.passed), "swap check: {:?}", report.swap);
    check!(diffs.is_empty(), "swap findings {diffs:?}");
    let mut changed = Vec::new();
    for (g, ra) in &base.server_view.location_db {
        let rb = &swapped.server_view.location_db[g];
        changed.extend((0..ra.len()).filter(|&i| ra[i] != rb[i]).map(|i| (&ra[i].tuple, &rb[i].tuple)));
    }
    check!(changed.len() == 2, "swap changed {} records", changed.len());
    check!(changed[0].0 == changed[1].1 && changed[1].0 == changed[0].1, "changed records are not a transposition");
    check!(base.server_view.fee_sets == swapped.server_view.fee_sets, "fee sets differ");

    let single = run_scenario(&scenario("single")).map_err(|e| e.to_string())?;
    let r = evaluate_unlinkability(&single.ledger, &single.server_view, &single.member_signatures, None);
    check!(r.singleton_groups == [GroupId::new("G-east")], "singletons {:?}", r.singleton_groups);
    check!(r.anonymity_sets.get(&GroupId::new("G-east")) == Some(&1), "sets {:?}", r.anonymity_sets);
    Ok("three checks pass, swap differs in 2 transposed records, G-east anonymity set 1".into())
}

fn spot_checks() -> Outcome {
    let params = SpotCheckParams::new(60.0, 50.0).unwrap();
    let base = Location::from_degrees(48.5, 2.3).unwrap();
    let metres_north = |m: f64| Location::from_degrees(48.5 + m / 111_194.93, 2.3).unwrap();
    let obs = Observation { location: base, time: 1000, plate: "AB-001".into() };
    let near = metres_north(50.0);
    check!(!spot_check(&obs, [(&near, 1010)], &params).is_flagged(), "dt=10 s, 50 m was flagged");
    check!(spot_check(&obs, [(&base, 1031), (&base, 960)], &params).is_flagged(), "no record within 30 s was not flagged");
    let far = metres_north(2000.0);
    check!(spot_check(&obs, [(&far, 1020)], &params).is_flagged(), "dt=20 s, 2000 m was not flagged");

    let l = run_scenario(&scenario("obu")).map_err(|e| e.to_string())?.ledger;
    let silent = scenario("obu");
    let AdversaryAction::ObuFalseTuple { from, until, .. } = &silent.adversary[0] else {
        return Err("obu scenario has no OBU action".into());
    };
    let flagged = l
        .spot_checks
        .iter()
        .filter(|r| r.observation.time >= *from && r.observation.time < *until && r.outcome.is_flagged())
        .count();
    check!(flagged >= 1, "no scheduled observation flagged the silent OBU");
    Ok(format!("3 worked examples hold, {flagged} in-window observation(s) flagged out of {} scheduled", l.spot_checks.len()))
}

fn determinism(shared: &Shared, suite_start: Instant) -> Outcome {
    let seq = run_scenario_with(&shared.honest, RunOptions { exec: Execution::Sequential, swap: None })
        .map_err(|e| e.to_string())?;
    check!(seq.ledger.to_json() == shared.runs[0].ledger.to_json(), "sequential and parallel ledgers differ");
    let mut other = shared.honest.clone();
    other.seed += 1;
    other.session.end = other.session.start + 300;
    let a = run_scenario(&other).map_err(|e| e.to_string())?.ledger.to_json();
    let b = run_scenario(&other).map_err(|e| e.to_string())?.ledger.to_json();
    check!(a == b, "same seed gave different ledgers");
    let total = suite_start.elapsed();
    check!(total < Duration::from_secs(300), "acceptance run took {}", secs(total));
    Ok(format!("identical ledgers across seeds and strategies, 20-user run {}, acceptance total {}", secs(shared.run_time), secs(total)))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    match &outcome {
        Ok(detail) => println!("criterion {n} {name}: PASS ({detail})"),
        Err(why) => println!("criterion {n} {name}: FAIL ({why})"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let suite_start = Instant::now();
    let mut shared = Shared { honest: scenario("honest"), runs: Vec::new(), run_time: Duration::ZERO };
    let mut ok = true;
    ok &= run(1, "homomorphism", homomorphism);
    ok &= run(2, "group signatures", group_signatures);
    ok &= run(3, "correctness", || correctness(&mut shared));
    ok &= run(4, "beta1 accountability", beta1);
    ok &= run(5, "beta2-beta5 accountability", beta2_to_5);
    ok &= run(6, "fee set lemma", lemma1);
    if shared.runs.is_empty() {
        println!("criterion 7 unlinkability: FAIL (no honest run available)");
        println!("criterion 9 determinism: FAIL (no honest run available)");
        run(8, "spot checks", spot_checks);
        return ExitCode::FAILURE;
    }
    ok &= run(7, "unlinkability", || unlinkability(&shared));
    ok &= run(8, "spot checks", spot_checks);
    ok &= run(9, "determinism", || determinism(&shared, suite_start));
    if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
