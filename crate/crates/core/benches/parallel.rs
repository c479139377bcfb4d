use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use etp_core::crypto::{derive_rng, paillier_keygen, GroupParams};
use etp_core::groupsig::{gs_member_keygen, gs_setup, gs_sign, GroupId, MemberSecretKey};
use etp_core::io::load_scenario;
use etp_core::par::Execution;
use etp_core::sim::{generate_trips, run_scenario, Scenario, World};
use etp_core::tolling::{make_fee_tuples, LocationTuple};

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"));
    load_scenario(&path).expect("bundled scenario")
}

fn verify_batch(c: &mut Criterion) {
    let p = GroupParams::insecure_test();
    let rng = &mut derive_rng(1, "bench/gs");
    let (mut gpk, gmk) = gs_setup(p, GroupId::new("G"), rng);
    let members: Vec<MemberSecretKey> = (0..8)
        .map(|_| {
            let (s, h) = gs_member_keygen(p, rng);
            let e = gmk.join(p, &mut gpk, h, rng).unwrap();
            MemberSecretKey { group_id: gpk.group_id.clone(), member_index: e.index, secret: s }
        })
        .collect();
    let items: Vec<_> = (0..64u32)
        .map(|i| {
            let msg = i.to_be_bytes().to_vec();
            let sig = gs_sign(p, &gpk, &members[i as usize % 8], &msg, rng).unwrap();
            (msg, sig)
        })
        .collect();
    let mut group = c.benchmark_group("verify_batch");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::new(name, items.len()), &exec, |b, &exec| {
            b.iter(|| gpk.verify_batch(p, &items, exec))
        });
    }
    group.finish();
}

fn fee_tuples(c: &mut Criterion) {
    let s = scenario("honest");
    let (pk, _) = paillier_keygen(512, &mut derive_rng(2, "bench/paillier")).unwrap();
    let group = &s.groups[0].id;
    let tuples: Vec<LocationTuple> = generate_trips(&s)
        .values()
        .take(4)
        .flatten()
        .map(|(l, t)| LocationTuple { location: *l, time: *t, group: group.clone() })
        .collect();
    let mut g = c.benchmark_group("make_fee_tuples");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_with_input(BenchmarkId::new(name, tuples.len()), &exec, |b, &exec| {
            b.iter(|| make_fee_tuples(&s.policy, &tuples, &pk, &s.session, exec).unwrap())
        });
    }
    g.finish();
}

fn dis_res(c: &mut Criterion) {
    let mut s = scenario("beta1");
    s.session.end = s.session.start + 900;
    let ledger = run_scenario(&s).unwrap().ledger;
    let (_, record) = ledger.disputes().next().expect("beta1 disputes");
    let mut g = c.benchmark_group("dis_res");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        let mut world = World::setup(&s, exec).unwrap();
        g.bench_function(BenchmarkId::new(name, record.bundle.set_s.len()), |b| {
            b.iter(|| world.authority.dis_res(&record.bundle).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, verify_batch, fee_tuples, dis_res);
criterion_main!(benches);
