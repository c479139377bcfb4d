#![allow(dead_code)]

use std::path::PathBuf;

use etp_core::io::load_scenario;
use etp_core::protocol::UserId;
use etp_core::sim::{generate_trips, Scenario, World};
use etp_core::tolling::LocationRecord;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(&scenario_path(name)).expect("bundled scenario loads")
}

/// Ten-minute, four-user variant of the honest scenario.
pub fn small(users: usize) -> Scenario {
    let mut s = scenario("honest");
    s.name = "small".into();
    s.users.count = users;
    s.session.end = s.session.start + 600;
    s
}

/// Phase 2 for every user; returns the records in submission order.
pub fn drive(world: &mut World) -> Vec<LocationRecord> {
    let traces = generate_trips(&world.scenario);
    let mut out = Vec::new();
    for user in world.users.iter_mut() {
        for (loc, t) in &traces[&user.id] {
            out.extend(user.obu_record(*loc, *t).unwrap());
        }
    }
    out
}

pub fn uid(s: &str) -> UserId {
    UserId::new(s)
}
