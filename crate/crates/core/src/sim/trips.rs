use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;

use super::scenario::{Region, Scenario};
use crate::crypto::derive_rng;
use crate::protocol::UserId;
use crate::tolling::Location;

const METRES_PER_DEGREE: f64 = 6_371_000.0 * PI / 180.0;

/// Walkers stay below this share of γ so quantization never breaks the bound.
const SPEED_SHARE: f64 = 0.8;

/// Time-ordered `(ℓ, t)` samples of one user, `ε` apart.
pub type Trace = Vec<(Location, u64)>;

fn clamp_micro(v: f64, lo: f64, hi: f64) -> i64 {
    (v.clamp(lo, hi) * 1e6).round() as i64
}

fn walk(scenario: &Scenario, region: &Region, user: &UserId) -> Trace {
    let mut rng = derive_rng(scenario.seed, &format!("trip/{user}"));
    let mut lat = rng.gen_range(region.min_lat..=region.max_lat);
    let mut lon = rng.gen_range(region.min_lon..=region.max_lon);
    let step = scenario.transmission_interval;
    let mut out = Vec::with_capacity(scenario.points_per_user());
    let mut t = scenario.session.start;
    while t < scenario.session.end {
        let loc = Location::from_micro(
            clamp_micro(lat, region.min_lat, region.max_lat),
            clamp_micro(lon, region.min_lon, region.max_lon),
        )
        .expect("region lies within coordinate bounds");
        out.push((loc, t));
        lat = loc.lat_degrees();
        lon = loc.lon_degrees();

        let speed = rng.gen_range(0.0..SPEED_SHARE * scenario.max_speed);
        let heading = rng.gen_range(0.0..2.0 * PI);
        let dist = speed * step as f64;
        lat += dist * heading.cos() / METRES_PER_DEGREE;
        lon += dist * heading.sin() / (METRES_PER_DEGREE * lat.to_radians().cos().max(1e-6));
        t += step;
    }
    out
}

/// Deterministic bounded random walks, one per user, inside each user's region.
pub fn generate_trips(scenario: &Scenario) -> BTreeMap<UserId, Trace> {
    scenario
        .user_ids()
        .into_iter()
        .enumerate()
        .map(|(i, user)| {
            let region = scenario.region(scenario.region_of(i)).expect("validated scenario");
            let trace = walk(scenario, region, &user);
            (user, trace)
        })
        .collect()
}

/// True position at `time`, interpolated between samples.
pub fn position_at(trace: &Trace, time: u64) -> Option<Location> {
    let (first, last) = (trace.first()?, trace.last()?);
    if time <= first.1 {
        return Some(first.0);
    }
    if time >= last.1 {
        return Some(last.0);
    }
    let i = trace.partition_point(|(_, t)| *t <= time);
    let (a, ta) = trace[i - 1];
    let (b, tb) = trace[i];
    let f = (time - ta) as f64 / (tb - ta) as f64;
    let lat = a.lat_micro() as f64 + f * (b.lat_micro() - a.lat_micro()) as f64;
    let lon = a.lon_micro() as f64 + f * (b.lon_micro() - a.lon_micro()) as f64;
    Location::from_micro(lat.round() as i64, lon.round() as i64).ok()
}
