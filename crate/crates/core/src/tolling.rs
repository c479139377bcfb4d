//! Tolling domain: locations, the public charging policy, fee tuples and the
//! shared hashing rules.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, hash_encoded, CryptoError, Digest, PaillierCiphertext, PaillierPublicKey};
use crate::encoding::{Encode, Encoder};
use crate::groupsig::{GroupId, GroupSignature};
use crate::par::Execution;

const MICRO: i64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TollingError {
    #[error("coordinate out of range: {0}")]
    CoordinateRange(String),
    #[error("malformed coordinate text {0:?}")]
    CoordinateFormat(String),
    #[error("invalid charging policy: {0}")]
    Policy(String),
    #[error("fee tuples must belong to a single group")]
    MixedGroups,
    #[error("location tuple at t={0} lies outside session {1}")]
    OutsideSession(u64, SessionId),
    #[error("group fee total {total} would wrap the plaintext ring (limit {limit})")]
    PlaintextOverflow { total: BigUint, limit: BigUint },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Latitude/longitude in micro-degrees (six decimal places).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    lat_micro: i64,
    lon_micro: i64,
}

impl Location {
    pub fn from_micro(lat_micro: i64, lon_micro: i64) -> Result<Self, TollingError> {
        if !(-90 * MICRO..=90 * MICRO).contains(&lat_micro) {
            return Err(TollingError::CoordinateRange(format!("latitude {}", format_fixed(lat_micro))));
        }
        if !(-180 * MICRO..=180 * MICRO).contains(&lon_micro) {
            return Err(TollingError::CoordinateRange(format!("longitude {}", format_fixed(lon_micro))));
        }
        Ok(Location { lat_micro, lon_micro })
    }

    /// Rounds to the nearest micro-degree.
    pub fn from_degrees(lat: f64, lon: f64) -> Result<Self, TollingError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(TollingError::CoordinateRange(format!("{lat}, {lon}")));
        }
        Self::from_micro((lat * 1e6).round() as i64, (lon * 1e6).round() as i64)
    }

    pub fn lat_micro(&self) -> i64 {
        self.lat_micro
    }

    pub fn lon_micro(&self) -> i64 {
        self.lon_micro
    }

    pub fn lat_degrees(&self) -> f64 {
        self.lat_micro as f64 / 1e6
    }

    pub fn lon_degrees(&self) -> f64 {
        self.lon_micro as f64 / 1e6
    }

    /// Equirectangular approximation, metres.
    pub fn planar_distance_m(&self, other: &Location) -> f64 {
        const EARTH_RADIUS_M: f64 = 6_371_000.0;
        let lat1 = self.lat_degrees().to_radians();
        let lat2 = other.lat_degrees().to_radians();
        let dlat = lat2 - lat1;
        let dlon = (other.lon_degrees() - self.lon_degrees()).to_radians();
        let x = dlon * ((lat1 + lat2) / 2.0).cos();
        EARTH_RADIUS_M * (x * x + dlat * dlat).sqrt()
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", format_fixed(self.lat_micro), format_fixed(self.lon_micro))
    }
}

impl Serialize for Location {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Location {
    type Err = TollingError;

    /// Parses the canonical `lat|lon` form.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lat, lon) = s
            .split_once('|')
            .ok_or_else(|| TollingError::CoordinateFormat(s.to_string()))?;
        Location::from_micro(parse_fixed(lat)?, parse_fixed(lon)?)
    }
}

/// Sign-prefixed six-decimal fixed point, e.g. `-2.250000`.
pub fn format_fixed(micro: i64) -> String {
    let sign = if micro < 0 { "-" } else { "" };
    let abs = micro.unsigned_abs();
    format!("{sign}{}.{:06}", abs / MICRO as u64, abs % MICRO as u64)
}

/// Strict inverse of [`format_fixed`]: exactly six decimals, no `+`, no
/// leading zeros and no negative zero.
pub fn parse_fixed(s: &str) -> Result<i64, TollingError> {
    let bad = || TollingError::CoordinateFormat(s.to_string());
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').ok_or_else(bad)?;
    if int.is_empty()
        || frac.len() != 6
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
        || (int.len() > 1 && int.starts_with('0'))
    {
        return Err(bad());
    }
    let whole: i64 = int.parse().map_err(|_| bad())?;
    let part: i64 = frac.parse().map_err(|_| bad())?;
    let magnitude = whole
        .checked_mul(MICRO)
        .and_then(|w| w.checked_add(part))
        .ok_or_else(bad)?;
    if neg && magnitude == 0 {
        return Err(bad());
    }
    Ok(if neg { -magnitude } else { magnitude })
}

/// `"lat|lon|t"` as UTF-8.
pub fn canonical_location_bytes(location: &Location, time: u64) -> Vec<u8> {
    format!("{location}|{time}").into_bytes()
}

/// `h(ℓ, t)`
pub fn hash_location(location: &Location, time: u64) -> Digest {
    hash(&canonical_location_bytes(location, time))
}

/// `⟨ℓ, t, G⟩`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocationTuple {
    pub location: Location,
    pub time: u64,
    pub group: GroupId,
}

impl LocationTuple {
    pub fn loc_hash(&self) -> Digest {
        hash_location(&self.location, self.time)
    }
}

impl Encode for LocationTuple {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.bytes(&canonical_location_bytes(&self.location, self.time)).field(&self.group);
    }
}

/// A driving-phase message: the tuple and the group signature on `h(ℓ, t)`.
/// There is deliberately no sender field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub tuple: LocationTuple,
    pub signature: GroupSignature,
}

impl Encode for LocationRecord {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.tuple).field(&self.signature);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakWindow {
    pub start_hour: u8,
    pub end_hour: u8,
    pub multiplier_percent: u64,
}

impl PeakWindow {
    /// `[start, end)` in UTC hours, wrapping past midnight when `start > end`.
    pub fn contains_hour(&self, hour: u8) -> bool {
        if self.start_hour <= self.end_hour {
            (self.start_hour..self.end_hour).contains(&hour)
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }
}

/// Public charging policy `f(ℓ, t)`: a rate per grid cell scaled by a peak
/// multiplier. Zones are named `"row:col"` with
/// `row = floor(lat / cell)` and `col = floor(lon / cell)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargingPolicy {
    pub grid_cell_micro: i64,
    pub default_rate: u64,
    #[serde(default)]
    pub zone_rates: BTreeMap<String, u64>,
    #[serde(default)]
    pub peak_windows: Vec<PeakWindow>,
}

impl ChargingPolicy {
    pub fn validate(&self) -> Result<(), TollingError> {
        if self.grid_cell_micro <= 0 {
            return Err(TollingError::Policy("grid_cell_micro must be positive".into()));
        }
        for w in &self.peak_windows {
            if w.start_hour > 23 || w.end_hour > 24 {
                return Err(TollingError::Policy(format!("peak window {}-{} out of range", w.start_hour, w.end_hour)));
            }
            if w.multiplier_percent < 100 {
                return Err(TollingError::Policy(format!("multiplier {}% below 100%", w.multiplier_percent)));
            }
        }
        for zone in self.zone_rates.keys() {
            let ok = zone
                .split_once(':')
                .map(|(r, c)| r.parse::<i64>().is_ok() && c.parse::<i64>().is_ok())
                .unwrap_or(false);
            if !ok {
                return Err(TollingError::Policy(format!("zone key {zone:?} is not \"row:col\"")));
            }
        }
        Ok(())
    }

    pub fn zone_of(&self, location: &Location) -> String {
        let row = location.lat_micro().div_euclid(self.grid_cell_micro);
        let col = location.lon_micro().div_euclid(self.grid_cell_micro);
        format!("{row}:{col}")
    }

    /// Multiplier of the first window containing the hour, else 100%.
    pub fn multiplier_at(&self, time: u64) -> u64 {
        let hour = ((time / 3600) % 24) as u8;
        self.peak_windows
            .iter()
            .find(|w| w.contains_hour(hour))
            .map(|w| w.multiplier_percent)
            .unwrap_or(100)
    }

    /// Fee in cents: zone rate × multiplier / 100, floored.
    pub fn compute_fee(&self, location: &Location, time: u64) -> u64 {
        let rate = self
            .zone_rates
            .get(&self.zone_of(location))
            .copied()
            .unwrap_or(self.default_rate);
        let fee = rate as u128 * self.multiplier_at(time) as u128 / 100;
        u64::try_from(fee).unwrap_or(u64::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Encode for SessionId {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.0);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TollSession {
    pub sid: SessionId,
    pub start: u64,
    pub end: u64,
}

impl TollSession {
    /// Half-open `[start, end)`.
    pub fn contains(&self, time: u64) -> bool {
        self.start <= time && time < self.end
    }
}

/// `(h(ℓ, t), E_S(f(ℓ, t)))`
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeeTuple {
    pub loc_hash: Digest,
    pub enc_fee: PaillierCiphertext,
}

impl Encode for FeeTuple {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.field(&self.loc_hash).field(&self.enc_fee);
    }
}

fn coprime_at_or_above(start: BigUint, n: &BigUint) -> BigUint {
    let mut r = start;
    loop {
        if r.is_zero() || r >= *n {
            r = BigUint::one();
        }
        if r.gcd(n).is_one() {
            return r;
        }
        r += 1u32;
    }
}

/// Publicly derivable encryption randomness for a fee tuple: the smallest
/// integer at or above `H("fee-rand", sid, h(ℓ,t)) mod n` that is a unit.
pub fn derive_fee_randomness(pk: &PaillierPublicKey, sid: &SessionId, loc_hash: &Digest) -> BigUint {
    let mut enc = Encoder::with_domain("fee-rand");
    enc.field(sid).field(loc_hash);
    let d = hash_encoded(&enc);
    coprime_at_or_above(BigUint::from_bytes_be(d.as_bytes()) % &pk.n, &pk.n)
}

/// Randomness of the canonical empty commitment `E_S(0)` for a user who
/// travelled nowhere during the session.
pub fn derive_empty_randomness(pk: &PaillierPublicKey, sid: &SessionId, user: &str) -> BigUint {
    let mut enc = Encoder::with_domain("empty");
    enc.field(sid).str(user);
    let d = hash_encoded(&enc);
    coprime_at_or_above(BigUint::from_bytes_be(d.as_bytes()) % &pk.n, &pk.n)
}

pub fn empty_commitment(pk: &PaillierPublicKey, sid: &SessionId, user: &str) -> PaillierCiphertext {
    pk.encrypt(&BigUint::zero(), &derive_empty_randomness(pk, sid, user))
        .expect("derived randomness is a unit")
}

/// Recomputes the fee tuple any principal can derive from public data.
pub fn fee_tuple_for(
    policy: &ChargingPolicy,
    pk: &PaillierPublicKey,
    sid: &SessionId,
    location: &Location,
    time: u64,
) -> Result<FeeTuple, TollingError> {
    let loc_hash = hash_location(location, time);
    let fee = policy.compute_fee(location, time);
    let r = derive_fee_randomness(pk, sid, &loc_hash);
    Ok(FeeTuple { enc_fee: pk.encrypt_u64(fee, &r)?, loc_hash })
}

/// Builds `L'` for one group: one tuple per distinct `(ℓ, t)`, sorted by hash.
///
/// The fee total over the full input multiset must stay below `n / 2`.
pub fn make_fee_tuples(
    policy: &ChargingPolicy,
    tuples: &[LocationTuple],
    pk: &PaillierPublicKey,
    session: &TollSession,
    exec: Execution,
) -> Result<Vec<FeeTuple>, TollingError> {
    if let Some(first) = tuples.first() {
        if tuples.iter().any(|t| t.group != first.group) {
            return Err(TollingError::MixedGroups);
        }
    }
    if let Some(out) = tuples.iter().find(|t| !session.contains(t.time)) {
        return Err(TollingError::OutsideSession(out.time, session.sid.clone()));
    }
    let total: BigUint = tuples
        .iter()
        .map(|t| BigUint::from(policy.compute_fee(&t.location, t.time)))
        .sum();
    let limit = &pk.n >> 1;
    if total >= limit {
        return Err(TollingError::PlaintextOverflow { total, limit });
    }
    let distinct: BTreeMap<Digest, (Location, u64)> =
        tuples.iter().map(|t| (t.loc_hash(), (t.location, t.time))).collect();
    let points: Vec<(Location, u64)> = distinct.into_values().collect();
    // BTreeMap iteration already yields hash order
    exec.map(&points, |(loc, t)| fee_tuple_for(policy, pk, &session.sid, loc, *t))
        .into_iter()
        .collect()
}
