use serde::{Deserialize, Serialize};

use super::types::UserId;
use crate::crypto::{std_verify, GroupElement, GroupParams, StdSignature};
use crate::encoding::{Encode, Encoder};
use crate::groupsig::GroupId;
use crate::tolling::{format_fixed, Location};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotCheckParams {
    /// Transmission interval ε in seconds.
    pub epsilon: f64,
    /// Maximum speed γ in metres per second.
    pub gamma: f64,
}

impl Default for SpotCheckParams {
    fn default() -> Self {
        SpotCheckParams { epsilon: 60.0, gamma: 50.0 }
    }
}

impl SpotCheckParams {
    pub fn new(epsilon: f64, gamma: f64) -> Result<Self, String> {
        let p = SpotCheckParams { epsilon, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(format!("gamma must be positive, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Roadside observation `⟨ℓ, t, pn⟩`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub location: Location,
    pub time: u64,
    pub plate: String,
}

impl Encode for Observation {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(&self.location.to_string()).u64(self.time).str(&self.plate);
    }
}

/// The evaluated inequality for one candidate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityTerms {
    pub record_location: Location,
    pub record_time: u64,
    pub delta_t: u64,
    pub half_epsilon: f64,
    pub distance_m: f64,
    pub speed_bound_m: f64,
}

impl InequalityTerms {
    fn evaluate(obs: &Observation, location: Location, time: u64, params: &SpotCheckParams) -> Self {
        let delta_t = obs.time.abs_diff(time);
        InequalityTerms {
            record_location: location,
            record_time: time,
            delta_t,
            half_epsilon: params.epsilon / 2.0,
            distance_m: obs.location.planar_distance_m(&location),
            speed_bound_m: params.gamma * delta_t as f64,
        }
    }

    pub fn time_ok(&self) -> bool {
        (self.delta_t as f64) < self.half_epsilon
    }

    pub fn distance_ok(&self) -> bool {
        self.distance_m <= self.speed_bound_m
    }

    pub fn holds(&self) -> bool {
        self.time_ok() && self.distance_ok()
    }
}

impl std::fmt::Display for InequalityTerms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "record {}|{} dt={}s {} {} dist={:.1}m {} {:.1}m",
            self.record_location,
            self.record_time,
            self.delta_t,
            if self.time_ok() { "<" } else { ">=" },
            self.half_epsilon,
            self.distance_m,
            if self.distance_ok() { "<=" } else { ">" },
            self.speed_bound_m,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SpotCheckOutcome {
    /// The first record satisfying both inequalities.
    Consistent { terms: InequalityTerms },
    /// No record satisfies both; `nearest` is the closest record in time.
    Flagged { nearest: Option<InequalityTerms> },
}

impl SpotCheckOutcome {
    pub fn is_flagged(&self) -> bool {
        matches!(self, SpotCheckOutcome::Flagged { .. })
    }
}

/// Consistent iff some record has `Δt < ε/2` and `dist ≤ γ·Δt`.
pub fn spot_check<'a, I>(obs: &Observation, records: I, params: &SpotCheckParams) -> SpotCheckOutcome
where
    I: IntoIterator<Item = (&'a Location, u64)>,
{
    let mut nearest: Option<InequalityTerms> = None;
    for (loc, t) in records {
        let terms = InequalityTerms::evaluate(obs, *loc, t, params);
        if terms.holds() {
            return SpotCheckOutcome::Consistent { terms };
        }
        let closer = match &nearest {
            None => true,
            Some(n) => (terms.delta_t, terms.distance_m) < (n.delta_t, n.distance_m),
        };
        if closer {
            nearest = Some(terms);
        }
    }
    SpotCheckOutcome::Flagged { nearest }
}

/// A spot check as recorded and signed by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotCheckRecord {
    pub observation: Observation,
    pub user: UserId,
    pub group: GroupId,
    pub outcome: SpotCheckOutcome,
    pub signature: StdSignature,
}

impl SpotCheckRecord {
    pub fn signed_message(obs: &Observation, user: &UserId, group: &GroupId, flagged: bool) -> Vec<u8> {
        let mut enc = Encoder::with_domain("etp/spot-check");
        enc.field(obs).field(user).field(group).u64(flagged as u64);
        enc.finish()
    }

    pub fn verify(&self, params: &GroupParams, server_public: &GroupElement) -> bool {
        let msg = Self::signed_message(&self.observation, &self.user, &self.group, self.outcome.is_flagged());
        std_verify(params, server_public, &msg, &self.signature)
    }
}

/// Parses `lat,lon,t,plate`. Degrees are rounded to the nearest micro-degree.
pub fn parse_observation(line: &str) -> Result<Observation, String> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    let [lat, lon, t, plate] = cols.as_slice() else {
        return Err(format!("expected 4 columns, found {}", cols.len()));
    };
    let degrees = |s: &str| s.parse::<f64>().map_err(|_| format!("bad coordinate {s:?}"));
    let location = Location::from_degrees(degrees(lat)?, degrees(lon)?).map_err(|e| e.to_string())?;
    let time = t.parse().map_err(|_| format!("bad time {t:?}"))?;
    if plate.is_empty() {
        return Err("empty plate".into());
    }
    Ok(Observation { location, time, plate: plate.to_string() })
}

pub fn format_observation(obs: &Observation) -> String {
    format!(
        "{},{},{},{}",
        format_fixed(obs.location.lat_micro()),
        format_fixed(obs.location.lon_micro()),
        obs.time,
        obs.plate
    )
}
