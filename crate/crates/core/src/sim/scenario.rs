use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::KeyMode;
use crate::groupsig::GroupId;
use crate::protocol::{Attack, SpotCheckParams, UserId};
use crate::tolling::{ChargingPolicy, Location, SessionId, TollSession};

pub const SCENARIO_SCHEMA: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid<T>(field: impl Into<String>, message: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid { field: field.into(), message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub name: String,
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl Region {
    pub fn contains(&self, loc: &Location) -> bool {
        (self.min_lat..=self.max_lat).contains(&loc.lat_degrees())
            && (self.min_lon..=self.max_lon).contains(&loc.lon_degrees())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupAssignment {
    pub id: GroupId,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserPopulation {
    pub count: usize,
    /// Users are assigned to these regions round-robin.
    pub regions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryAction {
    UserSkipFees { user: UserId, fraction: f64 },
    UserRefusePay { user: UserId },
    /// Offsets the published fee of the `index`-th trace point of `user`.
    ServerWrongFee { user: UserId, index: usize, delta: i64 },
    ServerForgeLocation { group: GroupId, lat: f64, lon: f64, time: u64 },
    ServerOmitPayment { user: UserId },
    ServerTamperCommitment { user: UserId },
    /// Silences the OBU during `[from, until)`, or reports `(lat, lon)` instead.
    ObuFalseTuple {
        user: UserId,
        from: u64,
        until: u64,
        #[serde(default)]
        lat: Option<f64>,
        #[serde(default)]
        lon: Option<f64>,
    },
}

impl AdversaryAction {
    pub fn attack(&self) -> Attack {
        match self {
            AdversaryAction::UserSkipFees { user, .. } => Attack::UserSkipFees { user: user.clone() },
            AdversaryAction::UserRefusePay { user } => Attack::UserRefusePay { user: user.clone() },
            AdversaryAction::ServerWrongFee { user, .. } => Attack::ServerWrongFee { victim: user.clone() },
            AdversaryAction::ServerForgeLocation { group, .. } => Attack::ServerForgeLocation { group: group.clone() },
            AdversaryAction::ServerOmitPayment { user } => Attack::ServerOmitPayment { user: user.clone() },
            AdversaryAction::ServerTamperCommitment { user } => Attack::ServerTamperCommitment { user: user.clone() },
            AdversaryAction::ObuFalseTuple { user, .. } => Attack::ObuFalseTuple { user: user.clone() },
        }
    }

    /// Virtual time at which the action takes effect.
    pub fn activation_time(&self, session: &TollSession) -> u64 {
        match self {
            AdversaryAction::ServerForgeLocation { time, .. } => *time,
            AdversaryAction::ObuFalseTuple { from, .. } => *from,
            _ => session.end,
        }
    }

    pub fn replacement(&self) -> Result<Option<Location>, ScenarioError> {
        match self {
            AdversaryAction::ObuFalseTuple { lat: Some(lat), lon: Some(lon), .. } => Location::from_degrees(*lat, *lon)
                .map(Some)
                .or_else(|e| invalid("adversary.lat", e.to_string())),
            AdversaryAction::ObuFalseTuple { lat: None, lon: None, .. } => Ok(None),
            AdversaryAction::ObuFalseTuple { .. } => invalid("adversary", "lat and lon must be given together"),
            _ => Ok(None),
        }
    }

    fn user(&self) -> Option<&UserId> {
        match self {
            AdversaryAction::UserSkipFees { user, .. }
            | AdversaryAction::UserRefusePay { user }
            | AdversaryAction::ServerWrongFee { user, .. }
            | AdversaryAction::ServerOmitPayment { user }
            | AdversaryAction::ServerTamperCommitment { user }
            | AdversaryAction::ObuFalseTuple { user, .. } => Some(user),
            AdversaryAction::ServerForgeLocation { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledSpotCheck {
    pub user: UserId,
    pub time: u64,
}

fn default_paillier_bits() -> u64 {
    128
}

fn default_max_speed() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub mode: KeyMode,
    #[serde(default = "default_paillier_bits")]
    pub paillier_bits: u64,
    /// ε, seconds between OBU transmissions.
    pub transmission_interval: u64,
    /// γ, metres per second.
    #[serde(default = "default_max_speed")]
    pub max_speed: f64,
    pub session: TollSession,
    pub regions: Vec<Region>,
    pub groups: Vec<GroupAssignment>,
    pub users: UserPopulation,
    pub policy: ChargingPolicy,
    #[serde(default)]
    pub adversary: Vec<AdversaryAction>,
    #[serde(default)]
    pub spot_checks: Vec<ScheduledSpotCheck>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        let width = self.users.count.to_string().len().max(2);
        (1..=self.users.count).map(|i| UserId::new(format!("u{i:0width$}"))).collect()
    }

    pub fn region_of(&self, index: usize) -> &str {
        &self.users.regions[index % self.users.regions.len()]
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    /// Trace points per user: `start + k·ε` strictly before `end`.
    pub fn points_per_user(&self) -> usize {
        let span = self.session.end.saturating_sub(self.session.start);
        span.div_ceil(self.transmission_interval.max(1)) as usize
    }

    pub fn spot_check_params(&self) -> SpotCheckParams {
        SpotCheckParams { epsilon: self.transmission_interval as f64, gamma: self.max_speed }
    }

    pub fn sid(&self) -> &SessionId {
        &self.session.sid
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA {
            return invalid("schema", format!("unsupported version {} (expected {SCENARIO_SCHEMA})", self.schema));
        }
        if self.paillier_bits < self.mode.min_paillier_bits() {
            return invalid(
                "paillier_bits",
                format!("{} is below the {}-bit minimum for this mode", self.paillier_bits, self.mode.min_paillier_bits()),
            );
        }
        if self.transmission_interval == 0 {
            return invalid("transmission_interval", "must be positive");
        }
        if !(self.max_speed.is_finite() && self.max_speed > 0.0) {
            return invalid("max_speed", "must be positive");
        }
        if self.session.start >= self.session.end {
            return invalid("session", "start must precede end");
        }
        if self.session.sid.0.is_empty() {
            return invalid("session.sid", "must not be empty");
        }
        self.policy.validate().or_else(|e| invalid("policy", e.to_string()))?;

        let mut names = BTreeSet::new();
        for (i, r) in self.regions.iter().enumerate() {
            if !names.insert(r.name.as_str()) {
                return invalid(format!("regions[{i}].name"), format!("duplicate region {:?}", r.name));
            }
            let ok = -90.0 <= r.min_lat && r.min_lat < r.max_lat && r.max_lat <= 90.0
                && -180.0 <= r.min_lon && r.min_lon < r.max_lon && r.max_lon <= 180.0;
            if !ok {
                return invalid(format!("regions[{i}]"), "bounding box is empty or out of range");
            }
        }
        let mut covered: BTreeMap<&str, &GroupId> = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for (i, g) in self.groups.iter().enumerate() {
            if !names.contains(g.region.as_str()) {
                return invalid(format!("groups[{i}].region"), format!("unknown region {:?}", g.region));
            }
            if !ids.insert(&g.id) {
                return invalid(format!("groups[{i}].id"), format!("duplicate group {}", g.id));
            }
            if covered.insert(g.region.as_str(), &g.id).is_some() {
                return invalid(format!("groups[{i}].region"), format!("region {:?} assigned twice", g.region));
            }
        }
        if self.users.count == 0 {
            return invalid("users.count", "must be positive");
        }
        if self.users.regions.is_empty() {
            return invalid("users.regions", "must list at least one region");
        }
        for (i, r) in self.users.regions.iter().enumerate() {
            if !covered.contains_key(r.as_str()) {
                return invalid(format!("users.regions[{i}]"), format!("no group covers region {r:?}"));
            }
        }

        let users: BTreeSet<UserId> = self.user_ids().into_iter().collect();
        for (i, a) in self.adversary.iter().enumerate() {
            let field = format!("adversary[{i}]");
            if let Some(u) = a.user() {
                if !users.contains(u) {
                    return invalid(format!("{field}.user"), format!("unknown user {u}"));
                }
            }
            a.replacement().map_err(|e| match e {
                ScenarioError::Invalid { message, .. } => ScenarioError::Invalid { field: field.clone(), message },
                other => other,
            })?;
            match a {
                AdversaryAction::UserSkipFees { fraction, .. } if !(0.0..=1.0).contains(fraction) => {
                    return invalid(format!("{field}.fraction"), "must lie in [0, 1]");
                }
                AdversaryAction::ServerWrongFee { index, delta, .. } => {
                    if *index >= self.points_per_user() {
                        return invalid(format!("{field}.index"), format!("user has only {} points", self.points_per_user()));
                    }
                    if *delta == 0 {
                        return invalid(format!("{field}.delta"), "must be non-zero");
                    }
                }
                AdversaryAction::ServerForgeLocation { group, lat, lon, time } => {
                    if !ids.contains(group) {
                        return invalid(format!("{field}.group"), format!("unknown group {group}"));
                    }
                    if !self.session.contains(*time) {
                        return invalid(format!("{field}.time"), "outside the session");
                    }
                    Location::from_degrees(*lat, *lon).or_else(|e| invalid(format!("{field}.lat"), e.to_string()))?;
                }
                AdversaryAction::ObuFalseTuple { from, until, .. } if from >= until => {
                    return invalid(format!("{field}.until"), "must be after from");
                }
                _ => {}
            }
        }
        for (i, s) in self.spot_checks.iter().enumerate() {
            if !users.contains(&s.user) {
                return invalid(format!("spot_checks[{i}].user"), format!("unknown user {}", s.user));
            }
            if !self.session.contains(s.time) {
                return invalid(format!("spot_checks[{i}].time"), "outside the session");
            }
        }
        Ok(())
    }
}
