//! Seeded desk-scale simulation of whole toll sessions.

mod bus;
mod ledger;
mod run;
mod scenario;
mod trips;
mod unlinkability;

pub use bus::{Bus, Channel, PhaseCount};
pub use ledger::{
    AbortRecord, Accusation, DisputeRecord, GroupSummary, PublicKeys, SessionLedger, UserSummary, LEDGER_SCHEMA,
};
pub use run::{replay_dispute, run_scenario, run_scenario_with, RunOptions, RunOutput, Swap, World};
pub use scenario::{
    AdversaryAction, GroupAssignment, Region, Scenario, ScenarioError, ScheduledSpotCheck, UserPopulation,
    SCENARIO_SCHEMA,
};
pub use trips::{generate_trips, position_at, Trace};
pub use unlinkability::{
    evaluate_unlinkability, identifiers, repeated_fields, scan_for_identifiers, swap_differences, Check,
    UnlinkabilityReport,
};
