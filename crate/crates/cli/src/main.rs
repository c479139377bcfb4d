use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use etp_core::crypto::KeyMode;
use etp_core::io::{self, IoError};
use etp_core::par::Execution;
use etp_core::protocol::{spot_check, DisputeBundle, SpotCheckOutcome, SpotCheckParams};
use etp_core::sim::{replay_dispute, run_scenario_with, RunOptions, SessionLedger};
use etp_core::tolling::LocationRecord;

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "etp", version, about = "Electronic toll pricing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Test,
    Production,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the ledger, summary and location database.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run every batch step on a single thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Replay dispute resolution from the bundles recorded in a ledger.
    Dispute {
        ledger: PathBuf,
        /// Replace the recorded bundle of the same group with this one.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Check roadside observations against the stored location database.
    SpotCheck {
        ledger: PathBuf,
        observations: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Generate group parameters, the server Paillier key and signing keys.
    Keygen {
        #[arg(value_enum)]
        mode: Mode,
        out_dir: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// An error carrying its exit code.
struct Failure(u8, anyhow::Error);

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure(EXIT_INPUT, e.into())
}

fn internal(e: impl Into<anyhow::Error>) -> Failure {
    Failure(EXIT_FAILURE, e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed, sequential } => simulate(&config, &out, seed, sequential),
        Command::Dispute { ledger, bundle } => dispute(&ledger, bundle.as_deref()),
        Command::SpotCheck { ledger, observations, epsilon, gamma } => {
            spot_check_cmd(&ledger, &observations, epsilon, gamma)
        }
        Command::Keygen { mode, out_dir, force, seed } => keygen(mode, &out_dir, force, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, sequential: bool) -> Result<u8, Failure> {
    let mut scenario = io::load_scenario(config).map_err(input)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let exec = if sequential { Execution::Sequential } else { Execution::default() };
    let run = run_scenario_with(&scenario, RunOptions { exec, swap: None })
        .context("protocol run failed")
        .map_err(internal)?;
    io::save_run(out, &run.ledger, &run.server_view).map_err(internal)?;

    let ledger = &run.ledger;
    println!("scenario {} ({}), seed {}", scenario.name, ledger.stamp, scenario.seed);
    for g in &ledger.groups {
        let dispute = match (&g.dispute, g.aborted) {
            (_, true) => "aborted".to_string(),
            (Some(d), _) => format!("dispute: {}", d.result.verdict),
            (None, _) => "balanced".to_string(),
        };
        println!("group {}: {} members, {} records, {} cents, {dispute}", g.group, g.members.len(), g.records, g.fee_total_cents);
    }
    for a in &ledger.aborts {
        println!("abort: {} in {}: {:?}", a.user, a.group, a.abort);
    }
    for a in &ledger.accusations {
        let found = match &a.found {
            Ok(p) => p.to_string(),
            Err(e) => format!("inconclusive ({e})"),
        };
        println!("accusation {:?}: expected {}, found {found}", a.misbehaviour, a.expected);
    }
    println!("paid {} of {} cents; wrote {}", ledger.total_paid(), ledger.total_fees(), out.display());
    Ok(if run.aborted() { EXIT_ABORT } else { EXIT_OK })
}

fn dispute(ledger_path: &Path, bundle: Option<&Path>) -> Result<u8, Failure> {
    let ledger = io::load_ledger(ledger_path).map_err(input)?;
    let mut bundles: BTreeMap<_, (DisputeBundle, Option<Vec<u8>>)> = ledger
        .disputes()
        .map(|(g, d)| (g.group.clone(), (d.bundle.clone(), Some(d.result.verdict_bytes()))))
        .collect();
    if let Some(path) = bundle {
        let text = std::fs::read_to_string(path).with_context(|| path.display().to_string()).map_err(input)?;
        let b: DisputeBundle =
            serde_json::from_str(&text).with_context(|| path.display().to_string()).map_err(input)?;
        let recorded = bundles.remove(&b.group).and_then(|(_, v)| v);
        bundles.insert(b.group.clone(), (b, recorded));
    }
    if bundles.is_empty() {
        return Err(input(anyhow!("ledger holds no dispute bundle")));
    }
    let mut mismatch = false;
    for (group, (bundle, recorded)) in &bundles {
        let result = replay_dispute(&ledger.scenario, bundle).map_err(internal)?;
        let same = recorded.as_ref() == Some(&result.verdict_bytes());
        mismatch |= !same;
        println!(
            "group {group}: {}{}",
            result.verdict,
            if same { "" } else { " (differs from recorded verdict)" }
        );
    }
    Ok(if mismatch && bundle.is_none() { EXIT_FAILURE } else { EXIT_OK })
}

fn location_db(ledger_path: &Path, ledger: &SessionLedger) -> Result<BTreeMap<String, Vec<LocationRecord>>, IoError> {
    let dir = if ledger_path.is_dir() {
        ledger_path.to_path_buf()
    } else {
        ledger_path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let sid = &ledger.scenario.session.sid.0;
    let mut out = BTreeMap::new();
    for g in &ledger.groups {
        let path = dir.join(io::LOCATION_DB_DIR).join(io::location_db_name(g.group.as_str(), sid));
        out.insert(g.group.as_str().to_string(), io::parse_location_db(&path)?);
    }
    Ok(out)
}

fn spot_check_cmd(
    ledger_path: &Path,
    observations: &Path,
    epsilon: Option<f64>,
    gamma: Option<f64>,
) -> Result<u8, Failure> {
    let ledger = io::load_ledger(ledger_path).map_err(input)?;
    let defaults = ledger.scenario.spot_check_params();
    let params = SpotCheckParams::new(epsilon.unwrap_or(defaults.epsilon), gamma.unwrap_or(defaults.gamma))
        .map_err(|e| input(anyhow!(e)))?;
    let observations = io::load_observations(observations).map_err(input)?;
    let db = location_db(ledger_path, &ledger).map_err(input)?;
    for obs in &observations {
        let Some(user) = ledger.keys.plates.get(&obs.plate) else {
            println!("{} {}|{}: unknown plate", obs.plate, obs.location, obs.time);
            continue;
        };
        let group = ledger.user(user).map(|u| u.group.as_str().to_string()).unwrap_or_default();
        let records = db.get(&group).map(Vec::as_slice).unwrap_or_default();
        let outcome = spot_check(obs, records.iter().map(|r| (&r.tuple.location, r.tuple.time)), &params);
        let line = match &outcome {
            SpotCheckOutcome::Consistent { terms } => format!("consistent: {terms}"),
            SpotCheckOutcome::Flagged { nearest: Some(terms) } => format!("flagged: nearest {terms}"),
            SpotCheckOutcome::Flagged { nearest: None } => "flagged: no records".to_string(),
        };
        println!("{} {}|{}: {line}", obs.plate, obs.location, obs.time);
    }
    Ok(EXIT_OK)
}

fn keygen(mode: Mode, out_dir: &Path, force: bool, seed: Option<u64>) -> Result<u8, Failure> {
    let mode = match mode {
        Mode::Test => KeyMode::InsecureTest,
        Mode::Production => KeyMode::Production,
    };
    let keys = io::generate_keys(mode, seed).map_err(internal)?;
    let paths = match io::write_keys(out_dir, &keys, force) {
        Ok(paths) => paths,
        Err(e @ IoError::Exists(_)) => return Err(input(e)),
        Err(e) => return Err(internal(e)),
    };
    let loaded = io::read_keys(out_dir).map_err(internal)?;
    if loaded != keys {
        return Err(internal(anyhow!("written keys do not load back identically")));
    }
    for p in paths {
        println!("{} {}", mode.stamp(), p.display());
    }
    Ok(EXIT_OK)
}
