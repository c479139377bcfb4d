//! Persistence: scenario documents, ledgers, the per-group location
//! database and key files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{derive_rng, paillier_keygen, CryptoError, GroupParams, KeyMode, PaillierSecretKey, StdKeyPair};
use crate::protocol::{parse_observation, Observation, ServerView};
use crate::sim::{Scenario, ScenarioError, SessionLedger};
use crate::tolling::LocationRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Scenario { path: PathBuf, source: ScenarioError },
    #[error("{0} exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| IoError::File { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| IoError::Format { path: path.to_path_buf(), message: e.to_string() })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, IoError> {
    Scenario::from_toml(&read(path)?).map_err(|source| IoError::Scenario { path: path.to_path_buf(), source })
}

pub const LEDGER_FILE: &str = "ledger.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const LOCATION_DB_DIR: &str = "location_db";

/// File name of the append-only record log of one group and session.
pub fn location_db_name(group: &str, sid: &str) -> String {
    let clean = |s: &str| s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect::<String>();
    format!("{}__{}.jsonl", clean(group), clean(sid))
}

pub fn location_db_lines(records: &[LocationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn parse_location_db(path: &Path) -> Result<Vec<LocationRecord>, IoError> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IoError::Format {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Writes `ledger.json`, `summary.csv` and one JSONL file per group.
pub fn save_run(dir: &Path, ledger: &SessionLedger, view: &ServerView) -> Result<(), IoError> {
    write(&dir.join(LEDGER_FILE), &ledger.to_json())?;
    write(&dir.join(SUMMARY_FILE), &ledger.summary_csv())?;
    let sid = &ledger.scenario.session.sid.0;
    for (group, records) in &view.location_db {
        let path = dir.join(LOCATION_DB_DIR).join(location_db_name(group.as_str(), sid));
        write(&path, &location_db_lines(records))?;
    }
    Ok(())
}

pub fn save_ledger(path: &Path, ledger: &SessionLedger) -> Result<(), IoError> {
    write(path, &ledger.to_json())
}

/// Accepts either a ledger file or a run directory containing one.
pub fn load_ledger(path: &Path) -> Result<SessionLedger, IoError> {
    let file = if path.is_dir() { path.join(LEDGER_FILE) } else { path.to_path_buf() };
    read_json(&file)
}

/// Parses an observations CSV (`lat,lon,t,plate`, optional header line).
pub fn load_observations(path: &Path) -> Result<Vec<Observation>, IoError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("lat")) {
            continue;
        }
        let obs = parse_observation(line).map_err(|message| IoError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", i + 1),
        })?;
        out.push(obs);
    }
    Ok(out)
}

/// A key document stamped with the mode it was generated for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile<T> {
    pub stamp: String,
    pub mode: KeyMode,
    pub key: T,
}

impl<T> KeyFile<T> {
    fn new(mode: KeyMode, key: T) -> Self {
        KeyFile { stamp: mode.stamp().to_string(), mode, key }
    }
}

pub const KEY_FILES: [&str; 4] =
    ["group_params.json", "server_paillier.json", "server_signing.json", "authority_signing.json"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySet {
    pub params: KeyFile<GroupParams>,
    pub paillier: KeyFile<PaillierSecretKey>,
    pub server: KeyFile<StdKeyPair>,
    pub authority: KeyFile<StdKeyPair>,
}

pub const KEYGEN_TEST_BITS: u64 = 512;

/// Seeded generation is reproducible; without a seed the OS entropy source
/// is used.
pub fn generate_keys(mode: KeyMode, seed: Option<u64>) -> Result<KeySet, IoError> {
    match seed {
        Some(seed) => generate_keys_with(mode, &mut derive_rng(seed, "keygen")),
        None => generate_keys_with(mode, &mut rand::rngs::OsRng),
    }
}

pub fn generate_keys_with<R: RngCore + ?Sized>(mode: KeyMode, rng: &mut R) -> Result<KeySet, IoError> {
    let params = mode.group_params();
    let bits = match mode {
        KeyMode::InsecureTest => KEYGEN_TEST_BITS,
        KeyMode::Production => mode.min_paillier_bits(),
    };
    let (_, paillier) = paillier_keygen(bits, rng)?;
    Ok(KeySet {
        params: KeyFile::new(mode, params.clone()),
        paillier: KeyFile::new(mode, paillier),
        server: KeyFile::new(mode, StdKeyPair::generate(params, rng)),
        authority: KeyFile::new(mode, StdKeyPair::generate(params, rng)),
    })
}

/// Refuses to touch an existing key file unless `force` is set.
pub fn write_keys(dir: &Path, keys: &KeySet, force: bool) -> Result<Vec<PathBuf>, IoError> {
    let paths: Vec<PathBuf> = KEY_FILES.iter().map(|f| dir.join(f)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(IoError::Exists(p.clone()));
        }
    }
    let docs = [
        serde_json::to_string_pretty(&keys.params),
        serde_json::to_string_pretty(&keys.paillier),
        serde_json::to_string_pretty(&keys.server),
        serde_json::to_string_pretty(&keys.authority),
    ];
    for (path, doc) in paths.iter().zip(docs) {
        write(path, &(doc.expect("keys serialize") + "\n"))?;
    }
    Ok(paths)
}

pub fn read_keys(dir: &Path) -> Result<KeySet, IoError> {
    Ok(KeySet {
        params: read_json(&dir.join(KEY_FILES[0]))?,
        paillier: read_json(&dir.join(KEY_FILES[1]))?,
        server: read_json(&dir.join(KEY_FILES[2]))?,
        authority: read_json(&dir.join(KEY_FILES[3]))?,
    })
}
