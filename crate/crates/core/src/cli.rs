//! Operator-facing command line: key generation, token issuance, request
//! submission, slot execution, chain verification, and batch simulation.
//!
//! Exit codes are a stable contract: 0 success, 1 validation failure,
//! 2 chain verification failure. Human-readable summaries go to stdout,
//! machine-readable artifacts only to files.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use chargecoord::credentials::{
    acquire_token, sign_request, CommonMessage, Issuer, PseudonymKeyPair, Token, TokenSignature,
    UtilityKeyPair, DEFAULT_TOKEN_QUOTA,
};
use chargecoord::harness::{sweep_lambda, to_csv, SimConfig};
use chargecoord::ledger::{
    slot_trigger, verify_blocks, Chain, ChainError, ContractConfig, RequestPayload, Transaction,
    TxKind,
};
use chargecoord::Address;

const KEYSTORE_ENV: &str = "CHARGECOORD_KEYSTORE";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Verification(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 1,
            CliError::Verification(_) => 2,
        }
    }

    fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::validation(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Resolves relative key paths against $CHARGECOORD_KEYSTORE when set.
fn key_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(dir) = std::env::var(KEYSTORE_ENV) {
            return PathBuf::from(dir).join(path);
        }
    }
    path.to_path_buf()
}

#[derive(Parser)]
#[command(name = "chargecoord", version, about = "Decentralized ESU charging coordination")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Utility,
    Esu,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a utility or ESU key pair.
    Keygen {
        #[arg(long, value_enum)]
        role: Role,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Issue charging tokens (runs blind/issue/unblind locally).
    Issue {
        #[arg(long)]
        utility_key: PathBuf,
        #[arg(long)]
        identity_key: PathBuf,
        #[arg(long, short = 'n', default_value_t = 1)]
        count: u32,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        community: String,
        #[arg(long, default_value_t = DEFAULT_TOKEN_QUOTA)]
        quota: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Submit a charging request transaction to the chain log.
    Submit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        chain_log: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long, default_value_t = 0)]
        token_index: usize,
        #[arg(long)]
        power: u64,
        #[arg(long)]
        soc: u32,
        #[arg(long)]
        tcc: u32,
        /// Request date; defaults to the token's issue date.
        #[arg(long)]
        date: Option<NaiveDate>,
    },
    /// Trigger end-of-slot execution and print the schedule.
    RunSlot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        chain_log: PathBuf,
    },
    /// Verify the chain dump against re-execution from genesis.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        chain_log: PathBuf,
    },
    /// Run the lambda sweep and write the results CSV.
    Simulate {
        /// Simulation config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    role: String,
    secret: String,
    public: String,
    address: Address,
}

#[derive(Serialize, Deserialize)]
struct TokenEntry {
    pseudonym_secret: String,
    pseudonym_public: String,
    address: Address,
    rho: String,
    omega: String,
    sigma: String,
    delta: String,
}

#[derive(Serialize, Deserialize)]
struct TokenFile {
    community: String,
    date: NaiveDate,
    utility_pk: String,
    tokens: Vec<TokenEntry>,
}

fn parse_hex32(s: &str, what: &str) -> Result<[u8; 32], CliError> {
    hex::decode(s)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| CliError::validation(format!("{what}: expected 64 hex characters")))
}

fn load_keypair(path: &Path) -> Result<(KeyFile, UtilityKeyPair), CliError> {
    let path = key_path(path);
    let raw = read_file(&path)?;
    let parsed: KeyFile = serde_json::from_str(&raw).map_err(|e| {
        CliError::validation(format!("{}: invalid key file: {e}", path.display()))
    })?;
    let secret = parse_hex32(&parsed.secret, "secret key")?;
    let pair = UtilityKeyPair::from_secret_bytes(&secret)
        .ok_or_else(|| CliError::validation(format!("{}: corrupt secret scalar", path.display())))?;
    if pair.public_bytes() != parse_hex32(&parsed.public, "public key")? {
        return Err(CliError::validation(format!(
            "{}: public key does not match secret",
            path.display()
        )));
    }
    Ok((parsed, pair))
}

fn load_chain_config(path: &Path) -> Result<ContractConfig, CliError> {
    let raw = read_file(path)?;
    let config: ContractConfig = serde_json::from_str(&raw).map_err(|e| {
        CliError::validation(format!("{}: invalid chain config: {e}", path.display()))
    })?;
    config
        .validate()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok(config)
}

fn load_tx_log(path: &Path) -> Result<Vec<Transaction>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_file(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            Transaction::from_hex(l)
                .map_err(|e| CliError::Verification(format!("corrupt transaction log: {e}")))
        })
        .collect()
}

fn append_tx(path: &Path, tx: &Transaction) -> Result<(), CliError> {
    use std::io::Write;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    writeln!(file, "{}", tx.to_hex()).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn dump_path(chain_log: &Path) -> PathBuf {
    let mut name = chain_log.as_os_str().to_os_string();
    name.push(".blocks");
    PathBuf::from(name)
}

fn replay_chain(config: ContractConfig, log: &Path) -> Result<Chain, CliError> {
    let txs = load_tx_log(log)?;
    Chain::replay(config, txs)
        .map_err(|e| CliError::Verification(format!("replay failed: {e}")))
}

fn write_dump(chain: &Chain, chain_log: &Path) -> Result<(), CliError> {
    let path = dump_path(chain_log);
    fs::write(&path, chain.dump()).map_err(|source| CliError::Io { path, source })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Keygen { role, out, force } => cmd_keygen(role, &out, force),
        Command::Issue {
            utility_key,
            identity_key,
            count,
            date,
            community,
            quota,
            out,
            force,
        } => cmd_issue(&utility_key, &identity_key, count, date, &community, quota, &out, force),
        Command::Submit {
            config,
            chain_log,
            tokens,
            token_index,
            power,
            soc,
            tcc,
            date,
        } => cmd_submit(&config, &chain_log, &tokens, token_index, power, soc, tcc, date),
        Command::RunSlot { config, chain_log } => cmd_run_slot(&config, &chain_log),
        Command::Verify { config, chain_log } => cmd_verify(&config, &chain_log),
        Command::Simulate { config, seed, out } => cmd_simulate(config.as_deref(), seed, &out),
    }
}

fn cmd_keygen(role: Role, out: &Path, force: bool) -> Result<(), CliError> {
    let pair = UtilityKeyPair::generate(&mut OsRng);
    let role_name = match role {
        Role::Utility => "utility",
        Role::Esu => "esu",
    };
    let file = KeyFile {
        role: role_name.to_string(),
        secret: hex::encode(pair.secret_bytes()),
        public: hex::encode(pair.public_bytes()),
        address: pair.address(),
    };
    let path = key_path(out);
    write_file(&path, &serde_json::to_string_pretty(&file).unwrap(), force)?;
    println!("wrote {role_name} key to {}", path.display());
    println!("address: {}", pair.address());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_issue(
    utility_key: &Path,
    identity_key: &Path,
    count: u32,
    date: NaiveDate,
    community: &str,
    quota: u32,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    if count > quota {
        return Err(CliError::validation(format!(
            "requested {count} tokens but the quota is {quota} per identity per period"
        )));
    }
    let (_, utility) = load_keypair(utility_key)?;
    let (_, identity) = load_keypair(identity_key)?;
    let common = CommonMessage {
        date,
        community: community.to_string(),
    };

    let mut issuer = Issuer::new(utility, quota);
    issuer.register_identity(&identity.public_bytes());

    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let pseudonym = PseudonymKeyPair::generate(&mut OsRng);
        let token = acquire_token(&mut OsRng, &mut issuer, &identity, &pseudonym, &common)
            .map_err(|e| CliError::validation(e.to_string()))?;
        entries.push(TokenEntry {
            pseudonym_secret: hex::encode(pseudonym.secret_bytes()),
            pseudonym_public: hex::encode(pseudonym.public_bytes()),
            address: pseudonym.address(),
            rho: hex::encode(token.signature.rho),
            omega: hex::encode(token.signature.omega),
            sigma: hex::encode(token.signature.sigma),
            delta: hex::encode(token.signature.delta),
        });
    }

    let file = TokenFile {
        community: community.to_string(),
        date,
        utility_pk: hex::encode(issuer.public_bytes()),
        tokens: entries,
    };
    write_file(out, &serde_json::to_string_pretty(&file).unwrap(), force)?;
    println!("issued {count} tokens for {community} on {date} to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_submit(
    config_path: &Path,
    chain_log: &Path,
    tokens_path: &Path,
    token_index: usize,
    power: u64,
    soc: u32,
    tcc: u32,
    date: Option<NaiveDate>,
) -> Result<(), CliError> {
    let config = load_chain_config(config_path)?;
    let raw = read_file(tokens_path)?;
    let token_file: TokenFile = serde_json::from_str(&raw).map_err(|e| {
        CliError::validation(format!("{}: invalid token file: {e}", tokens_path.display()))
    })?;
    let entry = token_file.tokens.get(token_index).ok_or_else(|| {
        CliError::validation(format!(
            "token index {token_index} out of range ({} tokens in file)",
            token_file.tokens.len()
        ))
    })?;

    let pseudonym_secret = parse_hex32(&entry.pseudonym_secret, "pseudonym secret")?;
    let pseudonym = PseudonymKeyPair::from_secret_bytes(&pseudonym_secret)
        .ok_or_else(|| CliError::validation("corrupt pseudonym secret"))?;
    let token = Token {
        signature: TokenSignature {
            rho: parse_hex32(&entry.rho, "rho")?,
            omega: parse_hex32(&entry.omega, "omega")?,
            sigma: parse_hex32(&entry.sigma, "sigma")?,
            delta: parse_hex32(&entry.delta, "delta")?,
        },
        common: CommonMessage {
            date: token_file.date,
            community: token_file.community.clone(),
        },
    };

    let payload = RequestPayload {
        power,
        soc,
        tcc,
        ts: date.unwrap_or(token_file.date),
        community: token_file.community.clone(),
        pseudonym_pk: pseudonym.public_bytes(),
        token,
    };
    let payload_bytes = payload.to_bytes();
    let sig = sign_request(&mut OsRng, &pseudonym, &payload_bytes);
    let tx = Transaction {
        kind: TxKind::ChargingRequest,
        sender: pseudonym.address(),
        payload: payload_bytes,
        signature: Some(sig.to_bytes().to_vec()),
    };

    // Replay the existing log, then execute and persist the new transaction.
    let mut chain = replay_chain(config, chain_log)?;
    let (block, _) = chain.append_block(vec![tx.clone()]);
    let height = block.height;
    let result = block.results[0];
    append_tx(chain_log, &tx)?;
    write_dump(&chain, chain_log)?;

    if result.accepted {
        println!("accepted at block {height} (sender {})", tx.sender);
        Ok(())
    } else {
        println!("rejected at block {height} (sender {})", tx.sender);
        Err(CliError::validation(format!(
            "request rejected (code {})",
            result.reject_code
        )))
    }
}

fn cmd_run_slot(config_path: &Path, chain_log: &Path) -> Result<(), CliError> {
    let config = load_chain_config(config_path)?;
    let mut chain = replay_chain(config, chain_log)?;
    let slot = chain.state().current_slot;
    let tx = slot_trigger(slot);
    let (_, schedules) = chain.append_block(vec![tx.clone()]);
    append_tx(chain_log, &tx)?;
    write_dump(&chain, chain_log)?;

    let schedule = schedules.into_iter().next().unwrap_or_default();
    println!("slot {slot} executed at block {}", chain.height());
    if schedule.granted.is_empty() {
        println!("no grants this slot");
    }
    for (addr, power) in &schedule.granted {
        let tag = if schedule.partially_scheduled == Some(*addr) {
            " (partial)"
        } else {
            ""
        };
        println!("grant {addr} {power} kW{tag}");
    }
    for addr in &schedule.deferred {
        println!("deferred {addr}");
    }
    Ok(())
}

fn cmd_verify(config_path: &Path, chain_log: &Path) -> Result<(), CliError> {
    let config = load_chain_config(config_path)?;
    let dump = dump_path(chain_log);
    if !dump.exists() {
        // No chain yet: vacuously valid.
        println!("ok (empty chain)");
        return Ok(());
    }
    let raw = read_file(&dump)?;
    let blocks = Chain::parse_dump(&raw)
        .map_err(|e| CliError::Verification(format!("corrupt chain dump: {e}")))?;
    match verify_blocks(config, &blocks) {
        Ok(()) => {
            println!("ok ({} blocks)", blocks.len());
            Ok(())
        }
        Err(ChainError::Verify { height, failure }) => Err(CliError::Verification(format!(
            "block {height}: {failure}"
        ))),
        Err(e) => Err(CliError::Verification(e.to_string())),
    }
}

fn cmd_simulate(
    config_path: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut config = match config_path {
        Some(path) => {
            let raw = read_file(path)?;
            serde_json::from_str::<SimConfig>(&raw).map_err(|e| {
                CliError::validation(format!("{}: invalid simulation config: {e}", path.display()))
            })?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = seed {
        config.rng_seed = seed;
    }
    let rows = sweep_lambda(&config).map_err(|e| CliError::validation(e.to_string()))?;
    let csv = to_csv(&rows);
    fs::write(out, &csv).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    println!(
        "wrote {} rows to {} (seed {})",
        rows.len(),
        out.display(),
        config.rng_seed
    );
    for row in &rows {
        let label = match row.scheduler {
            chargecoord::ledger::SchedulerKind::Proposed => "proposed",
            chargecoord::ledger::SchedulerKind::Fcfs => "fcfs",
        };
        println!(
            "lambda {:>4}  {label:<8}  mean index {:.4} +/- {:.4}",
            row.lambda, row.mean_index, row.stderr
        );
    }
    Ok(())
}
