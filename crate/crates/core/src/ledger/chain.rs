use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::{DecodeError, Reader, Writer};
use crate::scheduler::SlotSchedule;

use super::contract::{ContractConfig, ContractError, ContractState, RejectReason, Transaction};

/// Execution outcome of one transaction, hashed into the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxResult {
    pub accepted: bool,
    pub reject_code: u8,
}

impl TxResult {
    pub fn accepted() -> Self {
        Self {
            accepted: true,
            reject_code: 0,
        }
    }

    pub fn rejected(reason: RejectReason) -> Self {
        Self {
            accepted: false,
            reject_code: reason.code(),
        }
    }
}

/// One ledger block. `block_hash` covers every other field, and
/// `prev_hash` links it to its parent, so any historical edit changes every
/// descendant hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: [u8; 32],
    pub txs: Vec<Transaction>,
    pub results: Vec<TxResult>,
    pub state_root: [u8; 32],
    pub block_hash: [u8; 32],
}

impl Block {
    fn hashable_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.height);
        w.fixed(&self.prev_hash);
        w.u32(self.txs.len() as u32);
        for tx in &self.txs {
            tx.encode(&mut w);
        }
        for res in &self.results {
            w.u8(res.accepted as u8);
            w.u8(res.reject_code);
        }
        w.fixed(&self.state_root);
        w.finish()
    }

    fn compute_hash(&self) -> [u8; 32] {
        Sha256::digest(self.hashable_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = self.hashable_bytes();
        bytes.extend_from_slice(&self.block_hash);
        bytes
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let height = r.u64()?;
        let prev_hash = r.fixed()?;
        let n = r.u32()? as usize;
        let mut txs = Vec::with_capacity(n);
        for _ in 0..n {
            txs.push(Transaction::decode(&mut r)?);
        }
        let mut results = Vec::with_capacity(n);
        for _ in 0..n {
            results.push(TxResult {
                accepted: r.u8()? != 0,
                reject_code: r.u8()?,
            });
        }
        let state_root = r.fixed()?;
        let block_hash = r.fixed()?;
        r.done()?;
        Ok(Self {
            height,
            prev_hash,
            txs,
            results,
            state_root,
            block_hash,
        })
    }

    pub fn from_hex(line: &str) -> Result<Self, DecodeError> {
        let raw = hex::decode(line.trim()).map_err(|_| DecodeError::InvalidField("hex"))?;
        Self::from_bytes(&raw)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("decode failure: {0}")]
    Decode(#[from] DecodeError),
    #[error("chain verification failed at height {height}: {failure}")]
    Verify { height: u64, failure: VerifyFailure },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyFailure {
    MissingGenesis,
    BadHeight,
    BrokenLink,
    BadBlockHash,
    StateRootMismatch,
    ResultMismatch,
}

impl std::fmt::Display for VerifyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::MissingGenesis => "missing or malformed genesis block",
            Self::BadHeight => "non-consecutive block height",
            Self::BrokenLink => "prev_hash does not match parent block hash",
            Self::BadBlockHash => "stored block hash does not match contents",
            Self::StateRootMismatch => "re-execution produced a different state root",
            Self::ResultMismatch => "re-execution produced different transaction results",
        };
        f.write_str(s)
    }
}

/// A sequencer replica: contract state plus the blocks it has finalized.
pub struct Chain {
    state: ContractState,
    blocks: Vec<Block>,
}

impl Chain {
    /// Deploys the contract and finalizes an empty genesis block at height
    /// zero with an all-zero parent hash.
    pub fn new(config: ContractConfig) -> Result<Self, ChainError> {
        let state = ContractState::deploy(config)?;
        let mut genesis = Block {
            height: 0,
            prev_hash: [0u8; 32],
            txs: Vec::new(),
            results: Vec::new(),
            state_root: state.state_root(),
            block_hash: [0u8; 32],
        };
        genesis.block_hash = genesis.compute_hash();
        Ok(Self {
            state,
            blocks: vec![genesis],
        })
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn height(&self) -> u64 {
        self.blocks.last().unwrap().height
    }

    /// Executes the transactions in order and finalizes them as one block.
    /// Invalid transactions are recorded as rejected, not dropped, so the
    /// block hash is a pure function of the input log.
    pub fn append_block(
        &mut self,
        txs: Vec<Transaction>,
    ) -> (&Block, Vec<SlotSchedule>) {
        let mut results = Vec::with_capacity(txs.len());
        let mut schedules = Vec::new();
        for tx in &txs {
            let (res, schedule) = self.state.apply(tx);
            results.push(match res {
                Ok(()) => TxResult::accepted(),
                Err(reason) => TxResult::rejected(reason),
            });
            if let Some(s) = schedule {
                schedules.push(s);
            }
        }
        let prev = self.blocks.last().unwrap();
        let mut block = Block {
            height: prev.height + 1,
            prev_hash: prev.block_hash,
            txs,
            results,
            state_root: self.state.state_root(),
            block_hash: [0u8; 32],
        };
        block.block_hash = block.compute_hash();
        self.blocks.push(block);
        (self.blocks.last().unwrap(), schedules)
    }

    /// Rebuilds a chain from a flat transaction log, one block per
    /// transaction; this is the convention the CLI log file uses.
    pub fn replay<I: IntoIterator<Item = Transaction>>(
        config: ContractConfig,
        txs: I,
    ) -> Result<Self, ChainError> {
        let mut chain = Self::new(config)?;
        for tx in txs {
            chain.append_block(vec![tx]);
        }
        Ok(chain)
    }

    /// Chain dump: one hex-encoded canonical block per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(&block.to_hex());
            out.push('\n');
        }
        out
    }

    pub fn parse_dump(dump: &str) -> Result<Vec<Block>, ChainError> {
        dump.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Block::from_hex(l).map_err(ChainError::from))
            .collect()
    }
}

/// Re-executes a block sequence from genesis and checks every hash link,
/// block hash, recorded result, and state root.
pub fn verify_blocks(config: ContractConfig, blocks: &[Block]) -> Result<(), ChainError> {
    let fail = |height, failure| Err(ChainError::Verify { height, failure });

    let mut state = ContractState::deploy(config)?;
    let Some(genesis) = blocks.first() else {
        // An empty chain is vacuously valid.
        return Ok(());
    };
    if genesis.height != 0
        || genesis.prev_hash != [0u8; 32]
        || !genesis.txs.is_empty()
        || genesis.state_root != state.state_root()
    {
        return fail(genesis.height, VerifyFailure::MissingGenesis);
    }
    if genesis.block_hash != genesis.compute_hash() {
        return fail(0, VerifyFailure::BadBlockHash);
    }

    let mut prev = genesis;
    for block in &blocks[1..] {
        if block.height != prev.height + 1 {
            return fail(block.height, VerifyFailure::BadHeight);
        }
        if block.prev_hash != prev.block_hash {
            return fail(block.height, VerifyFailure::BrokenLink);
        }
        if block.block_hash != block.compute_hash() {
            return fail(block.height, VerifyFailure::BadBlockHash);
        }
        for (tx, recorded) in block.txs.iter().zip(&block.results) {
            let (res, _) = state.apply(tx);
            let replayed = match res {
                Ok(()) => TxResult::accepted(),
                Err(reason) => TxResult::rejected(reason),
            };
            if replayed != *recorded {
                return fail(block.height, VerifyFailure::ResultMismatch);
            }
        }
        if block.results.len() != block.txs.len() {
            return fail(block.height, VerifyFailure::ResultMismatch);
        }
        if block.state_root != state.state_root() {
            return fail(block.height, VerifyFailure::StateRootMismatch);
        }
        prev = block;
    }
    Ok(())
}
