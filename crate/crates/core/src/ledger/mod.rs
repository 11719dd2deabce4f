//! Deterministic simulated ledger: the charging-coordination contract state
//! machine and the hash-linked block chain that executes transactions
//! against it.
//!
//! There is no mining or consensus here. A single sequencer orders
//! transactions; integrity comes from hash linking, per-block state roots,
//! and replica re-execution (`verify_blocks`).

mod chain;
mod contract;

pub use chain::{verify_blocks, Block, Chain, ChainError, TxResult, VerifyFailure};
pub use contract::{
    load_post_payload, slot_trigger, AuthPolicy, ContractConfig, ContractError, ContractState,
    EsuRecord, RejectReason, RequestPayload, SchedulerKind, Transaction, TxKind, SYSTEM_ADDRESS,
};
