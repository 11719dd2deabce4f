//! Decentralized charging coordination for energy storage units.
//!
//! The crate is organized around four pieces:
//!
//! - [`scheduler`]: priority computation and the per-slot greedy knapsack
//!   (plus the FCFS baseline), all in exact integer arithmetic.
//! - [`credentials`]: partially blind token issuance so ESUs can submit
//!   requests under unlinkable single-use pseudonyms.
//! - [`ledger`]: a deterministic simulated blockchain hosting the
//!   charging-coordination contract, with replica re-execution in place of
//!   consensus.
//! - [`harness`]: the Monte Carlo experiment comparing charging indices
//!   between the proposed scheduler and first-come-first-serve.

pub mod address;
pub mod credentials;
pub mod encoding;
pub mod harness;
pub mod ledger;
pub mod scheduler;

pub use address::Address;
