//! C ABI surface over the charging-coordination library.
//!
//! Conventions:
//!
//! - Handles are opaque pointers created by `cc_*_new` and released by the
//!   matching `cc_*_free`; passing null is a checked error, never a crash.
//! - Structured inputs and outputs are JSON strings; returned strings are
//!   owned by the caller and must be released with `cc_string_free`.
//! - Every fallible function returns a `CcStatus`. On error,
//!   `cc_last_error` returns a message for the current thread, valid until
//!   the next ABI call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use chargecoord::harness::{sweep_lambda, to_csv, SimConfig};
use chargecoord::ledger::{slot_trigger, verify_blocks, Chain, ContractConfig, Transaction};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    /// A pointer argument was null or a string was not valid UTF-8.
    InvalidArgument = 1,
    /// A JSON or hex payload failed to parse or validate.
    BadInput = 2,
    /// The transaction was executed but rejected by the contract.
    Rejected = 3,
    /// Chain verification failed.
    VerifyFailed = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let msg = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

fn fail(status: CcStatus, msg: impl std::fmt::Display) -> CcStatus {
    set_error(msg.to_string());
    status
}

/// Reads a required C string argument.
///
/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CcStatus> {
    if ptr.is_null() {
        return Err(fail(
            CcStatus::InvalidArgument,
            format!("{what} must not be null"),
        ));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail(
            CcStatus::InvalidArgument,
            format!("{what} must be valid UTF-8"),
        )
    })
}

fn give_string(s: String, out: *mut *mut c_char) -> Result<(), CcStatus> {
    if out.is_null() {
        return Err(fail(CcStatus::InvalidArgument, "output pointer is null"));
    }
    let c = CString::new(s)
        .map_err(|_| fail(CcStatus::BadInput, "output contained a NUL byte"))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn parse_config(json: &str) -> Result<ContractConfig, CcStatus> {
    let config: ContractConfig = serde_json::from_str(json)
        .map_err(|e| fail(CcStatus::BadInput, format!("chain config: {e}")))?;
    config
        .validate()
        .map_err(|e| fail(CcStatus::BadInput, format!("chain config: {e}")))?;
    Ok(config)
}

/// Opaque chain handle; one deployed contract plus its finalized blocks.
pub struct CcChain(Chain);

/// Message for the most recent error on this thread, or an empty string.
/// The pointer stays valid until the next ABI call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Frees a string returned by this library. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Deploys a contract from a JSON config and writes a chain handle to
/// `out`. The handle must be released with `cc_chain_free`.
#[no_mangle]
pub unsafe extern "C" fn cc_chain_new(
    config_json: *const c_char,
    out: *mut *mut CcChain,
) -> CcStatus {
    let result = (|| {
        let json = read_str(config_json, "config_json")?;
        let config = parse_config(json)?;
        let chain = Chain::new(config)
            .map_err(|e| fail(CcStatus::BadInput, e))?;
        if out.is_null() {
            return Err(fail(CcStatus::InvalidArgument, "out must not be null"));
        }
        *out = Box::into_raw(Box::new(CcChain(chain)));
        Ok(())
    })();
    result.err().unwrap_or(CcStatus::Ok)
}

/// Releases a chain handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn cc_chain_free(chain: *mut CcChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

unsafe fn chain_mut<'a>(chain: *mut CcChain) -> Result<&'a mut Chain, CcStatus> {
    chain
        .as_mut()
        .map(|c| &mut c.0)
        .ok_or_else(|| fail(CcStatus::InvalidArgument, "chain handle is null"))
}

/// Executes one hex-encoded transaction as a new block. Returns
/// `CC_STATUS_REJECTED` (with the contract's reject code in `reject_code`)
/// when the transaction is recorded but refused.
#[no_mangle]
pub unsafe extern "C" fn cc_chain_submit_hex(
    chain: *mut CcChain,
    tx_hex: *const c_char,
    reject_code: *mut u8,
) -> CcStatus {
    let result = (|| {
        let chain = chain_mut(chain)?;
        let hex = read_str(tx_hex, "tx_hex")?;
        let tx = Transaction::from_hex(hex)
            .map_err(|e| fail(CcStatus::BadInput, format!("transaction: {e}")))?;
        let (block, _) = chain.append_block(vec![tx]);
        let res = block.results[0];
        if !reject_code.is_null() {
            *reject_code = res.reject_code;
        }
        if res.accepted {
            Ok(())
        } else {
            Err(fail(
                CcStatus::Rejected,
                format!("transaction rejected (code {})", res.reject_code),
            ))
        }
    })();
    result.err().unwrap_or(CcStatus::Ok)
}

/// Triggers end-of-slot execution and writes the resulting schedule as a
/// JSON string to `schedule_json` (caller frees with `cc_string_free`).
#[no_mangle]
pub unsafe extern "C" fn cc_chain_run_slot(
    chain: *mut CcChain,
    schedule_json: *mut *mut c_char,
) -> CcStatus {
    let result = (|| {
        let chain = chain_mut(chain)?;
        let slot = chain.state().current_slot;
        let (_, schedules) = chain.append_block(vec![slot_trigger(slot)]);
        let schedule = schedules.into_iter().next().unwrap_or_default();
        give_string(serde_json::to_string(&schedule).unwrap(), schedule_json)
    })();
    result.err().unwrap_or(CcStatus::Ok)
}

/// Height of the latest block, or -1 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cc_chain_height(chain: *const CcChain) -> i64 {
    match chain.as_ref() {
        Some(c) => c.0.height() as i64,
        None => -1,
    }
}

/// Writes the chain dump (one hex block per line) to `dump` (caller frees
/// with `cc_string_free`).
#[no_mangle]
pub unsafe extern "C" fn cc_chain_dump(
    chain: *const CcChain,
    dump: *mut *mut c_char,
) -> CcStatus {
    let result = (|| {
        let chain = chain
            .as_ref()
            .map(|c| &c.0)
            .ok_or_else(|| fail(CcStatus::InvalidArgument, "chain handle is null"))?;
        give_string(chain.dump(), dump)
    })();
    result.err().unwrap_or(CcStatus::Ok)
}

/// Re-executes a chain dump against the config and checks every hash link,
/// block hash, result, and state root.
#[no_mangle]
pub unsafe extern "C" fn cc_verify_dump(
    config_json: *const c_char,
    dump: *const c_char,
) -> CcStatus {
    let result = (|| {
        let config = parse_config(read_str(config_json, "config_json")?)?;
        let dump = read_str(dump, "dump")?;
        let blocks = Chain::parse_dump(dump)
            .map_err(|e| fail(CcStatus::BadInput, format!("chain dump: {e}")))?;
        verify_blocks(config, &blocks).map_err(|e| fail(CcStatus::VerifyFailed, e))
    })();
    result.err().unwrap_or(CcStatus::Ok)
}

/// Runs the full lambda sweep described by a `SimConfig` JSON document
/// (pass "{}" for the defaults) and writes the results CSV to `csv`
/// (caller frees with `cc_string_free`).
#[no_mangle]
pub unsafe extern "C" fn cc_simulate_csv(
    config_json: *const c_char,
    csv: *mut *mut c_char,
) -> CcStatus {
    let result = (|| {
        let json = read_str(config_json, "config_json")?;
        let config: SimConfig = serde_json::from_str(json)
            .map_err(|e| fail(CcStatus::BadInput, format!("simulation config: {e}")))?;
        let rows = sweep_lambda(&config)
            .map_err(|e| fail(CcStatus::BadInput, format!("simulation config: {e}")))?;
        give_string(to_csv(&rows), csv)
    })();
    result.err().unwrap_or(CcStatus::Ok)
}
