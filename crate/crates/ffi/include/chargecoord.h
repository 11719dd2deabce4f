#ifndef CHARGECOORD_H
#define CHARGECOORD_H

/* Generated by cbindgen from chargecoord-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum CcStatus {
  CC_STATUS_OK = 0,
  /**
   * A pointer argument was null or a string was not valid UTF-8.
   */
  CC_STATUS_INVALID_ARGUMENT = 1,
  /**
   * A JSON or hex payload failed to parse or validate.
   */
  CC_STATUS_BAD_INPUT = 2,
  /**
   * The transaction was executed but rejected by the contract.
   */
  CC_STATUS_REJECTED = 3,
  /**
   * Chain verification failed.
   */
  CC_STATUS_VERIFY_FAILED = 4,
} CcStatus;

/**
 * Opaque chain handle; one deployed contract plus its finalized blocks.
 */
typedef struct CcChain CcChain;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread, or an empty string.
 * The pointer stays valid until the next ABI call on the same thread.
 */
const char *cc_last_error(void);

/**
 * Library version as a static string; do not free.
 */
const char *cc_version(void);

/**
 * Frees a string returned by this library. Null is a no-op.
 */
void cc_string_free(char *s);

/**
 * Deploys a contract from a JSON config and writes a chain handle to
 * `out`. The handle must be released with `cc_chain_free`.
 */
enum CcStatus cc_chain_new(const char *config_json, struct CcChain **out);

/**
 * Releases a chain handle. Null is a no-op.
 */
void cc_chain_free(struct CcChain *chain);

/**
 * Executes one hex-encoded transaction as a new block. Returns
 * `CC_STATUS_REJECTED` (with the contract's reject code in `reject_code`)
 * when the transaction is recorded but refused.
 */
enum CcStatus cc_chain_submit_hex(struct CcChain *chain, const char *tx_hex, uint8_t *reject_code);

/**
 * Triggers end-of-slot execution and writes the resulting schedule as a
 * JSON string to `schedule_json` (caller frees with `cc_string_free`).
 */
enum CcStatus cc_chain_run_slot(struct CcChain *chain, char **schedule_json);

/**
 * Height of the latest block, or -1 for a null handle.
 */
int64_t cc_chain_height(const struct CcChain *chain);

/**
 * Writes the chain dump (one hex block per line) to `dump` (caller frees
 * with `cc_string_free`).
 */
enum CcStatus cc_chain_dump(const struct CcChain *chain, char **dump);

/**
 * Re-executes a chain dump against the config and checks every hash link,
 * block hash, result, and state root.
 */
enum CcStatus cc_verify_dump(const char *config_json, const char *dump);

/**
 * Runs the full lambda sweep described by a `SimConfig` JSON document
 * (pass "{}" for the defaults) and writes the results CSV to `csv`
 * (caller frees with `cc_string_free`).
 */
enum CcStatus cc_simulate_csv(const char *config_json, char **csv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHARGECOORD_H */
