//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture`
//! to see them).

use std::collections::BTreeMap;

use chargecoord::credentials::{
    acquire_token, verify_token, CommonMessage, Issuer, PseudonymKeyPair, Token, TokenSignature,
    UtilityKeyPair,
};
use chargecoord::harness::{
    bootstrap_mean_ci, run_means, sample_arrivals, sample_tcc, stream_rng, sweep_lambda, to_csv,
    SimConfig,
};
use chargecoord::ledger::{
    slot_trigger, verify_blocks, AuthPolicy, Block, Chain, ContractConfig, RequestPayload,
    SchedulerKind, Transaction, TxKind,
};
use chargecoord::scheduler::{
    priority, schedule_slot, EsuDemand, SchedulerParams, SlotSchedule,
};
use chargecoord::Address;
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn report(criterion: &str, pass: bool) {
    println!("{} criterion {criterion}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed");
}

fn default_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 8, 17).unwrap()
}

/// Lambdas where the expected per-slot arrival demand (lambda times the mean
/// request of half a battery) reaches the headroom.
fn contended_lambdas(config: &SimConfig) -> Vec<f64> {
    let mean_request = config.battery_capacity as f64 / 2.0;
    config
        .lambdas
        .iter()
        .copied()
        .filter(|l| l * mean_request >= config.headroom() as f64)
        .collect()
}

#[test]
fn criterion_1_proposed_dominates_fcfs() {
    let config = SimConfig::default();
    let contended = contended_lambdas(&config);
    assert!(!contended.is_empty(), "grid must include a contended lambda");

    let mut pass = true;
    for &lambda in &config.lambdas {
        let proposed = run_means(&config, SchedulerKind::Proposed, lambda);
        let fcfs = run_means(&config, SchedulerKind::Fcfs, lambda);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        if mean(&proposed) < mean(&fcfs) {
            pass = false;
        }
        if contended.contains(&lambda) {
            // Runs are paired: both schedulers replay the identical workload.
            let diffs: Vec<f64> = proposed
                .iter()
                .zip(&fcfs)
                .map(|(p, f)| p - f)
                .collect();
            let (lo, _hi) = bootstrap_mean_ci(&diffs, 2000, 0.95, 0xb007);
            if lo < 0.0 {
                pass = false;
            }
        }
    }
    report("1 (proposed >= FCFS, CI non-negative under contention)", pass);
}

#[test]
fn criterion_2_monotone_contention_trend() {
    let config = SimConfig::default();
    let rows = sweep_lambda(&config).unwrap();
    let mut pass = true;
    for kind in [SchedulerKind::Proposed, SchedulerKind::Fcfs] {
        let series: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.scheduler == kind)
            .map(|r| (r.mean_index, r.stderr))
            .collect();
        for window in series.windows(2) {
            let (m0, s0) = window[0];
            let (m1, s1) = window[1];
            let slack = 2.0 * (s0 * s0 + s1 * s1).sqrt();
            if m1 > m0 + slack {
                pass = false;
            }
        }
    }
    report("2 (mean index non-increasing in lambda)", pass);
}

/// Independent sort-and-scan oracle for the greedy schedule: recomputes
/// priorities from scratch, orders by insertion sort on the exact rational
/// ratio, scans granting full requests, then applies the remainder rule.
fn oracle_schedule(demands: &[EsuDemand], params: &SchedulerParams) -> SlotSchedule {
    fn urgency(tcc: u32) -> u64 {
        if tcc == 1 {
            1000
        } else if tcc == 2 {
            500
        } else {
            0
        }
    }
    let prio = |d: &EsuDemand| -> u64 {
        (params.beta1 as u64 * (1000 - d.soc as u64) + params.beta2 as u64 * urgency(d.tcc)) / 1000
    };
    // Insertion sort, descending by U/P, FIFO on ties.
    let mut order: Vec<&EsuDemand> = Vec::new();
    for d in demands {
        let mut at = order.len();
        for (i, o) in order.iter().enumerate() {
            let d_ratio = prio(d) as u128 * o.power as u128;
            let o_ratio = prio(o) as u128 * d.power as u128;
            if d_ratio > o_ratio || (d_ratio == o_ratio && d.arrival_seq < o.arrival_seq) {
                at = i;
                break;
            }
        }
        order.insert(at, d);
    }

    let mut schedule = SlotSchedule::default();
    let mut left = params.headroom();
    let mut unscheduled: Vec<&EsuDemand> = Vec::new();
    for d in order {
        if d.power <= left {
            left -= d.power;
            schedule.granted.insert(d.id, d.power);
            schedule.fully_scheduled.insert(d.id);
        } else {
            unscheduled.push(d);
        }
    }
    if let Some(first) = unscheduled.first() {
        if left > 0 {
            schedule.granted.insert(first.id, left);
            schedule.partially_scheduled = Some(first.id);
        }
        schedule.deferred = unscheduled.iter().map(|d| d.id).collect();
    }
    schedule
}

fn random_instance(rng: &mut ChaCha12Rng, max_esus: usize) -> (Vec<EsuDemand>, SchedulerParams) {
    let n = rng.gen_range(0..=max_esus);
    let beta1 = rng.gen_range(0..=1000);
    let params =
        SchedulerParams::new(beta1, 1000 - beta1, rng.gen_range(0..1500), 0).unwrap();
    let demands = (0..n)
        .map(|i| {
            EsuDemand::new(
                Address([i as u8 + 1; 20]),
                rng.gen_range(1..400),
                rng.gen_range(0..1000),
                rng.gen_range(1..8),
                i as u64,
            )
            .unwrap()
        })
        .collect();
    (demands, params)
}

#[test]
fn criterion_3_greedy_matches_oracle_and_bruteforce() {
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    let mut pass = true;

    for _ in 0..1000 {
        let (demands, params) = random_instance(&mut rng, 12);
        if schedule_slot(&demands, &params) != oracle_schedule(&demands, &params) {
            pass = false;
            break;
        }
    }

    // Equal-weights subfamily: every P_v identical, so ratio-greedy must hit
    // the exhaustive optimum of the 0/1 selection problem.
    for trial in 0..200 {
        let n = (trial % 12) + 1;
        let power = rng.gen_range(1..100u64);
        let params = SchedulerParams::new(1000, 0, rng.gen_range(0..(12 * power)), 0).unwrap();
        let demands: Vec<EsuDemand> = (0..n)
            .map(|i| {
                EsuDemand::new(
                    Address([i as u8 + 1; 20]),
                    power,
                    rng.gen_range(0..1000),
                    rng.gen_range(1..8),
                    i as u64,
                )
                .unwrap()
            })
            .collect();
        let schedule = schedule_slot(&demands, &params);
        let util: BTreeMap<Address, u64> = demands
            .iter()
            .map(|d| (d.id, priority(d, &params).0 as u64))
            .collect();
        let achieved: u64 = schedule.fully_scheduled.iter().map(|a| util[a]).sum();

        let mut best = 0u64;
        for mask in 0u32..(1 << n) {
            let (mut value, mut weight) = (0u64, 0u64);
            for (i, d) in demands.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    value += util[&d.id];
                    weight += d.power;
                }
            }
            if weight <= params.headroom() {
                best = best.max(value);
            }
        }
        if achieved != best {
            pass = false;
            break;
        }
        // Dominance: no unscheduled ESU outranks a scheduled one.
        let min_in = schedule
            .fully_scheduled
            .iter()
            .map(|a| util[a])
            .min()
            .unwrap_or(u64::MAX);
        let max_out = demands
            .iter()
            .filter(|d| !schedule.fully_scheduled.contains(&d.id))
            .map(|d| util[&d.id])
            .max()
            .unwrap_or(0);
        if !schedule.fully_scheduled.is_empty()
            && !schedule.deferred.is_empty()
            && min_in < max_out
        {
            pass = false;
            break;
        }
    }
    report("3 (oracle equivalence and equal-weights optimality)", pass);
}

#[test]
fn criterion_4_capacity_safety_fuzz() {
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    let mut pass = true;
    for _ in 0..10_000 {
        let (demands, params) = random_instance(&mut rng, 20);
        let schedule = schedule_slot(&demands, &params);
        let granted: u64 = schedule.granted.values().sum();
        let demand: u64 = demands.iter().map(|d| d.power).sum();
        if granted > params.headroom() || granted != demand.min(params.headroom()) {
            pass = false;
            break;
        }
    }
    report("4 (capacity safety and exact remainder over 10,000 instances)", pass);
}

#[test]
fn criterion_5_credential_protocol() {
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let mut issuer = Issuer::new(UtilityKeyPair::generate(&mut rng), 10_000);
    let identity = UtilityKeyPair::generate(&mut rng);
    issuer.register_identity(&identity.public_bytes());
    let utility_pk = issuer.public_bytes();
    let mut pass = true;

    // 100 full cycles, each token also surviving a re-verification.
    let mut tokens: Vec<(PseudonymKeyPair, Token, CommonMessage)> = Vec::new();
    for i in 0..100u32 {
        let common = CommonMessage {
            date: default_date(),
            community: format!("G{}", i % 3),
        };
        let pseudonym = PseudonymKeyPair::generate(&mut rng);
        let token = acquire_token(&mut rng, &mut issuer, &identity, &pseudonym, &common).unwrap();
        if !verify_token(&token, &pseudonym.public_bytes(), &utility_pk, &common) {
            pass = false;
        }
        tokens.push((pseudonym, token, common));
    }

    // 100 single-bit tampers across signature, pseudonym key, and common
    // message; every one must break verification.
    for i in 0..100usize {
        let (pseudonym, token, common) = &tokens[i % tokens.len()];
        let mut pk = pseudonym.public_bytes();
        let mut tampered = token.clone();
        let ok = match i % 3 {
            0 => {
                let scalars = [
                    &mut tampered.signature.rho,
                    &mut tampered.signature.omega,
                    &mut tampered.signature.sigma,
                    &mut tampered.signature.delta,
                ];
                let which = rng.gen_range(0..4);
                let bit = rng.gen_range(0..256);
                scalars[which][bit / 8] ^= 1 << (bit % 8);
                verify_token(&tampered, &pk, &utility_pk, common)
            }
            1 => {
                let bit = rng.gen_range(0..256);
                pk[bit / 8] ^= 1 << (bit % 8);
                verify_token(token, &pk, &utility_pk, common)
            }
            _ => {
                let mut other = common.clone();
                if i % 2 == 0 {
                    other.date += chrono::Duration::days(1);
                } else {
                    other.community.push('x');
                }
                tampered.common = other.clone();
                verify_token(&tampered, &pk, &utility_pk, &other)
            }
        };
        if ok {
            pass = false;
        }
    }

    // 1,000 fabricated tokens from random scalars never verify.
    let common = CommonMessage {
        date: default_date(),
        community: "G1".into(),
    };
    for _ in 0..1000 {
        let pseudonym = PseudonymKeyPair::generate(&mut rng);
        let mut scalar = || {
            let mut wide = [0u8; 64];
            rng.fill(&mut wide[..]);
            curve25519_dalek::scalar::Scalar::from_bytes_mod_order_wide(&wide).to_bytes()
        };
        let forged = Token {
            signature: TokenSignature {
                rho: scalar(),
                omega: scalar(),
                sigma: scalar(),
                delta: scalar(),
            },
            common: common.clone(),
        };
        if verify_token(&forged, &pseudonym.public_bytes(), &utility_pk, &common) {
            pass = false;
        }
    }
    report("5 (credential completeness, tamper resistance, unforgeability)", pass);
}

fn full_auth_config(utility_pk: &[u8; 32]) -> ContractConfig {
    ContractConfig {
        owner: Address([9; 20]),
        community: "G1".into(),
        capacity: 1200,
        regular_load: 200,
        beta1: 500,
        beta2: 500,
        utility_pk: hex::encode(utility_pk),
        battery_capacity: 200,
        period_days: 7,
        scheduler: SchedulerKind::Proposed,
        auth: AuthPolicy::Full,
    }
}

fn signed_request_tx(
    rng: &mut ChaCha12Rng,
    issuer: &mut Issuer,
    identity: &UtilityKeyPair,
    power: u64,
    soc: u32,
    tcc: u32,
) -> Transaction {
    let common = CommonMessage {
        date: default_date(),
        community: "G1".into(),
    };
    let pseudonym = PseudonymKeyPair::generate(rng);
    let token = acquire_token(rng, issuer, identity, &pseudonym, &common).unwrap();
    let payload = RequestPayload {
        power,
        soc,
        tcc,
        ts: default_date(),
        community: "G1".into(),
        pseudonym_pk: pseudonym.public_bytes(),
        token,
    };
    let bytes = payload.to_bytes();
    let sig = chargecoord::credentials::sign_request(rng, &pseudonym, &bytes);
    Transaction {
        kind: TxKind::ChargingRequest,
        sender: pseudonym.address(),
        payload: bytes,
        signature: Some(sig.to_bytes().to_vec()),
    }
}

#[test]
fn criterion_6_one_shot_pseudonyms() {
    let mut rng = ChaCha12Rng::seed_from_u64(606);
    let mut issuer = Issuer::new(UtilityKeyPair::generate(&mut rng), 100);
    let identity = UtilityKeyPair::generate(&mut rng);
    issuer.register_identity(&identity.public_bytes());
    let config = full_auth_config(&issuer.public_bytes());

    let first = signed_request_tx(&mut rng, &mut issuer, &identity, 150, 300, 2);

    let mut with_dup = Chain::new(config.clone()).unwrap();
    with_dup.append_block(vec![first.clone()]);
    let (dup_block, _) = with_dup.append_block(vec![first.clone()]);
    let rejected = !dup_block.results[0].accepted;
    let root_with_dup = dup_block.state_root;

    let mut without_dup = Chain::new(config).unwrap();
    without_dup.append_block(vec![first]);
    let root_without = without_dup.blocks().last().unwrap().state_root;

    report(
        "6 (double submission rejected, state root unchanged)",
        rejected && root_with_dup == root_without,
    );
}

/// Builds a 100-transaction log with accepted requests, duplicates, load
/// posts, bad posts, and slot triggers.
fn hundred_tx_log(rng: &mut ChaCha12Rng) -> (ContractConfig, Vec<Transaction>) {
    let mut issuer = Issuer::new(UtilityKeyPair::generate(rng), 10_000);
    let identity = UtilityKeyPair::generate(rng);
    issuer.register_identity(&identity.public_bytes());
    let config = full_auth_config(&issuer.public_bytes());

    let mut txs: Vec<Transaction> = Vec::new();
    let mut slot = 0u64;
    while txs.len() < 100 {
        let roll = txs.len() % 10;
        match roll {
            9 => {
                txs.push(slot_trigger(slot));
                slot += 1;
            }
            8 => {
                // Duplicate of an earlier sender: rejected but recorded.
                let dup = txs
                    .iter()
                    .find(|t| t.kind == TxKind::ChargingRequest)
                    .unwrap()
                    .clone();
                txs.push(dup);
            }
            7 => {
                // Load post from a stranger: rejected but recorded.
                txs.push(Transaction {
                    kind: TxKind::UtilityLoadPost,
                    sender: Address([3; 20]),
                    payload: chargecoord::ledger::load_post_payload(100),
                    signature: None,
                });
            }
            _ => {
                let power = rng.gen_range(20..200);
                let soc = rng.gen_range(0..1000);
                let tcc = rng.gen_range(1..8);
                txs.push(signed_request_tx(rng, &mut issuer, &identity, power, soc, tcc));
            }
        }
    }
    (config, txs)
}

#[test]
fn criterion_7_replica_determinism_and_tamper_detection() {
    let mut rng = ChaCha12Rng::seed_from_u64(707);
    let (config, txs) = hundred_tx_log(&mut rng);
    let mut pass = true;

    let replicas: Vec<Chain> = (0..3)
        .map(|_| Chain::replay(config.clone(), txs.clone()).unwrap())
        .collect();
    for height in 0..replicas[0].blocks().len() {
        let root = replicas[0].blocks()[height].state_root;
        for replica in &replicas[1..] {
            if replica.blocks()[height].state_root != root {
                pass = false;
            }
        }
    }

    let blocks = replicas[0].blocks().to_vec();
    if verify_blocks(config.clone(), &blocks).is_err() {
        pass = false;
    }

    // Single-byte tampers anywhere in a block's canonical encoding must be
    // caught.
    for trial in 0..50usize {
        let mut tampered = blocks.clone();
        let at = 1 + (trial % (tampered.len() - 1));
        let mut raw = tampered[at].to_bytes();
        let pos = rng.gen_range(0..raw.len());
        raw[pos] ^= 1 << rng.gen_range(0..8u8);
        match Block::from_bytes(&raw) {
            Ok(block) => {
                tampered[at] = block;
                if verify_blocks(config.clone(), &tampered).is_ok() {
                    pass = false;
                }
            }
            // A flip that breaks the encoding is detected at parse time.
            Err(_) => {}
        }
    }
    report("7 (3-replica state roots identical, tampers detected)", pass);
}

#[test]
fn criterion_8_sampler_calibration() {
    let mut rng = stream_rng(808, 0.0, 0, 0);
    let n = 1_000_000;
    let tcc_mean = (0..n).map(|_| sample_tcc(&mut rng, 4.0) as f64).sum::<f64>() / n as f64;
    let lambda = 6.0;
    let arrival_mean =
        (0..n).map(|_| sample_arrivals(&mut rng, lambda) as f64).sum::<f64>() / n as f64;
    let tcc_ok = (tcc_mean - 4.0).abs() / 4.0 < 0.01;
    let poisson_ok = (arrival_mean - lambda).abs() / lambda < 0.01;
    println!("tcc mean {tcc_mean:.4}, poisson mean {arrival_mean:.4}");
    report("8 (geometric and Poisson means within 1%)", tcc_ok && poisson_ok);
}

#[test]
fn criterion_9_simulation_is_deterministic() {
    let config = SimConfig::default();
    let csv_a = to_csv(&sweep_lambda(&config).unwrap());
    let csv_b = to_csv(&sweep_lambda(&config).unwrap());
    report("9 (fixed seed yields byte-identical CSV)", csv_a == csv_b);
}
