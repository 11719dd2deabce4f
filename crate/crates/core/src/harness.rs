//! Monte Carlo harness: stochastic ESU populations, slot-by-slot execution
//! of the contract, and the charging-index comparison between the proposed
//! scheduler and first-come-first-serve.
//!
//! Every random stream is keyed by (seed, lambda, run, slot), so the two
//! schedulers see byte-identical workloads and a fixed seed reproduces the
//! experiment bit for bit.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::address::Address;
use crate::ledger::{AuthPolicy, ContractConfig, ContractState, SchedulerKind, SYSTEM_ADDRESS};
use crate::scheduler::charging_index;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("regular load exceeds capacity")]
    NegativeHeadroom,
    #[error("beta weights must sum to 1000")]
    BadWeights,
    #[error("lambda grid must be non-empty, non-negative, and without duplicates")]
    BadLambdaGrid,
    #[error("tcc_mean must exceed 1")]
    BadTccMean,
}

/// Experiment parameters; the defaults reproduce the reference setup:
/// 30 slots, 200 kW-slot batteries, 1000 kW headroom, 10 initial ESUs,
/// geometric TCC with mean 4, 80 runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub num_slots: u32,
    pub battery_capacity: u64,
    pub capacity: u64,
    pub regular_load: u64,
    pub initial_esus: u32,
    pub lambdas: Vec<f64>,
    pub tcc_mean: f64,
    pub runs: u32,
    pub rng_seed: u64,
    pub beta1: u32,
    pub beta2: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_slots: 30,
            battery_capacity: 200,
            capacity: 1200,
            regular_load: 200,
            initial_esus: 10,
            lambdas: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            tcc_mean: 4.0,
            runs: 80,
            rng_seed: 42,
            beta1: 500,
            beta2: 500,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_slots == 0 {
            return Err(SimError::NonPositive("num_slots"));
        }
        if self.battery_capacity == 0 {
            return Err(SimError::NonPositive("battery_capacity"));
        }
        if self.runs == 0 {
            return Err(SimError::NonPositive("runs"));
        }
        if self.regular_load > self.capacity {
            return Err(SimError::NegativeHeadroom);
        }
        if self.beta1 as u64 + self.beta2 as u64 != 1000 {
            return Err(SimError::BadWeights);
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(SimError::BadLambdaGrid);
        }
        for (i, a) in self.lambdas.iter().enumerate() {
            if self.lambdas[..i].contains(a) {
                return Err(SimError::BadLambdaGrid);
            }
        }
        if !(self.tcc_mean > 1.0) {
            return Err(SimError::BadTccMean);
        }
        Ok(())
    }

    pub fn headroom(&self) -> u64 {
        self.capacity - self.regular_load
    }

    fn contract_config(&self, scheduler: SchedulerKind) -> ContractConfig {
        ContractConfig {
            owner: SYSTEM_ADDRESS,
            community: "sim".into(),
            capacity: self.capacity,
            regular_load: self.regular_load,
            beta1: self.beta1,
            beta2: self.beta2,
            utility_pk: String::new(),
            battery_capacity: self.battery_capacity,
            period_days: 7,
            scheduler,
            auth: AuthPolicy::AddressOnly,
        }
    }
}

/// Deterministic per-(seed, lambda, run, slot) random stream.
pub fn stream_rng(seed: u64, lambda: f64, run: u32, slot: u32) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(b"chargecoord/sim-stream/v1");
    h.update(seed.to_be_bytes());
    h.update(lambda.to_bits().to_be_bytes());
    h.update(run.to_be_bytes());
    h.update(slot.to_be_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

fn synthetic_address(seed: u64, lambda: f64, run: u32, slot: u32, index: u64) -> Address {
    let mut h = Sha256::new();
    h.update(b"chargecoord/sim-esu/v1");
    h.update(seed.to_be_bytes());
    h.update(lambda.to_bits().to_be_bytes());
    h.update(run.to_be_bytes());
    h.update(slot.to_be_bytes());
    h.update(index.to_be_bytes());
    let digest = h.finalize();
    let mut out = [0u8; 20];
    out.copy_from_slice(&digest[..20]);
    Address(out)
}

/// Uniform per-mille state of charge in [0, 1000).
pub fn sample_soc<R: Rng>(rng: &mut R) -> u32 {
    rng.gen_range(0..1000)
}

/// Geometric TCC on support {1, 2, ...} with the given mean; mean 4 uses
/// success probability 1/4.
pub fn sample_tcc<R: Rng>(rng: &mut R, mean: f64) -> u32 {
    let p = 1.0 / mean;
    let failures = rand_distr::Geometric::new(p)
        .expect("validated tcc_mean")
        .sample(rng);
    (failures + 1).min(1_000_000) as u32
}

/// Poisson arrival count with the given rate.
pub fn sample_arrivals<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda == 0.0 {
        return 0;
    }
    rand_distr::Poisson::new(lambda)
        .expect("validated lambda")
        .sample(rng) as u64
}

/// A freshly arrived ESU demand before submission to the contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivingEsu {
    pub address: Address,
    pub power: u64,
    pub soc: u32,
    pub tcc: u32,
}

/// Arrivals for one slot: the initial fleet at slot 0, Poisson(lambda)
/// newcomers afterwards. Requested power fills the battery from the sampled
/// SoC.
pub fn generate_population(
    config: &SimConfig,
    lambda: f64,
    run: u32,
    slot: u32,
) -> Vec<ArrivingEsu> {
    let mut rng = stream_rng(config.rng_seed, lambda, run, slot);
    let count = if slot == 0 {
        config.initial_esus as u64
    } else {
        sample_arrivals(&mut rng, lambda)
    };
    (0..count)
        .map(|i| {
            let soc = sample_soc(&mut rng);
            let tcc = sample_tcc(&mut rng, config.tcc_mean);
            let power =
                ((config.battery_capacity * (1000 - soc as u64) + 500) / 1000).max(1);
            ArrivingEsu {
                address: synthetic_address(config.rng_seed, lambda, run, slot, i),
                power,
                soc,
                tcc,
            }
        })
        .collect()
}

/// Result of one simulated experiment run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub scheduler: SchedulerKind,
    pub lambda: f64,
    pub run: u32,
    pub indices: Vec<f64>,
    pub mean_index: f64,
}

/// Drives the contract for `num_slots` slots under one scheduler and
/// computes each arrived ESU's charging index at the end.
pub fn run_once(
    config: &SimConfig,
    scheduler: SchedulerKind,
    lambda: f64,
    run: u32,
) -> RunResult {
    let mut state = ContractState::deploy(config.contract_config(scheduler))
        .expect("validated sim config");
    // (requested, granted) per ESU, in arrival order.
    let mut totals: Vec<(Address, u64, u64)> = Vec::new();
    let mut position: std::collections::HashMap<Address, usize> =
        std::collections::HashMap::new();

    for slot in 0..config.num_slots {
        for esu in generate_population(config, lambda, run, slot) {
            if state
                .submit_trusted(esu.address, esu.power, esu.soc, esu.tcc)
                .is_ok()
            {
                position.insert(esu.address, totals.len());
                totals.push((esu.address, esu.power, 0));
            }
        }
        let schedule = state.run_slot();
        for (addr, granted) in &schedule.granted {
            let idx = position[addr];
            totals[idx].2 += granted;
        }
    }

    let indices: Vec<f64> = totals
        .iter()
        .map(|&(_, requested, granted)| {
            charging_index(granted, requested).expect("grants never exceed the request")
        })
        .collect();
    let mean_index = if indices.is_empty() {
        1.0
    } else {
        indices.iter().sum::<f64>() / indices.len() as f64
    };
    RunResult {
        scheduler,
        lambda,
        run,
        indices,
        mean_index,
    }
}

/// One row of the lambda sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub scheduler: SchedulerKind,
    pub mean_index: f64,
    pub stderr: f64,
    pub runs: u32,
    pub seed: u64,
}

fn scheduler_label(kind: SchedulerKind) -> &'static str {
    match kind {
        SchedulerKind::Proposed => "proposed",
        SchedulerKind::Fcfs => "fcfs",
    }
}

/// Per-run mean indices for one (lambda, scheduler) cell.
pub fn run_means(config: &SimConfig, scheduler: SchedulerKind, lambda: f64) -> Vec<f64> {
    (0..config.runs)
        .map(|run| run_once(config, scheduler, lambda, run).mean_index)
        .collect()
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the full experiment grid: every lambda, both schedulers, `runs`
/// repetitions each, sharing workloads across schedulers.
pub fn sweep_lambda(config: &SimConfig) -> Result<Vec<SweepRow>, SimError> {
    config.validate()?;
    let mut rows = Vec::new();
    for &lambda in &config.lambdas {
        for scheduler in [SchedulerKind::Proposed, SchedulerKind::Fcfs] {
            let means = run_means(config, scheduler, lambda);
            let (mean_index, stderr) = mean_and_stderr(&means);
            rows.push(SweepRow {
                lambda,
                scheduler,
                mean_index,
                stderr,
                runs: config.runs,
                seed: config.rng_seed,
            });
        }
    }
    Ok(rows)
}

/// Renders sweep rows as CSV with the stable column contract.
pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,scheduler,mean_index,stderr,runs,seed\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.lambda,
            scheduler_label(row.scheduler),
            row.mean_index,
            row.stderr,
            row.runs,
            row.seed
        ));
    }
    out
}

/// Percentile bootstrap confidence interval for the mean of `samples`.
pub fn bootstrap_mean_ci(
    samples: &[f64],
    iterations: u32,
    confidence: f64,
    seed: u64,
) -> (f64, f64) {
    assert!(!samples.is_empty());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..iterations)
        .map(|_| {
            let total: f64 = (0..samples.len())
                .map(|_| samples[rng.gen_range(0..samples.len())])
                .sum();
            total / samples.len() as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - confidence) / 2.0;
    let lo_idx = ((iterations as f64 * tail) as usize).min(means.len() - 1);
    let hi_idx = ((iterations as f64 * (1.0 - tail)) as usize).min(means.len() - 1);
    (means[lo_idx], means[hi_idx])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimConfig {
        SimConfig {
            runs: 4,
            ..SimConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_duplicate_lambdas() {
        let cfg = SimConfig {
            lambdas: vec![2.0, 2.0],
            ..SimConfig::default()
        };
        assert_eq!(cfg.validate(), Err(SimError::BadLambdaGrid));
    }

    #[test]
    fn population_is_deterministic() {
        let cfg = small_config();
        let a = generate_population(&cfg, 4.0, 3, 7);
        let b = generate_population(&cfg, 4.0, 3, 7);
        assert_eq!(a, b);
        // Slot 0 always yields the initial fleet.
        assert_eq!(generate_population(&cfg, 4.0, 0, 0).len(), 10);
    }

    #[test]
    fn empty_battery_requests_full_capacity() {
        let cfg = small_config();
        for esu in (0..50).flat_map(|run| generate_population(&cfg, 6.0, run, 0)) {
            assert!(esu.power >= 1 && esu.power <= cfg.battery_capacity);
            if esu.soc == 0 {
                assert_eq!(esu.power, 200);
            }
        }
    }

    #[test]
    fn uncontended_run_serves_everyone() {
        let cfg = SimConfig {
            capacity: 10_000,
            regular_load: 0,
            runs: 1,
            ..SimConfig::default()
        };
        let result = run_once(&cfg, SchedulerKind::Proposed, 0.0, 0);
        assert_eq!(result.mean_index, 1.0);
        assert_eq!(result.indices.len(), 10);
    }

    #[test]
    fn zero_headroom_serves_no_one() {
        let cfg = SimConfig {
            capacity: 200,
            regular_load: 200,
            runs: 1,
            ..SimConfig::default()
        };
        for kind in [SchedulerKind::Proposed, SchedulerKind::Fcfs] {
            let result = run_once(&cfg, kind, 4.0, 0);
            assert_eq!(result.mean_index, 0.0);
        }
    }

    #[test]
    fn indices_bounded() {
        let cfg = small_config();
        let result = run_once(&cfg, SchedulerKind::Proposed, 8.0, 1);
        assert!(result
            .indices
            .iter()
            .all(|i| (0.0..=1.0).contains(i)));
    }

    #[test]
    fn run_is_reproducible() {
        let cfg = small_config();
        let a = run_once(&cfg, SchedulerKind::Fcfs, 6.0, 2);
        let b = run_once(&cfg, SchedulerKind::Fcfs, 6.0, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_shape_and_csv() {
        let cfg = SimConfig {
            runs: 2,
            num_slots: 5,
            lambdas: vec![0.0, 4.0],
            ..SimConfig::default()
        };
        let rows = sweep_lambda(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("lambda,scheduler,mean_index,stderr,runs,seed\n"));
        assert_eq!(csv, to_csv(&sweep_lambda(&cfg).unwrap()));
    }

    #[test]
    fn sampler_means_roughly_calibrated() {
        // Coarse check here; the acceptance suite does the 10^6-draw, 1%
        // version.
        let mut rng = stream_rng(1, 0.0, 0, 0);
        let n = 100_000;
        let tcc_mean =
            (0..n).map(|_| sample_tcc(&mut rng, 4.0) as f64).sum::<f64>() / n as f64;
        assert!((tcc_mean - 4.0).abs() < 0.1, "tcc mean {tcc_mean}");
        let arrivals =
            (0..n).map(|_| sample_arrivals(&mut rng, 5.0) as f64).sum::<f64>() / n as f64;
        assert!((arrivals - 5.0).abs() < 0.1, "arrival mean {arrivals}");
    }

    #[test]
    fn bootstrap_ci_brackets_mean() {
        let samples: Vec<f64> = (0..100).map(|i| (i % 10) as f64).collect();
        let (lo, hi) = bootstrap_mean_ci(&samples, 500, 0.95, 7);
        assert!(lo <= 4.5 && 4.5 <= hi);
        assert!(lo > 3.5 && hi < 5.5);
    }
}
