//! Per-slot charging priorities and the capacity-constrained greedy
//! scheduler, plus the first-come-first-serve baseline.
//!
//! All arithmetic is integer-only. Weights, state of charge, and priorities
//! are per-mille values in `[0, 1000]`, so identical inputs produce
//! bit-identical schedules on any platform. Ratio ordering is decided by
//! exact cross-multiplication, never by division.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::Address;

pub const PER_MILLE: u64 = 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("beta weights must sum to 1000, got {0} + {1}")]
    BadWeights(u32, u32),
    #[error("regular load {regular_load} exceeds capacity {capacity}")]
    NegativeHeadroom { capacity: u64, regular_load: u64 },
    #[error("requested power must be positive")]
    ZeroPower,
    #[error("state of charge {0}\u{2030} out of range [0, 1000)")]
    SocOutOfRange(u32),
    #[error("time-to-complete-charge must be at least one slot")]
    ZeroTcc,
    #[error("charging index undefined for zero requested power")]
    ZeroRequested,
    #[error("granted power {granted} exceeds requested {requested}")]
    GrantExceedsRequest { granted: u64, requested: u64 },
}

/// Weights and capacity figures for one community's slot scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerParams {
    /// Weight on battery emptiness, per-mille.
    pub beta1: u32,
    /// Weight on charging urgency, per-mille.
    pub beta2: u32,
    /// Bus loading limit C in kW.
    pub capacity: u64,
    /// Regular (non-ESU) load P_R in kW.
    pub regular_load: u64,
}

impl SchedulerParams {
    pub fn new(
        beta1: u32,
        beta2: u32,
        capacity: u64,
        regular_load: u64,
    ) -> Result<Self, SchedulerError> {
        if beta1 as u64 + beta2 as u64 != PER_MILLE {
            return Err(SchedulerError::BadWeights(beta1, beta2));
        }
        if regular_load > capacity {
            return Err(SchedulerError::NegativeHeadroom {
                capacity,
                regular_load,
            });
        }
        Ok(Self {
            beta1,
            beta2,
            capacity,
            regular_load,
        })
    }

    /// Per-slot charging budget C − P_R.
    pub fn headroom(&self) -> u64 {
        self.capacity - self.regular_load
    }
}

/// One ESU's demand for the current slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EsuDemand {
    /// Pseudonym address of the requester.
    pub id: Address,
    /// Requested charging power P_v in kW.
    pub power: u64,
    /// Battery state of charge S_v, per-mille in [0, 1000).
    pub soc: u32,
    /// Time to complete charge K_v in whole slots, at least 1.
    pub tcc: u32,
    /// Submission order within the slot; unique, used for tie-breaking.
    pub arrival_seq: u64,
}

impl EsuDemand {
    pub fn new(
        id: Address,
        power: u64,
        soc: u32,
        tcc: u32,
        arrival_seq: u64,
    ) -> Result<Self, SchedulerError> {
        if power == 0 {
            return Err(SchedulerError::ZeroPower);
        }
        if soc >= PER_MILLE as u32 {
            return Err(SchedulerError::SocOutOfRange(soc));
        }
        if tcc == 0 {
            return Err(SchedulerError::ZeroTcc);
        }
        Ok(Self {
            id,
            power,
            soc,
            tcc,
            arrival_seq,
        })
    }
}

/// Per-mille priority value U_v.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Priority(pub u32);

/// Outcome of scheduling one slot.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotSchedule {
    /// Granted power per address, including any partial grant.
    pub granted: BTreeMap<Address, u64>,
    /// Addresses scheduled for their full request (x_v = 1).
    pub fully_scheduled: BTreeSet<Address>,
    /// The single address, if any, receiving the capacity remainder.
    pub partially_scheduled: Option<Address>,
    /// Addresses carried to the next slot, in rank order.
    pub deferred: Vec<Address>,
}

impl SlotSchedule {
    pub fn total_granted(&self) -> u64 {
        self.granted.values().sum()
    }
}

/// Urgency term F(K_v): 1 for one slot left, 1/2 for two, 0 beyond.
pub fn f_of_tcc(tcc: u32) -> Result<u32, SchedulerError> {
    match tcc {
        0 => Err(SchedulerError::ZeroTcc),
        1 => Ok(1000),
        2 => Ok(500),
        _ => Ok(0),
    }
}

/// Priority U_v = β1 (1 − S_v) + β2 F(K_v), truncated once at the end.
pub fn priority(demand: &EsuDemand, params: &SchedulerParams) -> Priority {
    let urgency = f_of_tcc(demand.tcc).expect("validated demand") as u64;
    let emptiness = PER_MILLE - demand.soc as u64;
    let value = (params.beta1 as u64 * emptiness + params.beta2 as u64 * urgency) / PER_MILLE;
    Priority(value as u32)
}

#[derive(Clone, Copy)]
struct RankEntry {
    idx: usize,
    priority: u64,
    power: u64,
    arrival_seq: u64,
}

/// Descending U/P order via exact cross-multiplication, FIFO tie-break.
fn ratio_order(a: &RankEntry, b: &RankEntry) -> std::cmp::Ordering {
    let lhs = a.priority as u128 * b.power as u128;
    let rhs = b.priority as u128 * a.power as u128;
    rhs.cmp(&lhs).then(a.arrival_seq.cmp(&b.arrival_seq))
}

fn rank_entries(demands: &[EsuDemand], params: &SchedulerParams) -> Vec<RankEntry> {
    let mut entries: Vec<RankEntry> = demands
        .iter()
        .enumerate()
        .map(|(idx, d)| RankEntry {
            idx,
            priority: priority(d, params).0 as u64,
            power: d.power,
            arrival_seq: d.arrival_seq,
        })
        .collect();
    entries.sort_by(ratio_order);
    entries
}

/// Addresses sorted descending by the ratio U_v / P_v.
pub fn rank(demands: &[EsuDemand], params: &SchedulerParams) -> Vec<Address> {
    rank_entries(demands, params)
        .into_iter()
        .map(|e| demands[e.idx].id)
        .collect()
}

/// Greedy knapsack walk over the rank order, then the remainder rule: any
/// leftover capacity goes to the highest-ranked unscheduled ESU, which is
/// still deferred for the rest of its request.
pub fn schedule_slot(demands: &[EsuDemand], params: &SchedulerParams) -> SlotSchedule {
    let order = rank_entries(demands, params);
    let mut remaining = params.headroom();
    let mut schedule = SlotSchedule::default();
    let mut skipped: Vec<usize> = Vec::new();

    for entry in &order {
        let demand = &demands[entry.idx];
        if demand.power <= remaining {
            remaining -= demand.power;
            schedule.granted.insert(demand.id, demand.power);
            schedule.fully_scheduled.insert(demand.id);
        } else {
            skipped.push(entry.idx);
        }
    }

    if let Some(&first) = skipped.first() {
        if remaining > 0 {
            schedule.granted.insert(demands[first].id, remaining);
            schedule.partially_scheduled = Some(demands[first].id);
        }
        schedule.deferred = skipped.iter().map(|&i| demands[i].id).collect();
    }

    schedule
}

/// First-come-first-serve baseline: grants in arrival order until the first
/// request that no longer fits; that request takes the remainder, everything
/// behind it waits.
pub fn schedule_slot_fcfs(demands: &[EsuDemand], params: &SchedulerParams) -> SlotSchedule {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by_key(|&i| demands[i].arrival_seq);

    let mut remaining = params.headroom();
    let mut schedule = SlotSchedule::default();
    let mut blocked = false;
    let mut waiting: Vec<usize> = Vec::new();

    for &idx in &order {
        let demand = &demands[idx];
        if !blocked && demand.power <= remaining {
            remaining -= demand.power;
            schedule.granted.insert(demand.id, demand.power);
            schedule.fully_scheduled.insert(demand.id);
        } else {
            blocked = true;
            waiting.push(idx);
        }
    }

    if let Some(&first) = waiting.first() {
        if remaining > 0 {
            schedule.granted.insert(demands[first].id, remaining);
            schedule.partially_scheduled = Some(demands[first].id);
        }
        schedule.deferred = waiting.iter().map(|&i| demands[i].id).collect();
    }

    schedule
}

/// Charging index: delivered power over requested power, in [0, 1].
pub fn charging_index(granted_total: u64, requested_total: u64) -> Result<f64, SchedulerError> {
    if requested_total == 0 {
        return Err(SchedulerError::ZeroRequested);
    }
    if granted_total > requested_total {
        return Err(SchedulerError::GrantExceedsRequest {
            granted: granted_total,
            requested: requested_total,
        });
    }
    Ok(granted_total as f64 / requested_total as f64)
}
