use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::address::Address;
use crate::credentials::{self, SchnorrSignature, Token};
use crate::encoding::{DecodeError, Reader, Writer};
use crate::scheduler::{self, EsuDemand, SchedulerParams, SlotSchedule};

/// Sender address used for system-scheduled transactions (slot triggers).
pub const SYSTEM_ADDRESS: Address = Address([0u8; 20]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContractError {
    #[error("regular load {regular_load} exceeds capacity {capacity}")]
    NegativeHeadroom { capacity: u64, regular_load: u64 },
    #[error("beta weights must sum to 1000")]
    BadWeights,
    #[error("battery capacity must be positive")]
    ZeroBattery,
    #[error("community identifier must be non-empty")]
    EmptyCommunity,
    #[error("issuance period must be at least one day")]
    ZeroPeriod,
}

/// How strictly incoming charging requests are authenticated.
///
/// `Full` runs the token and signature checks of `Is_Authorized`.
/// `AddressOnly` keeps the one-shot pseudonym rule but skips cryptography;
/// the Monte Carlo harness uses it so a quarter-million simulated requests
/// do not each pay for four scalar multiplications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthPolicy {
    Full,
    AddressOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Proposed,
    Fcfs,
}

/// Deployment parameters of the charging-coordination contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub owner: Address,
    pub community: String,
    /// Bus loading limit C in kW.
    pub capacity: u64,
    /// Initial regular load P_R in kW.
    pub regular_load: u64,
    pub beta1: u32,
    pub beta2: u32,
    /// Compressed utility public key, hex.
    pub utility_pk: String,
    /// Battery capacity in kW-slot, used for the SoC update on partial
    /// charges.
    pub battery_capacity: u64,
    /// Token validity window in days from the token's issue date.
    pub period_days: u32,
    pub scheduler: SchedulerKind,
    pub auth: AuthPolicy,
}

impl ContractConfig {
    pub fn validate(&self) -> Result<(), ContractError> {
        if self.regular_load > self.capacity {
            return Err(ContractError::NegativeHeadroom {
                capacity: self.capacity,
                regular_load: self.regular_load,
            });
        }
        if self.beta1 as u64 + self.beta2 as u64 != 1000 {
            return Err(ContractError::BadWeights);
        }
        if self.battery_capacity == 0 {
            return Err(ContractError::ZeroBattery);
        }
        if self.community.is_empty() {
            return Err(ContractError::EmptyCommunity);
        }
        if self.period_days == 0 {
            return Err(ContractError::ZeroPeriod);
        }
        Ok(())
    }

    pub fn utility_pk_bytes(&self) -> Option<[u8; 32]> {
        let raw = hex::decode(&self.utility_pk).ok()?;
        raw.try_into().ok()
    }

    pub fn utility_address(&self) -> Address {
        match self.utility_pk_bytes() {
            Some(pk) => Address::from_public_key_bytes(&pk),
            None => SYSTEM_ADDRESS,
        }
    }

    fn encode(&self, w: &mut Writer) {
        w.fixed(self.owner.as_bytes());
        w.bytes(self.community.as_bytes());
        w.u64(self.capacity);
        w.u64(self.regular_load);
        w.u32(self.beta1);
        w.u32(self.beta2);
        w.bytes(self.utility_pk.as_bytes());
        w.u64(self.battery_capacity);
        w.u32(self.period_days);
        w.u8(match self.scheduler {
            SchedulerKind::Proposed => 0,
            SchedulerKind::Fcfs => 1,
        });
        w.u8(match self.auth {
            AuthPolicy::Full => 0,
            AuthPolicy::AddressOnly => 1,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxKind {
    ChargingRequest,
    UtilityLoadPost,
    SlotTrigger,
}

impl TxKind {
    fn code(self) -> u8 {
        match self {
            TxKind::ChargingRequest => 0,
            TxKind::UtilityLoadPost => 1,
            TxKind::SlotTrigger => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TxKind::ChargingRequest),
            1 => Some(TxKind::UtilityLoadPost),
            2 => Some(TxKind::SlotTrigger),
            _ => None,
        }
    }
}

/// A ledger transaction: kind tag, sender address, kind-specific payload,
/// and an optional signature (absent for slot triggers).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub kind: TxKind,
    pub sender: Address,
    pub payload: Vec<u8>,
    pub signature: Option<Vec<u8>>,
}

impl Transaction {
    pub fn encode(&self, w: &mut Writer) {
        w.u8(self.kind.code());
        w.fixed(self.sender.as_bytes());
        w.bytes(&self.payload);
        match &self.signature {
            Some(sig) => {
                w.u8(1);
                w.bytes(sig);
            }
            None => w.u8(0),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.finish()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = TxKind::from_code(r.u8()?).ok_or(DecodeError::InvalidField("kind"))?;
        let sender = Address(r.fixed()?);
        let payload = r.bytes()?;
        let signature = match r.u8()? {
            0 => None,
            1 => Some(r.bytes()?),
            _ => return Err(DecodeError::InvalidField("signature_flag")),
        };
        Ok(Self {
            kind,
            sender,
            payload,
            signature,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tx = Self::decode(&mut r)?;
        r.done()?;
        Ok(tx)
    }

    pub fn from_hex(line: &str) -> Result<Self, DecodeError> {
        let raw = hex::decode(line.trim()).map_err(|_| DecodeError::InvalidField("hex"))?;
        Self::from_bytes(&raw)
    }
}

/// Body of a charging-request transaction: R_v = (P_v, S_v, K_v, TS, ID_g)
/// plus the pseudonym key and token needed to authorize it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestPayload {
    pub power: u64,
    pub soc: u32,
    pub tcc: u32,
    pub ts: NaiveDate,
    pub community: String,
    pub pseudonym_pk: [u8; 32],
    pub token: Token,
}

impl RequestPayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.power);
        w.u32(self.soc);
        w.u32(self.tcc);
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        w.i32((self.ts - epoch).num_days() as i32);
        w.bytes(self.community.as_bytes());
        w.fixed(&self.pseudonym_pk);
        self.token.encode(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let power = r.u64()?;
        let soc = r.u32()?;
        let tcc = r.u32()?;
        let days = r.i32()?;
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        let ts = epoch
            .checked_add_signed(chrono::Duration::days(days as i64))
            .ok_or(DecodeError::InvalidField("ts"))?;
        let community =
            String::from_utf8(r.bytes()?).map_err(|_| DecodeError::InvalidField("community"))?;
        let pseudonym_pk = r.fixed()?;
        let token = Token::decode(&mut r)?;
        r.done()?;
        Ok(Self {
            power,
            soc,
            tcc,
            ts,
            community,
            pseudonym_pk,
            token,
        })
    }
}

/// Why a transaction was rejected; the code is part of the block encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RejectReason {
    Malformed = 1,
    Unauthorized = 2,
    DuplicatePseudonym = 3,
    NotUtility = 4,
    LoadExceedsCapacity = 5,
    WrongSlot = 6,
}

impl RejectReason {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Malformed),
            2 => Some(Self::Unauthorized),
            3 => Some(Self::DuplicatePseudonym),
            4 => Some(Self::NotUtility),
            5 => Some(Self::LoadExceedsCapacity),
            6 => Some(Self::WrongSlot),
            _ => None,
        }
    }
}

/// Per-ESU record kept by the contract between slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EsuRecord {
    pub power: u64,
    pub tcc: u32,
    pub soc: u32,
    pub priority: u32,
    pub assigned: bool,
    pub scheduled_power: u64,
    pub arrival_seq: u64,
}

/// The on-ledger contract state. All collections are ordered so the
/// canonical serialization, and therefore the state root, is unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractState {
    pub config: ContractConfig,
    /// Current regular load P_R; the utility may repost it between slots.
    pub regular_load: u64,
    /// Charging budget for the upcoming slot, C - P_R.
    pub max_capacity: u64,
    pub records: BTreeMap<Address, EsuRecord>,
    pub order: Vec<Address>,
    pub spent: BTreeSet<Address>,
    pub current_slot: u64,
    next_arrival_seq: u64,
}

impl ContractState {
    /// Contract constructor: checks parameters and sets the charging budget
    /// to C - P_R.
    pub fn deploy(config: ContractConfig) -> Result<Self, ContractError> {
        config.validate()?;
        let regular_load = config.regular_load;
        let max_capacity = config.capacity - regular_load;
        Ok(Self {
            config,
            regular_load,
            max_capacity,
            records: BTreeMap::new(),
            order: Vec::new(),
            spent: BTreeSet::new(),
            current_slot: 0,
            next_arrival_seq: 0,
        })
    }

    pub fn scheduler_params(&self) -> SchedulerParams {
        SchedulerParams::new(
            self.config.beta1,
            self.config.beta2,
            self.config.capacity,
            self.regular_load,
        )
        .expect("validated at deploy and on every load post")
    }

    pub fn state_root(&self) -> [u8; 32] {
        let mut w = Writer::new();
        self.config.encode(&mut w);
        w.u64(self.regular_load);
        w.u64(self.max_capacity);
        w.u64(self.current_slot);
        w.u64(self.next_arrival_seq);
        w.u32(self.order.len() as u32);
        for a in &self.order {
            w.fixed(a.as_bytes());
        }
        w.u32(self.records.len() as u32);
        for (a, rec) in &self.records {
            w.fixed(a.as_bytes());
            w.u64(rec.power);
            w.u32(rec.tcc);
            w.u32(rec.soc);
            w.u32(rec.priority);
            w.u8(rec.assigned as u8);
            w.u64(rec.scheduled_power);
            w.u64(rec.arrival_seq);
        }
        w.u32(self.spent.len() as u32);
        for a in &self.spent {
            w.fixed(a.as_bytes());
        }
        Sha256::digest(w.finish()).into()
    }

    fn check_request(
        &self,
        sender: Address,
        payload: &RequestPayload,
        payload_bytes: &[u8],
        signature: Option<&[u8]>,
    ) -> Result<(), RejectReason> {
        // Range checks first: a malformed demand is rejected regardless of
        // credentials.
        if payload.power == 0 || payload.soc >= 1000 || payload.tcc == 0 {
            return Err(RejectReason::Malformed);
        }
        if self.spent.contains(&sender) {
            return Err(RejectReason::DuplicatePseudonym);
        }
        if self.config.auth == AuthPolicy::AddressOnly {
            return Ok(());
        }

        if Address::from_public_key_bytes(&payload.pseudonym_pk) != sender {
            return Err(RejectReason::Unauthorized);
        }
        if payload.community != self.config.community
            || payload.token.common.community != self.config.community
        {
            return Err(RejectReason::Unauthorized);
        }
        let age = (payload.ts - payload.token.common.date).num_days();
        if age < 0 || age >= self.config.period_days as i64 {
            return Err(RejectReason::Unauthorized);
        }
        let Some(utility_pk) = self.config.utility_pk_bytes() else {
            return Err(RejectReason::Unauthorized);
        };
        if !credentials::verify_token(
            &payload.token,
            &payload.pseudonym_pk,
            &utility_pk,
            &payload.token.common,
        ) {
            return Err(RejectReason::Unauthorized);
        }
        let Some(sig) = signature.and_then(SchnorrSignature::from_bytes) else {
            return Err(RejectReason::Unauthorized);
        };
        if !credentials::verify_request(&payload.pseudonym_pk, payload_bytes, &sig) {
            return Err(RejectReason::Unauthorized);
        }
        Ok(())
    }

    /// The `Is_Authorized` check as a plain boolean.
    pub fn is_authorized(&self, sender: Address, tx: &Transaction) -> bool {
        let Ok(payload) = RequestPayload::from_bytes(&tx.payload) else {
            return false;
        };
        self.check_request(sender, &payload, &tx.payload, tx.signature.as_deref())
            .is_ok()
    }

    /// Admits a demand without credential checks; the harness path. The
    /// one-shot pseudonym rule still applies.
    pub fn submit_trusted(
        &mut self,
        sender: Address,
        power: u64,
        soc: u32,
        tcc: u32,
    ) -> Result<(), RejectReason> {
        if power == 0 || soc >= 1000 || tcc == 0 {
            return Err(RejectReason::Malformed);
        }
        if self.spent.contains(&sender) {
            return Err(RejectReason::DuplicatePseudonym);
        }
        self.admit(sender, power, soc, tcc);
        Ok(())
    }

    fn admit(&mut self, sender: Address, power: u64, soc: u32, tcc: u32) {
        let arrival_seq = self.next_arrival_seq;
        self.next_arrival_seq += 1;
        let demand = EsuDemand::new(sender, power, soc, tcc, arrival_seq)
            .expect("ranges checked by caller");
        let priority = scheduler::priority(&demand, &self.scheduler_params()).0;
        self.records.insert(
            sender,
            EsuRecord {
                power,
                tcc,
                soc,
                priority,
                assigned: false,
                scheduled_power: 0,
                arrival_seq,
            },
        );
        self.order.push(sender);
        self.spent.insert(sender);
    }

    fn apply_charging_request(&mut self, tx: &Transaction) -> Result<(), RejectReason> {
        let payload =
            RequestPayload::from_bytes(&tx.payload).map_err(|_| RejectReason::Malformed)?;
        self.check_request(tx.sender, &payload, &tx.payload, tx.signature.as_deref())?;
        self.admit(tx.sender, payload.power, payload.soc, payload.tcc);
        Ok(())
    }

    fn apply_load_post(&mut self, tx: &Transaction) -> Result<(), RejectReason> {
        if tx.sender != self.config.utility_address() {
            return Err(RejectReason::NotUtility);
        }
        let mut r = Reader::new(&tx.payload);
        let new_load = r.u64().map_err(|_| RejectReason::Malformed)?;
        r.done().map_err(|_| RejectReason::Malformed)?;
        if new_load > self.config.capacity {
            return Err(RejectReason::LoadExceedsCapacity);
        }
        if self.config.auth == AuthPolicy::Full {
            let Some(utility_pk) = self.config.utility_pk_bytes() else {
                return Err(RejectReason::NotUtility);
            };
            let Some(sig) = tx.signature.as_deref().and_then(SchnorrSignature::from_bytes)
            else {
                return Err(RejectReason::NotUtility);
            };
            if !credentials::verify_request(&utility_pk, &tx.payload, &sig) {
                return Err(RejectReason::NotUtility);
            }
        }
        self.regular_load = new_load;
        self.max_capacity = self.config.capacity - new_load;
        Ok(())
    }

    fn apply_slot_trigger(
        &mut self,
        tx: &Transaction,
    ) -> Result<SlotSchedule, RejectReason> {
        if tx.sender != SYSTEM_ADDRESS {
            return Err(RejectReason::Unauthorized);
        }
        let mut r = Reader::new(&tx.payload);
        let slot = r.u64().map_err(|_| RejectReason::Malformed)?;
        r.done().map_err(|_| RejectReason::Malformed)?;
        if slot != self.current_slot {
            return Err(RejectReason::WrongSlot);
        }
        Ok(self.run_slot())
    }

    /// End-of-slot execution: schedule the pending records, drop the fully
    /// served ones, carry the rest over with reduced demand and decremented
    /// TCC, then reset the budget for the next slot.
    pub fn run_slot(&mut self) -> SlotSchedule {
        let params = self.scheduler_params();
        let demands: Vec<EsuDemand> = self
            .order
            .iter()
            .map(|a| {
                let rec = &self.records[a];
                EsuDemand::new(*a, rec.power, rec.soc, rec.tcc, rec.arrival_seq)
                    .expect("records hold validated demands")
            })
            .collect();

        let schedule = match self.config.scheduler {
            SchedulerKind::Proposed => scheduler::schedule_slot(&demands, &params),
            SchedulerKind::Fcfs => scheduler::schedule_slot_fcfs(&demands, &params),
        };

        for addr in &schedule.fully_scheduled {
            self.records.remove(addr);
        }
        self.order.retain(|a| self.records.contains_key(a));

        let battery = self.config.battery_capacity;
        for addr in &self.order {
            let rec = self.records.get_mut(addr).unwrap();
            let granted = schedule.granted.get(addr).copied().unwrap_or(0);
            rec.scheduled_power = granted;
            rec.assigned = false;
            if granted > 0 {
                rec.power -= granted;
                let delta = (granted * 1000 / battery) as u32;
                rec.soc = (rec.soc + delta).min(999);
            }
            rec.tcc = rec.tcc.saturating_sub(1).max(1);
            let demand = EsuDemand::new(*addr, rec.power, rec.soc, rec.tcc, rec.arrival_seq)
                .expect("carried record stays valid");
            rec.priority = scheduler::priority(&demand, &params).0;
        }

        self.current_slot += 1;
        self.max_capacity = self.config.capacity - self.regular_load;
        schedule
    }

    /// Executes one transaction; rejected transactions leave the state
    /// untouched.
    pub fn apply(
        &mut self,
        tx: &Transaction,
    ) -> (Result<(), RejectReason>, Option<SlotSchedule>) {
        match tx.kind {
            TxKind::ChargingRequest => (self.apply_charging_request(tx), None),
            TxKind::UtilityLoadPost => (self.apply_load_post(tx), None),
            TxKind::SlotTrigger => match self.apply_slot_trigger(tx) {
                Ok(schedule) => (Ok(()), Some(schedule)),
                Err(e) => (Err(e), None),
            },
        }
    }
}

/// Builds an unsigned slot-trigger transaction for the given slot.
pub fn slot_trigger(slot: u64) -> Transaction {
    let mut w = Writer::new();
    w.u64(slot);
    Transaction {
        kind: TxKind::SlotTrigger,
        sender: SYSTEM_ADDRESS,
        payload: w.finish(),
        signature: None,
    }
}

/// Builds a utility load-post transaction body; the caller signs it when the
/// contract runs with full authentication.
pub fn load_post_payload(regular_load: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(regular_load);
    w.finish()
}
