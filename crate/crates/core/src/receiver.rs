//! Receiver-side beacon validation: reception, queue element selection,
//! cooperative (signature) verification and TESLA MAC validation.
//!
//! A receiver keeps two queues of message ids. `queue1` holds newly received
//! messages in arrival order (its head is the most recent arrival); `queue2`
//! is a FIFO of potentially valid messages under pseudonyms that have not
//! been verified yet, and is served first.
//!
//! Messages must be delivered to a receiver in increasing [`MsgId`] order,
//! which is the order a [`MessageStore`] hands out ids. `queue1` relies on it
//! to keep arrival order as id order.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_h_prime, Key, PcId, SignatureScheme, SimulatedSignatures};
use crate::messages::PseudonymCertificate;
use crate::store::{MessageStore, MsgId};
use crate::tesla::{hash_down, SlotIndex};
use crate::Micros;

/// Which verification scheme a node runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Signature verification of every beacon, first come first served.
    BaselineSigOnly,
    /// TESLA validation of beacons under cached pseudonyms, no sharing.
    BaselineTesla,
    /// TESLA plus shared verification results.
    Cooperative,
}

impl Scheme {
    pub fn tesla(self) -> bool {
        !matches!(self, Scheme::BaselineSigOnly)
    }

    pub fn shares_results(self) -> bool {
        matches!(self, Scheme::Cooperative)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::BaselineSigOnly => "baseline_sig_only",
            Scheme::BaselineTesla => "baseline_tesla",
            Scheme::Cooperative => "cooperative",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "baseline_sig_only" => Ok(Scheme::BaselineSigOnly),
            "baseline_tesla" => Ok(Scheme::BaselineTesla),
            "cooperative" => Ok(Scheme::Cooperative),
            _ => Err(format!("unknown scheme {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationKind {
    SignatureVerified,
    CooperativelyValidated,
    TeslaValidated,
}

impl ValidationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidationKind::SignatureVerified => "signature",
            ValidationKind::CooperativelyValidated => "cooperative",
            ValidationKind::TeslaValidated => "tesla",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropReason {
    /// Timestamp outside the pseudonym lifetime, or in its first slot.
    OutOfLifetime,
    /// Received after its slot ended (its MAC key may be public) or stamped
    /// in the future.
    Untimely,
    /// Disclosed key for a slot whose key was already received.
    DuplicateKey,
    /// Disclosed key older than the last authenticated one.
    StaleKey,
    /// Disclosed key does not hash down to the authenticated key.
    BadKey,
    /// Carries a cached pseudonym id with a certificate other than the
    /// verified one.
    CertMismatch,
    BadSignature,
    BadMac,
    /// Pseudonym expired while queued.
    Expired,
    QueueFull,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accepted(ValidationKind),
    Dropped(DropReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidationOutcome {
    pub msg: MsgId,
    pub pc: PcId,
    pub verdict: Verdict,
    pub received_at: Micros,
    pub at: Micros,
    /// Whether the message had been queued (reception-time drops were not).
    pub from_queue: bool,
    /// For cooperative acceptances: the signature-verified message whose
    /// piggyback list carried this message's identifier.
    pub justified_by: Option<MsgId>,
}

impl ValidationOutcome {
    pub fn waited(&self) -> Micros {
        self.at - self.received_at
    }

    pub fn accepted(&self) -> Option<ValidationKind> {
        match self.verdict {
            Verdict::Accepted(k) => Some(k),
            Verdict::Dropped(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CachedPcEntry {
    /// The certificate whose signature was verified.
    pub cert: PseudonymCertificate,
    pub last_auth_key: Key,
    pub last_auth_slot: SlotIndex,
    /// The (at most one) message under this pseudonym waiting in `queue1`.
    pub pending: Option<MsgId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnchorError {
    #[error("pseudonym {0} is not cached")]
    NotCached(PcId),
    #[error("anchor slot {new} does not advance past {current}")]
    Regression { current: SlotIndex, new: SlotIndex },
}

#[derive(Clone, Copy, Debug)]
pub struct ReceiverConfig {
    pub scheme: Scheme,
    /// Slot length `1/γ`.
    pub slot_us: Micros,
    /// CPU time of one signature verification.
    pub t_vrfc: Micros,
    pub queue_cap: Option<usize>,
}

/// A verification occupying the CPU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Job {
    pub msg: MsgId,
    pub received_at: Micros,
    pub cost: Micros,
}

pub struct Receiver {
    cfg: ReceiverConfig,
    queue1: BTreeMap<MsgId, Micros>,
    queue2: VecDeque<(MsgId, Micros)>,
    cached: FxHashMap<PcId, CachedPcEntry>,
    t_next: Micros,
    rng: ChaCha8Rng,
    in_flight: Option<Job>,
    last_delivered: Option<MsgId>,
    outcomes: Vec<ValidationOutcome>,
    scheme: Box<dyn SignatureScheme + Send>,
}

impl std::fmt::Debug for Receiver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Receiver")
            .field("queue1", &self.queue1.len())
            .field("queue2", &self.queue2.len())
            .field("cached", &self.cached.len())
            .field("in_flight", &self.in_flight)
            .finish()
    }
}

impl Receiver {
    pub fn new(cfg: ReceiverConfig, rng: ChaCha8Rng) -> Self {
        Self::with_signatures(cfg, rng, Box::new(SimulatedSignatures))
    }

    pub fn with_signatures(cfg: ReceiverConfig, rng: ChaCha8Rng, scheme: Box<dyn SignatureScheme + Send>) -> Self {
        Self {
            cfg,
            queue1: BTreeMap::new(),
            queue2: VecDeque::new(),
            cached: FxHashMap::default(),
            t_next: 0,
            rng,
            in_flight: None,
            last_delivered: None,
            outcomes: Vec::new(),
            scheme,
        }
    }

    pub fn config(&self) -> &ReceiverConfig {
        &self.cfg
    }

    /// Time of this node's own next beacon broadcast.
    pub fn set_t_next(&mut self, t: Micros) {
        self.t_next = t;
    }

    pub fn t_next(&self) -> Micros {
        self.t_next
    }

    pub fn queue1_len(&self) -> usize {
        self.queue1.len()
    }

    pub fn queue2_len(&self) -> usize {
        self.queue2.len()
    }

    /// Queue 1 from head (most recent) to tail.
    pub fn queue1_ids(&self) -> Vec<MsgId> {
        self.queue1.keys().rev().copied().collect()
    }

    pub fn queue2_ids(&self) -> Vec<MsgId> {
        self.queue2.iter().map(|&(id, _)| id).collect()
    }

    pub fn is_cached(&self, pc: PcId) -> bool {
        self.cached.contains_key(&pc)
    }

    pub fn cached_entry(&self, pc: PcId) -> Option<&CachedPcEntry> {
        self.cached.get(&pc)
    }

    pub fn cached_count(&self) -> usize {
        self.cached.len()
    }

    pub fn in_flight(&self) -> Option<Job> {
        self.in_flight
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_none()
    }

    pub fn has_work(&self) -> bool {
        !self.queue1.is_empty() || !self.queue2.is_empty()
    }

    /// Takes the outcomes produced since the last call.
    pub fn drain_outcomes(&mut self) -> std::vec::Drain<'_, ValidationOutcome> {
        self.outcomes.drain(..)
    }

    fn emit(&mut self, store: &MessageStore, msg: MsgId, verdict: Verdict, received_at: Micros, at: Micros, from_queue: bool, justified_by: Option<MsgId>) {
        self.outcomes.push(ValidationOutcome {
            msg,
            pc: store.get(msg).pc(),
            verdict,
            received_at,
            at,
            from_queue,
            justified_by,
        });
    }

    fn drop_msg(&mut self, store: &MessageStore, msg: MsgId, reason: DropReason, received_at: Micros, now: Micros, from_queue: bool) {
        self.emit(store, msg, Verdict::Dropped(reason), received_at, now, from_queue, None);
    }

    fn remove_q1(&mut self, store: &MessageStore, id: MsgId) -> Option<Micros> {
        let received_at = self.queue1.remove(&id)?;
        if let Some(entry) = self.cached.get_mut(&store.get(id).pc()) {
            if entry.pending == Some(id) {
                entry.pending = None;
            }
        }
        Some(received_at)
    }

    fn slot_of(&self, store: &MessageStore, id: MsgId) -> Option<SlotIndex> {
        store.get(id).msg.beacon.slot(self.cfg.slot_us).ok()
    }

    /// Handles a delivered message.
    pub fn on_receive(&mut self, store: &MessageStore, id: MsgId, now: Micros) {
        assert!(self.last_delivered.map_or(true, |last| id > last), "messages must be delivered in store order");
        self.last_delivered = Some(id);

        let beacon = &store.get(id).msg.beacon;
        let pc = beacon.pc.id;
        let slot = match beacon.slot(self.cfg.slot_us) {
            Ok(s) if s >= 1 => s,
            _ => return self.drop_msg(store, id, DropReason::OutOfLifetime, now, now, false),
        };
        let slot_end = beacon.pc.valid_from + (slot as Micros + 1) * self.cfg.slot_us;
        if beacon.timestamp > now || now >= slot_end {
            return self.drop_msg(store, id, DropReason::Untimely, now, now, false);
        }

        if !self.cfg.scheme.tesla() {
            return self.enqueue1(store, id, now);
        }
        let Some(entry) = self.cached.get(&pc).copied() else {
            return self.enqueue1(store, id, now);
        };
        if beacon.pc != entry.cert {
            return self.drop_msg(store, id, DropReason::CertMismatch, now, now, false);
        }

        let key_slot = slot - 1;
        if key_slot == entry.last_auth_slot {
            return self.drop_msg(store, id, DropReason::DuplicateKey, now, now, false);
        }
        if key_slot < entry.last_auth_slot {
            return self.drop_msg(store, id, DropReason::StaleKey, now, now, false);
        }
        if store.disclosed_hashed(id, key_slot - entry.last_auth_slot) != entry.last_auth_key {
            return self.drop_msg(store, id, DropReason::BadKey, now, now, false);
        }

        let disclosed = beacon.disclosed_key;
        let previous = {
            let e = self.cached.get_mut(&pc).expect("cached");
            e.last_auth_key = disclosed;
            e.last_auth_slot = key_slot;
            e.pending.take()
        };
        self.enqueue1(store, id, now);
        if self.queue1.contains_key(&id) {
            self.cached.get_mut(&pc).expect("cached").pending = Some(id);
        }
        if let Some(prev) = previous {
            if let Some(received_at) = self.remove_q1(store, prev) {
                self.tesla_from_anchor(store, prev, received_at, &disclosed, key_slot, now);
            }
        }
    }

    fn enqueue1(&mut self, store: &MessageStore, id: MsgId, now: Micros) {
        self.queue1.insert(id, now);
        if let Some(cap) = self.cfg.queue_cap {
            while self.queue1.len() > cap {
                let (&oldest, &received_at) = self.queue1.iter().next().expect("non-empty");
                self.remove_q1(store, oldest);
                self.drop_msg(store, oldest, DropReason::QueueFull, received_at, now, true);
            }
        }
    }

    /// TESLA-validates `id` with the key for its slot derived from an
    /// authenticated `anchor_key = K_{anchor_slot}`.
    fn tesla_from_anchor(&mut self, store: &MessageStore, id: MsgId, received_at: Micros, anchor_key: &Key, anchor_slot: SlotIndex, now: Micros) {
        match self.slot_of(store, id) {
            Some(slot) if slot <= anchor_slot => {
                let key = hash_down(anchor_key, anchor_slot - slot);
                self.tesla_validate(store, id, received_at, &hash_h_prime(&key), now);
            }
            _ => self.drop_msg(store, id, DropReason::BadKey, received_at, now, true),
        }
    }

    /// Picks the next queue element to verify and removes it from its queue.
    /// Elements whose pseudonym has expired are dropped on the way.
    pub fn select_next(&mut self, store: &MessageStore, now: Micros) -> Option<(MsgId, Micros)> {
        loop {
            let (id, received_at) = if let Some(&(head, _)) = self.queue2.front() {
                let pc = store.get(head).pc();
                let mut best = 0;
                let mut best_ts = store.get(head).timestamp();
                for (i, &(other, _)) in self.queue2.iter().enumerate().skip(1) {
                    let m = store.get(other);
                    if m.pc() == pc && m.timestamp() > best_ts {
                        best = i;
                        best_ts = m.timestamp();
                    }
                }
                self.queue2.remove(best).expect("index in range")
            } else if !self.queue1.is_empty() {
                let id = if self.cfg.scheme == Scheme::BaselineSigOnly {
                    *self.queue1.keys().next().expect("non-empty")
                } else {
                    self.pick_from_queue1(store)
                };
                let received_at = self.remove_q1(store, id).expect("present");
                (id, received_at)
            } else {
                return None;
            };
            if now >= store.get(id).msg.beacon.pc.valid_to {
                self.drop_msg(store, id, DropReason::Expired, received_at, now, true);
                continue;
            }
            return Some((id, received_at));
        }
    }

    /// Uniform choice among the fresh prefix of queue 1, else its head.
    fn pick_from_queue1(&mut self, store: &MessageStore) -> MsgId {
        let horizon = self.t_next - self.cfg.slot_us;
        let k = self.queue1.keys().rev().take_while(|&&id| store.get(id).timestamp() > horizon).count();
        let n = if k > 0 { self.rng.gen_range(0..k) } else { 0 };
        *self.queue1.keys().rev().nth(n).expect("index in range")
    }

    /// CPU time to verify `id`: one verification for the message, plus one
    /// for its pseudonym certificate when not cached.
    pub fn verification_cost(&self, store: &MessageStore, id: MsgId) -> Micros {
        if self.is_cached(store.get(id).pc()) {
            self.cfg.t_vrfc
        } else {
            2 * self.cfg.t_vrfc
        }
    }

    /// If idle, selects the next element and puts it on the CPU.
    pub fn start_next(&mut self, store: &MessageStore, now: Micros) -> Option<Job> {
        if self.in_flight.is_some() {
            return None;
        }
        let (msg, received_at) = self.select_next(store, now)?;
        let job = Job {
            msg,
            received_at,
            cost: self.verification_cost(store, msg),
        };
        self.in_flight = Some(job);
        Some(job)
    }

    /// Completes the in-flight verification.
    pub fn finish_job(&mut self, store: &MessageStore, now: Micros) -> Option<Job> {
        let job = self.in_flight.take()?;
        self.cooperative_verify(store, job.msg, job.received_at, now);
        Some(job)
    }

    /// Signature verification of a selected element and everything it
    /// unlocks: anchoring a new pseudonym, TESLA validation of its queued
    /// beacons, and use of the piggybacked digests.
    pub fn cooperative_verify(&mut self, store: &MessageStore, id: MsgId, received_at: Micros, now: Micros) {
        if !store.signature_valid(id, self.scheme.as_ref()) {
            return self.drop_msg(store, id, DropReason::BadSignature, received_at, now, true);
        }
        self.emit(store, id, Verdict::Accepted(ValidationKind::SignatureVerified), received_at, now, true, None);

        let beacon = &store.get(id).msg.beacon;
        let pc = beacon.pc.id;
        let key_slot = self.slot_of(store, id).map(|s| s.saturating_sub(1));
        match (self.cached.contains_key(&pc), key_slot) {
            (false, Some(key_slot)) => {
                self.cached.insert(
                    pc,
                    CachedPcEntry {
                        cert: beacon.pc,
                        last_auth_key: beacon.disclosed_key,
                        last_auth_slot: key_slot,
                        pending: None,
                    },
                );
                if self.cfg.scheme.tesla() {
                    self.extract_same_pc(store, pc, now);
                }
            }
            (true, Some(key_slot)) if self.cached[&pc].cert == beacon.pc => {
                let _ = self.update_chain_anchor(pc, beacon.disclosed_key, key_slot);
            }
            _ => {}
        }

        for digest in &beacon.piggyback {
            let Some(other) = store.lookup(digest) else { continue };
            if !self.queue1.contains_key(&other) {
                continue;
            }
            if self.is_cached(store.get(other).pc()) {
                let other_received = self.remove_q1(store, other).expect("present");
                self.emit(
                    store,
                    other,
                    Verdict::Accepted(ValidationKind::CooperativelyValidated),
                    other_received,
                    now,
                    true,
                    Some(id),
                );
            } else {
                self.move_to_queue2(store, other);
            }
        }
    }

    fn move_to_queue2(&mut self, store: &MessageStore, id: MsgId) {
        if let Some(received_at) = self.remove_q1(store, id) {
            self.queue2.push_back((id, received_at));
        }
    }

    /// After a pseudonym is first verified: TESLA-validates its queued
    /// beacons, keeping back the latest one whose key is not disclosed yet.
    /// Queued beacons carrying a different certificate under the same id are
    /// dropped.
    fn extract_same_pc(&mut self, store: &MessageStore, pc: PcId, now: Micros) {
        let entry = *self.cached.get(&pc).expect("just cached");
        let mut members: Vec<(MsgId, Micros, bool)> = Vec::new();
        for &id in store.ids_for_pc(pc) {
            if let Some(&received_at) = self.queue1.get(&id) {
                members.push((id, received_at, true));
            }
        }
        for &(id, received_at) in &self.queue2 {
            if store.get(id).pc() == pc {
                members.push((id, received_at, false));
            }
        }
        if members.is_empty() {
            return;
        }
        members.sort_by_key(|&(id, _, _)| std::cmp::Reverse((store.get(id).timestamp(), id)));

        let (mut anchor_key, mut anchor_slot) = (entry.last_auth_key, entry.last_auth_slot);
        let mut kept = false;
        for (id, received_at, in_q1) in members {
            if store.get(id).msg.beacon.pc != entry.cert {
                self.unqueue(store, id, in_q1);
                self.drop_msg(store, id, DropReason::CertMismatch, received_at, now, true);
                continue;
            }
            let slot = self.slot_of(store, id);
            let derivable = matches!(slot, Some(s) if s <= anchor_slot);
            if !derivable && !kept {
                if let Some(slot) = slot.filter(|&s| s >= 1 && s - 1 > anchor_slot) {
                    if store.disclosed_hashed(id, slot - 1 - anchor_slot) == anchor_key {
                        anchor_key = store.get(id).msg.beacon.disclosed_key;
                        anchor_slot = slot - 1;
                        kept = true;
                        if in_q1 {
                            self.cached.get_mut(&pc).expect("cached").pending = Some(id);
                        }
                        continue;
                    }
                }
            }
            self.unqueue(store, id, in_q1);
            if derivable {
                self.tesla_from_anchor(store, id, received_at, &anchor_key, anchor_slot, now);
            } else {
                let reason = if kept { DropReason::DuplicateKey } else { DropReason::BadKey };
                self.drop_msg(store, id, reason, received_at, now, true);
            }
        }
        let e = self.cached.get_mut(&pc).expect("cached");
        e.last_auth_key = anchor_key;
        e.last_auth_slot = anchor_slot;
    }

    fn unqueue(&mut self, store: &MessageStore, id: MsgId, in_q1: bool) {
        if in_q1 {
            self.remove_q1(store, id);
        } else if let Some(pos) = self.queue2.iter().position(|&(q, _)| q == id) {
            self.queue2.remove(pos);
        }
    }

    /// MAC check of `id` under `mac_key = K'_i`. Accepted beacons' digests
    /// are used only to discover queue-1 elements under non-cached
    /// pseudonyms, which move to queue 2; nothing is accepted through them.
    pub fn tesla_validate(&mut self, store: &MessageStore, id: MsgId, received_at: Micros, mac_key: &Key, now: Micros) {
        if !store.mac_valid(id, mac_key) {
            return self.drop_msg(store, id, DropReason::BadMac, received_at, now, true);
        }
        self.emit(store, id, Verdict::Accepted(ValidationKind::TeslaValidated), received_at, now, true, None);
        for digest in &store.get(id).msg.beacon.piggyback {
            let Some(other) = store.lookup(digest) else { continue };
            if self.queue1.contains_key(&other) && !self.is_cached(store.get(other).pc()) {
                self.move_to_queue2(store, other);
            }
        }
    }

    /// Advances the authenticated key of a cached pseudonym.
    pub fn update_chain_anchor(&mut self, pc: PcId, key: Key, slot: SlotIndex) -> Result<(), AnchorError> {
        let entry = self.cached.get_mut(&pc).ok_or(AnchorError::NotCached(pc))?;
        if slot <= entry.last_auth_slot {
            return Err(AnchorError::Regression {
                current: entry.last_auth_slot,
                new: slot,
            });
        }
        entry.last_auth_key = key;
        entry.last_auth_slot = slot;
        Ok(())
    }

    /// Checks the structural queue invariants; used by tests and debug runs.
    pub fn check_invariants(&self, store: &MessageStore) -> Result<(), String> {
        for &(id, _) in &self.queue2 {
            if self.queue1.contains_key(&id) {
                return Err(format!("message {id} in both queues"));
            }
        }
        if let Some(job) = self.in_flight {
            if self.queue1.contains_key(&job.msg) || self.queue2.iter().any(|&(q, _)| q == job.msg) {
                return Err(format!("in-flight message {} still queued", job.msg));
            }
        }
        if self.cfg.scheme.tesla() {
            let mut per_pc: FxHashMap<PcId, usize> = FxHashMap::default();
            for &id in self.queue1.keys() {
                let pc = store.get(id).pc();
                if self.cached.contains_key(&pc) {
                    *per_pc.entry(pc).or_default() += 1;
                }
            }
            for (pc, n) in per_pc {
                if n > 1 {
                    return Err(format!("{n} queue-1 elements under cached pseudonym {pc}"));
                }
            }
            for (pc, e) in &self.cached {
                if let Some(p) = e.pending {
                    if !self.queue1.contains_key(&p) || store.get(p).pc() != *pc {
                        return Err(format!("stale pending entry for pseudonym {pc}"));
                    }
                }
            }
        }
        Ok(())
    }
}
