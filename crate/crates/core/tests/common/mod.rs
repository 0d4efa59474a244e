#![allow(dead_code)]

use coopbeacon::messages::{BeaconMessage, VehicleStatus};
use coopbeacon::receiver::{Receiver, ReceiverConfig, Scheme, ValidationOutcome};
use coopbeacon::sender::{SenderConfig, SenderState};
use coopbeacon::store::{MessageStore, MsgId};
use coopbeacon::Micros;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SLOT: Micros = 100_000;
pub const T_VRFC: Micros = 4_000;

pub fn sender_cfg(alpha: usize) -> SenderConfig {
    SenderConfig {
        slot_us: SLOT,
        pc_lifetime: 300_000_000,
        pc_epoch: -SLOT,
        alpha,
        checkpoint_stride: 10,
    }
}

pub fn receiver(scheme: Scheme, seed: u64) -> Receiver {
    Receiver::new(
        ReceiverConfig {
            scheme,
            slot_us: SLOT,
            t_vrfc: T_VRFC,
            queue_cap: None,
        },
        ChaCha8Rng::seed_from_u64(seed),
    )
}

pub fn sender(alpha: usize, node: u32, seed: u64) -> SenderState {
    SenderState::new(sender_cfg(alpha), node, 0, ChaCha8Rng::seed_from_u64(seed))
}

/// Broadcast time of `sender` in chain slot `slot` of its current pseudonym.
pub fn tx_time(s: &SenderState, slot: u32) -> Micros {
    s.chain().slot_start(slot) + s.phase()
}

pub fn beacon(s: &mut SenderState, slot: u32) -> BeaconMessage {
    let t = tx_time(s, slot);
    s.build_beacon(t, VehicleStatus::default()).unwrap()
}

pub struct Harness {
    pub store: MessageStore,
    pub rx: Receiver,
    pub log: Vec<ValidationOutcome>,
}

impl Harness {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            store: MessageStore::new(),
            rx: receiver(scheme, 99),
            log: Vec::new(),
        }
    }

    /// Stores `m` and delivers it 1 µs after its timestamp.
    pub fn deliver(&mut self, m: BeaconMessage) -> MsgId {
        let at = m.beacon.timestamp + 1;
        self.deliver_at(m, at)
    }

    pub fn deliver_at(&mut self, m: BeaconMessage, at: Micros) -> MsgId {
        let id = self.store.insert(m);
        self.rx.on_receive(&self.store, id, at);
        self.collect();
        id
    }

    pub fn collect(&mut self) {
        self.log.extend(self.rx.drain_outcomes());
        self.rx.check_invariants(&self.store).expect("receiver invariants");
    }

    /// Runs one select + verify cycle at `now`.
    pub fn verify_next(&mut self, now: Micros) -> Option<MsgId> {
        let job = self.rx.start_next(&self.store, now)?;
        self.rx.finish_job(&self.store, now + job.cost);
        self.collect();
        Some(job.msg)
    }

    pub fn outcome(&self, id: MsgId) -> Option<&ValidationOutcome> {
        self.log.iter().find(|o| o.msg == id)
    }
}
