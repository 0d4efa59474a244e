//! Append-only store of received beacon messages.
//!
//! Receivers queue message ids rather than messages. A message broadcast to
//! many receivers is stored once, its identifier `H(M)` is computed once, and
//! the pure checks on it (signature, MAC under a given key, one hash step of
//! the disclosed key) are memoized. Memoization never changes a result.

use std::cell::Cell;

use rustc_hash::FxHashMap;

use crate::crypto::{hash_key, mac, Digest, Key, PcId, SignatureScheme};
use crate::messages::{beacon_hash, encode_beacon, signing_bytes, BeaconMessage};
use crate::tesla::hash_down;

pub type MsgId = u32;

#[derive(Debug)]
pub struct StoredMessage {
    pub msg: BeaconMessage,
    pub digest: Digest,
    /// `H(K_{i-1})`, i.e. the disclosed key one step down its chain.
    disclosed_parent: Key,
    signature_ok: Cell<Option<bool>>,
    mac_memo: Cell<Option<(Key, bool)>>,
}

impl StoredMessage {
    pub fn pc(&self) -> PcId {
        self.msg.beacon.pc.id
    }

    pub fn timestamp(&self) -> crate::Micros {
        self.msg.beacon.timestamp
    }
}

#[derive(Debug, Default)]
pub struct MessageStore {
    messages: Vec<StoredMessage>,
    by_digest: FxHashMap<Digest, MsgId>,
    by_pc: FxHashMap<PcId, Vec<MsgId>>,
}

impl MessageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, msg: BeaconMessage) -> MsgId {
        let id = MsgId::try_from(self.messages.len()).expect("message store full");
        let digest = beacon_hash(&msg);
        self.by_digest.entry(digest).or_insert(id);
        self.by_pc.entry(msg.beacon.pc.id).or_default().push(id);
        let disclosed_parent = hash_key(&msg.beacon.disclosed_key);
        self.messages.push(StoredMessage {
            msg,
            digest,
            disclosed_parent,
            signature_ok: Cell::new(None),
            mac_memo: Cell::new(None),
        });
        id
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn get(&self, id: MsgId) -> &StoredMessage {
        &self.messages[id as usize]
    }

    /// First stored message whose identifier is `digest`.
    pub fn lookup(&self, digest: &Digest) -> Option<MsgId> {
        self.by_digest.get(digest).copied()
    }

    /// All stored messages carrying pseudonym `pc`, in insertion order.
    pub fn ids_for_pc(&self, pc: PcId) -> &[MsgId] {
        self.by_pc.get(&pc).map_or(&[], Vec::as_slice)
    }

    pub fn signature_valid(&self, id: MsgId, scheme: &dyn SignatureScheme) -> bool {
        let m = self.get(id);
        if let Some(ok) = m.signature_ok.get() {
            return ok;
        }
        let b = &m.msg.beacon;
        let ok = scheme.verify(b.pc.id, &b.pc.public_key, &b.signature, &signing_bytes(b));
        m.signature_ok.set(Some(ok));
        ok
    }

    /// Recomputes `MAC_{mac_key}(Beacon)` and compares it with the attached MAC.
    pub fn mac_valid(&self, id: MsgId, mac_key: &Key) -> bool {
        let m = self.get(id);
        if let Some((k, ok)) = m.mac_memo.get() {
            if k == *mac_key {
                return ok;
            }
        }
        let ok = mac(mac_key, &encode_beacon(&m.msg.beacon)) == m.msg.mac;
        m.mac_memo.set(Some((*mac_key, ok)));
        ok
    }

    /// `H^steps(disclosed_key)` for `steps >= 1`.
    pub fn disclosed_hashed(&self, id: MsgId, steps: u32) -> Key {
        debug_assert!(steps >= 1);
        hash_down(&self.get(id).disclosed_parent, steps - 1)
    }
}
