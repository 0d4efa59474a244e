//! Per-pseudonym TESLA one-way key chains.
//!
//! A chain of length `L` holds keys `K_0 ..= K_L` with `K_i = H(K_{i+1})`.
//! The key for slot `i` is `K_i`; its MAC key `K'_i = H'(K_i)` authenticates
//! the beacon sent in slot `i`, and `K_i` itself is disclosed in slot `i + 1`.
//! Only every `stride`-th key (plus the terminal key) is stored; keys in
//! between are re-derived on demand.

use thiserror::Error;

use crate::crypto::{hash_h, hash_h_prime, hash_key, Key, PcId};
use crate::Micros;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("chain length must be at least 1")]
    EmptyChain,
    #[error("checkpoint stride must be at least 1")]
    ZeroStride,
    #[error("slot duration must be positive")]
    ZeroSlot,
    #[error("key index {index} outside chain of length {length}")]
    IndexOutOfRange { index: u32, length: u32 },
    #[error("time {t}us outside chain lifetime [{start}us, {end}us)")]
    Expired { t: Micros, start: Micros, end: Micros },
}

/// Index of a beacon slot (and of the chain key used in it).
pub type SlotIndex = u32;

#[derive(Clone, Debug)]
pub struct TeslaChain {
    pc_id: PcId,
    length: u32,
    slot0_time: Micros,
    slot_us: Micros,
    stride: u32,
    /// `checkpoints[j]` is `K_{j * stride}`; the last entry is always the
    /// terminal key `K_length`.
    checkpoints: Vec<Key>,
}

impl TeslaChain {
    /// Builds a chain whose terminal key is `H(seed)`.
    pub fn generate(
        seed: &[u8],
        length: u32,
        pc_id: PcId,
        slot0_time: Micros,
        slot_us: Micros,
        stride: u32,
    ) -> Result<Self, ChainError> {
        if length == 0 {
            return Err(ChainError::EmptyChain);
        }
        if stride == 0 {
            return Err(ChainError::ZeroStride);
        }
        if slot_us <= 0 {
            return Err(ChainError::ZeroSlot);
        }
        let n_cp = (length / stride) as usize + 1;
        let mut checkpoints = vec![Key::default(); n_cp];
        let mut k = Key(hash_h(seed).0);
        let terminal = k;
        let mut i = length;
        loop {
            if i % stride == 0 {
                checkpoints[(i / stride) as usize] = k;
            }
            if i == 0 {
                break;
            }
            k = hash_key(&k);
            i -= 1;
        }
        if length % stride != 0 {
            checkpoints.push(terminal);
        }
        Ok(Self {
            pc_id,
            length,
            slot0_time,
            slot_us,
            stride,
            checkpoints,
        })
    }

    pub fn pc_id(&self) -> PcId {
        self.pc_id
    }

    pub fn length(&self) -> u32 {
        self.length
    }

    pub fn slot0_time(&self) -> Micros {
        self.slot0_time
    }

    pub fn slot_us(&self) -> Micros {
        self.slot_us
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    /// The chain anchor `K_0`.
    pub fn anchor(&self) -> Key {
        self.checkpoints[0]
    }

    pub fn stored_keys(&self) -> usize {
        self.checkpoints.len()
    }

    /// `K_i`, together with the number of hash evaluations spent deriving it.
    pub fn key_at_with_cost(&self, index: SlotIndex) -> Result<(Key, u32), ChainError> {
        if index > self.length {
            return Err(ChainError::IndexOutOfRange {
                index,
                length: self.length,
            });
        }
        let (cp_index, cp_slot) = if index % self.stride == 0 {
            ((index / self.stride) as usize, index)
        } else {
            let next = (index / self.stride + 1) * self.stride;
            if next > self.length {
                (self.checkpoints.len() - 1, self.length)
            } else {
                ((next / self.stride) as usize, next)
            }
        };
        let steps = cp_slot - index;
        let mut k = self.checkpoints[cp_index];
        for _ in 0..steps {
            k = hash_key(&k);
        }
        Ok((k, steps))
    }

    pub fn key_at(&self, index: SlotIndex) -> Result<Key, ChainError> {
        self.key_at_with_cost(index).map(|(k, _)| k)
    }

    /// `K'_i = H'(K_i)`, the MAC key for slot `i`.
    pub fn mac_key_at(&self, index: SlotIndex) -> Result<Key, ChainError> {
        self.key_at(index).map(|k| hash_h_prime(&k))
    }

    pub fn slot_index(&self, t: Micros) -> Result<SlotIndex, ChainError> {
        slot_of(t, self.slot0_time, self.slot_us, self.length)
    }

    /// Start time of slot `index`.
    pub fn slot_start(&self, index: SlotIndex) -> Micros {
        self.slot0_time + index as Micros * self.slot_us
    }
}

/// Slot containing `t` for a chain starting at `slot0_time` with `length`
/// slots of `slot_us` each.
pub fn slot_of(t: Micros, slot0_time: Micros, slot_us: Micros, length: u32) -> Result<SlotIndex, ChainError> {
    let index = t.checked_sub(slot0_time).filter(|&d| d >= 0).map(|d| d / slot_us);
    match index {
        Some(i) if i < Micros::from(length) => Ok(i as SlotIndex),
        _ => Err(ChainError::Expired {
            t,
            start: slot0_time,
            end: slot0_time.saturating_add(Micros::from(length).saturating_mul(slot_us)),
        }),
    }
}

/// Applies the chain hash `n` times.
pub fn hash_down(k: &Key, n: u32) -> Key {
    let mut k = *k;
    for _ in 0..n {
        k = hash_key(&k);
    }
    k
}

/// Checks that `candidate` (claimed `K_{candidate_slot}`) hashes down to the
/// authenticated `K_{last_auth_slot}`.
pub fn verify_disclosed_key(last_auth_key: &Key, last_auth_slot: SlotIndex, candidate: &Key, candidate_slot: SlotIndex) -> bool {
    if candidate_slot <= last_auth_slot {
        return false;
    }
    hash_down(candidate, candidate_slot - last_auth_slot) == *last_auth_key
}

/// Bytes of chain storage for a given number of keys and stride, as kept by
/// [`TeslaChain`].
pub fn storage_bytes(length: u32, stride: u32) -> usize {
    let n = (length / stride) as usize + 1 + usize::from(length % stride != 0);
    n * crate::crypto::HASH_LEN
}
