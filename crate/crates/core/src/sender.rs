//! Beacon production for benign and adversarial nodes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{mac, Digest, Key, PcId, PcSecret, SignatureScheme, SimulatedSignatures, HASH_LEN};
use crate::messages::{encode_beacon, signing_bytes, BeaconMessage, PseudonymCertificate, SignedBeacon, VehicleStatus};
use crate::receiver::ValidationKind;
use crate::tesla::{ChainError, SlotIndex, TeslaChain};
use crate::Micros;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SendError {
    #[error("slot 0 of a pseudonym has no key to disclose")]
    FirstSlot,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Clone, Copy, Debug)]
pub struct SenderConfig {
    pub slot_us: Micros,
    /// Pseudonym lifetime `τ`; a whole number of slots.
    pub pc_lifetime: Micros,
    /// Start of pseudonym lifetime 0. All lifetimes are
    /// `[epoch + kτ, epoch + (k+1)τ)`.
    pub pc_epoch: Micros,
    pub alpha: usize,
    pub checkpoint_stride: u32,
}

impl SenderConfig {
    pub fn chain_length(&self) -> u32 {
        (self.pc_lifetime / self.slot_us) as u32
    }

    /// The aligned pseudonym lifetime containing `t`.
    pub fn lifetime_at(&self, t: Micros) -> (Micros, Micros) {
        let k = (t - self.pc_epoch).div_euclid(self.pc_lifetime);
        let from = self.pc_epoch + k * self.pc_lifetime;
        (from, from + self.pc_lifetime)
    }
}

pub struct SenderState {
    cfg: SenderConfig,
    node_id: u32,
    pc: PseudonymCertificate,
    secret: PcSecret,
    chain: TeslaChain,
    /// Offset of this node's broadcasts within each slot.
    phase: Micros,
    /// Signature-verified digests with their beacon timestamps, newest first.
    verified: Vec<(Digest, Micros)>,
    rng: ChaCha8Rng,
    signer: SimulatedSignatures,
}

impl std::fmt::Debug for SenderState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SenderState")
            .field("node_id", &self.node_id)
            .field("pc", &self.pc.id)
            .field("phase", &self.phase)
            .finish()
    }
}

fn fresh_credentials(rng: &mut ChaCha8Rng, cfg: &SenderConfig, valid_from: Micros) -> (PseudonymCertificate, PcSecret, TeslaChain) {
    let secret = PcSecret(rng.gen());
    let pc = PseudonymCertificate {
        id: rng.gen(),
        valid_from,
        valid_to: valid_from + cfg.pc_lifetime,
        public_key: secret.public_handle(),
    };
    let seed: [u8; 32] = rng.gen();
    let chain = TeslaChain::generate(&seed, cfg.chain_length(), pc.id, valid_from, cfg.slot_us, cfg.checkpoint_stride)
        .expect("sender config yields a non-empty chain");
    (pc, secret, chain)
}

impl SenderState {
    /// A sender holding the pseudonym valid at `now`, with a uniformly
    /// random phase.
    pub fn new(cfg: SenderConfig, node_id: u32, now: Micros, mut rng: ChaCha8Rng) -> Self {
        let phase = rng.gen_range(0..cfg.slot_us - 1);
        let (from, _) = cfg.lifetime_at(now);
        let (pc, secret, chain) = fresh_credentials(&mut rng, &cfg, from);
        Self {
            cfg,
            node_id,
            pc,
            secret,
            chain,
            phase,
            verified: Vec::with_capacity(cfg.alpha + 1),
            rng,
            signer: SimulatedSignatures,
        }
    }

    pub fn node_id(&self) -> u32 {
        self.node_id
    }

    pub fn active_pc(&self) -> &PseudonymCertificate {
        &self.pc
    }

    pub fn chain(&self) -> &TeslaChain {
        &self.chain
    }

    pub fn phase(&self) -> Micros {
        self.phase
    }

    pub fn verified(&self) -> &[(Digest, Micros)] {
        &self.verified
    }

    /// First broadcast time at or after `t`, skipping the first slot of each
    /// pseudonym lifetime (it has no key to disclose).
    pub fn next_tx_at_or_after(&self, t: Micros) -> Micros {
        let slot_us = self.cfg.slot_us;
        let rel = t - self.cfg.pc_epoch - self.phase;
        let mut slot = rel.div_euclid(slot_us) + i64::from(rel.rem_euclid(slot_us) != 0);
        let per_life = self.cfg.pc_lifetime / slot_us;
        if slot.rem_euclid(per_life) == 0 {
            slot += 1;
        }
        self.cfg.pc_epoch + slot * slot_us + self.phase
    }

    /// Broadcast time following one at `t`.
    pub fn next_tx_after(&self, t: Micros) -> Micros {
        self.next_tx_at_or_after(t + 1)
    }

    /// Switches to a fresh pseudonym and chain once the active one expired.
    pub fn pc_rotation(&mut self, now: Micros) -> bool {
        if now < self.pc.valid_to {
            return false;
        }
        let (from, _) = self.cfg.lifetime_at(now);
        let (pc, secret, chain) = fresh_credentials(&mut self.rng, &self.cfg, from);
        self.pc = pc;
        self.secret = secret;
        self.chain = chain;
        true
    }

    /// Offers a validation result for piggybacking. Only signature-verified
    /// beacons are shared.
    pub fn record_verified(&mut self, digest: Digest, beacon_timestamp: Micros, kind: ValidationKind) -> bool {
        if kind != ValidationKind::SignatureVerified || self.cfg.alpha == 0 {
            return false;
        }
        if self.verified.iter().any(|(d, _)| *d == digest) {
            return false;
        }
        let pos = self.verified.partition_point(|&(_, ts)| ts >= beacon_timestamp);
        self.verified.insert(pos, (digest, beacon_timestamp));
        self.verified.truncate(self.cfg.alpha);
        true
    }

    pub fn build_beacon(&mut self, now: Micros, status: VehicleStatus) -> Result<BeaconMessage, SendError> {
        self.pc_rotation(now);
        let slot: SlotIndex = self.chain.slot_index(now)?;
        if slot == 0 {
            return Err(SendError::FirstSlot);
        }
        let disclosed_key = self.chain.key_at(slot - 1)?;
        let mac_key = self.chain.mac_key_at(slot)?;
        let mut beacon = SignedBeacon {
            status,
            timestamp: now,
            disclosed_key,
            piggyback: self.verified.iter().map(|&(d, _)| d).collect(),
            pc: self.pc,
            signature: crate::crypto::SignatureToken {
                signer: self.pc.id,
                valid: false,
                bytes: Vec::new(),
            },
        };
        beacon.signature = self.signer.sign(self.pc.id, &self.secret, &signing_bytes(&beacon));
        let mac = mac(&mac_key, &encode_beacon(&beacon));
        Ok(BeaconMessage { beacon, mac })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryStrategy {
    /// A new fabricated pseudonym on every beacon.
    FreshFakePc,
    /// An overheard legitimate pseudonym attached to a fabricated beacon.
    ReplayValidPc,
}

impl AdversaryStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            AdversaryStrategy::FreshFakePc => "fresh_fake_pc",
            AdversaryStrategy::ReplayValidPc => "replay_valid_pc",
        }
    }
}

impl std::str::FromStr for AdversaryStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "fresh_fake_pc" => Ok(AdversaryStrategy::FreshFakePc),
            "replay_valid_pc" => Ok(AdversaryStrategy::ReplayValidPc),
            _ => Err(format!("unknown adversary strategy {s:?}")),
        }
    }
}

/// A flooding node emitting fictitious beacons with garbage signatures.
#[derive(Debug)]
pub struct AdversaryState {
    cfg: SenderConfig,
    rng: ChaCha8Rng,
    overheard: Option<(PseudonymCertificate, Key)>,
}

impl AdversaryState {
    pub fn new(cfg: SenderConfig, rng: ChaCha8Rng) -> Self {
        Self { cfg, rng, overheard: None }
    }

    /// Remembers a legitimate pseudonym (and a key it disclosed) for replay.
    pub fn overhear(&mut self, pc: PseudonymCertificate, disclosed: Key) {
        self.overheard = Some((pc, disclosed));
    }

    pub fn adversary_build(&mut self, now: Micros, strategy: AdversaryStrategy, status: VehicleStatus) -> BeaconMessage {
        let rng = &mut self.rng;
        let (pc, disclosed_key) = match (strategy, self.overheard) {
            (AdversaryStrategy::ReplayValidPc, Some((pc, key))) => (pc, key),
            _ => {
                let (from, to) = self.cfg.lifetime_at(now);
                let pc = PseudonymCertificate {
                    id: rng.gen::<PcId>(),
                    valid_from: from,
                    valid_to: to,
                    public_key: Key(rng.gen()),
                };
                (pc, Key(rng.gen()))
            }
        };
        let piggyback = (0..self.cfg.alpha).map(|_| Digest(rng.gen())).collect();
        let beacon = SignedBeacon {
            status,
            timestamp: now,
            disclosed_key,
            piggyback,
            pc,
            signature: SimulatedSignatures::forged(pc.id, rng.gen::<[u8; HASH_LEN]>().to_vec()),
        };
        BeaconMessage {
            beacon,
            mac: Digest(rng.gen()),
        }
    }
}
