//! Beacon structures and their canonical wire encoding.
//!
//! Layout (all integers little-endian, times in microseconds):
//!
//! ```text
//! version:u8 = 0x01
//! status:    x:f64 y:f64 speed:f64 heading:f64
//! timestamp: i64
//! disclosed: [u8; HASH_LEN]
//! piggyback: count:u8, count * [u8; HASH_LEN]
//! pc:        id:u64 valid_from:i64 valid_to:i64 public_key:[u8; HASH_LEN]
//! signature: signer:u64 valid:u8 len:u16 bytes:[u8; len]
//! mac:       [u8; HASH_LEN]            (beacon messages only)
//! ```
//!
//! The signature covers everything before the signature field; the MAC
//! covers the whole signed beacon.

use thiserror::Error;

use crate::crypto::{msg_digest, Digest, Key, PcId, PublicKeyHandle, SignatureToken, HASH_LEN};
use crate::tesla::{slot_of, ChainError, SlotIndex};
use crate::Micros;

pub const FORMAT_VERSION: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("input truncated at offset {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("unsupported format version {0:#04x}")]
    Version(u8),
    #[error("non-finite status field")]
    NonFinite,
    #[error("invalid boolean octet {0:#04x}")]
    Bool(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct VehicleStatus {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PseudonymCertificate {
    pub id: PcId,
    pub valid_from: Micros,
    pub valid_to: Micros,
    pub public_key: PublicKeyHandle,
}

impl PseudonymCertificate {
    pub fn is_valid_at(&self, t: Micros) -> bool {
        self.valid_from <= t && t < self.valid_to
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignedBeacon {
    pub status: VehicleStatus,
    pub timestamp: Micros,
    /// `K_{i-1}` for a beacon sent in slot `i`.
    pub disclosed_key: Key,
    pub piggyback: Vec<Digest>,
    pub pc: PseudonymCertificate,
    pub signature: SignatureToken,
}

impl SignedBeacon {
    /// Slot of this beacon's timestamp within its pseudonym lifetime.
    pub fn slot(&self, slot_us: Micros) -> Result<SlotIndex, ChainError> {
        // Corrupted certificates can carry any validity bounds.
        let span = self.pc.valid_to.checked_sub(self.pc.valid_from).unwrap_or(0).max(0);
        let length = u32::try_from(span / slot_us).unwrap_or(0);
        slot_of(self.timestamp, self.pc.valid_from, slot_us, length)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeaconMessage {
    pub beacon: SignedBeacon,
    pub mac: Digest,
}

fn put_status(out: &mut Vec<u8>, s: &VehicleStatus) {
    for v in [s.x, s.y, s.speed, s.heading] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Bytes covered by the beacon signature.
pub fn signing_bytes(b: &SignedBeacon) -> Vec<u8> {
    let mut out = Vec::with_capacity(96 + b.piggyback.len() * HASH_LEN);
    write_unsigned(&mut out, b);
    out
}

fn write_unsigned(out: &mut Vec<u8>, b: &SignedBeacon) {
    assert!(b.piggyback.len() <= u8::MAX as usize, "piggyback list too long");
    out.push(FORMAT_VERSION);
    put_status(out, &b.status);
    out.extend_from_slice(&b.timestamp.to_le_bytes());
    out.extend_from_slice(&b.disclosed_key.0);
    out.push(b.piggyback.len() as u8);
    for d in &b.piggyback {
        out.extend_from_slice(&d.0);
    }
    out.extend_from_slice(&b.pc.id.to_le_bytes());
    out.extend_from_slice(&b.pc.valid_from.to_le_bytes());
    out.extend_from_slice(&b.pc.valid_to.to_le_bytes());
    out.extend_from_slice(&b.pc.public_key.0);
}

fn write_beacon(out: &mut Vec<u8>, b: &SignedBeacon) {
    write_unsigned(out, b);
    let sig = &b.signature;
    assert!(sig.bytes.len() <= u16::MAX as usize, "signature too long");
    out.extend_from_slice(&sig.signer.to_le_bytes());
    out.push(u8::from(sig.valid));
    out.extend_from_slice(&(sig.bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(&sig.bytes);
}

pub fn encode_beacon(b: &SignedBeacon) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + b.piggyback.len() * HASH_LEN);
    write_beacon(&mut out, b);
    out
}

pub fn encode_message(m: &BeaconMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(140 + m.beacon.piggyback.len() * HASH_LEN);
    write_beacon(&mut out, &m.beacon);
    out.extend_from_slice(&m.mac.0);
    out
}

/// Identifier `H(M)` of a beacon message.
pub fn beacon_hash(m: &BeaconMessage) -> Digest {
    msg_digest(&encode_message(m))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(DecodeError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, DecodeError> {
        let v = f64::from_le_bytes(self.array()?);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DecodeError::NonFinite)
        }
    }

    fn key(&mut self) -> Result<[u8; HASH_LEN], DecodeError> {
        self.array()
    }

    fn finish(&self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

fn read_beacon(r: &mut Reader<'_>) -> Result<SignedBeacon, DecodeError> {
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(DecodeError::Version(version));
    }
    let status = VehicleStatus {
        x: r.f64()?,
        y: r.f64()?,
        speed: r.f64()?,
        heading: r.f64()?,
    };
    let timestamp = r.i64()?;
    let disclosed_key = Key(r.key()?);
    let count = r.u8()? as usize;
    let mut piggyback = Vec::with_capacity(count);
    for _ in 0..count {
        piggyback.push(Digest(r.key()?));
    }
    let pc = PseudonymCertificate {
        id: r.u64()?,
        valid_from: r.i64()?,
        valid_to: r.i64()?,
        public_key: Key(r.key()?),
    };
    let signer = r.u64()?;
    let valid = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(DecodeError::Bool(b)),
    };
    let len = r.u16()? as usize;
    let bytes = r.take(len)?.to_vec();
    Ok(SignedBeacon {
        status,
        timestamp,
        disclosed_key,
        piggyback,
        pc,
        signature: SignatureToken { signer, valid, bytes },
    })
}

pub fn decode_beacon(bytes: &[u8]) -> Result<SignedBeacon, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let b = read_beacon(&mut r)?;
    r.finish()?;
    Ok(b)
}

pub fn decode_message(bytes: &[u8]) -> Result<BeaconMessage, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let beacon = read_beacon(&mut r)?;
    let mac = Digest(r.key()?);
    r.finish()?;
    Ok(BeaconMessage { beacon, mac })
}
