//! Hashing, MACs and the pluggable signature interface.
//!
//! All digests and keys are `HASH_LEN` octets: the leading bytes of a
//! SHA-256 output computed over a one-octet domain tag followed by the input.

use std::fmt;

use sha2::{Digest as _, Sha256};

/// Digest and key width in bits.
pub const HASH_BITS: usize = 80;
/// Digest and key width in octets.
pub const HASH_LEN: usize = HASH_BITS / 8;

const TAG_H: u8 = 0x01;
const TAG_H_PRIME: u8 = 0x02;
const TAG_MSG: u8 = 0x03;
const TAG_SIG: u8 = 0x04;

macro_rules! fixed_octets {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; HASH_LEN]);

        impl $name {
            pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
                &self.0
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                let arr: [u8; HASH_LEN] = bytes.try_into().ok()?;
                Some(Self(arr))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}(", stringify!($name))?;
                for b in self.0 {
                    write!(f, "{b:02x}")?;
                }
                write!(f, ")")
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                for b in self.0 {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
        }
    };
}

fixed_octets!(Digest);
fixed_octets!(Key);

fn tagged(tag: u8, parts: &[&[u8]]) -> [u8; HASH_LEN] {
    let mut h = Sha256::new();
    h.update([tag]);
    for p in parts {
        h.update(p);
    }
    let full = h.finalize();
    let mut out = [0u8; HASH_LEN];
    out.copy_from_slice(&full[..HASH_LEN]);
    out
}

/// The chain hash `H`.
pub fn hash_h(data: &[u8]) -> Digest {
    Digest(tagged(TAG_H, &[data]))
}

/// One step down a key chain: `K_i = H(K_{i+1})`.
pub fn hash_key(k: &Key) -> Key {
    Key(tagged(TAG_H, &[&k.0]))
}

/// Derives a MAC key from a chain key: `K'_i = H'(K_i)`.
pub fn hash_h_prime(k: &Key) -> Key {
    Key(tagged(TAG_H_PRIME, &[&k.0]))
}

/// `MAC_K(m) = H(K || m)`.
pub fn mac(k: &Key, data: &[u8]) -> Digest {
    Digest(tagged(TAG_H, &[&k.0, data]))
}

pub fn verify_mac(k: &Key, data: &[u8], tag: &Digest) -> bool {
    mac(k, data) == *tag
}

/// Identifier of an encoded beacon message, as carried in piggyback lists.
pub fn msg_digest(encoded_message: &[u8]) -> Digest {
    Digest(tagged(TAG_MSG, &[encoded_message]))
}

/// Opaque pseudonym identifier.
pub type PcId = u64;

/// Secret half of a simulated pseudonym key pair.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PcSecret(pub [u8; HASH_LEN]);

impl fmt::Debug for PcSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PcSecret(..)")
    }
}

/// Public verification handle carried inside a pseudonym certificate.
pub type PublicKeyHandle = Key;

impl PcSecret {
    pub fn public_handle(&self) -> PublicKeyHandle {
        Key(tagged(TAG_SIG, &[b"pub", &self.0]))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignatureToken {
    pub signer: PcId,
    /// Set by honest signers; adversarial tokens carry `false`.
    pub valid: bool,
    pub bytes: Vec<u8>,
}

/// A signature scheme bound to pseudonym certificates.
///
/// Verification cost is never charged here: the simulator bills a fixed CPU
/// time per verification.
pub trait SignatureScheme {
    fn sign(&self, signer: PcId, secret: &PcSecret, data: &[u8]) -> SignatureToken;
    fn verify(&self, signer: PcId, public: &PublicKeyHandle, token: &SignatureToken, data: &[u8]) -> bool;
}

/// Simulated signatures: a keyed tag over the signed bytes plus a validity
/// flag. A token verifies iff the flag is set, the signer matches the
/// certificate and the tag recomputes over `data`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimulatedSignatures;

impl SimulatedSignatures {
    fn tag(public: &PublicKeyHandle, data: &[u8]) -> [u8; HASH_LEN] {
        tagged(TAG_SIG, &[&public.0, data])
    }

    /// A token that never verifies, in the shape adversaries emit.
    pub fn forged(signer: PcId, bytes: Vec<u8>) -> SignatureToken {
        SignatureToken {
            signer,
            valid: false,
            bytes,
        }
    }
}

impl SignatureScheme for SimulatedSignatures {
    fn sign(&self, signer: PcId, secret: &PcSecret, data: &[u8]) -> SignatureToken {
        SignatureToken {
            signer,
            valid: true,
            bytes: Self::tag(&secret.public_handle(), data).to_vec(),
        }
    }

    fn verify(&self, signer: PcId, public: &PublicKeyHandle, token: &SignatureToken, data: &[u8]) -> bool {
        token.valid && token.signer == signer && token.bytes == Self::tag(public, data)
    }
}
