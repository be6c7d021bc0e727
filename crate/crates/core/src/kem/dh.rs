//! Finite-field Diffie-Hellman over safe-prime groups.

use std::sync::OnceLock;

use num_bigint::BigUint;

use super::stream::{sha256, HashStream};
use super::{KemError, KemParams, KeyPair, SharedSecret};

const MODP_1024: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE65381FFFFFFFFFFFFFFFF";

const MODP_2048: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05\
98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB\
9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718\
3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// A safe-prime group `(p, g)` identified by its IKE group number.
#[derive(Debug, Clone)]
pub struct DhGroup {
    pub id: u16,
    pub name: &'static str,
    p: BigUint,
    g: BigUint,
    len: usize,
}

/// IKE group number of the 2048-bit MODP group, the default classical KE.
pub const MODP_2048_ID: u16 = 14;
/// Group 0 is the textbook `p = 23, g = 5` group; test use only.
pub const TOY_GROUP_ID: u16 = 0;

fn groups() -> &'static [DhGroup] {
    static GROUPS: OnceLock<Vec<DhGroup>> = OnceLock::new();
    GROUPS.get_or_init(|| {
        let hex = |s: &str| BigUint::parse_bytes(s.as_bytes(), 16).expect("valid group prime");
        vec![
            DhGroup::new(TOY_GROUP_ID, "toy-23", BigUint::from(23u32), BigUint::from(5u32)),
            DhGroup::new(2, "modp-1024", hex(MODP_1024), BigUint::from(2u32)),
            DhGroup::new(MODP_2048_ID, "modp-2048", hex(MODP_2048), BigUint::from(2u32)),
        ]
    })
}

impl DhGroup {
    fn new(id: u16, name: &'static str, p: BigUint, g: BigUint) -> Self {
        let len = (p.bits() as usize).div_ceil(8);
        Self { id, name, p, g, len }
    }

    pub fn by_id(id: u16) -> Option<&'static DhGroup> {
        groups().iter().find(|g| g.id == id)
    }

    pub fn all() -> &'static [DhGroup] {
        groups()
    }

    /// Width of an encoded public value: the byte length of `p`.
    pub fn element_len(&self) -> usize {
        self.len
    }

    /// Bytes of exponent drawn for a private key.
    pub fn exponent_len(&self) -> usize {
        self.len.min(32)
    }

    fn encode(&self, v: &BigUint) -> Vec<u8> {
        let raw = v.to_bytes_be();
        let mut out = vec![0u8; self.len - raw.len()];
        out.extend_from_slice(&raw);
        out
    }

    /// Parse a peer value, rejecting anything outside `[2, p-2]`.
    pub fn parse_public(&self, bytes: &[u8]) -> Result<BigUint, KemError> {
        if bytes.len() != self.len {
            return Err(KemError::InvalidPublicValue);
        }
        let v = BigUint::from_bytes_be(bytes);
        let two = BigUint::from(2u32);
        if v < two || v > &self.p - &two {
            return Err(KemError::InvalidPublicValue);
        }
        Ok(v)
    }
}

/// Private exponent in `[2, p-2]`.
#[derive(Clone)]
pub struct DhPrivate(BigUint);

impl DhPrivate {
    pub fn from_exponent(x: u64) -> Self {
        Self(BigUint::from(x))
    }

    fn to_bytes(&self, group: &DhGroup) -> Vec<u8> {
        let raw = self.0.to_bytes_be();
        let width = group.exponent_len().max(raw.len());
        let mut out = vec![0u8; width - raw.len()];
        out.extend_from_slice(&raw);
        out
    }
}

impl std::fmt::Debug for DhPrivate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DhPrivate(..)")
    }
}

/// Private exponent and encoded public value `g^x mod p`.
pub fn dh_keygen(group: &DhGroup, seed: &[u8; 32]) -> (DhPrivate, Vec<u8>) {
    let raw = HashStream::labelled(seed, b"dh/exponent").take_vec(group.exponent_len());
    let span = &group.p - BigUint::from(3u32);
    let x = BigUint::from(2u32) + BigUint::from_bytes_be(&raw) % span;
    let private = DhPrivate(x);
    let public = dh_public(group, &private);
    (private, public)
}

pub fn dh_public(group: &DhGroup, private: &DhPrivate) -> Vec<u8> {
    group.encode(&group.g.modpow(&private.0, &group.p))
}

/// `SHA-256` of the fixed-width encoding of `peer^x mod p`.
pub fn dh_shared(
    group: &DhGroup,
    private: &DhPrivate,
    peer_public: &[u8],
) -> Result<SharedSecret, KemError> {
    let peer = group.parse_public(peer_public)?;
    let z = peer.modpow(&private.0, &group.p);
    Ok(SharedSecret::new(sha256(&[&group.encode(&z)]).to_vec()))
}

/// Diffie-Hellman phrased as a KEM: the ciphertext is the encapsulator's
/// ephemeral public value.
#[derive(Debug, Clone)]
pub struct DhKem {
    group: &'static DhGroup,
}

impl DhKem {
    pub fn new(group: &'static DhGroup) -> Self {
        Self { group }
    }

    pub fn group(&self) -> &'static DhGroup {
        self.group
    }

    pub fn kem_params(&self) -> KemParams {
        KemParams {
            public_key_len: self.group.element_len(),
            ciphertext_len: self.group.element_len(),
            shared_secret_len: 32,
            encaps_cost_us: 0,
        }
    }

    pub fn keygen(&self, seed: &[u8; 32]) -> KeyPair {
        let (x, public_key) = dh_keygen(self.group, seed);
        KeyPair {
            public_key,
            secret_key: x.to_bytes(self.group),
        }
    }

    pub fn encapsulate(
        &self,
        pk: &[u8],
        seed: &[u8; 32],
    ) -> Result<(Vec<u8>, SharedSecret), KemError> {
        if pk.len() != self.group.element_len() {
            return Err(KemError::MalformedPublicKey {
                expected: self.group.element_len(),
                actual: pk.len(),
            });
        }
        let (y, ct) = dh_keygen(self.group, seed);
        let ss = dh_shared(self.group, &y, pk)?;
        Ok((ct, ss))
    }

    pub fn decapsulate(&self, sk: &[u8], ct: &[u8]) -> Result<SharedSecret, KemError> {
        if ct.len() != self.group.element_len() {
            return Err(KemError::MalformedCiphertext {
                expected: self.group.element_len(),
                actual: ct.len(),
            });
        }
        let x = DhPrivate(BigUint::from_bytes_be(sk));
        dh_shared(self.group, &x, ct)
    }
}
