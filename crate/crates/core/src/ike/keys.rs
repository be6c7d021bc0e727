//! Hybrid key combining and the tunnel key schedule.
//!
//! ```text
//! K_0 = PRF(Ni ‖ Nr, g^xy)
//! K_i = PRF(K_{i-1}, s_i ‖ Ni ‖ Nr)          one step per additional exchange
//! T_1 = PRF(K_n, Ni ‖ Nr ‖ 0x01)
//! T_k = PRF(K_n, T_{k-1} ‖ Ni ‖ Nr ‖ k)
//! T_1 ‖ T_2 ‖ ... = SK_d ‖ SK_ai ‖ SK_ar ‖ SK_ei ‖ SK_er
//! ```

use std::fmt;

use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use crate::kem::SharedSecret;
use crate::suite::{Encr, Integ};

pub const SK_D_LEN: usize = 32;

/// `K_0 = PRF(key = Ni ‖ Nr, data = classical DH secret)`.
pub fn initial_key(prf: Integ, ni: &[u8], nr: &[u8], dh_secret: &SharedSecret) -> Vec<u8> {
    let mut key = Vec::with_capacity(ni.len() + nr.len());
    key.extend_from_slice(ni);
    key.extend_from_slice(nr);
    prf.prf(&key, &[dh_secret.as_bytes()])
}

/// `K_i = PRF(key = K_{i-1}, data = round_secret ‖ Ni ‖ Nr)`.
pub fn combine_keys(
    prf: Integ,
    chain_key: &[u8],
    round_secret: &SharedSecret,
    ni: &[u8],
    nr: &[u8],
) -> Vec<u8> {
    prf.prf(chain_key, &[round_secret.as_bytes(), ni, nr])
}

/// Whole chain from the classical secret through every round secret.
pub fn final_key(
    prf: Integ,
    ni: &[u8],
    nr: &[u8],
    dh_secret: &SharedSecret,
    round_secrets: &[SharedSecret],
) -> Vec<u8> {
    round_secrets
        .iter()
        .fold(initial_key(prf, ni, nr, dh_secret), |k, s| {
            combine_keys(prf, &k, s, ni, nr)
        })
}

/// Directional tunnel keys. `*i` keys protect initiator-to-responder
/// traffic, `*r` keys the reverse direction.
#[derive(Clone, PartialEq, Eq)]
pub struct KeySchedule {
    pub sk_d: Vec<u8>,
    pub sk_ai: Vec<u8>,
    pub sk_ar: Vec<u8>,
    pub sk_ei: Vec<u8>,
    pub sk_er: Vec<u8>,
}

impl KeySchedule {
    /// First 8 bytes of SHA-256 over all keys, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for k in [&self.sk_d, &self.sk_ai, &self.sk_ar, &self.sk_ei, &self.sk_er] {
            h.update(k);
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn total_len(&self) -> usize {
        self.sk_d.len() + self.sk_ai.len() + self.sk_ar.len() + self.sk_ei.len() + self.sk_er.len()
    }
}

impl fmt::Debug for KeySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeySchedule({})", self.fingerprint())
    }
}

/// Iterated PRF expansion split into the five tunnel keys.
pub fn derive_key_schedule(
    final_key: &[u8],
    ni: &[u8],
    nr: &[u8],
    prf: Integ,
    encr: Encr,
) -> KeySchedule {
    let ek = encr.key_len();
    let ak = prf.output_len();
    let need = SK_D_LEN + 2 * ak + 2 * ek;
    let mut stream = Vec::with_capacity(need + prf.output_len());
    let mut prev: Vec<u8> = Vec::new();
    let mut counter: u8 = 1;
    while stream.len() < need {
        prev = prf.prf(final_key, &[&prev, ni, nr, &[counter]]);
        stream.extend_from_slice(&prev);
        counter += 1;
    }
    let mut at = 0;
    let mut take = |n: usize| {
        let v = stream[at..at + n].to_vec();
        at += n;
        v
    };
    KeySchedule {
        sk_d: take(SK_D_LEN),
        sk_ai: take(ak),
        sk_ar: take(ak),
        sk_ei: take(ek),
        sk_er: take(ek),
    }
}

/// `PRF(psk, transcript_hash)`.
pub fn auth_mac(prf: Integ, psk: &[u8], transcript_hash: &[u8]) -> Vec<u8> {
    prf.prf(psk, &[transcript_hash])
}

pub fn verify_auth(prf: Integ, psk: &[u8], transcript_hash: &[u8], received: &[u8]) -> bool {
    let expected = auth_mac(prf, psk, transcript_hash);
    expected.len() == received.len() && bool::from(expected.ct_eq(received))
}

/// Running hash over every message exchanged: `h ← SHA-256(h ‖ message)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    hash: [u8; 32],
}

impl Transcript {
    pub fn absorb(&mut self, message: &[u8]) {
        let mut h = Sha256::new();
        h.update(self.hash);
        h.update(message);
        self.hash = h.finalize().into();
    }

    pub fn hash(&self) -> &[u8; 32] {
        &self.hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unhex(s: &str) -> Vec<u8> {
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    // Expected values below were produced with Python's `hmac`/`hashlib`
    // on the documented byte layouts.

    #[test]
    fn combine_zero_inputs_matches_reference_hmac() {
        let zero = [0u8; 32];
        let k = combine_keys(
            Integ::Sha256,
            &zero,
            &SharedSecret::new(zero.to_vec()),
            &zero,
            &zero,
        );
        assert_eq!(
            k,
            unhex("11699a50961f440697456b210b9987497685c9248b8177dff4d875434878de3f")
        );
    }

    #[test]
    fn initial_key_matches_reference_hmac() {
        let k = initial_key(
            Integ::Sha256,
            &[0; 32],
            &[0; 32],
            &SharedSecret::new(vec![0; 32]),
        );
        assert_eq!(
            k,
            unhex("33ad0a1c607ec03b09e6cd9893680ce210adf300aa1f2660e1b22e10f170f92a")
        );
    }

    #[test]
    fn empty_chain_is_initial_key() {
        let dh = SharedSecret::new(vec![9; 32]);
        for prf in Integ::ALL {
            assert_eq!(
                final_key(prf, &[1; 32], &[2; 32], &dh, &[]),
                initial_key(prf, &[1; 32], &[2; 32], &dh)
            );
        }
    }

    #[test]
    fn schedule_matches_reference_expansion() {
        let ks = derive_key_schedule(&[0; 32], &[1; 32], &[1; 32], Integ::Sha256, Encr::Aes128);
        assert_eq!(
            ks.sk_d,
            unhex("b39247c1428685abd94338a4b818b0206c853be07e7fe2ced41307791c828c1f")
        );
        assert_eq!(
            ks.sk_ai,
            unhex("d44354163eab20b64701ef66ac46be9d4092444af9fe34c5706d5e80c02f5000")
        );
        assert_eq!(
            ks.sk_ar,
            unhex("f999af9b3df27b02efec54c58b8e864a61c81b87477820eeebda9481c5ecfefb")
        );
        assert_eq!(ks.sk_ei, unhex("12f52eaa0dd0fd6f3fe06a65805d4faf"));
        assert_eq!(ks.sk_er, unhex("fb2b3489a5b06fded46cdfb88b2208c6"));
    }

    #[test]
    fn schedule_lengths_follow_suite() {
        for encr in Encr::ALL {
            for prf in Integ::ALL {
                let ks = derive_key_schedule(&[3; 48], &[1; 32], &[2; 32], prf, encr);
                assert_eq!(ks.sk_d.len(), 32);
                assert_eq!(ks.sk_ei.len(), encr.key_len());
                assert_eq!(ks.sk_er.len(), encr.key_len());
                assert_eq!(ks.sk_ai.len(), prf.output_len());
                assert_eq!(ks.sk_ar.len(), prf.output_len());
                let keys = [&ks.sk_d, &ks.sk_ai, &ks.sk_ar, &ks.sk_ei, &ks.sk_er];
                for i in 0..keys.len() {
                    for j in i + 1..keys.len() {
                        assert_ne!(keys[i], keys[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn auth_verification() {
        let mac = auth_mac(Integ::Sha384, b"psk", &[5; 32]);
        assert!(verify_auth(Integ::Sha384, b"psk", &[5; 32], &mac));
        assert!(!verify_auth(Integ::Sha384, b"other", &[5; 32], &mac));
        assert!(!verify_auth(Integ::Sha384, b"psk", &[5; 32], &mac[1..]));
    }
}
