//! Size- and cost-emulating stand-ins for production post-quantum KEMs.
//!
//! A mock KEM moves exactly as many bytes as the profile it emulates and
//! spins for the configured encapsulation cost, but its secret is only a
//! keyed hash. The first 32 ciphertext bytes carry the encapsulation seed so
//! the holder of the secret key can recompute the same value.

use std::time::{Duration, Instant};

use super::stream::{sha256, HashStream};
use super::{KemError, KemParams, KeyPair, SharedSecret};
use crate::suite::Integ;

pub const MOCK_SECRET_KEY_LEN: usize = 32;
/// Smallest ciphertext able to carry the encapsulation seed.
pub const MIN_MOCK_CIPHERTEXT_LEN: usize = 32;

#[derive(Debug, Clone)]
pub struct MockKem {
    name: String,
    params: KemParams,
}

impl MockKem {
    pub fn new(name: &str, params: KemParams) -> Result<Self, KemError> {
        params.validate()?;
        if params.ciphertext_len < MIN_MOCK_CIPHERTEXT_LEN {
            return Err(KemError::InvalidParams(format!(
                "{name}: mock ciphertext must be at least {MIN_MOCK_CIPHERTEXT_LEN} bytes"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            params,
        })
    }

    pub fn kem_params(&self) -> KemParams {
        self.params
    }

    fn public_from_secret(&self, sk: &[u8]) -> Vec<u8> {
        HashStream::labelled(sk, b"mock/pk").take_vec(self.params.public_key_len)
    }

    fn secret(&self, pk: &[u8], seed: &[u8]) -> SharedSecret {
        let want = self.params.shared_secret_len;
        let mut out = Vec::with_capacity(want);
        let mut counter = 0u32;
        while out.len() < want {
            let block = Integ::Sha256.prf(
                self.name.as_bytes(),
                &[pk, seed, &counter.to_be_bytes()],
            );
            out.extend_from_slice(&block);
            counter += 1;
        }
        out.truncate(want);
        SharedSecret::new(out)
    }

    fn burn(&self) {
        if self.params.encaps_cost_us == 0 {
            return;
        }
        let until = Instant::now() + Duration::from_micros(self.params.encaps_cost_us);
        while Instant::now() < until {
            std::hint::spin_loop();
        }
    }

    pub fn keygen(&self, seed: &[u8; 32]) -> KeyPair {
        let secret_key = sha256(&[seed, b"mock/sk", self.name.as_bytes()]).to_vec();
        KeyPair {
            public_key: self.public_from_secret(&secret_key),
            secret_key,
        }
    }

    pub fn encapsulate(
        &self,
        pk: &[u8],
        seed: &[u8; 32],
    ) -> Result<(Vec<u8>, SharedSecret), KemError> {
        if pk.len() != self.params.public_key_len {
            return Err(KemError::MalformedPublicKey {
                expected: self.params.public_key_len,
                actual: pk.len(),
            });
        }
        self.burn();
        let mut ct = seed.to_vec();
        ct.extend(
            HashStream::labelled(seed, b"mock/ct")
                .take_vec(self.params.ciphertext_len - MIN_MOCK_CIPHERTEXT_LEN),
        );
        Ok((ct, self.secret(pk, seed)))
    }

    pub fn decapsulate(&self, sk: &[u8], ct: &[u8]) -> Result<SharedSecret, KemError> {
        if sk.len() != MOCK_SECRET_KEY_LEN {
            return Err(KemError::MalformedSecretKey {
                expected: MOCK_SECRET_KEY_LEN,
                actual: sk.len(),
            });
        }
        if ct.len() != self.params.ciphertext_len {
            return Err(KemError::MalformedCiphertext {
                expected: self.params.ciphertext_len,
                actual: ct.len(),
            });
        }
        let pk = self.public_from_secret(sk);
        Ok(self.secret(&pk, &ct[..MIN_MOCK_CIPHERTEXT_LEN]))
    }
}
