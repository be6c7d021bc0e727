//! ESP-style packet protection (AES-CTR, then truncated HMAC).
//!
//! ```text
//! spi:be32 ‖ seq:be32 ‖ iv:16 ‖ ciphertext ‖ icv:16
//! iv  = prefix:8 ‖ seq:be32 ‖ block counter:be32 (starts at 0)
//! icv = HMAC(sk_a, spi ‖ seq ‖ iv ‖ ciphertext)[..16]
//! ```

pub mod replay;

use std::time::Duration;

use crate::clock::thread_cpu_ns;

use aes::{Aes128, Aes192, Aes256};
use ctr::cipher::consts::U16;
use ctr::cipher::{
    BlockCipher, BlockEncryptMut, BlockSizeUser, InnerIvInit, KeyInit, StreamCipher,
    StreamCipherCoreWrapper,
};
use ctr::CtrCore;
use hmac::{Hmac, Mac};
use sha2::{Sha256, Sha384, Sha512};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::ike::{KeySchedule, Role};
use crate::kem::stream::derive_seed;
use crate::suite::{Encr, Integ};
pub use replay::{ReplayWindow, REPLAY_WINDOW_SIZE};

pub const ESP_HEADER_LEN: usize = 8;
pub const IV_LEN: usize = 16;
pub const ICV_LEN: usize = 16;
/// Fixed per-packet overhead: header, IV and ICV.
pub const ESP_OVERHEAD: usize = ESP_HEADER_LEN + IV_LEN + ICV_LEN;
pub const MAX_PAYLOAD: usize = 65_535;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EspError {
    #[error("SequenceExhausted: 32-bit sequence space used up")]
    SequenceExhausted,
    #[error("IcvMismatch")]
    IcvMismatch,
    #[error("ReplayDetected: sequence {0}")]
    ReplayDetected(u64),
    #[error("UnknownSpi: {0:#010x}")]
    UnknownSpi(u32),
    #[error("packet of {0} bytes is shorter than the {ESP_OVERHEAD}-byte minimum")]
    Truncated(usize),
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
    #[error("{what} key must be {expected} bytes, got {actual}")]
    InvalidKeyLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

fn ctr_stream<C>(key: &C, iv: &[u8; IV_LEN]) -> ctr::Ctr32BE<C>
where
    C: BlockEncryptMut + BlockCipher + BlockSizeUser<BlockSize = U16> + Clone,
{
    StreamCipherCoreWrapper::from_core(CtrCore::inner_iv_init(key.clone(), iv.into()))
}

#[derive(Clone)]
enum CipherKey {
    Aes128(Aes128),
    Aes192(Aes192),
    Aes256(Aes256),
}

impl CipherKey {
    fn new(encr: Encr, key: &[u8]) -> Self {
        match encr {
            Encr::Aes128 => CipherKey::Aes128(Aes128::new_from_slice(key).expect("length checked")),
            Encr::Aes192 => CipherKey::Aes192(Aes192::new_from_slice(key).expect("length checked")),
            Encr::Aes256 => CipherKey::Aes256(Aes256::new_from_slice(key).expect("length checked")),
        }
    }

    fn apply(&self, iv: &[u8; IV_LEN], data: &mut [u8]) {
        match self {
            CipherKey::Aes128(k) => ctr_stream::<Aes128>(k, iv).apply_keystream(data),
            CipherKey::Aes192(k) => ctr_stream::<Aes192>(k, iv).apply_keystream(data),
            CipherKey::Aes256(k) => ctr_stream::<Aes256>(k, iv).apply_keystream(data),
        }
    }
}

#[derive(Clone)]
enum MacKey {
    Sha256(Hmac<Sha256>),
    Sha384(Hmac<Sha384>),
    Sha512(Hmac<Sha512>),
}

impl MacKey {
    fn new(integ: Integ, key: &[u8]) -> Self {
        match integ {
            Integ::Sha256 => MacKey::Sha256(<Hmac<Sha256> as Mac>::new_from_slice(key).expect("any length")),
            Integ::Sha384 => MacKey::Sha384(<Hmac<Sha384> as Mac>::new_from_slice(key).expect("any length")),
            Integ::Sha512 => MacKey::Sha512(<Hmac<Sha512> as Mac>::new_from_slice(key).expect("any length")),
        }
    }

    fn icv(&self, authenticated: &[u8]) -> [u8; ICV_LEN] {
        fn run<M: Mac + Clone>(m: &M, data: &[u8]) -> [u8; ICV_LEN] {
            let mut m = m.clone();
            m.update(data);
            m.finalize().into_bytes()[..ICV_LEN].try_into().unwrap()
        }
        match self {
            MacKey::Sha256(m) => run(m, authenticated),
            MacKey::Sha384(m) => run(m, authenticated),
            MacKey::Sha512(m) => run(m, authenticated),
        }
    }
}

/// One direction of the tunnel. The same type serves as the outbound SA on
/// the sender and the inbound SA on the receiver.
#[derive(Clone)]
pub struct SecurityAssociation {
    spi: u32,
    encr: Encr,
    integ: Integ,
    enc_key_len: usize,
    auth_key_len: usize,
    cipher: CipherKey,
    mac: MacKey,
    iv_prefix: [u8; 8],
    /// Last sequence number sent; the first packet carries 1.
    seq: u64,
    window: ReplayWindow,
}

impl std::fmt::Debug for SecurityAssociation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecurityAssociation")
            .field("spi", &format_args!("{:#010x}", self.spi))
            .field("encr", &self.encr)
            .field("integ", &self.integ)
            .field("seq", &self.seq)
            .field("window", &self.window)
            .finish_non_exhaustive()
    }
}

impl SecurityAssociation {
    pub fn new(
        spi: u32,
        encr: Encr,
        integ: Integ,
        enc_key: &[u8],
        auth_key: &[u8],
        iv_prefix: [u8; 8],
    ) -> Result<Self, EspError> {
        if enc_key.len() != encr.key_len() {
            return Err(EspError::InvalidKeyLength {
                what: "encryption",
                expected: encr.key_len(),
                actual: enc_key.len(),
            });
        }
        if auth_key.len() != integ.output_len() {
            return Err(EspError::InvalidKeyLength {
                what: "integrity",
                expected: integ.output_len(),
                actual: auth_key.len(),
            });
        }
        Ok(Self {
            spi,
            encr,
            integ,
            enc_key_len: enc_key.len(),
            auth_key_len: auth_key.len(),
            cipher: CipherKey::new(encr, enc_key),
            mac: MacKey::new(integ, auth_key),
            iv_prefix,
            seq: 0,
            window: ReplayWindow::new(),
        })
    }

    pub fn spi(&self) -> u32 {
        self.spi
    }

    pub fn suite(&self) -> (Encr, Integ) {
        (self.encr, self.integ)
    }

    /// Last sequence number used for sending.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn window(&self) -> &ReplayWindow {
        &self.window
    }

    /// Continue sending from `seq + 1`; used to exercise exhaustion.
    pub fn set_seq(&mut self, seq: u64) {
        self.seq = seq;
    }

    /// Bytes of state this SA holds: spi, counter, IV prefix, both keys
    /// and the replay window.
    pub fn state_bytes(&self) -> usize {
        4 + 8 + 8 + self.enc_key_len + self.auth_key_len + 16
    }

    fn iv(&self, seq: u32) -> [u8; IV_LEN] {
        let mut iv = [0u8; IV_LEN];
        iv[..8].copy_from_slice(&self.iv_prefix);
        iv[8..12].copy_from_slice(&seq.to_be_bytes());
        iv
    }

    /// Encrypts and authenticates one payload. The returned duration covers
    /// the cipher and MAC work only.
    pub fn protect(&mut self, plaintext: &[u8]) -> Result<(Vec<u8>, Duration), EspError> {
        if plaintext.len() > MAX_PAYLOAD {
            return Err(EspError::PayloadTooLarge(plaintext.len()));
        }
        let next = self.seq + 1;
        let Ok(seq) = u32::try_from(next) else {
            return Err(EspError::SequenceExhausted);
        };
        let iv = self.iv(seq);
        let mut wire = Vec::with_capacity(plaintext.len() + ESP_OVERHEAD);
        wire.extend_from_slice(&self.spi.to_be_bytes());
        wire.extend_from_slice(&seq.to_be_bytes());
        wire.extend_from_slice(&iv);
        wire.extend_from_slice(plaintext);

        // CPU time, so a preempted thread does not report a slow packet
        let start = thread_cpu_ns();
        self.cipher.apply(&iv, &mut wire[ESP_HEADER_LEN + IV_LEN..]);
        let icv = self.mac.icv(&wire);
        let elapsed = Duration::from_nanos(thread_cpu_ns() - start);

        wire.extend_from_slice(&icv);
        self.seq = next;
        Ok((wire, elapsed))
    }

    /// Verifies, replay-checks and decrypts one packet.
    pub fn unprotect(&mut self, wire: &[u8]) -> Result<Vec<u8>, EspError> {
        if wire.len() < ESP_OVERHEAD {
            return Err(EspError::Truncated(wire.len()));
        }
        let spi = u32::from_be_bytes(wire[..4].try_into().unwrap());
        if spi != self.spi {
            return Err(EspError::UnknownSpi(spi));
        }
        let seq = u64::from(u32::from_be_bytes(wire[4..8].try_into().unwrap()));
        if !self.window.check(seq) {
            return Err(EspError::ReplayDetected(seq));
        }
        let (body, icv) = wire.split_at(wire.len() - ICV_LEN);
        let expected = self.mac.icv(body);
        if !bool::from(expected.ct_eq(icv)) {
            return Err(EspError::IcvMismatch);
        }
        self.window.update(seq);
        let iv: [u8; IV_LEN] = body[ESP_HEADER_LEN..ESP_HEADER_LEN + IV_LEN].try_into().unwrap();
        let mut plaintext = body[ESP_HEADER_LEN + IV_LEN..].to_vec();
        self.cipher.apply(&iv, &mut plaintext);
        Ok(plaintext)
    }
}

/// SPI for one direction, derived from `sk_d` so both peers agree without
/// extra signalling. Never zero.
pub fn derive_spi(sk_d: &[u8], direction: &str) -> u32 {
    let h = derive_seed(sk_d, format!("esp/spi/{direction}").as_bytes());
    u32::from_be_bytes(h[..4].try_into().unwrap()).max(1)
}

/// Builds `(outbound, inbound)` SAs for `role` from the negotiated keys.
/// `sk_ei`/`sk_ai` protect initiator-to-responder traffic.
pub fn install_pair(
    schedule: &KeySchedule,
    encr: Encr,
    integ: Integ,
    role: Role,
    seed: &[u8; 32],
) -> Result<(SecurityAssociation, SecurityAssociation), EspError> {
    let prefix: [u8; 8] = derive_seed(seed, b"esp/iv-prefix")[..8].try_into().unwrap();
    let i2r = |prefix| {
        SecurityAssociation::new(
            derive_spi(&schedule.sk_d, "i2r"),
            encr,
            integ,
            &schedule.sk_ei,
            &schedule.sk_ai,
            prefix,
        )
    };
    let r2i = |prefix| {
        SecurityAssociation::new(
            derive_spi(&schedule.sk_d, "r2i"),
            encr,
            integ,
            &schedule.sk_er,
            &schedule.sk_ar,
            prefix,
        )
    };
    match role {
        Role::Initiator => Ok((i2r(prefix)?, r2i([0; 8])?)),
        Role::Responder => Ok((r2i(prefix)?, i2r([0; 8])?)),
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

    fn pair(encr: Encr, integ: Integ) -> (SecurityAssociation, SecurityAssociation) {
        let ek = vec![7u8; encr.key_len()];
        let ak = vec![9u8; integ.output_len()];
        let tx = SecurityAssociation::new(0x1234, encr, integ, &ek, &ak, [1; 8]).unwrap();
        let rx = SecurityAssociation::new(0x1234, encr, integ, &ek, &ak, [0; 8]).unwrap();
        (tx, rx)
    }

    // Reference produced by Python `cryptography` AES-CTR and `hmac` on the
    // layout in the module docs.
    #[test]
    fn known_answer() {
        let key: Vec<u8> = (0u8..16).collect();
        let mut sa = SecurityAssociation::new(
            0x0102_0304,
            Encr::Aes128,
            Integ::Sha256,
            &key,
            &[0xaa; 32],
            unhex("1112131415161718").try_into().unwrap(),
        )
        .unwrap();
        let (wire, _) = sa
            .protect(b"open fronthaul user-plane sample payload")
            .unwrap();
        assert_eq!(
            wire,
            unhex(
                "01020304000000011112131415161718000000010000000023a1e2a513b3584b\
                 6086fe898b1d22ef69bd62b076f6cd83c2c4c703c0e3d43490b2c37f7f2b8301\
                 f4b4446a3b86c8d7dcc9b485a711e7b7"
            )
        );
    }

    #[test]
    fn empty_payload_is_overhead_only() {
        let (mut tx, mut rx) = pair(Encr::Aes256, Integ::Sha512);
        let (wire, _) = tx.protect(&[]).unwrap();
        assert_eq!(wire.len(), 40);
        assert_eq!(rx.unprotect(&wire).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn round_trip_every_suite() {
        for encr in Encr::ALL {
            for integ in Integ::ALL {
                let (mut tx, mut rx) = pair(encr, integ);
                for len in [1, 15, 16, 17, 1200, MAX_PAYLOAD] {
                    let pt: Vec<u8> = (0..len).map(|i| (i * 31) as u8).collect();
                    let (wire, _) = tx.protect(&pt).unwrap();
                    assert_eq!(wire.len(), len + ESP_OVERHEAD);
                    assert_eq!(rx.unprotect(&wire).unwrap(), pt);
                }
            }
        }
    }

    #[test]
    fn duplicate_rejected() {
        let (mut tx, mut rx) = pair(Encr::Aes128, Integ::Sha256);
        let (wire, _) = tx.protect(b"x").unwrap();
        assert!(rx.unprotect(&wire).is_ok());
        assert_eq!(rx.unprotect(&wire), Err(EspError::ReplayDetected(1)));
    }

    #[test]
    fn left_of_window_rejected() {
        let (mut tx, mut rx) = pair(Encr::Aes128, Integ::Sha256);
        tx.set_seq(29);
        let (old, _) = tx.protect(b"old").unwrap();
        tx.set_seq(99);
        let (new, _) = tx.protect(b"new").unwrap();
        assert!(rx.unprotect(&new).is_ok());
        assert_eq!(rx.unprotect(&old), Err(EspError::ReplayDetected(30)));
    }

    #[test]
    fn tamper_detected_and_window_untouched() {
        let (mut tx, mut rx) = pair(Encr::Aes192, Integ::Sha384);
        let (wire, _) = tx.protect(b"payload").unwrap();
        let mut bad = wire.clone();
        bad[ESP_HEADER_LEN + IV_LEN] ^= 1;
        assert_eq!(rx.unprotect(&bad), Err(EspError::IcvMismatch));
        // the genuine packet still gets through afterwards
        assert_eq!(rx.unprotect(&wire).unwrap(), b"payload");
    }

    #[test]
    fn wrong_spi_and_short_packets() {
        let (mut tx, mut rx) = pair(Encr::Aes128, Integ::Sha256);
        let (mut wire, _) = tx.protect(b"abc").unwrap();
        assert_eq!(rx.unprotect(&wire[..39]), Err(EspError::Truncated(39)));
        wire[0] ^= 0xff;
        assert!(matches!(rx.unprotect(&wire), Err(EspError::UnknownSpi(_))));
    }

    #[test]
    fn sequence_exhaustion() {
        let (mut tx, _) = pair(Encr::Aes128, Integ::Sha256);
        tx.set_seq(u64::from(u32::MAX) - 1);
        assert!(tx.protect(b"last").is_ok());
        assert_eq!(tx.protect(b"one more"), Err(EspError::SequenceExhausted));
        assert_eq!(tx.seq(), u64::from(u32::MAX));
    }

    #[test]
    fn key_lengths_checked() {
        assert!(matches!(
            SecurityAssociation::new(1, Encr::Aes256, Integ::Sha256, &[0; 16], &[0; 32], [0; 8]),
            Err(EspError::InvalidKeyLength { .. })
        ));
        assert!(matches!(
            SecurityAssociation::new(1, Encr::Aes128, Integ::Sha384, &[0; 16], &[0; 32], [0; 8]),
            Err(EspError::InvalidKeyLength { .. })
        ));
    }

    #[test]
    fn oversize_payload() {
        let (mut tx, _) = pair(Encr::Aes128, Integ::Sha256);
        assert_eq!(
            tx.protect(&vec![0; MAX_PAYLOAD + 1]),
            Err(EspError::PayloadTooLarge(MAX_PAYLOAD + 1))
        );
    }
}
