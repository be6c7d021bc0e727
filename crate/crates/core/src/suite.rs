//! Symmetric suite identifiers shared by the handshake and the tunnel.

use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, Mac};
use sha2::{Sha256, Sha384, Sha512};

/// Counter-mode AES variant used by the tunnel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Encr {
    Aes128,
    Aes192,
    Aes256,
}

impl Encr {
    pub const ALL: [Encr; 3] = [Encr::Aes128, Encr::Aes192, Encr::Aes256];

    pub fn key_len(self) -> usize {
        match self {
            Encr::Aes128 => 16,
            Encr::Aes192 => 24,
            Encr::Aes256 => 32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Encr::Aes128 => "AES-128",
            Encr::Aes192 => "AES-192",
            Encr::Aes256 => "AES-256",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Encr::Aes128 => 1,
            Encr::Aes192 => 2,
            Encr::Aes256 => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.code() == code)
    }
}

/// HMAC hash; used both as the handshake PRF and for the tunnel ICV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Integ {
    Sha256,
    Sha384,
    Sha512,
}

impl Integ {
    pub const ALL: [Integ; 3] = [Integ::Sha256, Integ::Sha384, Integ::Sha512];

    /// PRF output length, which is also the integrity key length.
    pub fn output_len(self) -> usize {
        match self {
            Integ::Sha256 => 32,
            Integ::Sha384 => 48,
            Integ::Sha512 => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Integ::Sha256 => "SHA-256",
            Integ::Sha384 => "SHA-384",
            Integ::Sha512 => "SHA-512",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Integ::Sha256 => 1,
            Integ::Sha384 => 2,
            Integ::Sha512 => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.code() == code)
    }

    /// HMAC over the concatenation of `parts`.
    pub fn prf(self, key: &[u8], parts: &[&[u8]]) -> Vec<u8> {
        fn run<M: Mac + hmac::digest::KeyInit>(key: &[u8], parts: &[&[u8]]) -> Vec<u8> {
            let mut mac = <M as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
            for p in parts {
                mac.update(p);
            }
            mac.finalize().into_bytes().to_vec()
        }
        match self {
            Integ::Sha256 => run::<Hmac<Sha256>>(key, parts),
            Integ::Sha384 => run::<Hmac<Sha384>>(key, parts),
            Integ::Sha512 => run::<Hmac<Sha512>>(key, parts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{value}`")]
pub struct ParseSuiteError {
    kind: &'static str,
    value: String,
}

fn normalize(s: &str) -> String {
    s.trim().to_ascii_uppercase().replace('_', "-")
}

impl FromStr for Encr {
    type Err = ParseSuiteError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n = normalize(s);
        Self::ALL
            .into_iter()
            .find(|e| e.name() == n || e.name().replace('-', "") == n)
            .ok_or(ParseSuiteError {
                kind: "cipher",
                value: s.to_string(),
            })
    }
}

impl FromStr for Integ {
    type Err = ParseSuiteError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n = normalize(s);
        let n = n.strip_prefix("HMAC-").unwrap_or(&n);
        Self::ALL
            .into_iter()
            .find(|i| i.name() == n || i.name().replace('-', "") == n)
            .ok_or(ParseSuiteError {
                kind: "hash",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for Encr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Integ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_back() {
        for e in Encr::ALL {
            assert_eq!(e.name().parse::<Encr>().unwrap(), e);
            assert_eq!(Encr::from_code(e.code()), Some(e));
        }
        for i in Integ::ALL {
            assert_eq!(i.name().parse::<Integ>().unwrap(), i);
            assert_eq!(Integ::from_code(i.code()), Some(i));
        }
        assert_eq!("aes256".parse::<Encr>().unwrap(), Encr::Aes256);
        assert_eq!("hmac-sha-384".parse::<Integ>().unwrap(), Integ::Sha384);
        assert!("DES".parse::<Encr>().is_err());
    }

    #[test]
    fn prf_output_lengths() {
        for i in Integ::ALL {
            assert_eq!(i.prf(b"k", &[b"data"]).len(), i.output_len());
        }
        // concatenation is the only thing that matters
        assert_eq!(
            Integ::Sha256.prf(b"k", &[b"ab", b"c"]),
            Integ::Sha256.prf(b"k", &[b"abc"])
        );
    }
}
