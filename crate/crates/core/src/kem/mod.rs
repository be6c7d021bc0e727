//! Key encapsulation: a uniform provider interface and the suite registry.
//!
//! Registered suites:
//!
//! | id            | provider                                     |
//! |---------------|----------------------------------------------|
//! | `dh-baseline` | 2048-bit MODP Diffie-Hellman phrased as a KEM |
//! | `toy-lwe`     | [`lwe::ToyLwe`] at [`ToyLweParams::DEFAULT`]  |
//! | `mock-*`      | [`mock::MockKem`] profiles from configuration |
//!
//! Every operation is a pure function of its inputs, seed included.

pub mod dh;
pub mod lwe;
pub mod mock;
pub mod stream;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::conf::{ConfigError, FlatConfig};
pub use dh::{DhGroup, DhKem, DhPrivate};
pub use lwe::{expand_matrix, ToyLwe, ToyLweParams};
pub use mock::MockKem;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KemError {
    #[error("unknown KEM suite `{0}`")]
    UnknownSuite(String),
    #[error("duplicate KEM suite `{0}`")]
    DuplicateSuite(String),
    #[error("malformed public key: expected {expected} bytes, got {actual}")]
    MalformedPublicKey { expected: usize, actual: usize },
    #[error("malformed ciphertext: expected {expected} bytes, got {actual}")]
    MalformedCiphertext { expected: usize, actual: usize },
    #[error("malformed secret key: expected {expected} bytes, got {actual}")]
    MalformedSecretKey { expected: usize, actual: usize },
    #[error("invalid Diffie-Hellman public value")]
    InvalidPublicValue,
    #[error("invalid KEM parameters: {0}")]
    InvalidParams(String),
    #[error("mock KEM configuration: {0}")]
    Config(#[from] ConfigError),
}

/// Registry name of a KEM suite, e.g. `toy-lwe`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KemSuiteId(String);

impl KemSuiteId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KemSuiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for KemSuiteId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl FromStr for KemSuiteId {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Self(s.trim().to_string()))
    }
}

/// Declared wire sizes and emulated cost of a suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KemParams {
    pub public_key_len: usize,
    pub ciphertext_len: usize,
    pub shared_secret_len: usize,
    /// Emulated encapsulation delay; zero for real providers.
    pub encaps_cost_us: u64,
}

impl KemParams {
    pub fn validate(&self) -> Result<(), KemError> {
        if self.public_key_len == 0 || self.ciphertext_len == 0 {
            return Err(KemError::InvalidParams("wire lengths must be positive".into()));
        }
        if self.shared_secret_len < 16 {
            return Err(KemError::InvalidParams(format!(
                "shared secret of {} bytes is shorter than 16",
                self.shared_secret_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public_key: Vec<u8>,
    pub secret_key: Vec<u8>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key_len", &self.public_key.len())
            .field("secret_key_len", &self.secret_key.len())
            .finish()
    }
}

/// Per-exchange secret; only ever fed to the key combiner.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret(Vec<u8>);

impl SharedSecret {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SharedSecret({} bytes)", self.0.len())
    }
}

/// A key-encapsulation algorithm. Implementations hold no mutable state.
pub trait Kem: Send + Sync + fmt::Debug {
    fn params(&self) -> KemParams;
    fn secret_key_len(&self) -> usize;
    fn keygen(&self, seed: &[u8; 32]) -> KeyPair;
    fn encapsulate(&self, pk: &[u8], seed: &[u8; 32])
        -> Result<(Vec<u8>, SharedSecret), KemError>;
    fn decapsulate(&self, sk: &[u8], ct: &[u8]) -> Result<SharedSecret, KemError>;
}

impl Kem for DhKem {
    fn params(&self) -> KemParams {
        self.kem_params()
    }
    fn secret_key_len(&self) -> usize {
        self.group().exponent_len()
    }
    fn keygen(&self, seed: &[u8; 32]) -> KeyPair {
        DhKem::keygen(self, seed)
    }
    fn encapsulate(&self, pk: &[u8], seed: &[u8; 32]) -> Result<(Vec<u8>, SharedSecret), KemError> {
        DhKem::encapsulate(self, pk, seed)
    }
    fn decapsulate(&self, sk: &[u8], ct: &[u8]) -> Result<SharedSecret, KemError> {
        DhKem::decapsulate(self, sk, ct)
    }
}

impl Kem for ToyLwe {
    fn params(&self) -> KemParams {
        self.kem_params()
    }
    fn secret_key_len(&self) -> usize {
        ToyLwe::params(self).secret_key_len()
    }
    fn keygen(&self, seed: &[u8; 32]) -> KeyPair {
        ToyLwe::keygen(self, seed)
    }
    fn encapsulate(&self, pk: &[u8], seed: &[u8; 32]) -> Result<(Vec<u8>, SharedSecret), KemError> {
        ToyLwe::encapsulate(self, pk, seed)
    }
    fn decapsulate(&self, sk: &[u8], ct: &[u8]) -> Result<SharedSecret, KemError> {
        ToyLwe::decapsulate(self, sk, ct)
    }
}

impl Kem for MockKem {
    fn params(&self) -> KemParams {
        self.kem_params()
    }
    fn secret_key_len(&self) -> usize {
        mock::MOCK_SECRET_KEY_LEN
    }
    fn keygen(&self, seed: &[u8; 32]) -> KeyPair {
        MockKem::keygen(self, seed)
    }
    fn encapsulate(&self, pk: &[u8], seed: &[u8; 32]) -> Result<(Vec<u8>, SharedSecret), KemError> {
        MockKem::encapsulate(self, pk, seed)
    }
    fn decapsulate(&self, sk: &[u8], ct: &[u8]) -> Result<SharedSecret, KemError> {
        MockKem::decapsulate(self, sk, ct)
    }
}

#[derive(Debug, Clone)]
pub struct KemSuite {
    pub id: KemSuiteId,
    /// Additional-key-exchange transform number carried in proposals.
    pub transform_id: u16,
    provider: Arc<dyn Kem>,
}

impl KemSuite {
    pub fn params(&self) -> KemParams {
        self.provider.params()
    }

    pub fn secret_key_len(&self) -> usize {
        self.provider.secret_key_len()
    }

    pub fn provider(&self) -> &dyn Kem {
        self.provider.as_ref()
    }
}

pub const DH_BASELINE: &str = "dh-baseline";
pub const TOY_LWE: &str = "toy-lwe";

/// Mock profiles shipped with the crate.
pub const DEFAULT_MOCK_CONFIG: &str = include_str!("../../config/mock_kems.conf");

const MOCK_FIELDS: [&str; 4] = [
    "public_key_len",
    "ciphertext_len",
    "shared_secret_len",
    "encaps_cost_us",
];

fn well_known_transform(name: &str) -> Option<u16> {
    match name {
        DH_BASELINE => Some(dh::MODP_2048_ID),
        TOY_LWE => Some(1025),
        "mock-kyber" => Some(1026),
        "mock-bike" => Some(1027),
        "mock-hqc" => Some(1028),
        "mock-frodo" => Some(1029),
        _ => None,
    }
}

/// Ordered set of KEM suites, resolvable by name or transform number.
#[derive(Debug, Clone, Default)]
pub struct KemRegistry {
    suites: Vec<KemSuite>,
}

impl KemRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The built-in providers plus the default mock profiles.
    pub fn builtin() -> Self {
        Self::with_mock_config(DEFAULT_MOCK_CONFIG).expect("bundled mock profiles are valid")
    }

    /// The built-in providers plus mock profiles parsed from `text`.
    pub fn with_mock_config(text: &str) -> Result<Self, KemError> {
        let mut reg = Self::empty();
        let modp = DhGroup::by_id(dh::MODP_2048_ID).expect("built-in group");
        reg.register(DH_BASELINE, Arc::new(DhKem::new(modp)))?;
        reg.register(TOY_LWE, Arc::new(ToyLwe::new(ToyLweParams::DEFAULT)))?;
        for (name, params) in parse_mock_profiles(text)? {
            let kem = MockKem::new(&name, params)?;
            reg.register(&name, Arc::new(kem))?;
        }
        Ok(reg)
    }

    /// Adds a provider; well-known names get their fixed transform number,
    /// anything else the next free private-use number.
    pub fn register(&mut self, name: &str, provider: Arc<dyn Kem>) -> Result<(), KemError> {
        if self.suites.iter().any(|s| s.id.as_str() == name) {
            return Err(KemError::DuplicateSuite(name.to_string()));
        }
        if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == ',' || c == '+') {
            return Err(KemError::InvalidParams(format!("invalid suite name `{name}`")));
        }
        provider.params().validate()?;
        let transform_id = well_known_transform(name).unwrap_or_else(|| {
            let mut id = 1100;
            while self.suites.iter().any(|s| s.transform_id == id) {
                id += 1;
            }
            id
        });
        self.suites.push(KemSuite {
            id: KemSuiteId::new(name),
            transform_id,
            provider,
        });
        Ok(())
    }

    pub fn suites(&self) -> &[KemSuite] {
        &self.suites
    }

    pub fn get(&self, name: &str) -> Result<&KemSuite, KemError> {
        self.suites
            .iter()
            .find(|s| s.id.as_str() == name)
            .ok_or_else(|| KemError::UnknownSuite(name.to_string()))
    }

    pub fn by_transform(&self, transform_id: u16) -> Option<&KemSuite> {
        self.suites.iter().find(|s| s.transform_id == transform_id)
    }

    pub fn keygen(&self, suite: &KemSuiteId, seed: &[u8; 32]) -> Result<KeyPair, KemError> {
        Ok(self.get(suite.as_str())?.provider.keygen(seed))
    }

    pub fn encapsulate(
        &self,
        suite: &KemSuiteId,
        pk: &[u8],
        seed: &[u8; 32],
    ) -> Result<(Vec<u8>, SharedSecret), KemError> {
        let s = self.get(suite.as_str())?;
        let expected = s.params().public_key_len;
        if pk.len() != expected {
            return Err(KemError::MalformedPublicKey {
                expected,
                actual: pk.len(),
            });
        }
        s.provider.encapsulate(pk, seed)
    }

    pub fn decapsulate(
        &self,
        suite: &KemSuiteId,
        sk: &[u8],
        ct: &[u8],
    ) -> Result<SharedSecret, KemError> {
        let s = self.get(suite.as_str())?;
        let expected = s.params().ciphertext_len;
        if ct.len() != expected {
            return Err(KemError::MalformedCiphertext {
                expected,
                actual: ct.len(),
            });
        }
        s.provider.decapsulate(sk, ct)
    }
}

/// Parses `<suite>.<field> = value` mock profiles, preserving file order.
pub fn parse_mock_profiles(text: &str) -> Result<Vec<(String, KemParams)>, KemError> {
    let mut cfg = FlatConfig::parse(text)?;
    let mut names: Vec<(usize, String)> = Vec::new();
    for key in cfg.keys() {
        let (suite, field) = key
            .rsplit_once('.')
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        if !MOCK_FIELDS.contains(&field) || suite.is_empty() {
            return Err(ConfigError::UnknownKey(key.to_string()).into());
        }
        if suite == DH_BASELINE || suite == TOY_LWE {
            return Err(KemError::InvalidParams(format!(
                "`{suite}` is a built-in suite and cannot be mocked"
            )));
        }
        let line = cfg.line_of(key).unwrap_or(usize::MAX);
        match names.iter_mut().find(|(_, n)| n == suite) {
            Some(entry) => entry.0 = entry.0.min(line),
            None => names.push((line, suite.to_string())),
        }
    }
    names.sort();

    let mut out = Vec::with_capacity(names.len());
    for (_, name) in names {
        let mut field = |f: &str| -> Result<u64, KemError> {
            Ok(cfg.take_parsed_required::<u64>(&format!("{name}.{f}"))?)
        };
        let params = KemParams {
            public_key_len: field("public_key_len")? as usize,
            ciphertext_len: field("ciphertext_len")? as usize,
            shared_secret_len: field("shared_secret_len")? as usize,
            encaps_cost_us: field("encaps_cost_us")?,
        };
        out.push((name, params));
    }
    cfg.finish()?;
    Ok(out)
}
