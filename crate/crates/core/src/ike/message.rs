//! Handshake messages and their binary encoding.
//!
//! ```text
//! message  = exchange:u8 flags:u8 message_id:be32 total_len:be32 payload*
//! payload  = type:u8 body_len:be32 body
//! ```
//!
//! The layout is deliberately simple; it is not RFC 7296 wire compatible.

use std::fmt;

use super::proposal::Proposal;
use super::IkeError;
use crate::kem::{KemRegistry, KemSuiteId};
use crate::suite::{Encr, Integ};

pub const MESSAGE_HEADER_LEN: usize = 10;
pub const PAYLOAD_HEADER_LEN: usize = 5;
pub const NONCE_LEN: usize = 32;
/// SA payload body: proposal count.
pub const SA_COUNT_LEN: usize = 1;
/// encr, integ, ke group, addke count.
pub const PROPOSAL_FIXED_LEN: usize = 5;
pub const ADDKE_ENTRY_LEN: usize = 2;
pub const KE_GROUP_LEN: usize = 2;
pub const KEM_TRANSFORM_LEN: usize = 2;
pub const NOTIFY_LEN: usize = 2;

/// Notify type announcing support for intermediate exchanges.
pub const INTERMEDIATE_EXCHANGE_SUPPORTED: u16 = 16438;

const FLAG_RESPONSE: u8 = 0x20;
const FLAG_INITIATOR: u8 = 0x08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeType {
    SaInit,
    Intermediate,
    Auth,
}

impl ExchangeType {
    fn code(self) -> u8 {
        match self {
            ExchangeType::SaInit => 34,
            ExchangeType::Auth => 35,
            ExchangeType::Intermediate => 43,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            34 => Some(ExchangeType::SaInit),
            35 => Some(ExchangeType::Auth),
            43 => Some(ExchangeType::Intermediate),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExchangeType::SaInit => "SA_INIT",
            ExchangeType::Intermediate => "INTERMEDIATE",
            ExchangeType::Auth => "AUTH",
        }
    }
}

impl fmt::Display for ExchangeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Sa(Vec<Proposal>),
    KeyExchange { group: u16, data: Vec<u8> },
    Nonce(Vec<u8>),
    Notify(u16),
    KemPublicKey { transform: u16, data: Vec<u8> },
    KemCiphertext { transform: u16, data: Vec<u8> },
    Auth(Vec<u8>),
}

impl Payload {
    fn code(&self) -> u8 {
        match self {
            Payload::Sa(_) => 33,
            Payload::KeyExchange { .. } => 34,
            Payload::Auth(_) => 39,
            Payload::Nonce(_) => 40,
            Payload::Notify(_) => 41,
            Payload::KemPublicKey { .. } => 240,
            Payload::KemCiphertext { .. } => 241,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Payload::Sa(_) => "SA",
            Payload::KeyExchange { .. } => "KE",
            Payload::Nonce(_) => "NONCE",
            Payload::Notify(_) => "NOTIFY",
            Payload::KemPublicKey { .. } => "KEM_PK",
            Payload::KemCiphertext { .. } => "KEM_CT",
            Payload::Auth(_) => "AUTH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub exchange: ExchangeType,
    pub response: bool,
    /// Set on messages sent by the original initiator.
    pub from_initiator: bool,
    pub message_id: u32,
    pub payloads: Vec<Payload>,
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn malformed(msg: impl Into<String>) -> IkeError {
    IkeError::Malformed(msg.into())
}

fn encode_proposal(p: &Proposal, reg: &KemRegistry, out: &mut Vec<u8>) -> Result<(), IkeError> {
    out.push(p.encr.code());
    out.push(p.integ.code());
    put_u16(out, p.ke);
    out.push(p.addke.len() as u8);
    for suite in &p.addke {
        let s = reg
            .get(suite.as_str())
            .map_err(|_| IkeError::InvalidConfig(format!("unknown KEM suite `{suite}`")))?;
        put_u16(out, s.transform_id);
    }
    Ok(())
}

/// Name for a transform number; numbers the registry does not know decode
/// to a placeholder that can never match a configured proposal.
pub(crate) fn suite_for_transform(reg: &KemRegistry, transform: u16) -> KemSuiteId {
    match reg.by_transform(transform) {
        Some(s) => s.id.clone(),
        None => KemSuiteId::new(format!("transform-{transform}")),
    }
}

impl Message {
    pub fn new(exchange: ExchangeType, response: bool, from_initiator: bool, message_id: u32) -> Self {
        Self {
            exchange,
            response,
            from_initiator,
            message_id,
            payloads: Vec::new(),
        }
    }

    pub fn with(mut self, payload: Payload) -> Self {
        self.payloads.push(payload);
        self
    }

    pub fn payload_types(&self) -> Vec<&'static str> {
        self.payloads.iter().map(Payload::type_name).collect()
    }

    pub fn has_notify(&self, kind: u16) -> bool {
        self.payloads
            .iter()
            .any(|p| matches!(p, Payload::Notify(n) if *n == kind))
    }

    pub fn proposals(&self) -> Option<&[Proposal]> {
        self.payloads.iter().find_map(|p| match p {
            Payload::Sa(v) => Some(v.as_slice()),
            _ => None,
        })
    }

    pub fn encode(&self, reg: &KemRegistry) -> Result<Vec<u8>, IkeError> {
        let mut out = vec![0u8; MESSAGE_HEADER_LEN];
        out[0] = self.exchange.code();
        out[1] = (if self.response { FLAG_RESPONSE } else { 0 })
            | (if self.from_initiator { FLAG_INITIATOR } else { 0 });
        out[2..6].copy_from_slice(&self.message_id.to_be_bytes());
        for p in &self.payloads {
            let mut body = Vec::new();
            match p {
                Payload::Sa(props) => {
                    if props.len() > usize::from(u8::MAX) {
                        return Err(IkeError::InvalidConfig("too many proposals".into()));
                    }
                    body.push(props.len() as u8);
                    for prop in props {
                        encode_proposal(prop, reg, &mut body)?;
                    }
                }
                Payload::KeyExchange { group, data } => {
                    put_u16(&mut body, *group);
                    body.extend_from_slice(data);
                }
                Payload::Nonce(n) | Payload::Auth(n) => body.extend_from_slice(n),
                Payload::Notify(kind) => put_u16(&mut body, *kind),
                Payload::KemPublicKey { transform, data }
                | Payload::KemCiphertext { transform, data } => {
                    put_u16(&mut body, *transform);
                    body.extend_from_slice(data);
                }
            }
            out.push(p.code());
            out.extend_from_slice(&(body.len() as u32).to_be_bytes());
            out.extend_from_slice(&body);
        }
        let total = out.len() as u32;
        out[6..10].copy_from_slice(&total.to_be_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8], reg: &KemRegistry) -> Result<Message, IkeError> {
        if bytes.len() < MESSAGE_HEADER_LEN {
            return Err(malformed("truncated header"));
        }
        let exchange = ExchangeType::from_code(bytes[0])
            .ok_or_else(|| malformed(format!("unknown exchange type {}", bytes[0])))?;
        let flags = bytes[1];
        if flags & !(FLAG_RESPONSE | FLAG_INITIATOR) != 0 {
            return Err(malformed("reserved flag bits set"));
        }
        let message_id = u32::from_be_bytes(bytes[2..6].try_into().unwrap());
        let total = u32::from_be_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if total != bytes.len() {
            return Err(malformed(format!(
                "length field {total} does not match {} received bytes",
                bytes.len()
            )));
        }
        let mut msg = Message::new(
            exchange,
            flags & FLAG_RESPONSE != 0,
            flags & FLAG_INITIATOR != 0,
            message_id,
        );
        let mut rest = &bytes[MESSAGE_HEADER_LEN..];
        while !rest.is_empty() {
            if rest.len() < PAYLOAD_HEADER_LEN {
                return Err(malformed("truncated payload header"));
            }
            let code = rest[0];
            let len = u32::from_be_bytes(rest[1..5].try_into().unwrap()) as usize;
            if rest.len() - PAYLOAD_HEADER_LEN < len {
                return Err(malformed("payload overruns message"));
            }
            let body = &rest[PAYLOAD_HEADER_LEN..PAYLOAD_HEADER_LEN + len];
            rest = &rest[PAYLOAD_HEADER_LEN + len..];
            msg.payloads.push(decode_payload(code, body, reg)?);
        }
        Ok(msg)
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn decode_payload(code: u8, body: &[u8], reg: &KemRegistry) -> Result<Payload, IkeError> {
    let need = |n: usize| {
        if body.len() < n {
            Err(malformed(format!("payload type {code} too short")))
        } else {
            Ok(())
        }
    };
    Ok(match code {
        33 => {
            need(SA_COUNT_LEN)?;
            let count = body[0] as usize;
            let mut props = Vec::with_capacity(count);
            let mut at = SA_COUNT_LEN;
            for _ in 0..count {
                if body.len() < at + PROPOSAL_FIXED_LEN {
                    return Err(malformed("truncated proposal"));
                }
                let encr = Encr::from_code(body[at])
                    .ok_or_else(|| malformed(format!("unknown cipher code {}", body[at])))?;
                let integ = Integ::from_code(body[at + 1])
                    .ok_or_else(|| malformed(format!("unknown hash code {}", body[at + 1])))?;
                let ke = be16(&body[at + 2..]);
                let n = body[at + 4] as usize;
                at += PROPOSAL_FIXED_LEN;
                if body.len() < at + n * ADDKE_ENTRY_LEN {
                    return Err(malformed("truncated addke list"));
                }
                let addke = (0..n)
                    .map(|i| suite_for_transform(reg, be16(&body[at + 2 * i..])))
                    .collect();
                at += n * ADDKE_ENTRY_LEN;
                props.push(Proposal {
                    encr,
                    integ,
                    ke,
                    addke,
                });
            }
            if at != body.len() {
                return Err(malformed("trailing bytes in SA payload"));
            }
            Payload::Sa(props)
        }
        34 => {
            need(KE_GROUP_LEN)?;
            Payload::KeyExchange {
                group: be16(body),
                data: body[KE_GROUP_LEN..].to_vec(),
            }
        }
        39 => Payload::Auth(body.to_vec()),
        40 => Payload::Nonce(body.to_vec()),
        41 => {
            if body.len() != NOTIFY_LEN {
                return Err(malformed("notify payload must be 2 bytes"));
            }
            Payload::Notify(be16(body))
        }
        240 | 241 => {
            need(KEM_TRANSFORM_LEN)?;
            let transform = be16(body);
            let data = body[KEM_TRANSFORM_LEN..].to_vec();
            if code == 240 {
                Payload::KemPublicKey { transform, data }
            } else {
                Payload::KemCiphertext { transform, data }
            }
        }
        other => return Err(malformed(format!("unknown payload type {other}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(reg: &KemRegistry) -> Message {
        Message::new(ExchangeType::SaInit, false, true, 0)
            .with(Payload::Sa(vec![
                Proposal::new(Encr::Aes128, Integ::Sha256, 14, &["toy-lwe"]),
                Proposal::new(Encr::Aes256, Integ::Sha512, 14, &[]),
            ]))
            .with(Payload::KeyExchange {
                group: 14,
                data: vec![7; 256],
            })
            .with(Payload::Nonce(vec![1; 32]))
            .with(Payload::Notify(INTERMEDIATE_EXCHANGE_SUPPORTED))
            .with(Payload::KemPublicKey {
                transform: reg.get("toy-lwe").unwrap().transform_id,
                data: vec![3; 10],
            })
    }

    #[test]
    fn encode_decode_round_trip() {
        let reg = KemRegistry::builtin();
        let m = sample(&reg);
        let bytes = m.encode(&reg).unwrap();
        assert_eq!(Message::decode(&bytes, &reg).unwrap(), m);
        assert_eq!(m.payload_types(), ["SA", "KE", "NONCE", "NOTIFY", "KEM_PK"]);
    }

    #[test]
    fn encoded_length_follows_framing_constants() {
        let reg = KemRegistry::builtin();
        let bytes = sample(&reg).encode(&reg).unwrap();
        let sa = PAYLOAD_HEADER_LEN + SA_COUNT_LEN + 2 * PROPOSAL_FIXED_LEN + ADDKE_ENTRY_LEN;
        let ke = PAYLOAD_HEADER_LEN + KE_GROUP_LEN + 256;
        let nonce = PAYLOAD_HEADER_LEN + NONCE_LEN;
        let notify = PAYLOAD_HEADER_LEN + NOTIFY_LEN;
        let kem = PAYLOAD_HEADER_LEN + KEM_TRANSFORM_LEN + 10;
        assert_eq!(bytes.len(), MESSAGE_HEADER_LEN + sa + ke + nonce + notify + kem);
    }

    #[test]
    fn proposal_order_preserved() {
        let reg = KemRegistry::builtin();
        let bytes = sample(&reg).encode(&reg).unwrap();
        let props = Message::decode(&bytes, &reg).unwrap().proposals().unwrap().to_vec();
        assert_eq!(props[0].encr, Encr::Aes128);
        assert_eq!(props[1].encr, Encr::Aes256);
    }

    #[test]
    fn unknown_transform_decodes_to_placeholder() {
        let reg = KemRegistry::builtin();
        assert_eq!(suite_for_transform(&reg, 9999).as_str(), "transform-9999");
    }

    #[test]
    fn corrupt_framing_rejected() {
        let reg = KemRegistry::builtin();
        let bytes = sample(&reg).encode(&reg).unwrap();
        assert!(Message::decode(&bytes[..bytes.len() - 1], &reg).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Message::decode(&extra, &reg).is_err());
        let mut bad_type = bytes.clone();
        bad_type[0] = 99;
        assert!(Message::decode(&bad_type, &reg).is_err());
        // every truncation fails cleanly
        for cut in 0..bytes.len() {
            assert!(Message::decode(&bytes[..cut], &reg).is_err());
        }
    }
}
