//! Hybrid IKEv2-style handshake: SA_INIT with a classical exchange, one
//! INTERMEDIATE round per additional KEM, PSK-authenticated AUTH.

pub mod keys;
pub mod message;
pub mod proposal;
pub mod state;

use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::kem::stream::derive_seed;
use crate::kem::{DhGroup, KemError, KemRegistry};
use message::{
    ExchangeType, Message, ADDKE_ENTRY_LEN, KEM_TRANSFORM_LEN, KE_GROUP_LEN, MESSAGE_HEADER_LEN,
    NONCE_LEN, NOTIFY_LEN, PAYLOAD_HEADER_LEN, PROPOSAL_FIXED_LEN, SA_COUNT_LEN,
};

pub use keys::{combine_keys, derive_key_schedule, final_key, initial_key, KeySchedule};
pub use proposal::{select_proposal, Proposal};
pub use state::{HandshakeState, Initiator, PeerConfig, Phase, Responder, Role, TranscriptLine};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IkeError {
    #[error("NoProposalChosen")]
    NoProposalChosen,
    #[error("UnexpectedExchange: expected {expected}, got {got} with message id {message_id}")]
    UnexpectedExchange {
        expected: ExchangeType,
        got: ExchangeType,
        message_id: u32,
    },
    #[error("StaleMessageId: expected {expected}, got {got}")]
    StaleMessageId { expected: u32, got: u32 },
    #[error("KemFailure: {0}")]
    KemFailure(#[from] KemError),
    #[error("AuthFailure")]
    AuthFailure,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("handshake timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport: {0}")]
    Transport(String),
}

impl IkeError {
    /// Short variant name for diagnostics and CSV status columns.
    pub fn name(&self) -> &'static str {
        match self {
            IkeError::NoProposalChosen => "NoProposalChosen",
            IkeError::UnexpectedExchange { .. } => "UnexpectedExchange",
            IkeError::StaleMessageId { .. } => "StaleMessageId",
            IkeError::KemFailure(_) => "KemFailure",
            IkeError::AuthFailure => "AuthFailure",
            IkeError::Malformed(_) => "Malformed",
            IkeError::InvalidConfig(_) => "InvalidConfig",
            IkeError::Timeout { .. } => "Timeout",
            IkeError::Transport(_) => "Transport",
        }
    }
}

/// Both finished state machines from an in-process run.
pub struct HandshakeOutcome {
    pub initiator: Initiator,
    pub responder: Responder,
    /// Sum of every encoded message in both directions.
    pub handshake_bytes: usize,
    pub elapsed: Duration,
}

impl HandshakeOutcome {
    pub fn chosen(&self) -> &Proposal {
        self.initiator.state().chosen().expect("established")
    }

    pub fn initiator_schedule(&self) -> &KeySchedule {
        self.initiator.state().schedule().expect("established")
    }

    pub fn responder_schedule(&self) -> &KeySchedule {
        self.responder.state().schedule().expect("established")
    }

    /// Initiator-side ladder, which sees every message once.
    pub fn transcript(&self) -> &[TranscriptLine] {
        self.initiator.state().log()
    }
}

/// Per-peer seeds used by [`run_handshake`].
pub fn peer_seeds(seed: &[u8; 32]) -> ([u8; 32], [u8; 32]) {
    (
        derive_seed(seed, b"ike/initiator"),
        derive_seed(seed, b"ike/responder"),
    )
}

/// Runs both state machines in one process. Every message is serialized
/// and parsed again on the receiving side.
pub fn run_handshake(
    registry: Arc<KemRegistry>,
    initiator: PeerConfig,
    responder: PeerConfig,
    seed: &[u8; 32],
) -> Result<HandshakeOutcome, IkeError> {
    let (si, sr) = peer_seeds(seed);
    let started = Instant::now();
    let mut ini = Initiator::new(initiator, registry.clone(), si)?;
    let mut res = Responder::new(responder, registry.clone(), sr)?;
    let mut bytes = 0usize;
    let mut request = ini.start()?;
    loop {
        let wire = request.encode(&registry)?;
        bytes += wire.len();
        let response = res.handle(&Message::decode(&wire, &registry)?)?;
        let wire = response.encode(&registry)?;
        bytes += wire.len();
        match ini.handle(&Message::decode(&wire, &registry)?)? {
            Some(next) => request = next,
            None => break,
        }
    }
    Ok(HandshakeOutcome {
        initiator: ini,
        responder: res,
        handshake_bytes: bytes,
        elapsed: started.elapsed(),
    })
}

fn proposal_len(p: &Proposal) -> usize {
    PROPOSAL_FIXED_LEN + ADDKE_ENTRY_LEN * p.addke.len()
}

/// Analytic handshake size from framing constants and declared KEM sizes.
pub fn expected_handshake_bytes(
    offered: &[Proposal],
    chosen: &Proposal,
    registry: &KemRegistry,
) -> Result<usize, IkeError> {
    let group = DhGroup::by_id(chosen.ke)
        .ok_or_else(|| IkeError::InvalidConfig(format!("unknown DH group {}", chosen.ke)))?;
    let init_group = offered
        .first()
        .and_then(|p| DhGroup::by_id(p.ke))
        .ok_or_else(|| IkeError::InvalidConfig("no proposals offered".into()))?;
    let ke = |g: &DhGroup| PAYLOAD_HEADER_LEN + KE_GROUP_LEN + g.element_len();
    let nonce = PAYLOAD_HEADER_LEN + NONCE_LEN;
    let notify = PAYLOAD_HEADER_LEN + NOTIFY_LEN;

    let sa_offer = PAYLOAD_HEADER_LEN + SA_COUNT_LEN + offered.iter().map(proposal_len).sum::<usize>();
    let any_addke = offered.iter().any(|p| !p.addke.is_empty());
    let request = MESSAGE_HEADER_LEN + sa_offer + ke(init_group) + nonce + if any_addke { notify } else { 0 };

    let sa_chosen = PAYLOAD_HEADER_LEN + SA_COUNT_LEN + proposal_len(chosen);
    let response = MESSAGE_HEADER_LEN
        + sa_chosen
        + ke(group)
        + nonce
        + if chosen.addke.is_empty() { 0 } else { notify };

    let mut rounds = 0;
    for suite in &chosen.addke {
        let p = registry.get(suite.as_str())?.params();
        let frame = MESSAGE_HEADER_LEN + PAYLOAD_HEADER_LEN + KEM_TRANSFORM_LEN;
        rounds += frame + p.public_key_len + frame + p.ciphertext_len;
    }
    let auth = 2 * (MESSAGE_HEADER_LEN + PAYLOAD_HEADER_LEN + chosen.integ.output_len());
    Ok(request + response + rounds + auth)
}

/// Exchange names in ladder order, e.g. for checking the intermediate count.
pub fn count_exchanges(lines: &[TranscriptLine], exchange: ExchangeType) -> usize {
    lines.iter().filter(|l| l.exchange == exchange).count()
}
