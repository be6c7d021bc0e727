//! Initiator and responder state machines.
//!
//! ```text
//!  Initiator                                   Responder
//!  SA_INIT   (0)  SA, KE, Ni, [N(IES)]   -->
//!                                        <--   SA, KE, Nr, [N(IES)]
//!  INTERMEDIATE (1..=n)   KEM_PK(i)      -->
//!                                        <--   KEM_CT(i)
//!  AUTH     (n+1)  AUTH                  -->
//!                                        <--   AUTH
//! ```
//!
//! `StaleMessageId` leaves the state untouched so duplicated datagrams can
//! be dropped; every other error moves the machine to `Failed`.

use std::fmt;
use std::sync::Arc;

use super::keys::{
    auth_mac, combine_keys, derive_key_schedule, initial_key, verify_auth, KeySchedule,
    Transcript,
};
use super::message::{ExchangeType, Message, Payload, INTERMEDIATE_EXCHANGE_SUPPORTED, NONCE_LEN};
use super::proposal::{select_proposal, Proposal};
use super::IkeError;
use crate::kem::dh::{dh_keygen, dh_shared, DhGroup, DhPrivate};
use crate::kem::stream::derive_seed;
use crate::kem::{KemRegistry, SharedSecret};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    SaInit,
    Intermediate,
    Auth,
    Established,
    Failed,
}

/// Local policy of one peer.
#[derive(Debug, Clone)]
pub struct PeerConfig {
    pub proposals: Vec<Proposal>,
    pub psk: Vec<u8>,
}

impl PeerConfig {
    pub fn new(proposals: Vec<Proposal>, psk: &[u8]) -> Self {
        Self {
            proposals,
            psk: psk.to_vec(),
        }
    }

    fn validate(&self, reg: &KemRegistry) -> Result<(), IkeError> {
        if self.proposals.is_empty() {
            return Err(IkeError::InvalidConfig("no proposals configured".into()));
        }
        self.proposals.iter().try_for_each(|p| p.validate(reg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    InitiatorToResponder,
    ResponderToInitiator,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::InitiatorToResponder => "I->R",
            Direction::ResponderToInitiator => "R->I",
        })
    }
}

/// One line of the handshake ladder:
/// `dir msg_id exchange_type payload_types total_bytes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptLine {
    pub direction: Direction,
    pub message_id: u32,
    pub exchange: ExchangeType,
    pub payload_types: Vec<&'static str>,
    pub total_bytes: usize,
}

impl fmt::Display for TranscriptLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.direction,
            self.message_id,
            self.exchange,
            self.payload_types.join(","),
            self.total_bytes
        )
    }
}

/// Negotiation state shared by both roles.
#[derive(Debug, Clone)]
pub struct HandshakeState {
    role: Role,
    phase: Phase,
    chosen: Option<Proposal>,
    ni: Option<[u8; NONCE_LEN]>,
    nr: Option<[u8; NONCE_LEN]>,
    chain_key: Option<Vec<u8>>,
    round: usize,
    transcript: Transcript,
    pending_schedule: Option<KeySchedule>,
    schedule: Option<KeySchedule>,
    next_message_id: u32,
    log: Vec<TranscriptLine>,
    retained: usize,
}

impl HandshakeState {
    fn new(role: Role) -> Self {
        Self {
            role,
            phase: Phase::Idle,
            chosen: None,
            ni: None,
            nr: None,
            chain_key: None,
            round: 0,
            transcript: Transcript::default(),
            pending_schedule: None,
            schedule: None,
            next_message_id: 0,
            log: Vec::new(),
            retained: 0,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_established(&self) -> bool {
        self.phase == Phase::Established
    }

    pub fn chosen(&self) -> Option<&Proposal> {
        self.chosen.as_ref()
    }

    pub fn ni(&self) -> Option<&[u8; NONCE_LEN]> {
        self.ni.as_ref()
    }

    pub fn nr(&self) -> Option<&[u8; NONCE_LEN]> {
        self.nr.as_ref()
    }

    /// Current combined key `K_round`; defined once SA_INIT completes.
    pub fn chain_key(&self) -> Option<&[u8]> {
        self.chain_key.as_deref()
    }

    /// Index of the next additional key exchange.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn transcript_hash(&self) -> &[u8; 32] {
        self.transcript.hash()
    }

    /// Present iff the handshake is established.
    pub fn schedule(&self) -> Option<&KeySchedule> {
        self.schedule.as_ref()
    }

    /// Every message this peer sent or received, in order.
    pub fn log(&self) -> &[TranscriptLine] {
        &self.log
    }

    /// Sum of encoded message sizes in both directions.
    pub fn handshake_bytes(&self) -> usize {
        self.log.iter().map(|l| l.total_bytes).sum()
    }

    /// Bytes this peer holds for the handshake: message buffers plus key
    /// material that never goes on the wire.
    pub fn retained_bytes(&self) -> usize {
        self.retained
    }

    fn addke_len(&self) -> usize {
        self.chosen.as_ref().map_or(0, |p| p.addke.len())
    }

    fn record(&mut self, msg: &Message, reg: &KemRegistry) -> Result<(), IkeError> {
        let bytes = msg.encode(reg)?;
        self.transcript.absorb(&bytes);
        self.retained += bytes.len();
        self.log.push(TranscriptLine {
            direction: if msg.from_initiator {
                Direction::InitiatorToResponder
            } else {
                Direction::ResponderToInitiator
            },
            message_id: msg.message_id,
            exchange: msg.exchange,
            payload_types: msg.payload_types(),
            total_bytes: bytes.len(),
        });
        Ok(())
    }

    /// Message-id and exchange-type gate for an incoming message.
    fn expect(&self, msg: &Message, exchange: ExchangeType, response: bool) -> Result<(), IkeError> {
        if msg.message_id < self.next_message_id {
            return Err(IkeError::StaleMessageId {
                expected: self.next_message_id,
                got: msg.message_id,
            });
        }
        let from_peer = msg.from_initiator == (self.role == Role::Responder);
        if msg.message_id > self.next_message_id
            || msg.exchange != exchange
            || msg.response != response
            || !from_peer
        {
            return Err(IkeError::UnexpectedExchange {
                expected: exchange,
                got: msg.exchange,
                message_id: msg.message_id,
            });
        }
        Ok(())
    }

    fn nonces(&self) -> ([u8; NONCE_LEN], [u8; NONCE_LEN]) {
        (self.ni.expect("nonce set"), self.nr.expect("nonce set"))
    }

    fn start_chain(&mut self, dh_secret: &SharedSecret) {
        let prf = self.chosen.as_ref().expect("proposal chosen").integ;
        let (ni, nr) = self.nonces();
        let k0 = initial_key(prf, &ni, &nr, dh_secret);
        self.retained += dh_secret.len() + k0.len();
        self.chain_key = Some(k0);
    }

    fn combine(&mut self, round_secret: &SharedSecret) {
        let prf = self.chosen.as_ref().expect("proposal chosen").integ;
        let (ni, nr) = self.nonces();
        let k = combine_keys(
            prf,
            self.chain_key.as_ref().expect("chain started"),
            round_secret,
            &ni,
            &nr,
        );
        self.retained += round_secret.len() + k.len();
        self.chain_key = Some(k);
        self.round += 1;
    }

    /// Moves to the AUTH phase once every additional exchange is done.
    fn maybe_finish_rounds(&mut self) {
        if self.round < self.addke_len() {
            self.phase = Phase::Intermediate;
            return;
        }
        let p = self.chosen.as_ref().expect("proposal chosen");
        let (ni, nr) = self.nonces();
        let ks = derive_key_schedule(
            self.chain_key.as_ref().expect("chain started"),
            &ni,
            &nr,
            p.integ,
            p.encr,
        );
        self.retained += ks.total_len();
        self.pending_schedule = Some(ks);
        self.phase = Phase::Auth;
    }

    fn establish(&mut self) {
        self.schedule = self.pending_schedule.take();
        self.phase = Phase::Established;
    }

    fn fail<T>(&mut self, err: IkeError) -> Result<T, IkeError> {
        if !matches!(err, IkeError::StaleMessageId { .. }) {
            self.phase = Phase::Failed;
        }
        Err(err)
    }
}

fn find_ke(msg: &Message) -> Option<(u16, &[u8])> {
    msg.payloads.iter().find_map(|p| match p {
        Payload::KeyExchange { group, data } => Some((*group, data.as_slice())),
        _ => None,
    })
}

fn find_nonce(msg: &Message) -> Result<[u8; NONCE_LEN], IkeError> {
    let nonces: Vec<&Vec<u8>> = msg
        .payloads
        .iter()
        .filter_map(|p| match p {
            Payload::Nonce(n) => Some(n),
            _ => None,
        })
        .collect();
    match nonces.as_slice() {
        [n] if n.len() == NONCE_LEN => Ok(n.as_slice().try_into().unwrap()),
        _ => Err(IkeError::Malformed(
            "SA_INIT must carry exactly one 32-byte nonce".into(),
        )),
    }
}

fn find_auth(msg: &Message) -> Result<&[u8], IkeError> {
    msg.payloads
        .iter()
        .find_map(|p| match p {
            Payload::Auth(a) => Some(a.as_slice()),
            _ => None,
        })
        .ok_or_else(|| IkeError::Malformed("AUTH message without AUTH payload".into()))
}

fn ke_count(msg: &Message) -> usize {
    msg.payloads
        .iter()
        .filter(|p| matches!(p, Payload::KeyExchange { .. }))
        .count()
}

/// Classical exchange with the peer's KE payload, checking group and shape.
fn classical_secret(
    msg: &Message,
    group: &'static DhGroup,
    private: &DhPrivate,
) -> Result<SharedSecret, IkeError> {
    if ke_count(msg) != 1 {
        return Err(IkeError::Malformed(
            "SA_INIT must carry exactly one KE payload".into(),
        ));
    }
    let (peer_group, data) = find_ke(msg).expect("counted");
    if peer_group != group.id {
        return Err(IkeError::NoProposalChosen);
    }
    Ok(dh_shared(group, private, data)?)
}

/// Build the SA_INIT request for `config`: proposal list, classical KE in
/// the first proposal's group, a fresh nonce, and the intermediate-exchange
/// notify iff any proposal carries additional key exchanges.
pub fn build_sa_init_request(
    config: &PeerConfig,
    seed: &[u8; 32],
) -> Result<(Message, DhPrivate, [u8; NONCE_LEN]), IkeError> {
    let first = config
        .proposals
        .first()
        .ok_or_else(|| IkeError::InvalidConfig("no proposals configured".into()))?;
    let group = DhGroup::by_id(first.ke)
        .ok_or_else(|| IkeError::InvalidConfig(format!("unknown DH group {}", first.ke)))?;
    let (private, public) = dh_keygen(group, &derive_seed(seed, b"ike/dh"));
    let ni = derive_seed(seed, b"ike/nonce");
    let mut msg = Message::new(ExchangeType::SaInit, false, true, 0)
        .with(Payload::Sa(config.proposals.clone()))
        .with(Payload::KeyExchange {
            group: group.id,
            data: public,
        })
        .with(Payload::Nonce(ni.to_vec()));
    if config.proposals.iter().any(|p| !p.addke.is_empty()) {
        msg = msg.with(Payload::Notify(INTERMEDIATE_EXCHANGE_SUPPORTED));
    }
    Ok((msg, private, ni))
}

fn round_seed(seed: &[u8; 32], what: &str, round: usize) -> [u8; 32] {
    derive_seed(seed, format!("ike/{what}/{round}").as_bytes())
}

pub struct Initiator {
    state: HandshakeState,
    config: PeerConfig,
    registry: Arc<KemRegistry>,
    seed: [u8; 32],
    dh: Option<(&'static DhGroup, DhPrivate)>,
    round_secret_key: Option<Vec<u8>>,
}

impl Initiator {
    pub fn new(
        config: PeerConfig,
        registry: Arc<KemRegistry>,
        seed: [u8; 32],
    ) -> Result<Self, IkeError> {
        config.validate(&registry)?;
        Ok(Self {
            state: HandshakeState::new(Role::Initiator),
            config,
            registry,
            seed,
            dh: None,
            round_secret_key: None,
        })
    }

    pub fn state(&self) -> &HandshakeState {
        &self.state
    }

    pub fn start(&mut self) -> Result<Message, IkeError> {
        if self.state.phase != Phase::Idle {
            return self.state.fail(IkeError::UnexpectedExchange {
                expected: ExchangeType::SaInit,
                got: ExchangeType::SaInit,
                message_id: 0,
            });
        }
        let (msg, private, ni) = build_sa_init_request(&self.config, &self.seed)?;
        let group = DhGroup::by_id(self.config.proposals[0].ke).expect("validated");
        self.state.retained += group.exponent_len() + group.element_len();
        self.dh = Some((group, private));
        self.state.ni = Some(ni);
        self.state.record(&msg, &self.registry)?;
        self.state.phase = Phase::SaInit;
        Ok(msg)
    }

    /// Processes one response; returns the next request, or `None` once
    /// established.
    pub fn handle(&mut self, response: &Message) -> Result<Option<Message>, IkeError> {
        match self.handle_inner(response) {
            Ok(v) => Ok(v),
            Err(e) => self.state.fail(e),
        }
    }

    fn handle_inner(&mut self, response: &Message) -> Result<Option<Message>, IkeError> {
        match self.state.phase {
            Phase::SaInit => {
                self.state.expect(response, ExchangeType::SaInit, true)?;
                self.process_sa_init_response(response)?;
                self.state.maybe_finish_rounds();
                self.next_request().map(Some)
            }
            Phase::Intermediate => {
                self.run_intermediate_round(Some(response))?;
                self.next_request().map(Some)
            }
            Phase::Auth => {
                self.state.expect(response, ExchangeType::Auth, true)?;
                let prf = self.state.chosen.as_ref().expect("chosen").integ;
                let mac = find_auth(response)?;
                if !verify_auth(prf, &self.config.psk, self.state.transcript.hash(), mac) {
                    return Err(IkeError::AuthFailure);
                }
                self.state.record(response, &self.registry)?;
                self.state.establish();
                Ok(None)
            }
            _ if response.message_id < self.state.next_message_id
                || self.state.phase == Phase::Established =>
            {
                Err(IkeError::StaleMessageId {
                    expected: self.state.next_message_id,
                    got: response.message_id,
                })
            }
            _ => Err(IkeError::UnexpectedExchange {
                expected: ExchangeType::Auth,
                got: response.exchange,
                message_id: response.message_id,
            }),
        }
    }

    fn process_sa_init_response(&mut self, response: &Message) -> Result<(), IkeError> {
        let chosen = match response.proposals() {
            Some([one]) => one.clone(),
            _ => return Err(IkeError::NoProposalChosen),
        };
        // only something we offered, verbatim
        if !self.config.proposals.contains(&chosen) {
            return Err(IkeError::NoProposalChosen);
        }
        if !chosen.addke.is_empty() && !response.has_notify(INTERMEDIATE_EXCHANGE_SUPPORTED) {
            return Err(IkeError::NoProposalChosen);
        }
        let nr = find_nonce(response)?;
        let (group, private) = self.dh.as_ref().expect("started");
        if chosen.ke != group.id {
            return Err(IkeError::NoProposalChosen);
        }
        let dh_secret = classical_secret(response, group, private)?;
        self.state.nr = Some(nr);
        self.state.chosen = Some(chosen);
        self.state.record(response, &self.registry)?;
        self.state.start_chain(&dh_secret);
        Ok(())
    }

    fn next_request(&mut self) -> Result<Message, IkeError> {
        match self.state.phase {
            Phase::Intermediate => Ok(self
                .run_intermediate_round(None)?
                .expect("request emitted")),
            Phase::Auth => {
                let prf = self.state.chosen.as_ref().expect("chosen").integ;
                let mac = auth_mac(prf, &self.config.psk, self.state.transcript.hash());
                self.state.next_message_id += 1;
                let msg = Message::new(ExchangeType::Auth, false, true, self.state.next_message_id)
                    .with(Payload::Auth(mac));
                self.state.record(&msg, &self.registry)?;
                Ok(msg)
            }
            _ => unreachable!("next_request in {:?}", self.state.phase),
        }
    }

    /// Without `incoming`: emit the KEM public key for the next additional
    /// exchange. With `incoming`: decapsulate the peer's ciphertext and fold
    /// the round secret into the chain.
    pub fn run_intermediate_round(
        &mut self,
        incoming: Option<&Message>,
    ) -> Result<Option<Message>, IkeError> {
        if self.state.phase != Phase::Intermediate || self.state.round >= self.state.addke_len() {
            return Err(IkeError::UnexpectedExchange {
                expected: ExchangeType::Intermediate,
                got: incoming.map_or(ExchangeType::Intermediate, |m| m.exchange),
                message_id: incoming.map_or(self.state.next_message_id, |m| m.message_id),
            });
        }
        let round = self.state.round;
        let suite_id = self.state.chosen.as_ref().expect("chosen").addke[round].clone();
        let suite = self.registry.get(suite_id.as_str())?.clone();
        match incoming {
            None => {
                let kp = self
                    .registry
                    .keygen(&suite_id, &round_seed(&self.seed, "kem-keygen", round))?;
                self.state.next_message_id += 1;
                let msg = Message::new(
                    ExchangeType::Intermediate,
                    false,
                    true,
                    self.state.next_message_id,
                )
                .with(Payload::KemPublicKey {
                    transform: suite.transform_id,
                    data: kp.public_key,
                });
                self.state.retained += kp.secret_key.len();
                self.round_secret_key = Some(kp.secret_key);
                self.state.record(&msg, &self.registry)?;
                Ok(Some(msg))
            }
            Some(resp) => {
                self.state.expect(resp, ExchangeType::Intermediate, true)?;
                let ct = resp
                    .payloads
                    .iter()
                    .find_map(|p| match p {
                        Payload::KemCiphertext { transform, data } => Some((*transform, data)),
                        _ => None,
                    })
                    .ok_or_else(|| IkeError::Malformed("INTERMEDIATE response without KEM_CT".into()))?;
                if ct.0 != suite.transform_id {
                    return Err(IkeError::Malformed(format!(
                        "ciphertext for transform {} in round of `{suite_id}`",
                        ct.0
                    )));
                }
                let sk = self
                    .round_secret_key
                    .take()
                    .ok_or_else(|| IkeError::Malformed("no outstanding KEM key".into()))?;
                let secret = self.registry.decapsulate(&suite_id, &sk, ct.1)?;
                self.state.record(resp, &self.registry)?;
                self.state.combine(&secret);
                self.state.maybe_finish_rounds();
                Ok(None)
            }
        }
    }
}

pub struct Responder {
    state: HandshakeState,
    config: PeerConfig,
    registry: Arc<KemRegistry>,
    seed: [u8; 32],
}

impl Responder {
    pub fn new(
        config: PeerConfig,
        registry: Arc<KemRegistry>,
        seed: [u8; 32],
    ) -> Result<Self, IkeError> {
        config.validate(&registry)?;
        Ok(Self {
            state: HandshakeState::new(Role::Responder),
            config,
            registry,
            seed,
        })
    }

    pub fn state(&self) -> &HandshakeState {
        &self.state
    }

    /// Processes one request and returns the response to send.
    pub fn handle(&mut self, request: &Message) -> Result<Message, IkeError> {
        match self.handle_inner(request) {
            Ok(v) => Ok(v),
            Err(e) => self.state.fail(e),
        }
    }

    fn handle_inner(&mut self, request: &Message) -> Result<Message, IkeError> {
        match self.state.phase {
            Phase::Idle => {
                self.state.expect(request, ExchangeType::SaInit, false)?;
                self.respond_sa_init(request)
            }
            Phase::Intermediate => Ok(self
                .run_intermediate_round(Some(request))?
                .expect("response emitted")),
            Phase::Auth => {
                self.state.expect(request, ExchangeType::Auth, false)?;
                let prf = self.state.chosen.as_ref().expect("chosen").integ;
                let mac = find_auth(request)?;
                if !verify_auth(prf, &self.config.psk, self.state.transcript.hash(), mac) {
                    return Err(IkeError::AuthFailure);
                }
                self.state.record(request, &self.registry)?;
                let own = auth_mac(prf, &self.config.psk, self.state.transcript.hash());
                let resp = Message::new(ExchangeType::Auth, true, false, request.message_id)
                    .with(Payload::Auth(own));
                self.state.record(&resp, &self.registry)?;
                self.state.next_message_id += 1;
                self.state.establish();
                Ok(resp)
            }
            _ if request.message_id < self.state.next_message_id => {
                Err(IkeError::StaleMessageId {
                    expected: self.state.next_message_id,
                    got: request.message_id,
                })
            }
            _ => Err(IkeError::UnexpectedExchange {
                expected: ExchangeType::SaInit,
                got: request.exchange,
                message_id: request.message_id,
            }),
        }
    }

    fn respond_sa_init(&mut self, request: &Message) -> Result<Message, IkeError> {
        let ni = find_nonce(request)?;
        let chosen = select_proposal(request, &self.config.proposals)?;
        let group = DhGroup::by_id(chosen.ke).expect("validated");
        let (private, public) = dh_keygen(group, &derive_seed(&self.seed, b"ike/dh"));
        let dh_secret = classical_secret(request, group, &private)?;
        let nr = derive_seed(&self.seed, b"ike/nonce");

        self.state.retained += group.exponent_len() + group.element_len();
        self.state.record(request, &self.registry)?;
        let mut resp = Message::new(ExchangeType::SaInit, true, false, 0)
            .with(Payload::Sa(vec![chosen.clone()]))
            .with(Payload::KeyExchange {
                group: group.id,
                data: public,
            })
            .with(Payload::Nonce(nr.to_vec()));
        if !chosen.addke.is_empty() {
            resp = resp.with(Payload::Notify(INTERMEDIATE_EXCHANGE_SUPPORTED));
        }
        self.state.ni = Some(ni);
        self.state.nr = Some(nr);
        self.state.chosen = Some(chosen);
        self.state.record(&resp, &self.registry)?;
        self.state.start_chain(&dh_secret);
        self.state.next_message_id = 1;
        self.state.maybe_finish_rounds();
        Ok(resp)
    }

    /// Consume the initiator's KEM public key for the current round,
    /// encapsulate to it and answer with the ciphertext.
    pub fn run_intermediate_round(
        &mut self,
        incoming: Option<&Message>,
    ) -> Result<Option<Message>, IkeError> {
        let Some(req) = incoming else {
            // the responder never speaks first
            return Ok(None);
        };
        if self.state.phase != Phase::Intermediate || self.state.round >= self.state.addke_len() {
            return Err(IkeError::UnexpectedExchange {
                expected: ExchangeType::Intermediate,
                got: req.exchange,
                message_id: req.message_id,
            });
        }
        self.state.expect(req, ExchangeType::Intermediate, false)?;
        let round = self.state.round;
        let suite_id = self.state.chosen.as_ref().expect("chosen").addke[round].clone();
        let suite = self.registry.get(suite_id.as_str())?.clone();
        let (transform, pk) = req
            .payloads
            .iter()
            .find_map(|p| match p {
                Payload::KemPublicKey { transform, data } => Some((*transform, data)),
                _ => None,
            })
            .ok_or_else(|| IkeError::Malformed("INTERMEDIATE request without KEM_PK".into()))?;
        if transform != suite.transform_id {
            return Err(IkeError::Malformed(format!(
                "public key for transform {transform} in round of `{suite_id}`"
            )));
        }
        let (ct, secret) =
            self.registry
                .encapsulate(&suite_id, pk, &round_seed(&self.seed, "kem-encaps", round))?;
        self.state.record(req, &self.registry)?;
        let resp = Message::new(ExchangeType::Intermediate, true, false, req.message_id).with(
            Payload::KemCiphertext {
                transform: suite.transform_id,
                data: ct,
            },
        );
        self.state.record(&resp, &self.registry)?;
        self.state.next_message_id += 1;
        self.state.combine(&secret);
        self.state.maybe_finish_rounds();
        Ok(Some(resp))
    }
}
