//! UDP transport for the DU and RU endpoints.
//!
//! ESP packets travel as raw datagrams. Everything else starts with four
//! zero bytes (an SPI of zero never occurs) and a kind byte:
//!
//! ```text
//! 0000 01 <handshake message>        both directions
//! 0000 02 <chunk:be32>               DU asks for trailer chunk
//! 0000 03 <ESP packet>               RU trailer chunk, protected R->I
//! 0000 04                            DU is done
//! 0000 05 <error name>               RU aborted the handshake
//! ```
//!
//! A trailer chunk decrypts to
//! `chunk:be32 ‖ chunks:be32 ‖ ru_resident:be64 ‖ payload_errors:be32 ‖
//! (seq:be32 ‖ recv_ns:be64)*`.
//!
//! Handshake requests are retransmitted after 1 s without an answer and the
//! handshake is abandoned after the third unanswered attempt.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clock::{mono_ns, wait_until};
use super::ledger::session_ledger;
use super::trace::{PacketRecord, PacketTrace, TraceMeta};
use super::{
    fill_payload, inject_channel, payload_matches, rss_bytes, SessionConfig, SessionError,
};
use crate::esp::{install_pair, SecurityAssociation, ESP_OVERHEAD};
use crate::ike::message::Message;
use crate::ike::{peer_seeds, IkeError, Initiator, PeerConfig, Responder, Role};
use crate::kem::stream::derive_seed;
use crate::kem::KemRegistry;

pub const RETRANSMIT_INTERVAL: Duration = Duration::from_secs(1);
pub const MAX_ATTEMPTS: u32 = 3;

const MARKER: [u8; 4] = [0; 4];
const KIND_IKE: u8 = 1;
const KIND_TRAILER_REQUEST: u8 = 2;
const KIND_TRAILER: u8 = 3;
const KIND_DONE: u8 = 4;
const KIND_ERROR: u8 = 5;
const RECORDS_PER_CHUNK: usize = 4000;
const TRAILER_HEADER_LEN: usize = 20;
const RECORD_LEN: usize = 12;
const MAX_DATAGRAM: usize = 65_535;

fn control(kind: u8, body: &[u8]) -> Vec<u8> {
    let mut d = Vec::with_capacity(5 + body.len());
    d.extend_from_slice(&MARKER);
    d.push(kind);
    d.extend_from_slice(body);
    d
}

fn split_control(d: &[u8]) -> Option<(u8, &[u8])> {
    if d.len() >= 5 && d[..4] == MARKER {
        Some((d[4], &d[5..]))
    } else {
        None
    }
}

fn transport(e: std::io::Error) -> SessionError {
    SessionError::TransportUnavailable(e.to_string())
}

fn peer_error(name: &str) -> IkeError {
    match name {
        "NoProposalChosen" => IkeError::NoProposalChosen,
        "AuthFailure" => IkeError::AuthFailure,
        other => IkeError::Malformed(format!("peer aborted: {other}")),
    }
}

/// Receive until `accept` returns `Some` or `deadline` passes.
fn recv_until<T>(
    sock: &UdpSocket,
    buf: &mut [u8],
    deadline: Instant,
    mut accept: impl FnMut(&[u8]) -> Option<T>,
) -> Result<Option<T>, SessionError> {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return Ok(None);
        }
        sock.set_read_timeout(Some(deadline - now)).map_err(transport)?;
        match sock.recv(buf) {
            Ok(n) => {
                if let Some(v) = accept(&buf[..n]) {
                    return Ok(Some(v));
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return Ok(None)
            }
            // ICMP unreachable from an absent peer: keep waiting out the attempt
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => {
                thread::sleep((deadline - Instant::now().min(deadline)).min(Duration::from_millis(50)));
            }
            Err(e) => return Err(transport(e)),
        }
    }
}

/// Send `datagram` and wait for a matching answer, retransmitting on
/// silence.
fn request<T>(
    sock: &UdpSocket,
    datagram: &[u8],
    buf: &mut [u8],
    mut accept: impl FnMut(&[u8]) -> Option<T>,
) -> Result<Option<T>, SessionError> {
    for _ in 0..MAX_ATTEMPTS {
        match sock.send(datagram) {
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => {}
            Err(e) => return Err(transport(e)),
        }
        if let Some(v) = recv_until(sock, buf, Instant::now() + RETRANSMIT_INTERVAL, &mut accept)? {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

enum Reply {
    Message(Message, usize),
    PeerError(String),
}

/// DU endpoint: initiator of the handshake and sender of the traffic.
/// `sock` must already be connected to the RU.
pub fn run_du(
    registry: Arc<KemRegistry>,
    sock: &UdpSocket,
    cfg: &SessionConfig,
) -> Result<PacketTrace, SessionError> {
    cfg.profile.validate()?;
    cfg.channel.validate()?;
    let mut buf = vec![0u8; MAX_DATAGRAM];

    // handshake
    let started = Instant::now();
    let (seed_i, _) = peer_seeds(&cfg.seed);
    let mut ini = Initiator::new(cfg.initiator.clone(), registry.clone(), seed_i)?;
    let mut msg = ini.start()?;
    let mut handshake_bytes = 0usize;
    loop {
        let wire = msg.encode(&registry)?;
        handshake_bytes += wire.len();
        let want_id = msg.message_id;
        let reply = request(sock, &control(KIND_IKE, &wire), &mut buf, |d| {
            match split_control(d)? {
                (KIND_IKE, body) => {
                    let m = Message::decode(body, &registry).ok()?;
                    (m.response && m.message_id == want_id).then(|| Reply::Message(m, body.len()))
                }
                (KIND_ERROR, body) => Some(Reply::PeerError(String::from_utf8_lossy(body).into())),
                _ => None,
            }
        })?;
        match reply {
            None => return Err(IkeError::Timeout { attempts: MAX_ATTEMPTS }.into()),
            Some(Reply::PeerError(name)) => return Err(peer_error(&name).into()),
            Some(Reply::Message(resp, len)) => {
                handshake_bytes += len;
                match ini.handle(&resp)? {
                    Some(next) => msg = next,
                    None => break,
                }
            }
        }
    }
    let handshake_ms = started.elapsed().as_secs_f64() * 1e3;
    let chosen = ini.state().chosen().expect("established").clone();
    let (mut out_sa, mut in_sa) = install_pair(
        ini.state().schedule().expect("established"),
        chosen.encr,
        chosen.integ,
        Role::Initiator,
        &derive_seed(&cfg.seed, b"ofh/du"),
    )?;
    let du_resident =
        ini.state().retained_bytes() + out_sa.state_bytes() + in_sa.state_bytes();

    let mut records = send_traffic(sock, &mut out_sa, cfg)?;

    // trailer
    let mut chunk = 0u32;
    let mut chunks = 1u32;
    let mut ru_resident = 0usize;
    let mut payload_errors = 0usize;
    let mut received: Vec<(u64, u64)> = Vec::new();
    while chunk < chunks {
        let req = control(KIND_TRAILER_REQUEST, &chunk.to_be_bytes());
        let got = request(sock, &req, &mut buf, |d| match split_control(d)? {
            (KIND_TRAILER, body) => {
                let pt = in_sa.unprotect(body).ok()?;
                (pt.len() >= TRAILER_HEADER_LEN
                    && u32::from_be_bytes(pt[..4].try_into().unwrap()) == chunk)
                    .then_some(pt)
            }
            _ => None,
        })?;
        let Some(pt) = got else {
            return Err(SessionError::TransportUnavailable(
                "RU did not answer trailer request".into(),
            ));
        };
        chunks = u32::from_be_bytes(pt[4..8].try_into().unwrap());
        ru_resident = u64::from_be_bytes(pt[8..16].try_into().unwrap()) as usize;
        payload_errors = u32::from_be_bytes(pt[16..20].try_into().unwrap()) as usize;
        for r in pt[TRAILER_HEADER_LEN..].chunks_exact(RECORD_LEN) {
            received.push((
                u64::from(u32::from_be_bytes(r[..4].try_into().unwrap())),
                u64::from_be_bytes(r[4..12].try_into().unwrap()),
            ));
        }
        chunk += 1;
    }
    for _ in 0..3 {
        let _ = sock.send(&control(KIND_DONE, &[]));
    }

    for (seq, t) in received {
        if let Some(r) = seq.checked_sub(1).and_then(|i| records.get_mut(i as usize)) {
            r.recv_ns = Some(t.max(r.send_ns));
        }
    }
    let ledger = session_ledger(
        du_resident + ru_resident,
        &cfg.profile,
        &cfg.channel,
        cfg.profile.packet_size + ESP_OVERHEAD,
    );
    Ok(PacketTrace {
        meta: TraceMeta {
            kem: chosen.kem_label(),
            encr: chosen.encr.to_string(),
            integ: chosen.integ.to_string(),
            transport: "udp".into(),
            handshake_ms,
            handshake_bytes,
            mem_bytes_peak: ledger.peak(),
            rss_bytes: rss_bytes(),
            payload_errors,
        },
        records,
    })
}

/// Paced transmission with the channel model applied as a delay line in
/// front of the socket.
fn send_traffic(
    sock: &UdpSocket,
    sa: &mut SecurityAssociation,
    cfg: &SessionConfig,
) -> Result<Vec<PacketRecord>, SessionError> {
    let profile = cfg.profile;
    let n = profile.packet_count();
    let mut rng = ChaCha8Rng::from_seed(derive_seed(&cfg.seed, b"ofh/channel"));
    let mut records = Vec::with_capacity(n as usize);
    let mut payload = vec![0u8; profile.packet_size];
    let mut line: BinaryHeap<Reverse<(u64, u64, Vec<u8>)>> = BinaryHeap::new();
    let start = mono_ns() + 1_000_000;
    let mut k = 0u64;
    let mut last_send = 0u64;
    loop {
        let next_packet = (k < n).then(|| start + profile.send_offset_ns(k));
        let next_release = line.peek().map(|Reverse((t, _, _))| *t);
        let next = match (next_packet, next_release) {
            (None, None) => break,
            (a, b) => a.into_iter().chain(b).min().unwrap(),
        };
        let now = wait_until(next);
        while line.peek().is_some_and(|Reverse((t, _, _))| *t <= now) {
            let Reverse((_, _, wire)) = line.pop().unwrap();
            let _ = sock.send(&wire);
        }
        if next_packet.is_some_and(|t| t <= now) {
            let seq = k + 1;
            fill_payload(seq, &mut payload);
            let send_ns = mono_ns().max(last_send + 1);
            last_send = send_ns;
            let (wire, took) = sa.protect(&payload)?;
            records.push(PacketRecord {
                seq,
                send_ns,
                recv_ns: None,
                wire_len: wire.len(),
                enc_time_ns: took.as_nanos() as u64,
            });
            match inject_channel(&cfg.channel, &mut rng) {
                None => {}
                Some(0) => {
                    let _ = sock.send(&wire);
                }
                Some(d) => line.push(Reverse((mono_ns() + d, seq, wire))),
            }
            k += 1;
        }
    }
    Ok(records)
}

/// What the RU saw, for logging.
#[derive(Debug, Clone, Default)]
pub struct RuSummary {
    pub peer: Option<SocketAddr>,
    pub received: usize,
    pub rejected: usize,
    pub payload_errors: usize,
    pub kem: String,
}

struct RuTunnel {
    out_sa: SecurityAssociation,
    in_sa: SecurityAssociation,
    records: Vec<(u32, u64)>,
    resident: usize,
}

/// RU endpoint: responds to the handshake, receives and checks traffic,
/// then serves the receive timestamps back to the DU. Returns when the DU
/// says it is done, or after `idle` without traffic once a peer appeared.
pub fn run_ru(
    registry: Arc<KemRegistry>,
    sock: &UdpSocket,
    responder: PeerConfig,
    seed: &[u8; 32],
    idle: Duration,
) -> Result<RuSummary, SessionError> {
    let (_, seed_r) = peer_seeds(seed);
    let mut res = Responder::new(responder, registry.clone(), seed_r)?;
    let mut summary = RuSummary::default();
    let mut cached: Option<(u32, Vec<u8>)> = None;
    let mut tunnel: Option<RuTunnel> = None;
    let mut trailer_served = false;
    let mut last_activity = Instant::now();
    let mut buf = vec![0u8; MAX_DATAGRAM];
    let mut scratch = Vec::new();
    sock.set_read_timeout(Some(Duration::from_millis(100)))
        .map_err(transport)?;
    loop {
        let (n, from) = match sock.recv_from(&mut buf) {
            Ok(v) => v,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if summary.peer.is_some() && last_activity.elapsed() >= idle {
                    return if trailer_served {
                        Ok(summary)
                    } else {
                        Err(SessionError::TransportUnavailable("DU went silent".into()))
                    };
                }
                continue;
            }
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => continue,
            Err(e) => return Err(transport(e)),
        };
        let d = &buf[..n];
        match summary.peer {
            Some(p) if p != from => continue,
            None if split_control(d).map(|(k, _)| k) == Some(KIND_DONE) => return Ok(summary),
            None if split_control(d).map(|(k, _)| k) != Some(KIND_IKE) => continue,
            _ => {}
        }
        last_activity = Instant::now();
        match split_control(d) {
            None => {
                let Some(t) = tunnel.as_mut() else { continue };
                match t.in_sa.unprotect(d) {
                    Ok(pt) => {
                        let now = mono_ns();
                        let seq = u32::from_be_bytes(d[4..8].try_into().unwrap());
                        t.records.push((seq, now));
                        summary.received += 1;
                        if !payload_matches(u64::from(seq), &pt, pt.len(), &mut scratch) {
                            summary.payload_errors += 1;
                        }
                    }
                    Err(_) => summary.rejected += 1,
                }
            }
            Some((KIND_IKE, body)) => {
                let Ok(msg) = Message::decode(body, &registry) else { continue };
                if matches!(&cached, Some((id, _)) if *id == msg.message_id) {
                    let _ = sock.send_to(&cached.as_ref().unwrap().1, from);
                    continue;
                }
                match res.handle(&msg) {
                    Ok(resp) => {
                        summary.peer = Some(from);
                        let wire = control(KIND_IKE, &resp.encode(&registry)?);
                        sock.send_to(&wire, from).map_err(transport)?;
                        cached = Some((resp.message_id, wire));
                        if res.state().is_established() && tunnel.is_none() {
                            let chosen = res.state().chosen().expect("established");
                            summary.kem = chosen.kem_label();
                            let (out_sa, in_sa) = install_pair(
                                res.state().schedule().expect("established"),
                                chosen.encr,
                                chosen.integ,
                                Role::Responder,
                                &derive_seed(seed, b"ofh/ru"),
                            )?;
                            let resident = res.state().retained_bytes()
                                + out_sa.state_bytes()
                                + in_sa.state_bytes();
                            tunnel = Some(RuTunnel {
                                out_sa,
                                in_sa,
                                records: Vec::new(),
                                resident,
                            });
                        }
                    }
                    Err(IkeError::StaleMessageId { .. }) => {}
                    Err(e) => {
                        let _ = sock.send_to(&control(KIND_ERROR, e.name().as_bytes()), from);
                        return Err(e.into());
                    }
                }
            }
            Some((KIND_TRAILER_REQUEST, body)) if body.len() == 4 => {
                let Some(t) = tunnel.as_mut() else { continue };
                let idx = u32::from_be_bytes(body.try_into().unwrap());
                let chunks = t.records.len().div_ceil(RECORDS_PER_CHUNK).max(1) as u32;
                if idx >= chunks {
                    continue;
                }
                let lo = idx as usize * RECORDS_PER_CHUNK;
                let hi = (lo + RECORDS_PER_CHUNK).min(t.records.len());
                let mut pt = Vec::with_capacity(TRAILER_HEADER_LEN + (hi - lo) * RECORD_LEN);
                pt.extend_from_slice(&idx.to_be_bytes());
                pt.extend_from_slice(&chunks.to_be_bytes());
                pt.extend_from_slice(&(t.resident as u64).to_be_bytes());
                pt.extend_from_slice(&(summary.payload_errors as u32).to_be_bytes());
                for (seq, ns) in &t.records[lo..hi] {
                    pt.extend_from_slice(&seq.to_be_bytes());
                    pt.extend_from_slice(&ns.to_be_bytes());
                }
                let (wire, _) = t.out_sa.protect(&pt)?;
                sock.send_to(&control(KIND_TRAILER, &wire), from)
                    .map_err(transport)?;
                if idx + 1 == chunks {
                    trailer_served = true;
                }
            }
            Some((KIND_DONE, _)) => return Ok(summary),
            Some(_) => {}
        }
    }
}

/// Both endpoints on 127.0.0.1 in one process, RU on its own thread.
pub fn run_loopback(
    registry: Arc<KemRegistry>,
    cfg: &SessionConfig,
) -> Result<PacketTrace, SessionError> {
    let ru_sock = UdpSocket::bind("127.0.0.1:0").map_err(transport)?;
    let ru_addr = ru_sock.local_addr().map_err(transport)?;
    let du_sock = UdpSocket::bind("127.0.0.1:0").map_err(transport)?;
    du_sock.connect(ru_addr).map_err(transport)?;
    thread::scope(|s| {
        let reg = registry.clone();
        let responder = cfg.responder.clone();
        let ru = s.spawn(move || {
            run_ru(reg, &ru_sock, responder, &cfg.seed, Duration::from_secs(5))
        });
        let trace = run_du(registry, &du_sock, cfg);
        if trace.is_err() {
            let _ = du_sock.send(&control(KIND_DONE, &[]));
        }
        let ru = ru.join().expect("RU thread panicked");
        match (trace, ru) {
            (Ok(t), _) => Ok(t),
            // the RU's own view is more specific for handshake failures
            (Err(_), Err(e @ SessionError::HandshakeFailed(_))) => Err(e),
            (Err(e), _) => Err(e),
        }
    })
}
