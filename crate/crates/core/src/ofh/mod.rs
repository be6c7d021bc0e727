//! DU and RU endpoints exchanging synthetic fronthaul traffic through the
//! tunnel.
//!
//! Two transports share one trace schema:
//!
//! - `in-process`: DU and RU run on two threads joined by a queue. Time is
//!   virtual: packet `k` is due at `k / rate`, the DU is busy for the
//!   measured protect time, the channel adds its sampled delay and the RU is
//!   busy for the measured unprotect time. Both are thread CPU times, so
//!   scheduler preemption does not leak into the delays. Sessions therefore cost CPU time
//!   rather than wall time, and delivery order and drops are reproducible.
//! - `udp`: real sockets and the host monotonic clock, paced in real time.

mod inproc;
pub mod ledger;
pub mod profile;
pub mod trace;
pub mod udp;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::esp::EspError;
use crate::ike::{IkeError, PeerConfig};
use crate::kem::KemRegistry;

pub use ledger::MemoryLedger;
pub use profile::{inject_channel, ChannelModel, TrafficProfile};
pub use trace::{PacketRecord, PacketTrace, TraceMeta};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("HandshakeFailed: {0}")]
    HandshakeFailed(#[from] IkeError),
    #[error("TransportUnavailable: {0}")]
    TransportUnavailable(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("tunnel: {0}")]
    Esp(#[from] EspError),
}

impl SessionError {
    /// Short tag for status columns.
    pub fn tag(&self) -> String {
        match self {
            SessionError::HandshakeFailed(e) => format!("HandshakeFailed:{}", e.name()),
            SessionError::TransportUnavailable(_) => "TransportUnavailable".into(),
            SessionError::InvalidProfile(_) => "InvalidProfile".into(),
            SessionError::Esp(_) => "EspError".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    InProcess,
    Udp,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::InProcess => "in-process",
            Transport::Udp => "udp",
        })
    }
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "in-process" | "inprocess" | "in_process" => Ok(Transport::InProcess),
            "udp" | "udp-loopback" => Ok(Transport::Udp),
            other => Err(format!("unknown transport `{other}` (expected in-process or udp)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub profile: TrafficProfile,
    pub channel: ChannelModel,
    /// DU side of the handshake.
    pub initiator: PeerConfig,
    /// RU side of the handshake.
    pub responder: PeerConfig,
    pub transport: Transport,
    pub seed: [u8; 32],
}

/// Handshake, SA installation and one traffic run; returns the trace.
pub fn run_session(
    registry: Arc<KemRegistry>,
    config: &SessionConfig,
) -> Result<PacketTrace, SessionError> {
    config.profile.validate()?;
    config.channel.validate()?;
    match config.transport {
        Transport::InProcess => inproc::run(registry, config),
        Transport::Udp => udp::run_loopback(registry, config),
    }
}

/// Deterministic payload for packet `seq`: the sequence number followed by
/// a seq-dependent byte ramp, truncated to the buffer length.
pub fn fill_payload(seq: u64, buf: &mut [u8]) {
    let tag = (seq as u32).to_be_bytes();
    let salt = seq as u8;
    for (i, b) in buf.iter_mut().enumerate() {
        *b = if i < 4 {
            tag[i]
        } else {
            (i as u8).wrapping_mul(13) ^ salt
        };
    }
}

pub fn payload_matches(seq: u64, data: &[u8], expected_len: usize, scratch: &mut Vec<u8>) -> bool {
    if data.len() != expected_len {
        return false;
    }
    scratch.resize(expected_len, 0);
    fill_payload(seq, scratch);
    scratch.as_slice() == data
}

/// Resident set size from `/proc/self/status`, where available.
pub fn rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_pattern() {
        let mut a = vec![0; 12];
        fill_payload(0x0102_0304, &mut a);
        assert_eq!(&a[..4], &[1, 2, 3, 4]);
        let mut scratch = Vec::new();
        assert!(payload_matches(0x0102_0304, &a, 12, &mut scratch));
        assert!(!payload_matches(0x0102_0305, &a, 12, &mut scratch));
        assert!(!payload_matches(0x0102_0304, &a[..11], 12, &mut scratch));
        let mut one = [0u8; 1];
        fill_payload(7, &mut one);
        assert_eq!(one, [0]);
    }

    #[test]
    fn transport_names() {
        assert_eq!("udp".parse::<Transport>().unwrap(), Transport::Udp);
        assert_eq!(
            "in-process".parse::<Transport>().unwrap().to_string(),
            "in-process"
        );
        assert!("tcp".parse::<Transport>().is_err());
    }
}
