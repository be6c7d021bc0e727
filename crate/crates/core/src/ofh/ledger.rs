//! Byte-accounting ledger for the memory metric.
//!
//! The ledger counts what the protocol has to keep: handshake message
//! buffers and key material on both peers, SA state including replay
//! windows, and ESP packets on the wire. It is sampled after the handshake
//! and every [`CHECKPOINT_INTERVAL`] packets. In-flight bytes use the nominal
//! schedule and base delay, so the result does not depend on timing noise.

use super::profile::{ChannelModel, TrafficProfile};

pub const CHECKPOINT_INTERVAL: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryLedger {
    checkpoints: Vec<(String, usize)>,
}

impl MemoryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn checkpoint(&mut self, label: impl Into<String>, bytes: usize) {
        self.checkpoints.push((label.into(), bytes));
    }

    pub fn checkpoints(&self) -> &[(String, usize)] {
        &self.checkpoints
    }

    pub fn peak(&self) -> usize {
        self.checkpoints.iter().map(|(_, b)| *b).max().unwrap_or(0)
    }
}

/// Packets sent by the time packet `k` leaves whose nominal arrival lies
/// after that instant.
pub fn nominal_in_flight(profile: &TrafficProfile, channel: &ChannelModel, k: u64) -> u64 {
    let base = u128::from(channel.base_delay_ns());
    let window = (base * u128::from(profile.rate)).div_ceil(1_000_000_000);
    (window as u64).min(k + 1)
}

/// Full ledger for a session: `resident` is handshake plus SA state held
/// throughout; traffic checkpoints add the nominal in-flight bytes.
pub fn session_ledger(
    resident: usize,
    profile: &TrafficProfile,
    channel: &ChannelModel,
    wire_len: usize,
) -> MemoryLedger {
    let mut ledger = MemoryLedger::new();
    ledger.checkpoint("post-handshake", resident);
    let n = profile.packet_count();
    let mut k = CHECKPOINT_INTERVAL;
    while k <= n {
        let inflight = nominal_in_flight(profile, channel, k - 1) as usize * wire_len;
        ledger.checkpoint(format!("packets={k}"), resident + inflight);
        k += CHECKPOINT_INTERVAL;
    }
    if n % CHECKPOINT_INTERVAL != 0 {
        let inflight = nominal_in_flight(profile, channel, n - 1) as usize * wire_len;
        ledger.checkpoint(format!("packets={n}"), resident + inflight);
    }
    ledger
}
