use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ledger::session_ledger;
use super::trace::{PacketRecord, PacketTrace, TraceMeta};
use super::{fill_payload, payload_matches, rss_bytes, SessionConfig, SessionError};
use crate::clock::thread_cpu_ns;
use crate::esp::{install_pair, SecurityAssociation, ESP_OVERHEAD};
use crate::ike::{run_handshake, Role};
use crate::kem::stream::derive_seed;
use crate::kem::KemRegistry;

use super::inject_channel;

/// What the DU hands to the channel for one packet.
struct Departure {
    seq: u64,
    depart_ns: u64,
    /// `None` if the channel dropped it.
    delivery: Option<(u64, Vec<u8>)>,
}

struct RuResult {
    received: Vec<(u64, u64)>,
    payload_errors: usize,
}

pub(super) fn run(
    registry: Arc<KemRegistry>,
    cfg: &SessionConfig,
) -> Result<PacketTrace, SessionError> {
    let hs = run_handshake(
        registry.clone(),
        cfg.initiator.clone(),
        cfg.responder.clone(),
        &cfg.seed,
    )?;
    let chosen = hs.chosen().clone();
    let (du_out, du_in) = install_pair(
        hs.initiator_schedule(),
        chosen.encr,
        chosen.integ,
        Role::Initiator,
        &derive_seed(&cfg.seed, b"ofh/du"),
    )?;
    let (ru_out, ru_in) = install_pair(
        hs.responder_schedule(),
        chosen.encr,
        chosen.integ,
        Role::Responder,
        &derive_seed(&cfg.seed, b"ofh/ru"),
    )?;
    let resident = hs.initiator.state().retained_bytes()
        + hs.responder.state().retained_bytes()
        + [&du_out, &du_in, &ru_out, &ru_in]
            .iter()
            .map(|sa| sa.state_bytes())
            .sum::<usize>();

    let profile = cfg.profile;
    let channel = cfg.channel;
    let n = profile.packet_count();
    let (tx, rx) = sync_channel::<Departure>(1024);
    let mut rng = ChaCha8Rng::from_seed(derive_seed(&cfg.seed, b"ofh/channel"));

    let (sent, ru) = thread::scope(|s| {
        let ru = s.spawn(move || ru_loop(ru_in, rx, channel.min_delay_ns(), profile.packet_size));
        let sent = du_loop(du_out, tx, n, &profile, |_| inject_channel(&channel, &mut rng));
        (sent, ru.join().expect("RU thread panicked"))
    });
    let sent = sent?;

    let mut recv = vec![None; sent.len()];
    for (seq, t) in ru.received {
        recv[(seq - 1) as usize] = Some(t);
    }
    let records: Vec<PacketRecord> = sent
        .into_iter()
        .zip(recv)
        .map(|(mut r, t)| {
            r.recv_ns = t;
            r
        })
        .collect();

    let ledger = session_ledger(
        resident,
        &profile,
        &channel,
        profile.packet_size + ESP_OVERHEAD,
    );
    Ok(PacketTrace {
        meta: TraceMeta {
            kem: chosen.kem_label(),
            encr: chosen.encr.to_string(),
            integ: chosen.integ.to_string(),
            transport: cfg.transport.to_string(),
            handshake_ms: hs.elapsed.as_secs_f64() * 1e3,
            handshake_bytes: hs.handshake_bytes,
            mem_bytes_peak: ledger.peak(),
            rss_bytes: rss_bytes(),
            payload_errors: ru.payload_errors,
        },
        records,
    })
}

fn du_loop(
    mut sa: SecurityAssociation,
    tx: std::sync::mpsc::SyncSender<Departure>,
    n: u64,
    profile: &super::TrafficProfile,
    mut channel: impl FnMut(u64) -> Option<u64>,
) -> Result<Vec<PacketRecord>, SessionError> {
    let mut records = Vec::with_capacity(n as usize);
    let mut payload = vec![0u8; profile.packet_size];
    let mut free_at = 0u64;
    for k in 0..n {
        let seq = k + 1;
        let due = profile.send_offset_ns(k);
        fill_payload(seq, &mut payload);
        let (wire, took) = sa.protect(&payload)?;
        let enc_ns = took.as_nanos() as u64;
        let depart_ns = due.max(free_at) + enc_ns;
        free_at = depart_ns;
        records.push(PacketRecord {
            seq,
            send_ns: due,
            recv_ns: None,
            wire_len: wire.len(),
            enc_time_ns: enc_ns,
        });
        let delivery = channel(seq).map(|d| (depart_ns + d, wire));
        if tx
            .send(Departure {
                seq,
                depart_ns,
                delivery,
            })
            .is_err()
        {
            break;
        }
    }
    Ok(records)
}

fn ru_loop(
    mut sa: SecurityAssociation,
    rx: std::sync::mpsc::Receiver<Departure>,
    min_delay_ns: u64,
    packet_size: usize,
) -> RuResult {
    let mut heap: BinaryHeap<Reverse<(u64, u64, Vec<u8>)>> = BinaryHeap::new();
    let mut out = RuResult {
        received: Vec::new(),
        payload_errors: 0,
    };
    let mut free_at = 0u64;
    let mut scratch = Vec::new();
    let mut deliver = |arrival: u64, seq: u64, wire: Vec<u8>, out: &mut RuResult| {
        let start = thread_cpu_ns();
        let result = sa.unprotect(&wire);
        let took = thread_cpu_ns() - start;
        let done = arrival.max(free_at) + took;
        free_at = done;
        if let Ok(pt) = result {
            if !payload_matches(seq, &pt, packet_size, &mut scratch) {
                out.payload_errors += 1;
            }
            out.received.push((seq, done));
        }
    };
    for d in rx {
        if let Some((arrival, wire)) = d.delivery {
            heap.push(Reverse((arrival, d.seq, wire)));
        }
        // nothing sent later can arrive before this bound
        let horizon = d.depart_ns + min_delay_ns;
        while heap.peek().is_some_and(|Reverse((a, _, _))| *a <= horizon) {
            let Reverse((a, seq, wire)) = heap.pop().unwrap();
            deliver(a, seq, wire, &mut out);
        }
    }
    while let Some(Reverse((a, seq, wire))) = heap.pop() {
        deliver(a, seq, wire, &mut out);
    }
    out
}
