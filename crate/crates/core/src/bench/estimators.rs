//! Pure metric estimators over a [`PacketTrace`].

use thiserror::Error;

use crate::esp::ESP_OVERHEAD;
use crate::ofh::PacketTrace;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorError {
    #[error("EmptyTrace")]
    EmptyTrace,
    #[error("InsufficientData: need at least {0} delivered packets")]
    InsufficientData(usize),
}

/// Delivered application payload in Mbit/s over the span from the first
/// send to the last receive.
pub fn compute_throughput(trace: &PacketTrace) -> Result<f64, EstimatorError> {
    let first_send = trace
        .records
        .iter()
        .map(|r| r.send_ns)
        .min()
        .ok_or(EstimatorError::EmptyTrace)?;
    let mut bits = 0u128;
    let mut last_recv = None;
    for r in trace.delivered() {
        bits += 8 * r.wire_len.saturating_sub(ESP_OVERHEAD) as u128;
        last_recv = last_recv.max(r.recv_ns);
    }
    let Some(last) = last_recv else { return Ok(0.0) };
    let span_ns = last.saturating_sub(first_send);
    if span_ns == 0 {
        return Ok(0.0);
    }
    // bits per ns * 1e3 = Mbit/s
    Ok(bits as f64 / span_ns as f64 * 1e3)
}

/// Mean one-way delay in milliseconds.
pub fn compute_delay(trace: &PacketTrace) -> Result<f64, EstimatorError> {
    let mut n = 0u64;
    let mut sum = 0u128;
    for r in trace.delivered() {
        n += 1;
        sum += u128::from(r.delay_ns().unwrap());
    }
    if n == 0 {
        return Err(EstimatorError::EmptyTrace);
    }
    Ok(sum as f64 / n as f64 / 1e6)
}

/// `(rfc3550_us, stddev_us)`. The interarrival estimator runs over
/// delivered packets in arrival order; the standard deviation is the
/// sample (n - 1) deviation of one-way delays.
pub fn compute_jitter(trace: &PacketTrace) -> Result<(f64, f64), EstimatorError> {
    let mut arrivals: Vec<(u64, u64, f64)> = trace
        .delivered()
        .map(|r| (r.recv_ns.unwrap(), r.seq, r.delay_ns().unwrap() as f64 / 1e3))
        .collect();
    if arrivals.len() < 2 {
        return Err(EstimatorError::InsufficientData(2));
    }
    arrivals.sort_unstable_by_key(|&(t, seq, _)| (t, seq));
    let delays: Vec<f64> = arrivals.iter().map(|a| a.2).collect();
    Ok((rfc3550_jitter(&delays), sample_stddev(&delays)))
}

/// `J += (|D| - J) / 16` over successive transit times.
pub fn rfc3550_jitter(transits: &[f64]) -> f64 {
    transits
        .windows(2)
        .fold(0.0, |j, w| j + ((w[1] - w[0]).abs() - j) / 16.0)
}

pub fn sample_stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * N)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// `(mean_us, p99_us)` of per-packet encryption time over all sent packets.
pub fn measure_encryption_time(trace: &PacketTrace) -> Result<(f64, f64), EstimatorError> {
    if trace.records.is_empty() {
        return Err(EstimatorError::EmptyTrace);
    }
    let mut us: Vec<f64> = trace.records.iter().map(|r| r.enc_time_us()).collect();
    let mean = us.iter().sum::<f64>() / us.len() as f64;
    us.sort_unstable_by(f64::total_cmp);
    Ok((mean, nearest_rank(&us, 99.0)))
}

/// Peak of the session's byte-accounting ledger.
pub fn measure_memory(trace: &PacketTrace) -> usize {
    trace.meta.mem_bytes_peak
}
