//! Per-packet observations of one session and their text dump.
//!
//! ```text
//! # kem=toy-lwe
//! # handshake_bytes=7302
//! 1 0 452113 1240 1.402
//! 2 100000 LOST 1240 1.377
//! ```
//!
//! Record columns: `seq send_ns recv_ns|LOST wire_len enc_time_us`, the
//! encryption time printed with three decimals (exact nanoseconds).

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub seq: u64,
    pub send_ns: u64,
    /// `None` when the packet never reached the RU.
    pub recv_ns: Option<u64>,
    pub wire_len: usize,
    pub enc_time_ns: u64,
}

impl PacketRecord {
    pub fn delay_ns(&self) -> Option<u64> {
        self.recv_ns.map(|r| r - self.send_ns)
    }

    pub fn enc_time_us(&self) -> f64 {
        self.enc_time_ns as f64 / 1e3
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMeta {
    pub kem: String,
    pub encr: String,
    pub integ: String,
    pub transport: String,
    pub handshake_ms: f64,
    pub handshake_bytes: usize,
    pub mem_bytes_peak: usize,
    pub rss_bytes: Option<u64>,
    /// Delivered payloads whose bytes differed from what was sent.
    pub payload_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PacketTrace {
    pub meta: TraceMeta,
    pub records: Vec<PacketRecord>,
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PacketTrace {
    pub fn delivered(&self) -> impl Iterator<Item = &PacketRecord> {
        self.records.iter().filter(|r| r.recv_ns.is_some())
    }

    pub fn delivered_count(&self) -> usize {
        self.delivered().count()
    }

    pub fn sent_count(&self) -> usize {
        self.records.len()
    }

    pub fn write_to(&self, mut out: impl Write) -> io::Result<()> {
        let m = &self.meta;
        let mut head = String::new();
        let _ = writeln!(head, "# kem={}", m.kem);
        let _ = writeln!(head, "# encr={}", m.encr);
        let _ = writeln!(head, "# integ={}", m.integ);
        let _ = writeln!(head, "# transport={}", m.transport);
        let _ = writeln!(head, "# handshake_ms={}", m.handshake_ms);
        let _ = writeln!(head, "# handshake_bytes={}", m.handshake_bytes);
        let _ = writeln!(head, "# mem_bytes_peak={}", m.mem_bytes_peak);
        if let Some(rss) = m.rss_bytes {
            let _ = writeln!(head, "# rss_bytes={rss}");
        }
        let _ = writeln!(head, "# payload_errors={}", m.payload_errors);
        let _ = writeln!(head, "# seq send_ns recv_ns|LOST wire_len enc_time_us");
        out.write_all(head.as_bytes())?;
        let mut line = String::with_capacity(64);
        for r in &self.records {
            line.clear();
            let _ = write!(line, "{} {} ", r.seq, r.send_ns);
            match r.recv_ns {
                Some(t) => {
                    let _ = write!(line, "{t}");
                }
                None => line.push_str("LOST"),
            }
            let _ = writeln!(
                line,
                " {} {}.{:03}",
                r.wire_len,
                r.enc_time_ns / 1000,
                r.enc_time_ns % 1000
            );
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn read_from(input: impl BufRead) -> Result<Self, TraceParseError> {
        let mut trace = PacketTrace::default();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let n = idx + 1;
            let err = |message: String| TraceParseError::Syntax { line: n, message };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    set_meta(&mut trace.meta, k.trim(), v.trim()).map_err(err)?;
                }
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 5 {
                return Err(err(format!("expected 5 columns, found {}", cols.len())));
            }
            let int = |s: &str, what: &str| {
                s.parse::<u64>()
                    .map_err(|e| err(format!("bad {what} `{s}`: {e}")))
            };
            let recv_ns = match cols[2] {
                "LOST" => None,
                s => Some(int(s, "recv_ns")?),
            };
            trace.records.push(PacketRecord {
                seq: int(cols[0], "seq")?,
                send_ns: int(cols[1], "send_ns")?,
                recv_ns,
                wire_len: int(cols[3], "wire_len")? as usize,
                enc_time_ns: parse_micros(cols[4]).map_err(err)?,
            });
        }
        Ok(trace)
    }

    pub fn from_text(text: &str) -> Result<Self, TraceParseError> {
        Self::read_from(text.as_bytes())
    }
}

fn set_meta(m: &mut TraceMeta, key: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
        v.parse().map_err(|_| format!("bad value for {key}: `{v}`"))
    }
    match key {
        "kem" => m.kem = value.to_string(),
        "encr" => m.encr = value.to_string(),
        "integ" => m.integ = value.to_string(),
        "transport" => m.transport = value.to_string(),
        "handshake_ms" => m.handshake_ms = num(key, value)?,
        "handshake_bytes" => m.handshake_bytes = num(key, value)?,
        "mem_bytes_peak" => m.mem_bytes_peak = num(key, value)?,
        "rss_bytes" => m.rss_bytes = Some(num(key, value)?),
        "payload_errors" => m.payload_errors = num(key, value)?,
        other => return Err(format!("unknown metadata key `{other}`")),
    }
    Ok(())
}

/// `12.345` → 12345 ns. At most three decimals.
fn parse_micros(s: &str) -> Result<u64, String> {
    let bad = || format!("bad enc_time_us `{s}`");
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 3 || whole.is_empty() {
        return Err(bad());
    }
    let whole: u64 = whole.parse().map_err(|_| bad())?;
    let frac_ns: u64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<3}").parse().map_err(|_| bad())?
    };
    Ok(whole * 1000 + frac_ns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PacketTrace {
        PacketTrace {
            meta: TraceMeta {
                kem: "toy-lwe".into(),
                encr: "AES-128".into(),
                integ: "SHA-256".into(),
                transport: "in-process".into(),
                handshake_ms: 1.25,
                handshake_bytes: 7302,
                mem_bytes_peak: 40000,
                rss_bytes: Some(123),
                payload_errors: 0,
            },
            records: vec![
                PacketRecord {
                    seq: 1,
                    send_ns: 0,
                    recv_ns: Some(452_113),
                    wire_len: 1240,
                    enc_time_ns: 1402,
                },
                PacketRecord {
                    seq: 2,
                    send_ns: 100_000,
                    recv_ns: None,
                    wire_len: 1240,
                    enc_time_ns: 7,
                },
            ],
        }
    }

    #[test]
    fn dump_format() {
        let text = sample().to_text();
        assert!(text.contains("\n1 0 452113 1240 1.402\n"));
        assert!(text.contains("\n2 100000 LOST 1240 0.007\n"));
    }

    #[test]
    fn round_trip() {
        let t = sample();
        assert_eq!(PacketTrace::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn micros_parsing() {
        assert_eq!(parse_micros("5").unwrap(), 5000);
        assert_eq!(parse_micros("5.1").unwrap(), 5100);
        assert_eq!(parse_micros("0.007").unwrap(), 7);
        assert!(parse_micros("1.2345").is_err());
        assert!(parse_micros(".5").is_err());
    }

    #[test]
    fn bad_lines_rejected() {
        assert!(PacketTrace::from_text("1 2 3\n").is_err());
        assert!(PacketTrace::from_text("1 2 x 4 5\n").is_err());
        assert!(PacketTrace::from_text("# bogus=1\n").is_err());
    }
}
