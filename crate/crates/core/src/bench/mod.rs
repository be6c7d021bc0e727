//! Metric estimators, the experiment matrix runner and its CSV output.

pub mod estimators;
pub mod plot;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conf::{ConfigError, FlatConfig};
use crate::ike::{PeerConfig, Proposal};
use crate::kem::dh::MODP_2048_ID;
use crate::kem::stream::sha256;
use crate::kem::KemRegistry;
use crate::ofh::{
    run_session, ChannelModel, PacketTrace, SessionConfig, TrafficProfile, Transport,
};
use crate::suite::{Encr, Integ};

pub use estimators::{
    compute_delay, compute_jitter, compute_throughput, measure_encryption_time, measure_memory,
    EstimatorError,
};

pub const CSV_HEADER: [&str; 15] = [
    "kem",
    "encr",
    "integ",
    "run",
    "status",
    "throughput_mbps",
    "delay_ms_mean",
    "jitter_rfc3550_us",
    "jitter_stddev_us",
    "enc_time_us_mean",
    "enc_time_us_p99",
    "handshake_ms",
    "handshake_bytes",
    "mem_bytes_peak",
    "rss_bytes_optional",
];

pub const STATUS_OK: &str = "ok";
pub const NO_KEM: &str = "none";
pub const DEFAULT_PSK: &str = "pqofh-shared-key";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("CSV: {0}")]
    Csv(String),
    #[error("UnknownMetric: `{0}`")]
    UnknownMetric(String),
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::Csv(e.to_string())
    }
}

/// One experiment cell. Metric columns are empty on error rows or when an
/// estimator has too little data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub kem: String,
    pub encr: String,
    pub integ: String,
    pub run: u32,
    pub status: String,
    pub throughput_mbps: Option<f64>,
    pub delay_ms_mean: Option<f64>,
    pub jitter_rfc3550_us: Option<f64>,
    pub jitter_stddev_us: Option<f64>,
    pub enc_time_us_mean: Option<f64>,
    pub enc_time_us_p99: Option<f64>,
    pub handshake_ms: Option<f64>,
    pub handshake_bytes: Option<u64>,
    pub mem_bytes_peak: Option<u64>,
    pub rss_bytes_optional: Option<u64>,
}

impl MetricsRow {
    pub fn error(kem: &str, encr: Encr, integ: Integ, run: u32, status: String) -> Self {
        Self {
            kem: kem.to_string(),
            encr: encr.to_string(),
            integ: integ.to_string(),
            run,
            status,
            throughput_mbps: None,
            delay_ms_mean: None,
            jitter_rfc3550_us: None,
            jitter_stddev_us: None,
            enc_time_us_mean: None,
            enc_time_us_p99: None,
            handshake_ms: None,
            handshake_bytes: None,
            mem_bytes_peak: None,
            rss_bytes_optional: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    /// Numeric column by CSV name.
    pub fn metric(&self, name: &str) -> Result<Option<f64>, BenchError> {
        Ok(match name {
            "throughput_mbps" => self.throughput_mbps,
            "delay_ms_mean" => self.delay_ms_mean,
            "jitter_rfc3550_us" => self.jitter_rfc3550_us,
            "jitter_stddev_us" => self.jitter_stddev_us,
            "enc_time_us_mean" => self.enc_time_us_mean,
            "enc_time_us_p99" => self.enc_time_us_p99,
            "handshake_ms" => self.handshake_ms,
            "handshake_bytes" => self.handshake_bytes.map(|v| v as f64),
            "mem_bytes_peak" => self.mem_bytes_peak.map(|v| v as f64),
            "rss_bytes_optional" => self.rss_bytes_optional.map(|v| v as f64),
            other => return Err(BenchError::UnknownMetric(other.to_string())),
        })
    }
}

/// All estimators applied to one trace.
pub fn metrics_from_trace(trace: &PacketTrace, kem: &str, run: u32) -> MetricsRow {
    let (rfc, sd) = compute_jitter(trace).ok().unzip();
    let (enc_mean, enc_p99) = measure_encryption_time(trace).ok().unzip();
    MetricsRow {
        kem: kem.to_string(),
        encr: trace.meta.encr.clone(),
        integ: trace.meta.integ.clone(),
        run,
        status: STATUS_OK.to_string(),
        throughput_mbps: compute_throughput(trace).ok(),
        delay_ms_mean: compute_delay(trace).ok(),
        jitter_rfc3550_us: rfc,
        jitter_stddev_us: sd,
        enc_time_us_mean: enc_mean,
        enc_time_us_p99: enc_p99,
        handshake_ms: Some(trace.meta.handshake_ms),
        handshake_bytes: Some(trace.meta.handshake_bytes as u64),
        mem_bytes_peak: Some(measure_memory(trace) as u64),
        rss_bytes_optional: trace.meta.rss_bytes,
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// CSV writer that flushes after every row.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl CsvSink<File> {
    pub fn create(path: &Path) -> Result<Self, BenchError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Self::new(file)
    }
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Result<Self, BenchError> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        writer.write_record(CSV_HEADER)?;
        writer.flush().map_err(|e| BenchError::Csv(e.to_string()))?;
        Ok(Self { writer })
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<(), BenchError> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| BenchError::Csv(e.to_string()))
    }

    pub fn into_inner(self) -> Result<W, BenchError> {
        self.writer
            .into_inner()
            .map_err(|e| BenchError::Csv(e.to_string()))
    }
}

pub fn write_csv(rows: &[MetricsRow], out: impl Write) -> Result<(), BenchError> {
    let mut sink = CsvSink::new(out)?;
    for r in rows {
        sink.push(r)?;
    }
    Ok(())
}

/// Parses rows written by [`CsvSink`]. An empty input yields no rows; a
/// header that differs from [`CSV_HEADER`] is rejected.
pub fn read_csv(input: impl io::Read) -> Result<Vec<MetricsRow>, BenchError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = reader.records();
    match records.next() {
        None => return Ok(Vec::new()),
        Some(header) => {
            let header = header?;
            if header.iter().ne(CSV_HEADER) {
                return Err(BenchError::Csv(format!(
                    "unexpected header `{}`",
                    header.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
    }
    let header = csv::StringRecord::from(CSV_HEADER.to_vec());
    records
        .map(|r| Ok(r?.deserialize(Some(&header))?))
        .collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<MetricsRow>, BenchError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_csv(file)
}

/// Master seed from a user-facing seed string.
pub fn master_seed(seed: &str) -> [u8; 32] {
    sha256(&[b"pqofh/seed/", seed.as_bytes()])
}

fn parse_list<T>(key: &str, items: Vec<String>) -> Result<Vec<T>, ConfigError>
where
    T: std::str::FromStr<Err = crate::suite::ParseSuiteError>,
{
    items
        .iter()
        .map(|s| {
            s.parse().map_err(|e: crate::suite::ParseSuiteError| ConfigError::InvalidValue {
                key: key.into(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// The KEM × cipher × hash × repetition grid and the session settings
/// shared by every cell.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// `none`, a suite name, or a `+`-joined chain of suites.
    pub kems: Vec<String>,
    pub encr: Vec<Encr>,
    pub integ: Vec<Integ>,
    pub repetitions: u32,
    pub profile: TrafficProfile,
    pub channel: ChannelModel,
    pub transport: Transport,
    pub seed: String,
    pub psk: String,
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    /// No-KEM baseline plus the four mock KEMs, all AES and SHA variants,
    /// three repetitions, default traffic profile.
    pub fn full_matrix() -> Self {
        Self {
            kems: ["none", "mock-kyber", "mock-bike", "mock-hqc", "mock-frodo"]
                .map(String::from)
                .to_vec(),
            encr: Encr::ALL.to_vec(),
            integ: Integ::ALL.to_vec(),
            repetitions: 3,
            profile: TrafficProfile::default(),
            channel: ChannelModel::default(),
            transport: Transport::InProcess,
            seed: "0".into(),
            psk: DEFAULT_PSK.into(),
            out: None,
        }
    }

    /// Reads matrix keys from `conf`, leaving other keys in place. Absent
    /// keys keep the values of [`ExperimentSpec::full_matrix`].
    pub fn take_from(conf: &mut FlatConfig) -> Result<Self, ConfigError> {
        let mut spec = Self::full_matrix();
        if let Some(k) = conf.take_list("kems")? {
            spec.kems = k;
        }
        if let Some(e) = conf.take_list("encr")? {
            spec.encr = parse_list("encr", e)?;
        }
        if let Some(i) = conf.take_list("integ")? {
            spec.integ = parse_list("integ", i)?;
        }
        if let Some(r) = conf.take_parsed("repetitions")? {
            spec.repetitions = r;
        }
        spec.profile = TrafficProfile::take_from(conf)?;
        spec.channel = ChannelModel::take_from(conf)?;
        if let Some(t) = conf.take_parsed("transport")? {
            spec.transport = t;
        }
        if let Some(s) = conf.take("seed") {
            spec.seed = s;
        }
        if let Some(p) = conf.take("psk") {
            spec.psk = p;
        }
        if let Some(o) = conf.take("out") {
            spec.out = Some(PathBuf::from(o));
        }
        Ok(spec)
    }

    /// Parses a whole matrix file; unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut conf = FlatConfig::parse(text)?;
        let spec = Self::take_from(&mut conf)?;
        conf.finish()?;
        Ok(spec)
    }

    pub fn validate(&self, registry: &KemRegistry) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidSpec(m.to_string()));
        if self.kems.is_empty() {
            return bad("kem list is empty");
        }
        if self.encr.is_empty() {
            return bad("encr list is empty");
        }
        if self.integ.is_empty() {
            return bad("integ list is empty");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        for kem in &self.kems {
            let p = Proposal::new(Encr::Aes128, Integ::Sha256, MODP_2048_ID, &addke_of(kem));
            p.validate(registry)
                .map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
        }
        self.profile
            .validate()
            .and_then(|_| self.channel.validate())
            .map_err(|e| BenchError::InvalidSpec(e.to_string()))
    }

    pub fn cell_count(&self) -> usize {
        self.kems.len() * self.encr.len() * self.integ.len() * self.repetitions as usize
    }

    /// Cells in execution order: KEM, then cipher, then hash, then run.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.cell_count());
        for kem in &self.kems {
            for &encr in &self.encr {
                for &integ in &self.integ {
                    for run in 0..self.repetitions {
                        out.push(Cell {
                            kem: kem.clone(),
                            encr,
                            integ,
                            run,
                        });
                    }
                }
            }
        }
        out
    }

    /// Session settings for one cell; both peers hold the same single
    /// proposal.
    pub fn session_for(&self, cell: &Cell) -> SessionConfig {
        let proposal = Proposal::new(cell.encr, cell.integ, MODP_2048_ID, &addke_of(&cell.kem));
        let peer = PeerConfig::new(vec![proposal], self.psk.as_bytes());
        SessionConfig {
            profile: self.profile,
            channel: self.channel,
            initiator: peer.clone(),
            responder: peer,
            transport: self.transport,
            seed: cell.seed(&master_seed(&self.seed)),
        }
    }
}

/// `none` → no additional exchange; otherwise split on `+`.
pub fn addke_of(kem: &str) -> Vec<&str> {
    if kem == NO_KEM {
        Vec::new()
    } else {
        kem.split('+').map(str::trim).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub kem: String,
    pub encr: Encr,
    pub integ: Integ,
    pub run: u32,
}

impl Cell {
    pub fn seed(&self, master: &[u8; 32]) -> [u8; 32] {
        sha256(&[
            master,
            self.kem.as_bytes(),
            b"/",
            self.encr.name().as_bytes(),
            b"/",
            self.integ.name().as_bytes(),
            b"/",
            &self.run.to_be_bytes(),
        ])
    }
}

/// Runs every cell sequentially. Failed cells become error rows and the
/// matrix continues. With `spec.out` set, the CSV file is created before
/// the first session and flushed after every row.
pub fn run_matrix(
    registry: Arc<KemRegistry>,
    spec: &ExperimentSpec,
    mut on_row: impl FnMut(usize, usize, &MetricsRow),
) -> Result<Vec<MetricsRow>, BenchError> {
    spec.validate(&registry)?;
    let mut sink = match &spec.out {
        Some(path) => Some(CsvSink::create(path)?),
        None => None,
    };
    let cells = spec.cells();
    let total = cells.len();
    let mut rows = Vec::with_capacity(total);
    for (i, cell) in cells.iter().enumerate() {
        let row = match run_session(registry.clone(), &spec.session_for(cell)) {
            Ok(trace) => metrics_from_trace(&trace, &cell.kem, cell.run),
            Err(e) => MetricsRow::error(&cell.kem, cell.encr, cell.integ, cell.run, e.tag()),
        };
        if let Some(s) = sink.as_mut() {
            s.push(&row)?;
        }
        on_row(i, total, &row);
        rows.push(row);
    }
    Ok(rows)
}
