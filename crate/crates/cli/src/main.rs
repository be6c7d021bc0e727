//! `pqofh`: list KEM suites, run a handshake, drive the benchmark matrix,
//! run one tunnel endpoint over UDP, and turn result CSVs into plot data.

use std::fs;
use std::io::{self, Write};
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pqofh_core::bench::{
    self, master_seed, plot::plot_table, read_csv_file, BenchError, ExperimentSpec,
    DEFAULT_PSK,
};
use pqofh_core::conf::{split_list, ConfigError, FlatConfig};
use pqofh_core::ike::{run_handshake, IkeError, PeerConfig, Proposal};
use pqofh_core::kem::dh::MODP_2048_ID;
use pqofh_core::kem::KemRegistry;
use pqofh_core::ofh::udp::{run_du, run_ru};
use pqofh_core::ofh::{
    ChannelModel, PacketTrace, SessionConfig, SessionError, TrafficProfile, Transport,
};
use pqofh_core::{Encr, Integ};

const EXIT_USAGE: u8 = 2;
const EXIT_HANDSHAKE: u8 = 3;
const EXIT_TRANSPORT: u8 = 4;
const EXIT_MATRIX: u8 = 5;

const DEFAULT_SEED: &str = "0";
const DEFAULT_LISTEN: &str = "127.0.0.1:4500";
const RU_IDLE: Duration = Duration::from_secs(5);

#[derive(Parser)]
#[command(name = "pqofh", version, about = "Hybrid post-quantum IKE/ESP tunnel benchmark")]
struct Cli {
    /// Flat key = value file; keys are long flag names without the leading dashes.
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed string for every random choice [env: PQOFH_SEED] [default: 0]
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Replace the built-in mock KEM profiles.
    #[arg(long, global = true, value_name = "FILE")]
    mock_config: Option<PathBuf>,
    /// More detail on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List registered KEM suites with their wire sizes.
    Suites {
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Run both handshake roles in-process and print the message ladder.
    Handshake(HandshakeArgs),
    /// Run the experiment matrix and write one CSV row per cell.
    Bench(BenchArgs),
    /// Run one endpoint of a UDP tunnel.
    Tunnel(TunnelArgs),
    /// Turn a results CSV into gnuplot columns for one metric.
    Plotdata(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Du,
    Ru,
}

#[derive(Args)]
struct PolicyArgs {
    /// Additional key exchanges in order, comma separated, or `none`.
    #[arg(long)]
    kems: Option<String>,
    #[arg(long)]
    encr: Option<String>,
    #[arg(long)]
    integ: Option<String>,
    /// Pre-shared key.
    #[arg(long)]
    psk: Option<String>,
}

#[derive(Args)]
struct HandshakeArgs {
    #[command(flatten)]
    policy: PolicyArgs,
    /// Responder's required key exchanges; defaults to --kems.
    #[arg(long)]
    peer_kems: Option<String>,
    /// Responder's pre-shared key; defaults to --psk.
    #[arg(long)]
    peer_psk: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Matrix file; without one the 5 x 3 x 3 x 3 default matrix runs.
    #[arg(long, value_name = "FILE")]
    matrix: Option<PathBuf>,
    /// Output CSV; stdout if neither this nor the matrix names one.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// in-process or udp
    #[arg(long)]
    transport: Option<String>,
}

#[derive(Args)]
struct TunnelArgs {
    #[arg(long, value_enum)]
    role: Option<Role>,
    /// RU address the DU sends to.
    #[arg(long)]
    peer: Option<String>,
    /// Local bind address (RU default 127.0.0.1:4500, DU default ephemeral).
    #[arg(long)]
    listen: Option<String>,
    /// Traffic and channel profile file.
    #[arg(long, value_name = "FILE")]
    profile: Option<PathBuf>,
    /// Where the DU writes its packet trace.
    #[arg(long, value_name = "FILE")]
    trace_out: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct PlotArgs {
    /// Results CSV.
    #[arg(long = "in", value_name = "FILE")]
    input: Option<PathBuf>,
    /// CSV column to plot, e.g. throughput_mbps.
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e)
    }
}

impl From<IkeError> for Failure {
    fn from(e: IkeError) -> Self {
        let code = match e {
            IkeError::Transport(_) => EXIT_TRANSPORT,
            IkeError::InvalidConfig(_) => EXIT_USAGE,
            _ => EXIT_HANDSHAKE,
        };
        let text = e.to_string();
        let message = if text.starts_with(e.name()) {
            text
        } else {
            format!("{}: {text}", e.name())
        };
        Self { code, message }
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::HandshakeFailed(e) => e.into(),
            SessionError::InvalidProfile(m) => Failure::usage(format!("invalid profile: {m}")),
            other => Self {
                code: EXIT_TRANSPORT,
                message: other.to_string(),
            },
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::usage(e)
    }
}

type CliResult = Result<(), Failure>;

/// Values from `--config`, consumed as flags are resolved.
struct Settings {
    file: FlatConfig,
    /// From the flag, the config file or the environment, in that order.
    explicit_seed: Option<String>,
    verbose: bool,
}

impl Settings {
    fn seed(&self) -> &str {
        self.explicit_seed.as_deref().unwrap_or(DEFAULT_SEED)
    }

    fn pick(&mut self, flag: Option<String>, key: &str) -> Option<String> {
        let from_file = self.file.take(key);
        flag.or(from_file)
    }

    fn pick_path(&mut self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        let from_file = self.file.take(key).map(PathBuf::from);
        flag.or(from_file)
    }

    fn pick_parsed<T: std::str::FromStr>(
        &mut self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let from_file = self.file.take_parsed(key)?;
        Ok(flag.or(from_file))
    }

    /// Call after every key has been read; leftover keys are errors.
    fn finish(&mut self) -> CliResult {
        Ok(std::mem::take(&mut self.file).finish()?)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let mut file = match &cli.config {
        Some(p) => FlatConfig::load(p)?,
        None => FlatConfig::default(),
    };
    let explicit_seed = cli
        .seed
        .or(file.take("seed"))
        .or_else(|| std::env::var("PQOFH_SEED").ok());
    let mock = cli.mock_config.or(file.take("mock-config").map(PathBuf::from));
    let verbose = cli.verbose || file.take_parsed::<bool>("verbose")?.unwrap_or(false);
    let mut s = Settings {
        file,
        explicit_seed,
        verbose,
    };
    let registry = Arc::new(load_registry(mock.as_deref())?);

    match cli.command {
        Command::Suites { format } => {
            let format = match format {
                Some(f) => Some(f),
                None => s
                    .file
                    .take("format")
                    .map(|v| Format::from_str(&v, true))
                    .transpose()
                    .map_err(|e| Failure::usage(format!("invalid value for `format`: {e}")))?,
            };
            s.finish()?;
            cmd_suites(&registry, format.unwrap_or(Format::Table))
        }
        Command::Handshake(a) => cmd_handshake(registry, &mut s, a),
        Command::Bench(a) => cmd_bench(registry, &mut s, a),
        Command::Tunnel(a) => cmd_tunnel(registry, &mut s, a),
        Command::Plotdata(a) => cmd_plotdata(&mut s, a),
    }
}

fn load_registry(mock: Option<&Path>) -> Result<KemRegistry, Failure> {
    match mock {
        None => Ok(KemRegistry::builtin()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            KemRegistry::with_mock_config(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
        }
    }
}

fn cmd_suites(registry: &KemRegistry, format: Format) -> CliResult {
    let header = [
        "suite",
        "transform_id",
        "public_key_len",
        "ciphertext_len",
        "shared_secret_len",
        "secret_key_len",
        "encaps_cost_us",
    ];
    let rows: Vec<[String; 7]> = registry
        .suites()
        .iter()
        .map(|s| {
            let p = s.params();
            [
                s.id.as_str().to_string(),
                s.transform_id.to_string(),
                p.public_key_len.to_string(),
                p.ciphertext_len.to_string(),
                p.shared_secret_len.to_string(),
                s.secret_key_len().to_string(),
                p.encaps_cost_us.to_string(),
            ]
        })
        .collect();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .quote_style(csv::QuoteStyle::Always)
                .from_writer(out);
            w.write_record(header).map_err(io_failure)?;
            for r in &rows {
                w.write_record(r).map_err(io_failure)?;
            }
            w.flush().map_err(io_failure)?;
        }
        Format::Table => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap())
                .collect();
            let line = |cells: Vec<&str>| -> String {
                let padded: Vec<String> = cells
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                    .collect();
                padded.join("  ")
            };
            writeln!(out, "{}", line(header.to_vec())).map_err(io_failure)?;
            for r in &rows {
                writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))
                    .map_err(io_failure)?;
            }
        }
    }
    Ok(())
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_TRANSPORT,
        message: format!("output: {e}"),
    }
}

/// `none`, empty, or a comma list → ordered ADDKE names.
fn kem_list(value: Option<&str>) -> Result<Vec<String>, Failure> {
    match value.map(str::trim) {
        None | Some("") | Some("none") => Ok(Vec::new()),
        Some(v) => split_list(v).map_err(|m| Failure::usage(format!("--kems: {m}"))),
    }
}

struct Policy {
    addke: Vec<String>,
    encr: Encr,
    integ: Integ,
    psk: String,
}

impl Policy {
    fn resolve(s: &mut Settings, a: PolicyArgs) -> Result<Self, Failure> {
        let kems = s.pick(a.kems, "kems");
        let encr = s.pick(a.encr, "encr");
        let integ = s.pick(a.integ, "integ");
        let psk = s.pick(a.psk, "psk");
        Ok(Self {
            addke: kem_list(kems.as_deref())?,
            encr: parse_suite(encr.as_deref(), Encr::Aes128)?,
            integ: parse_suite(integ.as_deref(), Integ::Sha256)?,
            psk: psk.unwrap_or_else(|| DEFAULT_PSK.to_string()),
        })
    }

    fn peer(&self, addke: &[String], psk: &str) -> PeerConfig {
        let names: Vec<&str> = addke.iter().map(String::as_str).collect();
        let proposal = Proposal::new(self.encr, self.integ, MODP_2048_ID, &names);
        PeerConfig::new(vec![proposal], psk.as_bytes())
    }

    fn own(&self) -> PeerConfig {
        self.peer(&self.addke, &self.psk)
    }
}

fn parse_suite<T: std::str::FromStr>(value: Option<&str>, default: T) -> Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    match value {
        None => Ok(default),
        Some(v) => v.parse().map_err(|e: T::Err| Failure::usage(e)),
    }
}

fn validate_peer(peer: &PeerConfig, registry: &KemRegistry) -> CliResult {
    for p in &peer.proposals {
        p.validate(registry).map_err(|e| Failure::usage(e))?;
    }
    Ok(())
}

fn cmd_handshake(registry: Arc<KemRegistry>, s: &mut Settings, a: HandshakeArgs) -> CliResult {
    let policy = Policy::resolve(s, a.policy)?;
    let peer_kems = s.pick(a.peer_kems, "peer-kems");
    let peer_psk = s.pick(a.peer_psk, "peer-psk");
    s.finish()?;
    let peer_addke = match peer_kems {
        Some(k) => kem_list(Some(&k))?,
        None => policy.addke.clone(),
    };
    let initiator = policy.own();
    let responder = policy.peer(&peer_addke, peer_psk.as_deref().unwrap_or(&policy.psk));
    validate_peer(&initiator, &registry)?;
    validate_peer(&responder, &registry)?;

    let outcome = run_handshake(registry, initiator, responder, &master_seed(s.seed()))?;
    let mut out = io::stdout().lock();
    let mut say = |line: String| writeln!(out, "{line}").map_err(io_failure);
    for line in outcome.transcript() {
        say(line.to_string())?;
    }
    let fi = outcome.initiator_schedule().fingerprint();
    let fr = outcome.responder_schedule().fingerprint();
    say(format!("initiator keys {fi}"))?;
    say(format!("responder keys {fr}"))?;
    if s.verbose {
        let chosen = outcome.chosen();
        eprintln!(
            "proposal {}/{}/modp-2048/{}",
            chosen.encr,
            chosen.integ,
            chosen.kem_label()
        );
        eprintln!("handshake bytes {}", outcome.handshake_bytes);
        eprintln!(
            "retained bytes initiator {} responder {}",
            outcome.initiator.state().retained_bytes(),
            outcome.responder.state().retained_bytes()
        );
        eprintln!("elapsed {:.3} ms", outcome.elapsed.as_secs_f64() * 1e3);
    }
    if fi != fr {
        return Err(Failure {
            code: EXIT_HANDSHAKE,
            message: "key schedules differ".into(),
        });
    }
    Ok(())
}

fn cmd_bench(registry: Arc<KemRegistry>, s: &mut Settings, a: BenchArgs) -> CliResult {
    let matrix = s.pick_path(a.matrix, "matrix");
    let out = s.pick_path(a.out, "out");
    let transport: Option<Transport> = s
        .pick_parsed(a.transport.map(|t| t.parse()).transpose().map_err(Failure::usage)?, "transport")?;
    s.finish()?;

    let mut spec = match &matrix {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            ExperimentSpec::parse(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentSpec::full_matrix(),
    };
    // a seed from the command line, config or environment beats the matrix file's
    if let Some(seed) = &s.explicit_seed {
        spec.seed = seed.clone();
    }
    if let Some(o) = out {
        spec.out = Some(o);
    }
    if let Some(t) = transport {
        spec.transport = t;
    }
    let to_stdout = spec.out.is_none();

    let verbose = s.verbose;
    let rows = bench::run_matrix(registry, &spec, |i, total, row| {
        eprintln!(
            "[{}/{total}] {} {} {} run {} {}",
            i + 1,
            row.kem,
            row.encr,
            row.integ,
            row.run,
            row.status
        );
        if verbose && row.is_ok() {
            eprintln!(
                "    throughput {:?} Mbps, delay {:?} ms, handshake {:?} B",
                row.throughput_mbps, row.delay_ms_mean, row.handshake_bytes
            );
        }
    })?;
    if to_stdout {
        bench::write_csv(&rows, io::stdout().lock())?;
    }
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed == rows.len() {
        return Err(Failure {
            code: EXIT_MATRIX,
            message: format!("all {failed} cells failed"),
        });
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {} cells failed", rows.len());
    }
    Ok(())
}

fn load_profile(path: Option<&Path>) -> Result<(TrafficProfile, ChannelModel), Failure> {
    let Some(p) = path else {
        return Ok((TrafficProfile::default(), ChannelModel::default()));
    };
    let wrap = |e: ConfigError| Failure::usage(format!("{}: {e}", p.display()));
    let mut conf = FlatConfig::load(p).map_err(wrap)?;
    let profile = TrafficProfile::take_from(&mut conf).map_err(wrap)?;
    let channel = ChannelModel::take_from(&mut conf).map_err(wrap)?;
    conf.finish().map_err(wrap)?;
    profile.validate()?;
    channel.validate()?;
    Ok((profile, channel))
}

fn cmd_tunnel(registry: Arc<KemRegistry>, s: &mut Settings, a: TunnelArgs) -> CliResult {
    let role = match (a.role, s.file.take("role")) {
        (Some(r), _) => r,
        (None, Some(v)) => Role::from_str(&v, true)
            .map_err(|e| Failure::usage(format!("invalid value for `role`: {e}")))?,
        (None, None) => return Err(Failure::usage("--role du|ru is required")),
    };
    let peer_addr = s.pick(a.peer, "peer");
    let listen = s.pick(a.listen, "listen");
    let profile_path = s.pick_path(a.profile, "profile");
    let trace_out = s.pick_path(a.trace_out, "trace-out");
    let policy = Policy::resolve(s, a.policy)?;
    s.finish()?;

    let (profile, channel) = load_profile(profile_path.as_deref())?;
    let own = policy.own();
    validate_peer(&own, &registry)?;
    let seed = master_seed(s.seed());
    let bind = |addr: &str| {
        UdpSocket::bind(addr).map_err(|e| Failure {
            code: EXIT_TRANSPORT,
            message: format!("TransportUnavailable: bind {addr}: {e}"),
        })
    };

    match role {
        Role::Ru => {
            let sock = bind(listen.as_deref().unwrap_or(DEFAULT_LISTEN))?;
            eprintln!("RU listening on {}", sock.local_addr().map_err(io_failure)?);
            let summary = run_ru(registry, &sock, own, &seed, RU_IDLE)?;
            println!(
                "received {} rejected {} payload_errors {} kem {}",
                summary.received, summary.rejected, summary.payload_errors, summary.kem
            );
            Ok(())
        }
        Role::Du => {
            let peer_addr =
                peer_addr.ok_or_else(|| Failure::usage("--peer is required for --role du"))?;
            let sock = bind(listen.as_deref().unwrap_or("0.0.0.0:0"))?;
            sock.connect(&peer_addr).map_err(|e| Failure {
                code: EXIT_TRANSPORT,
                message: format!("TransportUnavailable: {peer_addr}: {e}"),
            })?;
            let cfg = SessionConfig {
                profile,
                channel,
                initiator: own.clone(),
                responder: own,
                transport: Transport::Udp,
                seed,
            };
            let trace = run_du(registry, &sock, &cfg)?;
            report_trace(&trace, trace_out.as_deref())
        }
    }
}

fn report_trace(trace: &PacketTrace, path: Option<&Path>) -> CliResult {
    if let Some(p) = path {
        fs::write(p, trace.to_text()).map_err(|e| Failure {
            code: EXIT_USAGE,
            message: format!("{}: {e}", p.display()),
        })?;
    }
    let row = bench::metrics_from_trace(trace, &trace.meta.kem, 0);
    println!(
        "sent {} delivered {} payload_errors {} handshake_bytes {} throughput_mbps {} delay_ms_mean {}",
        trace.sent_count(),
        trace.delivered_count(),
        trace.meta.payload_errors,
        trace.meta.handshake_bytes,
        fmt_opt(row.throughput_mbps),
        fmt_opt(row.delay_ms_mean),
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".into(), |x| format!("{x:.6}"))
}

fn cmd_plotdata(s: &mut Settings, a: PlotArgs) -> CliResult {
    let input = s.pick_path(a.input, "in");
    let metric = s.pick(a.metric, "metric");
    s.finish()?;
    let input = input.ok_or_else(|| Failure::usage("--in is required"))?;
    let metric = metric.ok_or_else(|| Failure::usage("--metric is required"))?;
    let rows = read_csv_file(&input)?;
    let table = plot_table(&rows, &metric)?;
    io::stdout().write_all(table.as_bytes()).map_err(io_failure)
}
