use std::fs;
use std::net::UdpSocket;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use pqofh_core::bench::{read_csv_file, write_csv, MetricsRow, CSV_HEADER, STATUS_OK};
use pqofh_core::ofh::PacketTrace;
use pqofh_core::{Encr, Integ};

fn pqofh() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pqofh"));
    c.env_remove("PQOFH_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    pqofh().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn intermediate_pairs(ladder: &str) -> (usize, usize) {
    let req = ladder.lines().filter(|l| l.starts_with("I->R") && l.contains(" INTERMEDIATE ")).count();
    let resp = ladder.lines().filter(|l| l.starts_with("R->I") && l.contains(" INTERMEDIATE ")).count();
    (req, resp)
}

#[test]
fn suites_table_and_csv() {
    let o = run(&["suites"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 7, "{text}");
    for name in ["dh-baseline", "toy-lwe", "mock-kyber", "mock-bike", "mock-hqc", "mock-frodo"] {
        assert!(text.contains(name));
    }
    assert!(text.contains("4112") && text.contains("2304"));

    let o = run(&["suites", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("\"dh-baseline\","), "{}", lines[1]);
}

#[test]
fn mock_config_missing_length_key() {
    let dir = tempfile::tempdir().unwrap();
    let mock = write(
        dir.path(),
        "mock.conf",
        "mock-x.public_key_len = 100\nmock-x.shared_secret_len = 32\nmock-x.encaps_cost_us = 0\n",
    );
    let o = run(&["--mock-config", &mock, "suites"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mock-x.ciphertext_len"), "{}", stderr(&o));

    let good = write(
        dir.path(),
        "good.conf",
        "mock-x.public_key_len = 100\nmock-x.ciphertext_len = 90\n\
         mock-x.shared_secret_len = 32\nmock-x.encaps_cost_us = 0\n",
    );
    let o = run(&["--mock-config", &good, "suites"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("mock-x"));
    assert!(!stdout(&o).contains("mock-frodo"));
}

#[test]
fn handshake_ladder_counts() {
    let o = run(&["handshake", "--kems", "toy-lwe"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(intermediate_pairs(&stdout(&o)), (1, 1));

    let o = run(&["handshake", "--kems", "toy-lwe,mock-bike", "--encr", "aes-256", "--integ", "sha-512"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(intermediate_pairs(&text), (2, 2));
    let keys: Vec<&str> = text
        .lines()
        .filter(|l| l.contains(" keys "))
        .map(|l| l.rsplit(' ').next().unwrap())
        .collect();
    assert_eq!(keys.len(), 2);
    assert_eq!(keys[0], keys[1]);

    let o = run(&["handshake"]);
    assert!(o.status.success());
    assert_eq!(intermediate_pairs(&stdout(&o)), (0, 0));
}

#[test]
fn handshake_failures_exit_nonzero_with_error_name() {
    let o = run(&["handshake", "--kems", "none", "--peer-kems", "toy-lwe"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("NoProposalChosen"));

    let o = run(&["handshake", "--psk", "a", "--peer-psk", "b"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("AuthFailure"));

    let o = run(&["handshake", "--kems", "mock-nothing"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["handshake", "--encr", "des"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_controls_keys() {
    let keys = |o: &Output| stdout(o).lines().filter(|l| l.contains(" keys ")).map(String::from).collect::<Vec<_>>();
    let a = run(&["handshake", "--kems", "mock-kyber", "--seed", "alpha"]);
    let b = run(&["handshake", "--kems", "mock-kyber", "--seed", "alpha"]);
    let c = run(&["handshake", "--kems", "mock-kyber", "--seed", "beta"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(keys(&a), keys(&c));
    let env = pqofh()
        .args(["handshake", "--kems", "mock-kyber"])
        .env("PQOFH_SEED", "alpha")
        .output()
        .unwrap();
    assert_eq!(stdout(&env), stdout(&a));
    // the flag beats the environment
    let both = pqofh()
        .args(["handshake", "--kems", "mock-kyber", "--seed", "beta"])
        .env("PQOFH_SEED", "alpha")
        .output()
        .unwrap();
    assert_eq!(stdout(&both), stdout(&c));
}

#[test]
fn config_file_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "c.conf", "kems = toy-lwe, mock-bike\nseed = alpha\n");
    let o = run(&["--config", &conf, "handshake"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(intermediate_pairs(&stdout(&o)), (2, 2));
    let flags = run(&["handshake", "--kems", "toy-lwe,mock-bike", "--seed", "alpha"]);
    assert_eq!(stdout(&o), stdout(&flags));
    // flags override the file
    let o = run(&["--config", &conf, "handshake", "--kems", "mock-hqc"]);
    assert_eq!(intermediate_pairs(&stdout(&o)), (1, 1));

    let bad = write(dir.path(), "bad.conf", "kems = toy-lwe\nkemz = x\n");
    let o = run(&["--config", &bad, "handshake"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kemz"));
}

#[test]
fn help_lists_flags() {
    let o = run(&["handshake", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in ["--kems", "--encr", "--integ", "--psk", "--peer-kems", "--peer-psk", "--seed", "--verbose", "--config", "--mock-config"] {
        assert!(text.contains(flag), "{flag}");
    }
    let o = run(&["tunnel", "--help"]);
    for flag in ["--role", "--peer", "--listen", "--profile", "--trace-out"] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

const SMALL_MATRIX: &str = "kems = none, mock-kyber\nencr = aes-128\ninteg = sha-256, sha-384\n\
                            repetitions = 1\nrate = 2000\nduration = 0.05\n";

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write(dir.path(), "m.conf", SMALL_MATRIX);
    let out = dir.path().join("out.csv");
    let o = run(&["bench", "--matrix", &matrix, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().filter(|l| l.starts_with('[')).count(), 4);
    let rows = read_csv_file(&out).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(MetricsRow::is_ok));
    let header = fs::read_to_string(&out).unwrap();
    assert_eq!(header.lines().next().unwrap(), CSV_HEADER.join(","));

    // udp transport, same schema
    let out_udp = dir.path().join("udp.csv");
    let o = run(&["bench", "--matrix", &matrix, "--out", out_udp.to_str().unwrap(), "--transport", "udp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let udp = read_csv_file(&out_udp).unwrap();
    assert_eq!(udp.len(), 4);
    for (a, b) in rows.iter().zip(&udp) {
        assert_eq!(a.handshake_bytes, b.handshake_bytes);
        assert!(b.is_ok());
    }
}

#[test]
fn bench_missing_output_directory_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write(dir.path(), "m.conf", SMALL_MATRIX);
    let out = dir.path().join("missing/out.csv");
    let o = run(&["bench", "--matrix", &matrix, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).contains("[1/"));
    assert!(stderr(&o).contains("missing"));
}

#[test]
fn bench_rejects_unknown_matrix_key() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write(dir.path(), "m.conf", &format!("{SMALL_MATRIX}colour = blue\n"));
    let o = run(&["bench", "--matrix", &matrix]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn bench_to_stdout_is_deterministic_in_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write(dir.path(), "m.conf", SMALL_MATRIX);
    let cols = |o: &Output| -> Vec<(Option<u64>, Option<u64>)> {
        pqofh_core::bench::read_csv(o.stdout.as_slice())
            .unwrap()
            .iter()
            .map(|r| (r.handshake_bytes, r.mem_bytes_peak))
            .collect()
    };
    let a = run(&["bench", "--matrix", &matrix, "--seed", "s"]);
    let b = run(&["bench", "--matrix", &matrix, "--seed", "s"]);
    assert!(a.status.success());
    assert_eq!(cols(&a), cols(&b));
    assert_eq!(cols(&a).len(), 4);
}

fn free_port() -> u16 {
    UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn tunnel_du_and_ru_over_loopback() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write(dir.path(), "p.conf", "packet_size = 800\nrate = 1000\nduration = 0.3\n");
    let port = free_port();
    let addr = format!("127.0.0.1:{port}");
    let ru = pqofh()
        .args(["tunnel", "--role", "ru", "--listen", &addr, "--kems", "toy-lwe", "--seed", "t"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(300));
    let trace_path = dir.path().join("trace.txt");
    let du = run(&[
        "tunnel",
        "--role",
        "du",
        "--peer",
        &addr,
        "--profile",
        &profile,
        "--kems",
        "toy-lwe",
        "--seed",
        "t",
        "--trace-out",
        trace_path.to_str().unwrap(),
    ]);
    let ru = ru.wait_with_output().unwrap();
    assert!(du.status.success(), "{}", stderr(&du));
    assert!(ru.status.success(), "{}", stderr(&ru));
    let trace = PacketTrace::from_text(&fs::read_to_string(&trace_path).unwrap()).unwrap();
    assert_eq!(trace.sent_count(), 300);
    assert_eq!(trace.delivered_count(), trace.sent_count());
    assert_eq!(trace.meta.kem, "toy-lwe");
    assert!(stdout(&ru).contains("received 300"), "{}", stdout(&ru));
}

#[test]
fn tunnel_absent_ru_times_out() {
    let port = free_port();
    let start = Instant::now();
    let o = run(&["tunnel", "--role", "du", "--peer", &format!("127.0.0.1:{port}")]);
    let took = start.elapsed();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("Timeout"), "{}", stderr(&o));
    assert!(took >= Duration::from_millis(2900) && took < Duration::from_secs(6), "{took:?}");
}

#[test]
fn tunnel_profile_validation() {
    let dir = tempfile::tempdir().unwrap();
    let zero = write(dir.path(), "p.conf", "rate = 0\n");
    let o = run(&["tunnel", "--role", "du", "--peer", "127.0.0.1:9", "--profile", &zero]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rate"), "{}", stderr(&o));
    let o = run(&["tunnel", "--peer", "127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(2));
}

fn synthetic_rows() -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for (k, kem) in ["none", "mock-kyber", "mock-bike", "mock-hqc", "mock-frodo"].iter().enumerate() {
        for encr in Encr::ALL {
            for integ in Integ::ALL {
                for run in 0..3 {
                    rows.push(MetricsRow {
                        throughput_mbps: Some(90.0 + k as f64),
                        status: STATUS_OK.into(),
                        ..MetricsRow::error(kem, encr, integ, run, String::new())
                    });
                }
            }
        }
    }
    rows
}

#[test]
fn plotdata_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    write_csv(&synthetic_rows(), fs::File::create(&csv).unwrap()).unwrap();
    let csv = csv.to_str().unwrap();
    let o = run(&["plotdata", "--in", csv, "--metric", "throughput_mbps"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 9);
    assert!(data.iter().all(|l| l.split(' ').count() == 1 + 5));
    assert_eq!(data[0], "AES-128/SHA-256 92 94 93 91 90");

    let o = run(&["plotdata", "--in", csv, "--metric", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UnknownMetric"));

    let empty = write(dir.path(), "empty.csv", "");
    let o = run(&["plotdata", "--in", &empty, "--metric", "throughput_mbps"]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
}

// A public key larger than any UDP datagram makes every UDP cell fail.
#[test]
fn bench_exit_status_reflects_cell_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mock = write(
        dir.path(),
        "big.conf",
        "mock-big.public_key_len = 70000\nmock-big.ciphertext_len = 100\n\
         mock-big.shared_secret_len = 32\nmock-big.encaps_cost_us = 0\n",
    );
    let body = "encr = aes-128\ninteg = sha-256\nrepetitions = 1\nrate = 1000\n\
                duration = 0.02\ntransport = udp\n";
    let all = write(dir.path(), "all.conf", &format!("kems = mock-big\n{body}"));
    let o = run(&["--mock-config", &mock, "bench", "--matrix", &all]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    let rows = pqofh_core::bench::read_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(rows[0].status, "TransportUnavailable");
    assert_eq!(rows[0].throughput_mbps, None);

    let some = write(dir.path(), "some.conf", &format!("kems = none, mock-big\n{body}"));
    let o = run(&["--mock-config", &mock, "bench", "--matrix", &some]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: 1 of 2 cells failed"));
}
