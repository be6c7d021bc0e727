//! Gnuplot-ready tables built from metrics rows.
//!
//! One line per cipher/hash group, one column per KEM label. Cells hold the
//! mean over successful runs, `NaN` where a combination has none.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::{BenchError, MetricsRow};
use crate::suite::{Encr, Integ};

/// Sort key: cipher key size, then hash size, then the raw names for
/// anything unparsable.
fn group_key(encr: &str, integ: &str) -> (usize, usize, String, String) {
    let k = encr.parse::<Encr>().map_or(usize::MAX, Encr::key_len);
    let h = integ.parse::<Integ>().map_or(usize::MAX, Integ::output_len);
    (k, h, encr.to_string(), integ.to_string())
}

pub fn plot_table(rows: &[MetricsRow], metric: &str) -> Result<String, BenchError> {
    // validates the metric name even when there is nothing to plot
    MetricsRow::error("", Encr::Aes128, Integ::Sha256, 0, String::new()).metric(metric)?;
    if rows.is_empty() {
        return Ok(String::new());
    }
    let kems: BTreeSet<&str> = rows.iter().map(|r| r.kem.as_str()).collect();
    let mut cells: BTreeMap<(usize, usize, String, String), BTreeMap<&str, (f64, usize)>> =
        BTreeMap::new();
    for r in rows {
        let group = cells.entry(group_key(&r.encr, &r.integ)).or_default();
        let slot = group.entry(r.kem.as_str()).or_insert((0.0, 0));
        if !r.is_ok() {
            continue;
        }
        if let Some(v) = r.metric(metric)? {
            slot.0 += v;
            slot.1 += 1;
        }
    }
    let mut out = format!("# metric={metric}\n# group");
    for k in &kems {
        write!(out, " {k}").unwrap();
    }
    out.push('\n');
    for ((_, _, encr, integ), by_kem) in &cells {
        write!(out, "{encr}/{integ}").unwrap();
        for k in &kems {
            match by_kem.get(k) {
                Some(&(sum, n)) if n > 0 => write!(out, " {}", sum / n as f64).unwrap(),
                _ => out.push_str(" NaN"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}
