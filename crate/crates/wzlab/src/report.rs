//! Output serialization: CSV tables and JSON envelopes stamped with the
//! config hash, master seed, and crate version so any result file can be
//! traced back to the exact run that produced it.
//!
//! Floats are written through `Display`, which picks the shortest string
//! that parses back to the same value; reruns with identical settings are
//! therefore byte-identical. CSV renders missing losses as `NaN`. JSON has
//! no NaN literal, so `serde_json` writes `null` there instead.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::codec_sim::TrialOutcome;
use crate::error::{Error, Result};
use crate::region::RegionPoint;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Leading comment lines identifying the run. Present in every CSV.
pub fn meta_lines(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash}\n# seed={seed}\n# version={VERSION}\n")
}

pub fn region_rows_csv(points: &[RegionPoint], config_hash: &str, seed: u64) -> String {
    let mut out = meta_lines(config_hash, seed);
    out.push_str("n,epsilon,D,G,rate_bits,regime,delta\n");
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.n, p.epsilon, p.d_target, p.g_target, p.rate_bits, p.regime, p.delta
        )
        .expect("string write");
    }
    out
}

pub fn codec_trials_csv(outcomes: &[TrialOutcome], config_hash: &str, seed: u64) -> String {
    let mut out = meta_lines(config_hash, seed);
    out.push_str("trial_id,encode_ok,debin_ok,cause,distortion,gen_error\n");
    for t in outcomes {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            t.trial_id, t.encode_ok, t.debin_ok, t.cause, t.distortion, t.gen_error
        )
        .expect("string write");
    }
    out
}

/// Distortion-rate curve rows: `(d, rate_bits)` pairs.
pub fn asymptotic_rates_csv(rows: &[(f64, f64)], config_hash: &str, seed: u64) -> String {
    let mut out = meta_lines(config_hash, seed);
    out.push_str("d,rate_bits\n");
    for (d, rate) in rows {
        writeln!(out, "{d},{rate}").expect("string write");
    }
    out
}

/// Root-loss bracket rows: `(rate_bits, lower, upper, achieved)`.
pub fn root_loss_csv(rows: &[(f64, f64, f64, f64)], config_hash: &str, seed: u64) -> String {
    let mut out = meta_lines(config_hash, seed);
    out.push_str("rate_bits,lower,upper,achieved\n");
    for (rate, lower, upper, achieved) in rows {
        writeln!(out, "{rate},{lower},{upper},{achieved}").expect("string write");
    }
    out
}

#[derive(Debug, Serialize)]
pub struct Envelope<T: Serialize> {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub data: T,
}

pub fn json_envelope<T: Serialize>(data: T, config_hash: &str, seed: u64) -> Result<String> {
    let env = Envelope {
        config_hash: config_hash.to_string(),
        seed,
        version: VERSION.to_string(),
        data,
    };
    let mut text =
        serde_json::to_string_pretty(&env).map_err(|e| Error::Io(std::io::Error::from(e)))?;
    text.push('\n');
    Ok(text)
}

/// Write one output file, creating the directory if needed.
pub fn write_output(dir: &Path, name: &str, content: &str) -> Result<()> {
    let context = |what: &str, e: std::io::Error| {
        Error::Io(std::io::Error::new(e.kind(), format!("{what}: {e}")))
    };
    std::fs::create_dir_all(dir).map_err(|e| context(&dir.display().to_string(), e))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| context(&path.display().to_string(), e))?;
    Ok(())
}
