//! Report serialization and atomic file output.
//!
//! JSON reports are wrapped as `{"command", "report", "metadata"}`; floats
//! are written in shortest round-trip form, so re-parsing yields identical
//! values. `metadata` carries wall-clock data and is dropped in golden mode.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use cramkit::{CramError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub created_unix_ms: u128,
    pub elapsed_ms: u128,
}

impl Metadata {
    pub fn now(elapsed_ms: u128) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            elapsed_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub command: String,
    pub report: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Metadata>,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)
        .map_err(|e| CramError::InvalidData(format!("json serialization: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

/// Formats like C's `%.6g`.
pub fn g6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding can carry into the next decade, so format first and inspect
    let sci = format!("{v:.5e}");
    let (mantissa, e) = sci.split_once('e').unwrap();
    let exp_rounded: i32 = e.parse().unwrap_or(exp);
    if (-4..6).contains(&exp_rounded) {
        let decimals = (5 - exp_rounded).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp_rounded < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            trim_zeros(mantissa.to_string()),
            exp_rounded.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Renders a table with a header row; cells are already formatted.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CramError::InvalidData(format!("csv serialization: {e}"));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.into_inner()
        .map_err(|e| CramError::InvalidData(format!("csv serialization: {e}")))
}

/// Writes `bytes` to `path` via a temp file in the same directory and a
/// rename, so readers never see a partial report. `None` means stdout.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        return Ok(out.flush()?);
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CramError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(g6(0.0), "0");
        assert_eq!(g6(1.0), "1");
        assert_eq!(g6(0.1234567), "0.123457");
        assert_eq!(g6(-123.4567), "-123.457");
        assert_eq!(g6(999999.5), "1e+06");
        assert_eq!(g6(123456.4), "123456");
        assert_eq!(g6(0.0001234567), "0.000123457");
        assert_eq!(g6(0.00001234567), "1.23457e-05");
        assert_eq!(g6(2.5e10), "2.5e+10");
        assert_eq!(g6(0.95), "0.95");
    }

    #[test]
    fn atomic_write_leaves_only_target() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out.json");
        write_output(Some(&target), b"{}\n").unwrap();
        write_output(Some(&target), b"[1]\n").unwrap();
        assert_eq!(std::fs::read(&target).unwrap(), b"[1]\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_directory_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("nope").join("out.json");
        assert!(write_output(Some(&target), b"x").is_err());
        assert!(!target.exists());
    }

    #[test]
    fn envelope_round_trips_floats() {
        let env = Envelope {
            command: "x".into(),
            report: vec![0.1 + 0.2, 1.0 / 3.0, -2.2250738585072014e-308, 1e300],
            metadata: None,
        };
        let bytes = to_json(&env).unwrap();
        let back: Envelope<Vec<f64>> = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, env);
        assert!(!String::from_utf8(bytes).unwrap().contains("metadata"));
    }
}
