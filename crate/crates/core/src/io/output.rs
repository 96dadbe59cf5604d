//! CSV emission and the content-addressed spectrum cache.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spacing::DeltaPeak;

/// `%.17g`: 17 significant digits, trailing zeros dropped.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let digits = (16 - exp) as usize;
    trim_zeros(&format!("{x:.digits$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A CSV table with a header row; rows are written with `fmt_g17`.
pub struct Table {
    text: String,
    columns: usize,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Table {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns);
        let cells: Vec<String> = values.iter().map(|&v| fmt_g17(v)).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    /// Row whose first cell is an integer index.
    pub fn indexed(&mut self, index: usize, values: &[f64]) {
        debug_assert_eq!(values.len() + 1, self.columns);
        let _ = write!(self.text, "{index}");
        for &v in values {
            self.text.push(',');
            self.text.push_str(&fmt_g17(v));
        }
        self.text.push('\n');
    }

    /// Trailing comment line recording a delta peak.
    pub fn peak(&mut self, peak: Option<DeltaPeak>) {
        if let Some(p) = peak {
            let _ = writeln!(self.text, "# peak,{},{}", fmt_g17(p.position), fmt_g17(p.mass));
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, &self.text)?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Cache of serialized results keyed by the hash of their inputs; each
/// entry has a `.sha256` sidecar with the hash of its own bytes.
#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CacheStatus {
    Hit,
    Miss,
    /// Entry present but its bytes did not match the recorded hash.
    Corrupt,
    Disabled,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Cache { dir: dir.into() }
    }

    pub fn key(inputs: &impl Serialize) -> Result<String> {
        let json = serde_json::to_vec(inputs).map_err(|e| Error::Numerical(format!("cache key: {e}")))?;
        Ok(sha256_hex(&json))
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let data = self.dir.join(format!("{key}.json"));
        let sidecar = self.dir.join(format!("{key}.json.sha256"));
        (data, sidecar)
    }

    pub fn load<T: DeserializeOwned>(&self, key: &str) -> (Option<T>, CacheStatus) {
        let (data, sidecar) = self.paths(key);
        let (Ok(bytes), Ok(recorded)) = (fs::read(&data), fs::read_to_string(&sidecar)) else {
            return (None, CacheStatus::Miss);
        };
        if sha256_hex(&bytes) != recorded.trim() {
            return (None, CacheStatus::Corrupt);
        }
        match serde_json::from_slice(&bytes) {
            Ok(v) => (Some(v), CacheStatus::Hit),
            Err(_) => (None, CacheStatus::Corrupt),
        }
    }

    pub fn store<T: Serialize>(&self, key: &str, value: &T) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let bytes = serde_json::to_vec(value).map_err(|e| Error::Numerical(format!("cache entry: {e}")))?;
        let (data, sidecar) = self.paths(key);
        fs::write(&data, &bytes)?;
        fs::write(&sidecar, format!("{}\n", sha256_hex(&bytes)))?;
        Ok(())
    }
}
