//! Output plumbing: 17-significant-digit float formatting, CSV and JSONL
//! writers with `#`-prefixed header comments, and sha256 digests.

use crate::error::Result;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Format with 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        // Integers stay readable; they round-trip exactly anyway.
        format!("{:.1}", x)
    } else {
        format!("{:.16e}", x)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        let _ = write!(s, "{:02x}", b);
    }
    s
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// CSV writer: `# key=value` comment headers, then a column header row.
pub struct CsvWriter {
    buf: String,
    cols: usize,
}

impl CsvWriter {
    pub fn new(comments: &[(&str, String)], columns: &[&str]) -> Self {
        let mut buf = String::new();
        for (k, v) in comments {
            let _ = writeln!(buf, "# {}={}", k, v);
        }
        let _ = writeln!(buf, "{}", columns.join(","));
        CsvWriter {
            buf,
            cols: columns.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.cols, "csv row arity mismatch");
        let _ = writeln!(self.buf, "{}", fields.join(","));
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(self.buf.as_bytes())?;
        Ok(())
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}

/// JSONL writer: one serde value per line.
pub struct JsonlWriter {
    buf: String,
}

impl JsonlWriter {
    pub fn new() -> Self {
        JsonlWriter { buf: String::new() }
    }

    pub fn push<T: serde::Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value)?;
        self.buf.push_str(&line);
        self.buf.push('\n');
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(self.buf.as_bytes())?;
        Ok(())
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}

impl Default for JsonlWriter {
    fn default() -> Self {
        Self::new()
    }
}
