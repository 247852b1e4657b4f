//! Output files: RFC-4180 CSV through the `csv` crate, JSON and JSON-lines
//! through `serde_json`. Nothing written depends on wall-clock time.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use scl_core::{ComplexField, PeriodicField};

pub const OUT_ENV: &str = "SCL_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

/// Output root: the `--out` flag, then `SCL_OUT_DIR`, then `./runs`.
pub fn out_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("runs"),
    }
}

/// First 12 hex digits of the SHA-256 of `text`.
pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// A run directory and the files written into it, in write order.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, name: &str, hash: &str) -> Result<Self, IoError> {
        let path = root.join(format!("{name}-{hash}"));
        for sub in ["", "fields", "controls"] {
            let p = path.join(sub);
            fs::create_dir_all(&p).map_err(file_err(&p))?;
        }
        Ok(RunDir { path, written: Vec::new() })
    }

    pub fn manifest(&self) -> Vec<String> {
        self.written.clone()
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<(), IoError> {
        let p = self.path.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(file_err(dir))?;
        }
        fs::write(&p, bytes).map_err(file_err(&p))?;
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(())
    }

    pub fn field(&mut self, rel: &str, f: &PeriodicField) -> Result<(), IoError> {
        self.put(rel, &field_csv(f)?)
    }

    pub fn complex_field(&mut self, rel: &str, f: &ComplexField) -> Result<(), IoError> {
        self.put(rel, &complex_csv(f)?)
    }

    pub fn curve<'a>(&mut self, rel: &str, blocks: impl IntoIterator<Item = (f64, &'a PeriodicField)>) -> Result<(), IoError> {
        self.put(rel, &curve_csv(blocks)?)
    }

    pub fn table(&mut self, rel: &str, header: &[String], rows: &[Vec<f64>]) -> Result<(), IoError> {
        self.put(rel, &table_csv(header, rows)?)
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), IoError> {
        let mut s = serde_json::to_vec_pretty(value)?;
        s.push(b'\n');
        self.put(rel, &s)
    }

    pub fn jsonl<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<(), IoError> {
        self.put(rel, &jsonl(rows)?)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, IoError> {
    w.into_inner().map_err(|e| IoError::Csv(e.into_error().into()))
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new())
}

/// `x,value` rows.
pub fn field_csv(f: &PeriodicField) -> Result<Vec<u8>, IoError> {
    let mut w = writer();
    w.write_record(["x", "value"])?;
    for (x, v) in f.grid().nodes().iter().zip(f.values()) {
        w.write_record([x.to_string(), v.to_string()])?;
    }
    finish(w)
}

/// `x,re,im` rows.
pub fn complex_csv(f: &ComplexField) -> Result<Vec<u8>, IoError> {
    let mut w = writer();
    w.write_record(["x", "re", "im"])?;
    for (x, z) in f.grid().nodes().iter().zip(f.values()) {
        w.write_record([x.to_string(), z.re.to_string(), z.im.to_string()])?;
    }
    finish(w)
}

/// One `# t=<value>` line followed by a field table per time.
pub fn curve_csv<'a>(blocks: impl IntoIterator<Item = (f64, &'a PeriodicField)>) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::new();
    for (t, f) in blocks {
        write!(out, "# t={t}\r\n").expect("in-memory write");
        out.extend(field_csv(f)?);
    }
    Ok(out)
}

pub fn table_csv(header: &[String], rows: &[Vec<f64>]) -> Result<Vec<u8>, IoError> {
    let mut w = writer();
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(f64::to_string))?;
    }
    finish(w)
}

pub fn jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scl_core::PeriodicGrid;

    #[test]
    fn hash_is_stable_and_short() {
        assert_eq!(content_hash("abc"), "ba7816bf8f01");
    }

    #[test]
    fn curve_blocks_are_marked() {
        let g = PeriodicGrid::new(8).unwrap();
        let f = PeriodicField::constant(&g, 0.5);
        let text = String::from_utf8(curve_csv([(0.0, &f), (0.25, &f)]).unwrap()).unwrap();
        assert!(text.starts_with("# t=0\r\nx,value\r\n0,0.5\r\n"));
        assert_eq!(text.matches("# t=").count(), 2);
        assert!(text.contains("# t=0.25\r\n"));
    }
}
