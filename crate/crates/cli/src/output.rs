use std::io::Write;
use std::path::{Path, PathBuf};

use pulsecorr_core::trace::TraceFormat;

use crate::Failure;

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure::Data(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.flush().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

/// CSV text with a config-hash comment and a header line.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(hash: &str, header: &[&str]) -> Self {
        Csv {
            text: format!("# config_hash: {hash}\n{}\n", header.join(",")),
        }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let line: Vec<String> = cells.into_iter().map(|c| c.as_ref().to_string()).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        write_atomic(path, self.text.as_bytes())
    }
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:e}")
    }
}

/// Raw binary for `.f64`, `.bin` and `.raw`, decimal text otherwise.
pub fn trace_format(path: &Path) -> TraceFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("f64" | "bin" | "raw") => TraceFormat::RawF64,
        _ => TraceFormat::Csv,
    }
}

/// `path` with its extension replaced by `suffix`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
