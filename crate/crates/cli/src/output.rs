//! Output files: provenance headers, JSON envelopes and text-table helpers.

use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_sha256: String,
}

impl Provenance {
    pub fn for_config(text: &[u8]) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_sha256: hex::encode(Sha256::digest(text)),
        }
    }

    /// `#`-prefixed first line for text and CSV outputs.
    pub fn comment_line(&self) -> String {
        format!("# phobs {} config_sha256={}", self.tool_version, self.config_sha256)
    }
}

/// Versioned JSON envelope around every result file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format_version: u32,
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub data: T,
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, prov: &Provenance, data: &T) -> io::Result<()> {
    let env = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        provenance: prov.clone(),
        data,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(io::Error::other)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Reads an envelope; `None` when the file is absent.
pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> io::Result<Option<Envelope<T>>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    let env: Envelope<T> = serde_json::from_str(&text)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
    if env.format_version != FORMAT_VERSION || env.kind != kind {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "{}: expected {kind} v{FORMAT_VERSION}, found {} v{}",
                path.display(),
                env.kind,
                env.format_version
            ),
        ));
    }
    Ok(Some(env))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)
}

pub fn write_text(path: &Path, prov: &Provenance, body: &str) -> io::Result<()> {
    write_file(path, format!("{}\n{body}", prov.comment_line()).as_bytes())
}

/// Six significant digits.
pub fn sig6(v: f64) -> String {
    format!("{v:.5e}")
}

/// Fixed-width text table with a left-aligned first column.
pub fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |row: &[String]| {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = width[i] - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}
