//! CSV artifacts with a one-line JSON metadata header.
//!
//! Every file starts with `# {json}` followed by an ordinary headed CSV
//! table. Volatile information (timestamps, wall-clock numbers that are not
//! part of the table) belongs in the header so table bodies stay
//! byte-identical across reruns.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing `# {{json}}` metadata line")]
    MissingHeader,
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

/// Serializes `meta` and `rows` to CSV text.
pub fn to_csv_string<S: Serialize>(meta: &serde_json::Value, rows: &[S]) -> Result<String> {
    let mut out = Vec::new();
    writeln!(out, "# {}", serde_json::to_string(meta)?).expect("write to Vec");
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(csv::Error::from)?;
    }
    Ok(String::from_utf8(out).expect("csv output is UTF-8"))
}

/// Parses text produced by [`to_csv_string`].
pub fn from_csv_str<D: DeserializeOwned>(text: &str) -> Result<(serde_json::Value, Vec<D>)> {
    let mut reader = std::io::Cursor::new(text.as_bytes());
    let mut first = String::new();
    reader.read_line(&mut first).map_err(csv::Error::from)?;
    let json = first.trim_end().strip_prefix("# ").ok_or(ReportError::MissingHeader)?;
    let meta = serde_json::from_str(json)?;
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<std::result::Result<Vec<D>, _>>()?;
    Ok((meta, rows))
}

pub fn write_csv<S: Serialize>(path: &Path, meta: &serde_json::Value, rows: &[S]) -> Result<()> {
    let text = to_csv_string(meta, rows)?;
    std::fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_csv<D: DeserializeOwned>(path: &Path) -> Result<(serde_json::Value, Vec<D>)> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_csv_str(&text)
}

/// Everything after the metadata line.
pub fn csv_body(text: &str) -> &str {
    text.split_once('\n').map_or("", |(_, body)| body)
}
