//! Append-only persistence of [`ScoreRecord`]s as JSONL or CSV.

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::store::write_atomic;

use super::ScoreRecord;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RecordError + '_ {
    move |source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn jsonl_body(records: &[ScoreRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("score record serializes"));
        out.push('\n');
    }
    out
}

/// Replaces `path` with `records`, one JSON object per line.
pub fn write_jsonl(path: &Path, records: &[ScoreRecord]) -> Result<(), RecordError> {
    write_atomic(path, jsonl_body(records).as_bytes()).map_err(io_err(path))
}

/// Appends `records` to `path`, creating it if needed.
pub fn append_jsonl(path: &Path, records: &[ScoreRecord]) -> Result<(), RecordError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(jsonl_body(records).as_bytes()).map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ScoreRecord>, RecordError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_csv(path: &Path, records: &[ScoreRecord]) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| RecordError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    }
    let bytes = w.into_inner().expect("in-memory csv writer");
    write_atomic(path, &bytes).map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<ScoreRecord>, RecordError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| RecordError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        out.push(row.map_err(|e: csv::Error| RecordError::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads one file (by extension) or every `.jsonl` / `.csv` file in a
/// directory, in file-name order.
pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, RecordError> {
    let read_one = |p: &Path| match p.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(p),
        _ => read_jsonl(p),
    };
    if !path.is_dir() {
        return read_one(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("jsonl" | "csv")))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_one(&f)?);
    }
    Ok(out)
}
