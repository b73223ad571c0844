//! JSONL dataset and record files: one object per line.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::error::ValidationError;
use crate::model::{validate_instance, CounterfactualRecord, Instance};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ValidationError,
    },
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1-based line of a parse or validation failure.
    pub fn line(&self) -> Option<usize> {
        match self {
            DataError::Parse { line, .. } | DataError::Invalid { line, .. } => Some(*line),
            DataError::Io { .. } => None,
        }
    }
}

/// Parses JSONL; blank lines are skipped but still counted.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<(usize, T)>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, value));
    }
    Ok(out)
}

pub fn parse_dataset(text: &str) -> Result<Vec<Instance>, DataError> {
    read_jsonl::<Instance, _>(text.as_bytes())?
        .into_iter()
        .map(|(line, inst)| validate_instance(inst).map_err(|source| DataError::Invalid { line, source }))
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<Vec<Instance>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_dataset(&text)
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(read_jsonl(BufReader::new(file))?.into_iter().map(|(_, v)| v).collect())
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut writer: W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut buf = Vec::new();
    write_jsonl(items, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn save_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    write_jsonl(items, io::BufWriter::new(file)).map_err(|e| DataError::io(path, e))
}

pub fn save_records(records: &[CounterfactualRecord], path: &Path) -> Result<(), DataError> {
    save_jsonl(records, path)
}

pub fn load_records(path: &Path) -> Result<Vec<CounterfactualRecord>, DataError> {
    load_jsonl(path)
}
