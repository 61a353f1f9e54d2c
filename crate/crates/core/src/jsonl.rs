//! Line-delimited JSON helpers shared by every artifact writer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ArtifactError;

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<usize, ArtifactError> {
    let file = File::create(path).map_err(|e| ArtifactError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for item in items {
        let line = serde_json::to_string(&item)
            .map_err(|e| ArtifactError::Json { path: path.display().to_string(), line: n + 1, source: e })?;
        w.write_all(line.as_bytes()).map_err(|e| ArtifactError::io(path, e))?;
        w.write_all(b"\n").map_err(|e| ArtifactError::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| ArtifactError::io(path, e))?;
    Ok(n)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ArtifactError> {
    let file = File::open(path).map_err(|e| ArtifactError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ArtifactError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| ArtifactError::Json { path: path.display().to_string(), line: i + 1, source: e })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| ArtifactError::Json { path: path.display().to_string(), line: 0, source: e })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| ArtifactError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(|e| ArtifactError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ArtifactError::Json { path: path.display().to_string(), line: 0, source: e })
}
