//! Loading image collections and ground-truth labels from disk.
//!
//! Collections are line-delimited JSON, one [`ImageRecord`] per line. Relative
//! `source` paths are resolved against the manifest's directory. Ground truth is
//! a single JSON document shaped like [`GroundTruth`].

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::types::{validate_collection, Collection, GroundTruth, ImageRecord, TypeError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] TypeError),
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

/// Parses a line-delimited collection. Blank lines and `#` comments are skipped.
pub fn parse_collection(text: &str, base_dir: Option<&Path>, origin: &Path) -> Result<Collection, DatasetError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut record: ImageRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if let Some(base) = base_dir {
            record.source = resolve_source(base, &record.source);
        }
        records.push(record);
    }
    Ok(validate_collection(records)?)
}

pub fn load_collection(path: &Path) -> Result<Collection, DatasetError> {
    let text = read(path)?;
    parse_collection(&text, path.parent(), path)
}

fn resolve_source(base: &Path, source: &str) -> String {
    if source.contains("://") || source.starts_with("data:") {
        return source.to_string();
    }
    let p = Path::new(source);
    if p.is_absolute() {
        source.to_string()
    } else {
        base.join(p).to_string_lossy().into_owned()
    }
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, DatasetError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads a vocabulary file: one entry per line, blanks and `#` comments skipped.
pub fn load_vocabulary(path: &Path) -> Result<Vec<String>, DatasetError> {
    let text = read(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_relative_sources() {
        let text = r#"
# toy
{"image_id": "a", "source": "img/a.jpg", "popularity": 3.5}
{"image_id": "b", "source": "https://x/b.jpg", "metadata": {"k": "v"}}
"#;
        let col = parse_collection(text, Some(Path::new("/data")), Path::new("m.jsonl")).unwrap();
        assert_eq!(col.len(), 2);
        assert_eq!(col.records()[0].source, "/data/img/a.jpg");
        assert_eq!(col.records()[0].popularity, Some(3.5));
        assert_eq!(col.records()[1].source, "https://x/b.jpg");
        assert_eq!(col.records()[1].metadata["k"], "v");
    }

    #[test]
    fn reports_line_of_bad_record() {
        let err = parse_collection("{\"image_id\": \"a\", \"source\": \"x\"}\n{oops", None, Path::new("m"))
            .unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"image_id\":\"a\",\"source\":\"x\"}\n{\"image_id\":\"a\",\"source\":\"y\"}";
        let err = parse_collection(text, None, Path::new("m")).unwrap_err();
        assert!(matches!(err, DatasetError::Invalid(TypeError::DuplicateImageId(_))));
    }
}
