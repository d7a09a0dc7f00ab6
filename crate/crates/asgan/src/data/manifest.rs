//! JSON-lines dataset manifest. One entry per line with fields
//! `{"id","x1","x2","y","label","split"}`; image paths are relative to the
//! manifest root.

use super::AttributeLabel;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEntry {
    id: String,
    x1: String,
    x2: String,
    y: String,
    label: String,
    split: Split,
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub x1: PathBuf,
    pub x2: PathBuf,
    pub y: PathBuf,
    pub label: AttributeLabel,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads the manifest under `root`, keeping only `split` entries. Every
/// referenced image must exist; ids must be unique across the whole file.
pub fn load_manifest(root: &Path, split: Split) -> Result<DatasetManifest> {
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::NotFound {
            path: manifest_path,
        });
    }
    let file = std::fs::File::open(&manifest_path)
        .map_err(|e| Error::io(manifest_path.clone(), e))?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(manifest_path.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if !seen_ids.insert(raw.id.clone()) {
            return Err(Error::Parse {
                path: manifest_path.clone(),
                line: lineno + 1,
                message: format!("duplicate id `{}`", raw.id),
            });
        }
        let label = AttributeLabel::from_name(&raw.label).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if raw.split != split {
            continue;
        }
        let entry = ManifestEntry {
            id: raw.id,
            x1: root.join(&raw.x1),
            x2: root.join(&raw.x2),
            y: root.join(&raw.y),
            label,
            split: raw.split,
        };
        for p in [&entry.x1, &entry.x2, &entry.y] {
            if !p.is_file() {
                return Err(Error::NotFound { path: p.clone() });
            }
        }
        entries.push(entry);
    }
    Ok(DatasetManifest { entries })
}

/// Writes manifest lines for entries whose paths are already relative to
/// `root`.
pub fn write_manifest(
    root: &Path,
    rows: &[(String, String, String, String, AttributeLabel, Split)],
) -> Result<()> {
    let manifest_path = root.join(MANIFEST_FILE);
    let mut file = std::fs::File::create(&manifest_path)
        .map_err(|e| Error::io(manifest_path.clone(), e))?;
    for (id, x1, x2, y, label, split) in rows {
        let raw = RawEntry {
            id: id.clone(),
            x1: x1.clone(),
            x2: x2.clone(),
            y: y.clone(),
            label: label.name().to_string(),
            split: *split,
        };
        let line = serde_json::to_string(&raw).expect("manifest entry serializes");
        writeln!(file, "{line}").map_err(|e| Error::io(manifest_path.clone(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(path: &Path) {
        std::fs::write(path, b"x").unwrap();
    }

    #[test]
    fn empty_manifest_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), "").unwrap();
        let m = load_manifest(dir.path(), Split::Train).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn split_filters_entries() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a1.png", "a2.png", "ay.png", "b1.png", "b2.png", "by.png"] {
            touch(&dir.path().join(f));
        }
        let lines = concat!(
            r#"{"id":"a","x1":"a1.png","x2":"a2.png","y":"ay.png","label":"glasses","split":"train"}"#,
            "\n",
            r#"{"id":"b","x1":"b1.png","x2":"b2.png","y":"by.png","label":"beard","split":"test"}"#,
            "\n"
        );
        std::fs::write(dir.path().join(MANIFEST_FILE), lines).unwrap();
        let m = load_manifest(dir.path(), Split::Train).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.entries[0].id, "a");
        let m = load_manifest(dir.path(), Split::Test).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.entries[0].label.name(), "beard");
    }

    #[test]
    fn missing_manifest_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        match load_manifest(dir.path(), Split::Train) {
            Err(Error::NotFound { .. }) => {}
            other => panic!("expected NotFound, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            "{\"id\":\"ok\",\"x1\":\"a.png\",\"x2\":\"b.png\",\"y\":\"c.png\",\"label\":\"glasses\",\"split\":\"train\"}\nnot json\n",
        )
        .unwrap();
        for f in ["a.png", "b.png", "c.png"] {
            touch(&dir.path().join(f));
        }
        match load_manifest(dir.path(), Split::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn missing_referenced_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"id":"a","x1":"a1.png","x2":"a2.png","y":"ay.png","label":"glasses","split":"train"}"#,
        )
        .unwrap();
        match load_manifest(dir.path(), Split::Train) {
            Err(Error::NotFound { path }) => {
                assert!(path.ends_with("a1.png"));
            }
            other => panic!("expected NotFound, got {other:?}"),
        }
    }
}
