//! Image manifests: one JSON object per line,
//! `{"id": 7, "categories": [1, 18], "source": "train"}`.
//! Blank lines are skipped.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which split of the source dataset an image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceSplit {
    Train,
    Val,
}

impl fmt::Display for SourceSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceSplit::Train => "train",
            SourceSplit::Val => "val",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: u64,
    /// Sorted, without duplicates, never empty.
    pub categories: Vec<u32>,
    pub source: SourceSplit,
}

impl ManifestRecord {
    pub fn new(id: u64, mut categories: Vec<u32>, source: SourceSplit) -> Result<Self> {
        categories.sort_unstable();
        categories.dedup();
        if categories.is_empty() {
            return Err(Error::invalid(format!("image {id} has no categories")));
        }
        Ok(ManifestRecord { id, categories, source })
    }

    pub fn has(&self, category: u32) -> bool {
        self.categories.binary_search(&category).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id) {
                return Err(Error::invalid(format!("duplicate image id {} in manifest", r.id)));
            }
        }
        Ok(Manifest { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            let raw: ManifestRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let record = ManifestRecord::new(raw.id, raw.categories, raw.source)
                .map_err(|_| parse_err(format!("image {} has an empty category list", raw.id)))?;
            if !seen.insert(record.id) {
                return Err(Error::Integrity {
                    path: path.to_path_buf(),
                    message: format!("duplicate image id {} on line {line_no}", record.id),
                });
            }
            records.push(record);
        }
        Ok(Manifest { records })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest record serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(&text, path)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_jsonl()).map_err(|e| Error::io(path, e))
}
