//! Text records for class splits and partition assignments.
//!
//! Split file:
//!
//! ```text
//! # fewshot class split
//! version 1
//! split_id 0
//! seed 1
//! train 0 4 7 ...
//! val 2 9 ...
//! test 1 3 ...
//! ```
//!
//! Assignment file: the same header line and `version 1`, then one
//! `<image id> <train|val|test|ignored>` line per image, sorted by id.
//! Lines starting with `#` and blank lines are skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampler::{ClassSplit, DatasetAssignment, Partition};

pub const SPLIT_HEADER: &str = "# fewshot class split";
pub const ASSIGNMENT_HEADER: &str = "# fewshot partition assignment";
pub const SPLITS_VERSION: u32 = 1;

fn join(values: &[u32]) -> String {
    values.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

pub fn split_to_text(split: &ClassSplit) -> String {
    let mut out = format!(
        "{SPLIT_HEADER}\nversion {SPLITS_VERSION}\nsplit_id {}\nseed {}\n",
        split.split_id, split.seed
    );
    for (key, list) in [
        ("train", &split.train_classes),
        ("val", &split.val_classes),
        ("test", &split.test_classes),
    ] {
        if list.is_empty() {
            let _ = writeln!(out, "{key}");
        } else {
            let _ = writeln!(out, "{key} {}", join(list));
        }
    }
    out
}

/// Non-comment, non-blank lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_version(path: &Path, line: Option<(usize, &str)>) -> Result<()> {
    match line {
        Some((_, l)) if l.split_whitespace().next() == Some("version") => {
            let v = l.split_whitespace().nth(1).unwrap_or("");
            if v == SPLITS_VERSION.to_string() {
                Ok(())
            } else {
                Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("unsupported version {v:?} (expected {SPLITS_VERSION})"),
                })
            }
        }
        Some((n, _)) => Err(parse_err(path, n, "expected a version line")),
        None => Err(Error::Format {
            path: path.to_path_buf(),
            message: "empty file".into(),
        }),
    }
}

pub fn parse_split(text: &str, path: &Path) -> Result<ClassSplit> {
    let mut lines = content_lines(text);
    check_version(path, lines.next())?;
    let mut fields: BTreeMap<&str, (usize, Vec<&str>)> = BTreeMap::new();
    for (n, line) in lines {
        let mut words = line.split_whitespace();
        let key = words.next().unwrap_or_default();
        if !matches!(key, "split_id" | "seed" | "train" | "val" | "test") {
            return Err(parse_err(path, n, format!("unknown key {key:?}")));
        }
        if fields.insert(key, (n, words.collect())).is_some() {
            return Err(parse_err(path, n, format!("repeated key {key:?}")));
        }
    }
    let missing = |key: &str| Error::Format {
        path: path.to_path_buf(),
        message: format!("missing {key} line"),
    };
    let scalar = |key: &str| -> Result<u64> {
        let (n, words) = fields.get(key).ok_or_else(|| missing(key))?;
        match words.as_slice() {
            [w] => w
                .parse()
                .map_err(|_| parse_err(path, *n, format!("bad {key} value {w:?}"))),
            _ => Err(parse_err(path, *n, format!("{key} takes exactly one value"))),
        }
    };
    let list = |key: &str| -> Result<Vec<u32>> {
        let (n, words) = fields.get(key).ok_or_else(|| missing(key))?;
        words
            .iter()
            .map(|w| {
                w.parse()
                    .map_err(|_| parse_err(path, *n, format!("bad category id {w:?}")))
            })
            .collect()
    };
    let split_id = u32::try_from(scalar("split_id")?).map_err(|_| missing("valid split_id"))?;
    ClassSplit::new(split_id, scalar("seed")?, list("train")?, list("val")?, list("test")?).map_err(|e| {
        Error::Integrity {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })
}

pub fn assignment_to_text(assignment: &DatasetAssignment) -> String {
    let mut out = format!("{ASSIGNMENT_HEADER}\nversion {SPLITS_VERSION}\n");
    for (id, p) in &assignment.labels {
        let _ = writeln!(out, "{id} {p}");
    }
    out
}

pub fn parse_assignment(text: &str, path: &Path) -> Result<DatasetAssignment> {
    let mut lines = content_lines(text);
    check_version(path, lines.next())?;
    let mut labels = BTreeMap::new();
    for (n, line) in lines {
        let (id, part) = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            [id, part] => (*id, *part),
            _ => return Err(parse_err(path, n, "expected `<id> <partition>`")),
        };
        let id: u64 = id
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad image id {id:?}")))?;
        let part: Partition = part.parse().map_err(|e: Error| parse_err(path, n, e.to_string()))?;
        if labels.insert(id, part).is_some() {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                message: format!("duplicate image id {id} on line {n}"),
            });
        }
    }
    Ok(DatasetAssignment { labels })
}

pub fn read_split(path: impl AsRef<Path>) -> Result<ClassSplit> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text, path)
}

pub fn write_split(split: &ClassSplit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, split_to_text(split)).map_err(|e| Error::io(path, e))
}

pub fn read_assignment(path: impl AsRef<Path>) -> Result<DatasetAssignment> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_assignment(&text, path)
}

pub fn write_assignment(assignment: &DatasetAssignment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, assignment_to_text(assignment)).map_err(|e| Error::io(path, e))
}
