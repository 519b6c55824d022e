//! Flat `key = value` config files whose keys mirror long flag names.
//!
//! ```text
//! # train.conf
//! way = 5
//! junk-prob = 0
//! shots-list = 1,5,15
//! ```
//!
//! Entries are spliced into the argument list right after the subcommand, so
//! flags given on the command line (which come later) override them.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Command;

use crate::CliError;

/// One `key = value` entry with its line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_config(text: &str, path: &Path) -> Result<Vec<ConfigEntry>, CliError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("{}:{}: empty key", path.display(), i + 1)));
        }
        entries.push(ConfigEntry {
            line: i + 1,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(entries)
}

/// Position of the subcommand token and the `--config` path, if any.
fn locate(args: &[OsString]) -> (Option<usize>, Option<PathBuf>) {
    let sub = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 1);
    let mut config = None;
    let mut iter = args.iter().skip(1);
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = iter.next().map(PathBuf::from);
        } else if let Some(rest) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(rest));
        }
    }
    (sub, config)
}

/// Returns `args` with the config file's entries inserted as flags.
pub fn expand_args(command: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let (Some(sub_at), Some(path)) = locate(&args) else {
        return Ok(args);
    };
    let sub_name = args[sub_at].to_string_lossy().into_owned();
    let Some(sub) = command.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;

    let mut injected = Vec::new();
    for entry in parse_config(&text, &path)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(entry.key.as_str()))
            .filter(|_| entry.key != "config")
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: unknown key {:?} for `{sub_name}`",
                    path.display(),
                    entry.line,
                    entry.key
                ))
            })?;
        let flag = OsString::from(format!("--{}", entry.key));
        if arg.get_action().takes_values() {
            injected.push(flag);
            injected.push(OsString::from(&entry.value));
        } else {
            match entry.value.as_str() {
                "true" => injected.push(flag),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "{}:{}: {} takes true or false, got {other:?}",
                        path.display(),
                        entry.line,
                        entry.key
                    )))
                }
            }
        }
    }
    let mut out = args[..=sub_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub_at + 1..]);
    Ok(out)
}
