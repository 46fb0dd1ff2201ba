//! `run.json`: the invocation with every flag resolved, plus the module
//! configs it expanded into.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{usage, Command};

pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RunRecord {
    format_version: u32,
    tool_version: String,
    invocation: Command,
    resolved: Value,
}

pub fn save(path: &Path, invocation: &Command, resolved: Value) -> anyhow::Result<()> {
    let rec = RunRecord {
        format_version: RUN_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: invocation.clone(),
        resolved,
    };
    let mut text = serde_json::to_string_pretty(&rec)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> anyhow::Result<Command> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let rec: RunRecord = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{} is not a run record: {e}", path.display())))?;
    if rec.format_version != RUN_FORMAT_VERSION {
        return Err(usage(format!(
            "{} has run format version {}, expected {RUN_FORMAT_VERSION}",
            path.display(),
            rec.format_version
        )));
    }
    Ok(rec.invocation)
}

/// Reads one field of the `resolved` section of a run record, if present.
pub fn resolved_field(path: &Path, field: &str) -> Option<Value> {
    let text = std::fs::read_to_string(path).ok()?;
    let rec: RunRecord = serde_json::from_str(&text).ok()?;
    rec.resolved.get(field).cloned()
}
