use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use crate::workspace::Workspace;
use crate::GlobalOpts;

/// Writes `value` as pretty JSON to `path`, then prints either the JSON or `text`.
pub fn emit<T: Serialize>(g: &GlobalOpts, path: &Path, value: &T, text: &str) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(value)? + "\n";
    Workspace::ensure_parent(path)?;
    fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    if g.json {
        print!("{json}");
    } else {
        print!("{text}");
    }
    Ok(())
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> anyhow::Result<()> {
    Workspace::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
