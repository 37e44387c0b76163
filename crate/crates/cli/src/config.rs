//! Config files: flag settings merged under the command line.

use std::path::Path;

use anyhow::{bail, Context, Result};

const SUBCOMMANDS: &[&str] = &["rank", "winmatrix", "sample-plan", "detect", "simulate", "replay"];
const GLOBALS_WITH_VALUE: &[&str] = &["--seed", "--threads", "--format", "--config", "--out-dir"];

/// Settings as `(key, value)` pairs, in file order for `key = value` files
/// and key order for JSON objects.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        return map.into_iter().map(|(k, v)| Ok((k, json_scalar(&v)?))).collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config {} line {}: expected `key = value`", path.display(), i + 1);
        };
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        out.push((k.trim().to_string(), v.to_string()));
    }
    Ok(out)
}

fn json_scalar(v: &serde_json::Value) -> Result<String> {
    use serde_json::Value;
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Array(items) => items.iter().map(json_scalar).collect::<Result<Vec<_>>>()?.join(","),
        Value::Null | Value::Object(_) => bail!("config values must be scalars or arrays, got {v}"),
    })
}

fn to_flags(settings: &[(String, String)]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in settings {
        let flag = format!("--{}", k.replace('_', "-"));
        if flag == "--config" {
            continue;
        }
        match v.as_str() {
            "true" => out.push(flag),
            "false" => {}
            _ => {
                out.push(flag);
                out.push(v.clone());
            }
        }
    }
    out
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

/// Index just past the subcommand path (`simulate coverage` counts as one).
fn subcommand_end(argv: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].as_str();
        if GLOBALS_WITH_VALUE.contains(&a) {
            i += 2;
            continue;
        }
        if SUBCOMMANDS.contains(&a) {
            if a == "simulate" && matches!(argv.get(i + 1).map(String::as_str), Some("coverage" | "efficiency")) {
                return Some(i + 2);
            }
            return Some(i + 1);
        }
        i += 1;
    }
    None
}

/// Splice the flags of the `--config` file in right after the subcommand so
/// that later command-line occurrences override them.
pub fn merge_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(at) = subcommand_end(&argv) else {
        return Ok(argv);
    };
    let flags = to_flags(&read_config(Path::new(&path))?);
    let mut out = argv[..at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
