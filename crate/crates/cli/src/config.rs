//! `--config FILE` support: the JSON object's entries become flag tokens
//! placed directly after the subcommand, so later command-line flags win.

use std::fs;

use anyhow::{bail, Context, Result};
use serde_json::Value;

use crate::args::SUBCOMMANDS;

fn config_path(argv: &[String]) -> Result<Option<String>> {
    let mut found = None;
    let mut i = 1;
    while i < argv.len() {
        if argv[i] == "--" {
            break;
        }
        if argv[i] == "--config" {
            let v = argv.get(i + 1).context("--config needs a file path")?;
            found = Some(v.clone());
            i += 1;
        } else if let Some(v) = argv[i].strip_prefix("--config=") {
            found = Some(v.to_string());
        }
        i += 1;
    }
    Ok(found)
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => bail!("config key {key:?}: expected a string, number, bool or list"),
    })
}

/// Flag tokens for one JSON object.
pub fn tokens(json: &Value) -> Result<Vec<String>> {
    let obj = json.as_object().context("config file must hold a JSON object")?;
    let mut out = Vec::new();
    for (key, value) in obj {
        if key == "config" || key == "threads" {
            bail!("config key {key:?} is only accepted on the command line");
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) => {
                let parts = items.iter().map(|v| scalar(key, v)).collect::<Result<Vec<_>>>()?;
                out.push(flag);
                out.push(parts.join(","));
            }
            v => {
                out.push(flag);
                out.push(scalar(key, v)?);
            }
        }
    }
    Ok(out)
}

/// Returns `argv` with the config file's flags spliced in.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("--config: cannot read {path}"))?;
    let json: Value = serde_json::from_str(&text).with_context(|| format!("--config: {path} is not valid JSON"))?;
    let extra = tokens(&json).with_context(|| format!("--config: {path}"))?;
    let Some(at) = argv.iter().skip(1).position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let at = at + 2;
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
