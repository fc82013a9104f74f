use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::CommandFactory;

use super::{Cli, CliError};

/// Parses a flat config file into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are ignored; keys may use `-` or `_`.
pub fn parse_config(text: &str, source: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "{}:{}: expected key=value, got {line:?}",
                source.display(),
                n + 1
            ))
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Config(format!("{}:{}: empty key", source.display(), n + 1)));
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

fn config_path(args: &[OsString]) -> Result<Option<&Path>, CliError> {
    let mut it = args.iter().skip(2);
    while let Some(a) = it.next() {
        let Some(s) = a.to_str() else { continue };
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it
                .next()
                .map(|p| Some(Path::new(p)))
                .ok_or_else(|| CliError::Config("--config needs a file path".into()));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(Path::new(p)));
        }
    }
    Ok(None)
}

/// Inserts the entries of the `--config` file (if any) as `--key=value` flags
/// directly after the subcommand, so that flags typed later override them.
/// Keys that are not flags of the subcommand are rejected.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(sub) = args.get(1).and_then(|s| s.to_str()) else {
        return Ok(args);
    };
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let root = Cli::command();
    let Some(cmd) = root.find_subcommand(sub) else {
        return Ok(args);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let pairs = parse_config(&text, path)?;
    let known: Vec<&str> = cmd
        .get_arguments()
        .filter_map(|a| a.get_long())
        .filter(|l| !matches!(*l, "config" | "help"))
        .collect();
    let mut injected = Vec::with_capacity(pairs.len());
    for (k, v) in pairs {
        if !known.contains(&k.as_str()) {
            return Err(CliError::Config(format!(
                "unknown key {k:?} in {} for `{sub}` (known: {})",
                path.display(),
                known.join(", ")
            )));
        }
        injected.push(OsString::from(format!("--{k}={v}")));
    }
    let mut out = Vec::with_capacity(args.len() + injected.len());
    out.extend_from_slice(&args[..2]);
    out.extend(injected);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}
