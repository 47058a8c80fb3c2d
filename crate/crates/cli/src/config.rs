//! Flat key-value config files. Each `key = value` becomes `--key value`
//! placed before the command-line flags, so flags given explicitly win.

use std::path::Path;

use crate::error::{CliError, PathContext, Result};

fn scalar(value: &toml::Value) -> Option<String> {
    match value {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(format!("{f:e}")),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Flags equivalent to a config file. Arrays become comma-separated lists;
/// `true` booleans become bare switches and `false` ones are dropped.
pub fn config_flags(text: &str) -> Result<Vec<String>> {
    let table: toml::Table = text.parse().map_err(|e| CliError::usage(format!("config file: {e}")))?;
    let mut flags = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        match &value {
            toml::Value::Boolean(true) => flags.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
                let parts = parts.ok_or_else(|| CliError::usage(format!("config key `{key}` must hold scalars")))?;
                flags.push(flag);
                flags.push(parts.join(","));
            }
            other => {
                let v = scalar(other).ok_or_else(|| CliError::usage(format!("config key `{key}` is not a scalar")))?;
                flags.push(flag);
                flags.push(v);
            }
        }
    }
    Ok(flags)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Splices the config file named by `--config` into `args` right after the
/// subcommand name.
pub fn expand_config(args: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).at(Path::new(&path))?;
    let flags = config_flags(&text)?;
    let Some(pos) = args.iter().skip(1).position(|a| subcommands.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut out = args[..pos + 2].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 2..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_follow_subcommand_and_precede_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "lr = 0.25\nsigma2 = [1e-4, 1e-6]\nverbose = true\n").unwrap();
        let args: Vec<String> =
            ["qwem", "--config", cfg.to_str().unwrap(), "train", "--lr", "0.5"].iter().map(|s| s.to_string()).collect();
        let out = expand_config(args, &["train"]).unwrap();
        assert_eq!(&out[4..], &["--lr", "2.5e-1", "--sigma2", "1e-4,1e-6", "--verbose", "--lr", "0.5"]);
    }
}
