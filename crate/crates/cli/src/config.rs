//! `--config FILE`: `key = value` lines, one per flag.
//!
//! Keys are flag names with `_` or `-` (`learning_rate = 1e-4` is
//! `--learning-rate 1e-4`). Boolean `true` turns a switch on, `false` leaves
//! it off, arrays are joined with commas. Flags given on the command line win
//! over the file.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use toml::Value;

pub const SUBCOMMANDS: [&str; 4] = ["train", "eval", "predict", "synth"];

/// Value of `--config` in raw arguments, if any.
pub fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn render(key: &str, v: &Value) -> Result<Option<String>> {
    Ok(Some(match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Boolean(_) => return Ok(None),
        Value::Array(items) => {
            let parts: Result<Vec<String>> = items
                .iter()
                .map(|x| render(key, x)?.with_context(|| format!("{key}: booleans are not allowed in lists")))
                .collect();
            parts?.join(",")
        }
        other => bail!("{key}: unsupported value {other}"),
    }))
}

/// Flags encoded by a config file's text, in file order.
pub fn flags_from_str(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let table: toml::Table = text.parse().context("malformed config file")?;
    let mut out = Vec::new();
    for (key, value) in &table {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            bail!("config files cannot include other config files");
        }
        match (value, render(key, value)?) {
            (Value::Boolean(true), _) => out.push((flag, vec![])),
            (Value::Boolean(false), _) => {}
            (_, Some(v)) => out.push((flag.clone(), vec![v])),
            (_, None) => unreachable!(),
        }
    }
    Ok(out)
}

fn given(args: &[String], flag: &str) -> bool {
    let prefix = format!("{flag}=");
    args.iter().any(|a| a == flag || a.starts_with(&prefix))
}

/// Splices the config file's flags in right after the subcommand, skipping
/// any flag already present on the command line.
pub fn expand(args: Vec<String>, path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    let flags = flags_from_str(&text).with_context(|| path.display().to_string())?;
    let Some(at) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut extra = Vec::new();
    for (flag, values) in flags {
        if !given(&args, &flag) {
            extra.push(flag);
            extra.extend(values);
        }
    }
    let mut out = args;
    out.splice(at + 1..at + 1, extra);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn finds_config_flag() {
        assert_eq!(config_path(&strings(&["qtn", "train", "--config", "a.toml"])), Some("a.toml".into()));
        assert_eq!(config_path(&strings(&["qtn", "--config=b", "eval"])), Some("b".into()));
        assert_eq!(config_path(&strings(&["qtn", "eval"])), None);
    }

    #[test]
    fn values_become_flags() {
        let f = flags_from_str("learning_rate = 1e-4\nepochs = 3\nresume = true\nno_timing = false\nratios = [0.8, 0.1, 0.1]\nout = \"run\"\n").unwrap();
        assert_eq!(
            f,
            vec![
                ("--epochs".to_string(), vec!["3".to_string()]),
                ("--learning-rate".to_string(), vec!["0.0001".to_string()]),
                ("--out".to_string(), vec!["run".to_string()]),
                ("--ratios".to_string(), vec!["0.8,0.1,0.1".to_string()]),
                ("--resume".to_string(), vec![]),
            ]
        );
        assert!(flags_from_str("x = = 1").is_err());
        assert!(flags_from_str("config = \"other\"").is_err());
    }

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "epochs = 9\nseed = 4\nlr = 0.5\n").unwrap();
        let args = strings(&["qtn", "--seed", "1", "train", "--epochs=2"]);
        let out = expand(args, &path).unwrap();
        assert_eq!(out, strings(&["qtn", "--seed", "1", "train", "--lr", "0.5", "--epochs=2"]));
    }
}
