//! Flat TOML configuration with `--key value` overrides.

use std::fs;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::{CliError, CliResult, EXIT_MISSING_INPUT};

#[derive(Debug, Clone, PartialEq)]
pub struct Args {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub overrides: Table,
}

/// Parses `<subcommand> [--config FILE] [--key value]...`. Dashes in keys
/// become underscores. Values are read as TOML literals when they parse as
/// one (`7`, `0.15`, `true`, `[1, 2]`) and as plain strings otherwise.
pub fn parse_args(argv: &[String]) -> CliResult<Args> {
    let mut it = argv.iter();
    let subcommand = it
        .next()
        .ok_or_else(|| CliError::usage("missing subcommand"))?
        .clone();
    let mut config = None;
    let mut overrides = Table::new();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(CliError::usage(format!("unexpected argument `{flag}`")));
        };
        let (key, inline) = match key.split_once('=') {
            Some((k, v)) => (k, Some(v.to_owned())),
            None => (key, None),
        };
        let raw = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| CliError::usage(format!("flag --{key} needs a value")))?,
        };
        let key = key.replace('-', "_");
        if key.is_empty() {
            return Err(CliError::usage("empty flag name"));
        }
        if key == "config" {
            config = Some(PathBuf::from(raw));
            continue;
        }
        overrides.insert(key, literal(&raw));
    }
    Ok(Args {
        subcommand,
        config,
        overrides,
    })
}

fn literal(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_owned()),
    }
}

/// Merges the config file (if any) with the overrides and deserializes the
/// result. Unknown keys are rejected by the target type.
pub fn resolve<T: DeserializeOwned>(args: &Args) -> CliResult<T> {
    let mut table = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError {
                code: "missing_input",
                exit: EXIT_MISSING_INPUT,
                message: format!("{}: {e}", path.display()),
            })?;
            text.parse::<Table>()
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    for (k, v) in &args.overrides {
        table.insert(k.clone(), v.clone());
    }
    Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().to_owned();
        match msg.strip_prefix("unknown field `") {
            Some(rest) => CliError::unknown_flag(rest.split('`').next().unwrap_or(rest)),
            None => CliError::config(msg),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    fn argv(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Demo {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        alpha: f64,
        #[serde(default)]
        tag: Option<String>,
        #[serde(default)]
        history: Vec<u32>,
        #[serde(default)]
        width_ratio: usize,
        #[serde(default)]
        mask_seen: bool,
    }

    #[test]
    fn overrides_parse_as_literals() {
        let a = parse_args(&argv(&[
            "steer", "--seed", "7", "--alpha", "0.15", "--tag", "love story", "--history", "[1, 2]",
            "--width-ratio=8", "--mask-seen", "true",
        ]))
        .unwrap();
        assert_eq!(a.subcommand, "steer");
        let d: Demo = resolve(&a).unwrap();
        assert_eq!(
            d,
            Demo {
                seed: 7,
                alpha: 0.15,
                tag: Some("love story".into()),
                history: vec![1, 2],
                width_ratio: 8,
                mask_seen: true,
            }
        );
    }

    #[test]
    fn integer_where_real_expected() {
        let a = parse_args(&argv(&["x", "--alpha", "1"])).unwrap();
        let d: Demo = resolve(&a).unwrap();
        assert_eq!(d.alpha, 1.0);
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 3\nalpha = 0.5\n").unwrap();
        let a = parse_args(&argv(&["x", "--config", path.to_str().unwrap(), "--alpha", "0.25"])).unwrap();
        let d: Demo = resolve(&a).unwrap();
        assert_eq!((d.seed, d.alpha), (3, 0.25));
    }

    #[test]
    fn unknown_keys_and_bad_usage() {
        let a = parse_args(&argv(&["x", "--bogus", "1"])).unwrap();
        let err = resolve::<Demo>(&a).unwrap_err();
        assert_eq!(err.code, "unknown_flag");
        assert_eq!(err.exit, 2);
        assert!(parse_args(&argv(&["x", "--seed"])).is_err());
        assert!(parse_args(&argv(&["x", "seed"])).is_err());
        assert!(parse_args(&[]).is_err());
        let a = parse_args(&argv(&["x", "--config", "/nonexistent/c.toml"])).unwrap();
        assert_eq!(resolve::<Demo>(&a).unwrap_err().exit, 3);
    }
}
