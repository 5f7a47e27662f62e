//! JSON config files. A file is a flat object whose keys are flag names
//! (`n-range` or `n_range`) plus an optional `command`; values become flag
//! arguments and are placed before the command-line flags, which therefore
//! win on conflict.

use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

use crate::CliError;

/// Global flags that take a value and may precede the subcommand.
const GLOBAL_VALUE_FLAGS: [&str; 5] = ["--seed", "--threads", "--out", "--format", "--config"];

/// Value of `--config` in raw arguments, if any.
pub fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter().skip(1);
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

/// Index of the subcommand token in raw arguments. Only known names count,
/// so a flag value such as the `16` in `--n 16` is never taken for one.
fn subcommand_index(args: &[String]) -> Option<usize> {
    use clap::CommandFactory;
    let cmd = crate::Cli::command();
    let names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
    let mut i = 1;
    while i < args.len() {
        let a = args[i].as_str();
        if GLOBAL_VALUE_FLAGS.contains(&a) {
            i += 2;
        } else if names.contains(&a) {
            return Some(i);
        } else {
            i += 1;
        }
    }
    None
}

fn flag_given(args: &[String], flag: &str) -> bool {
    let eq = format!("{flag}=");
    args.iter().any(|a| a == flag || a.starts_with(&eq))
}

fn value_tokens(key: &str, value: &Value) -> Result<Vec<String>, CliError> {
    let flag = format!("--{key}");
    let scalar = |v: &Value| -> Result<String, CliError> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            _ => Err(CliError::usage(&flag, "config value must be a scalar or a list of scalars")),
        }
    };
    Ok(match value {
        Value::Null | Value::Bool(false) => vec![],
        Value::Bool(true) => vec![flag],
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            vec![flag, parts.join(",")]
        }
        other => {
            let v = scalar(other)?;
            vec![flag, v]
        }
    })
}

/// Splices the config file's entries into `args`.
pub fn merge(args: Vec<String>, path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed: Value =
        serde_json::from_str(&text).map_err(|e| CliError::usage("--config", format!("{}: {e}", path.display())))?;
    let Value::Object(map) = parsed else {
        return Err(CliError::usage("--config", "config file must hold a JSON object"));
    };
    let mut command = None;
    let mut injected = Vec::new();
    for (key, value) in &map {
        let key = key.replace('_', "-");
        if key == "command" {
            command = Some(
                value
                    .as_str()
                    .ok_or_else(|| CliError::usage("command", "must be a string"))?
                    .to_ascii_lowercase(),
            );
            continue;
        }
        if key == "config" {
            return Err(CliError::usage("config", "config files cannot nest"));
        }
        if flag_given(&args, &format!("--{key}")) {
            continue;
        }
        injected.extend(value_tokens(&key, value)?);
    }
    let mut out = args;
    match subcommand_index(&out) {
        Some(i) => {
            out.splice(i + 1..i + 1, injected);
        }
        None => {
            let cmd = command.ok_or_else(|| {
                CliError::usage("command", "no subcommand given on the command line or in the config file")
            })?;
            // every global flag is also accepted after the subcommand
            injected.insert(0, cmd);
            out.splice(1..1, injected);
        }
    }
    Ok(out)
}

pub fn to_strings<I, T>(args: I) -> Result<Vec<String>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    args.into_iter()
        .map(|a| {
            a.into()
                .into_string()
                .map_err(|a| CliError::usage("arguments", format!("not valid UTF-8: {a:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn finds_subcommand_after_global_values() {
        assert_eq!(subcommand_index(&s(&["x", "--seed", "3", "spectrum", "--n", "4"])), Some(3));
        assert_eq!(subcommand_index(&s(&["x", "--seed=3", "table"])), Some(2));
        assert_eq!(subcommand_index(&s(&["x", "--seed", "3"])), None);
        assert_eq!(subcommand_index(&s(&["x", "--n", "16"])), None);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"command": "spectrum", "family": ["ring", "grid"], "n": 8, "n_range": null, "fast": true}"#).unwrap();
        let merged = merge(s(&["x", "--config", "f", "--n", "16"]), &p).unwrap();
        assert_eq!(merged, s(&["x", "spectrum", "--family", "ring,grid", "--fast", "--config", "f", "--n", "16"]));
        let merged = merge(s(&["x", "consensus", "--n=4"]), &p).unwrap();
        assert_eq!(merged, s(&["x", "consensus", "--family", "ring,grid", "--fast", "--n=4"]));
    }

    #[test]
    fn rejects_non_objects() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "[1, 2]").unwrap();
        assert!(matches!(merge(s(&["x", "table"]), &p), Err(CliError::Usage { .. })));
    }
}
