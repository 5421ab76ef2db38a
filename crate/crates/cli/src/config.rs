//! Turns a TOML config file into extra command-line flags.
//!
//! Keys are flag names (`cells`, `time-offset-hours` or `time_offset_hours`).
//! Top-level keys are used by every subcommand that has the flag; a table
//! named after a subcommand applies only there. Flags already given on the
//! command line are left alone, so the command line always wins.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory};
use toml::{Table, Value};

use crate::args::Cli;
use crate::CliError;

const GLOBAL_FLAGS: [&str; 2] = ["config", "sequential"];

/// Config file path and subcommand position in `argv`, found without a
/// full parse.
fn scan(argv: &[OsString]) -> (Option<PathBuf>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    (config, sub)
}

fn render_value(key: &str, v: &Value) -> Result<String, CliError> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Array(items) => items.iter().map(|x| render_value(key, x)).collect::<Result<Vec<_>, _>>()?.join(","),
        other => return Err(CliError::Usage(format!("config key `{key}` has unsupported value {other}"))),
    })
}

fn command_flags(sub: &str) -> Option<Vec<(String, bool)>> {
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(sub)?;
    Some(
        sub.get_arguments()
            .filter_map(|a| a.get_long().map(|l| (l.to_string(), matches!(a.get_action(), ArgAction::SetTrue))))
            .filter(|(l, _)| !GLOBAL_FLAGS.contains(&l.as_str()))
            .collect(),
    )
}

fn all_flags() -> Vec<String> {
    let cmd = Cli::command();
    cmd.get_subcommands()
        .flat_map(|s| s.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect::<Vec<_>>())
        .chain(GLOBAL_FLAGS.iter().map(|s| s.to_string()))
        .collect()
}

fn given_on_command_line(argv: &[OsString], flag: &str) -> bool {
    let bare = format!("--{flag}");
    let eq = format!("--{flag}=");
    argv.iter().any(|a| {
        let a = a.to_string_lossy();
        a == bare || a.starts_with(&eq)
    })
}

fn load(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.parse::<Table>().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// `argv` with flags from the config file inserted after the subcommand.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let (Some(path), Some(sub_at)) = scan(&argv) else {
        return Ok(argv);
    };
    let sub = argv[sub_at].to_string_lossy().into_owned();
    let Some(flags) = command_flags(&sub) else {
        // Unknown subcommand; let clap report it.
        return Ok(argv);
    };
    let table = load(&path)?;
    let known = all_flags();
    let mut entries: Vec<(String, Value, bool)> = Vec::new();
    for (key, value) in &table {
        match value {
            Value::Table(t) => {
                if command_flags(key).is_none() {
                    return Err(CliError::Usage(format!("config table `[{key}]` is not a command")));
                }
                if key == &sub {
                    entries.extend(t.iter().map(|(k, v)| (k.clone(), v.clone(), true)));
                }
            }
            _ => entries.push((key.clone(), value.clone(), false)),
        }
    }
    // Command tables take precedence over top-level keys.
    entries.sort_by_key(|e| std::cmp::Reverse(e.2));
    let mut extra: Vec<OsString> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for (key, value, scoped) in entries {
        let flag = key.replace('_', "-");
        if !known.contains(&flag) {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        let Some(&(_, is_switch)) = flags.iter().find(|(l, _)| *l == flag) else {
            if scoped {
                return Err(CliError::Usage(format!("`{sub}` has no flag `--{flag}`")));
            }
            continue;
        };
        if seen.contains(&flag) || given_on_command_line(&argv, &flag) {
            continue;
        }
        seen.push(flag.clone());
        if is_switch {
            match value {
                Value::Boolean(true) => extra.push(format!("--{flag}").into()),
                Value::Boolean(false) => {}
                _ => return Err(CliError::Usage(format!("config key `{key}` must be true or false"))),
            }
        } else {
            extra.push(format!("--{flag}={}", render_value(&key, &value)?).into());
        }
    }
    let mut out = argv[..=sub_at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[sub_at + 1..]);
    Ok(out)
}
