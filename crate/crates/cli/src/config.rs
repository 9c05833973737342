//! `--config` files: `key = value` lines that fill in flags the user did not
//! pass on the command line.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches};

use crate::args::Cli;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// values may be wrapped in double quotes.
pub fn parse_config(text: &str) -> Result<Vec<Entry>, String> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", idx + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", idx + 1));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        out.push(Entry {
            key,
            value: value.to_string(),
            line: idx + 1,
        });
    }
    Ok(out)
}

fn from_command_line(matches: &ArgMatches, id: &str) -> bool {
    // Ids defined on a different level are absent rather than an error.
    matches.try_get_raw(id).is_ok() && matches.value_source(id) == Some(ValueSource::CommandLine)
}

/// Parses `args`, merging in the config file named by `--config` if any.
pub fn parse_with_config<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let command = Cli::command();
    let matches = command.clone().try_get_matches_from(&args)?;
    let Some(path) = matches.get_one::<std::path::PathBuf>("config").cloned() else {
        return Cli::from_arg_matches(&matches);
    };
    let (sub_name, sub_matches) = matches
        .subcommand()
        .expect("subcommand is required by the parser");
    let sub = command
        .find_subcommand(sub_name)
        .expect("matched subcommand exists");

    let entries =
        read_config(&path).map_err(|msg| Cli::command().error(clap::error::ErrorKind::Io, msg))?;
    for entry in entries {
        if entry.key == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(entry.key.as_str()))
            .or_else(|| {
                command
                    .get_arguments()
                    .find(|a| a.get_long() == Some(entry.key.as_str()))
            });
        let Some(arg) = arg else {
            return Err(Cli::command().error(
                clap::error::ErrorKind::UnknownArgument,
                format!(
                    "{}: line {}: unknown key '{}' for `{sub_name}`",
                    path.display(),
                    entry.line,
                    entry.key
                ),
            ));
        };
        let id = arg.get_id().as_str();
        if from_command_line(sub_matches, id) || from_command_line(&matches, id) {
            continue;
        }
        // Every group here is exclusive; a command-line member wins over the file.
        let displaced = sub.get_groups().any(|g| {
            g.get_args().any(|a| a.as_str() == id)
                && g.get_args()
                    .any(|a| from_command_line(sub_matches, a.as_str()))
        });
        if displaced {
            continue;
        }
        args.push(format!("--{}={}", entry.key, entry.value).into());
    }
    let merged = command.try_get_matches_from(&args)?;
    Cli::from_arg_matches(&merged)
}

fn read_config(path: &Path) -> Result<Vec<Entry>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}
