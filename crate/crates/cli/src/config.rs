//! Config files: `key = value` lines where keys are long flag names
//! (`-` or `_` both accepted). Blank lines and `#` comments are ignored.
//! Values only fill flags that were not given on the command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, CommandFactory, FromArgMatches};

use crate::{Cli, Failure};

pub fn read(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

fn clap_failure(e: clap::Error) -> Failure {
    use clap::error::ErrorKind;
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        e.exit();
    }
    Failure::Config(e.to_string().trim_end().to_string())
}

fn from_command_line(top: &ArgMatches, sub: &ArgMatches, id: &str) -> bool {
    let src = |m: &ArgMatches| m.ids().any(|i| i.as_str() == id).then(|| m.value_source(id)).flatten();
    src(sub) == Some(ValueSource::CommandLine) || src(top) == Some(ValueSource::CommandLine)
}

pub fn parse(mut argv: Vec<OsString>) -> Result<Cli, Failure> {
    let command = Cli::command();
    let first = command.clone().try_get_matches_from(&argv).map_err(clap_failure)?;
    let Some(path) = first.get_one::<std::path::PathBuf>("config").cloned() else {
        return Cli::from_arg_matches(&first).map_err(clap_failure);
    };
    let values = read(&path)?;
    let (name, sub) = first.subcommand().expect("subcommand is required");
    let sub_command = command.find_subcommand(name).expect("parsed subcommand exists");

    for (key, value) in values {
        if key == "config" {
            return Err(Failure::Config(format!("{}: config files cannot nest", path.display())));
        }
        let arg = sub_command
            .get_arguments()
            .chain(command.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Failure::Config(format!("{}: unknown key `{key}` for `{name}`", path.display())))?;
        if from_command_line(&first, sub, arg.get_id().as_str()) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => argv.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(Failure::Config(format!("{}: `{key}` must be true or false", path.display()))),
            },
            ArgAction::Append => {
                for v in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                    argv.push(format!("--{key}={v}").into());
                }
            }
            _ => argv.push(format!("--{key}={value}").into()),
        }
    }
    let merged = command.try_get_matches_from(&argv).map_err(clap_failure)?;
    Cli::from_arg_matches(&merged).map_err(clap_failure)
}
