//! Config files: TOML keyed by flag name, expanded into extra arguments.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::CommandFactory;
use fairlens_core::FairlensError;
use toml::Value;

use crate::args::Cli;

/// Value of `--config` on the command line, if any.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut iter = argv.iter().skip(1);
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn subcommand_name(argv: &[OsString], names: &BTreeSet<String>) -> Option<String> {
    argv.iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .find(|a| names.contains(a))
}

fn flags_given(argv: &[OsString]) -> BTreeSet<String> {
    argv.iter()
        .skip(1)
        .filter_map(|a| {
            let s = a.to_string_lossy();
            let flag = s.strip_prefix("--")?;
            Some(flag.split('=').next().unwrap_or(flag).to_string())
        })
        .collect()
}

fn render(key: &str, value: &Value) -> Result<Option<String>, FairlensError> {
    let scalar = |v: &Value| -> Result<String, FairlensError> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Integer(i) => Ok(i.to_string()),
            Value::Float(f) => Ok(f.to_string()),
            _ => Err(FairlensError::InvalidArgument(format!(
                "config key `{key}` has an unsupported value"
            ))),
        }
    };
    match value {
        Value::Boolean(true) => Ok(Some(String::new())),
        Value::Boolean(false) => Ok(None),
        Value::Array(items) => {
            let parts: Result<Vec<String>, _> = items.iter().map(scalar).collect();
            Ok(Some(parts?.join(",")))
        }
        other => scalar(other).map(Some),
    }
}

/// Appends `--key value` for every config key the command line leaves unset
/// and the chosen subcommand accepts. Keys no subcommand knows are errors.
pub fn merge_config(argv: Vec<OsString>, text: &str, source: &str) -> Result<Vec<OsString>, FairlensError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| FairlensError::InvalidArgument(format!("{source}: {e}")))?;

    let cli = Cli::command();
    let globals: BTreeSet<String> = cli
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let mut known = globals.clone();
    let mut names = BTreeSet::new();
    for sub in cli.get_subcommands() {
        names.insert(sub.get_name().to_string());
        known.extend(sub.get_arguments().filter_map(|a| a.get_long().map(str::to_string)));
    }
    let accepted: BTreeSet<String> = match subcommand_name(&argv, &names) {
        Some(name) => {
            let sub = cli.find_subcommand(&name).expect("known subcommand");
            sub.get_arguments()
                .filter_map(|a| a.get_long().map(str::to_string))
                .chain(globals.iter().cloned())
                .collect()
        }
        None => globals.clone(),
    };
    let given = flags_given(&argv);

    let mut out = argv;
    for (key, value) in &table {
        let flag = key.replace('_', "-");
        if flag == "config" || !known.contains(&flag) {
            return Err(FairlensError::InvalidArgument(format!(
                "{source}: unknown key `{key}`"
            )));
        }
        if given.contains(&flag) || !accepted.contains(&flag) {
            continue;
        }
        if let Some(rendered) = render(key, value)? {
            out.push(format!("--{flag}").into());
            if !matches!(value, Value::Boolean(_)) {
                out.push(rendered.into());
            }
        }
    }
    Ok(out)
}
