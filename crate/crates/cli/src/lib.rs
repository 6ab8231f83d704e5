//! Command-line front end: one subcommand per metric family, each emitting
//! a [`report::MetricReport`].
//!
//! Exit status is 0 on success, 1 when a requested metric is undefined on
//! the given input (the report is still written), and 2 on usage or input
//! errors.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{self, Write};

use clap::Parser;
use fairlens_core::FairlensError;
use serde_json::Value;

use crate::args::Cli;
use crate::commands::Context;
use crate::report::{emit_report, write_output, InputDigest, MetricReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNDEFINED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Runs the tool on `argv` (program name first) against the process's
/// standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let mut argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let mut config_digest = None;
    if let Some(path) = config::config_path(&argv) {
        let merged = InputDigest::of_file(&path).and_then(|digest| {
            let text = std::fs::read_to_string(&path).map_err(|e| FairlensError::Io {
                path: path.clone(),
                source: e,
            })?;
            config_digest = Some(digest);
            config::merge_config(argv.clone(), &text, &path.display().to_string())
        });
        match merged {
            Ok(a) => argv = a,
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                return EXIT_INPUT;
            }
        }
    }

    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{rendered}");
            return e.exit_code();
        }
    };

    match produce(&cli, config_digest) {
        Ok(report) => {
            let bytes = emit_report(&report, cli.global.format, cli.global.paper_scale);
            if let Err(e) = write_output(&bytes, cli.global.out.as_deref(), stdout) {
                let _ = writeln!(stderr, "error: {e}");
                return EXIT_INPUT;
            }
            for w in report.warnings.iter().filter(|_| cli.global.out.is_some()) {
                let _ = writeln!(stderr, "warning: {w}");
            }
            if report.undefined {
                EXIT_UNDEFINED
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_INPUT
        }
    }
}

fn config_echo(cli: &Cli) -> BTreeMap<String, Value> {
    let mut echo = BTreeMap::new();
    let mut absorb = |v: Value| {
        if let Value::Object(map) = v {
            echo.extend(map);
        }
    };
    absorb(serde_json::to_value(&cli.global).unwrap_or(Value::Null));
    use args::Command::*;
    absorb(match &cli.command {
        Mask(a) => serde_json::to_value(a),
        Label(a) => serde_json::to_value(a),
        Error(a) => serde_json::to_value(a),
        Lic(a) => serde_json::to_value(a),
        Biasamp(a) => serde_json::to_value(a),
        Chair(a) => serde_json::to_value(a),
        Hitratio(a) => serde_json::to_value(a),
        Retrieval(a) => serde_json::to_value(a),
        Resolution(a) => serde_json::to_value(a),
        Vlbias(a) => serde_json::to_value(a),
        Report(a) => serde_json::to_value(a),
    }
    .unwrap_or(Value::Null));
    echo
}

fn produce(cli: &Cli, config_digest: Option<InputDigest>) -> Result<MetricReport, FairlensError> {
    let mut ctx = Context::new(cli.global.clone(), cli.command.name())?;
    ctx.report.timestamp = cli
        .global
        .timestamp
        .clone()
        .or_else(|| std::env::var("SOURCE_DATE_EPOCH").ok());
    ctx.report.config = config_echo(cli);
    if let Some(d) = config_digest {
        ctx.report.input("config", d);
    }
    commands::execute(&mut ctx, &cli.command)?;
    Ok(ctx.report)
}
