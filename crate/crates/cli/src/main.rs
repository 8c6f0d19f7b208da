mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use config::{Cli, CommandKind};
use tuning_inference::report::{to_json_string, SCHEMA_VERSION};
use tuning_inference::Error;

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    schema_version: u32,
    error: ErrorBody<'a>,
}

fn report_error(e: &Error, out: Option<PathBuf>) -> ExitCode {
    let line = match e {
        Error::Parse { line, .. } => Some(*line),
        _ => None,
    };
    let report = ErrorReport {
        schema_version: SCHEMA_VERSION,
        error: ErrorBody { kind: e.kind(), message: e.to_string(), line },
    };
    let json = to_json_string(&report).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", e.kind()));
    eprintln!("{json}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(&dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{json}\n"));
        }
    }
    if e.is_numerical() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, flags) = cli.command.split();
    let out_hint = flags.out.clone();
    let flags = match flags.resolve(kind) {
        Ok(f) => f,
        Err(e) => return report_error(&e, out_hint),
    };
    if let Some(t) = flags.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return report_error(&Error::InvalidInput(e.to_string()), flags.out.clone());
        }
    }
    let result = match kind {
        CommandKind::Fit => commands::fit(&flags),
        CommandKind::Tune => commands::tune_cmd(&flags),
        CommandKind::Variance => commands::variance(&flags),
        CommandKind::Simulate => commands::simulate(&flags),
        CommandKind::Bootstrap => commands::bootstrap(&flags),
        CommandKind::StoneCheck => commands::stone_check(&flags),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e, flags.out.clone()),
    }
}
