//! The `qpcm` command line: one subcommand per pipeline stage, each reading
//! and writing the binary event formats and leaving a manifest beside its
//! primary output.
//!
//! ```text
//! qpcm --config run.toml simulate --out raw.qpcm
//! qpcm --config run.toml centroid --input raw.qpcm --out photons.qpcm
//! qpcm --config run.toml pair --input photons.qpcm --out pairs.qpcm
//! qpcm render --input pairs.qpcm --mask left.json --mask right.json --out-dir frames
//! qpcm dpc --input pairs.qpcm --mask-a left.json --out dpc
//! ```

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

pub mod args;
pub mod commands;
pub mod manifest;

pub use args::Cli;
pub use commands::run;

/// Exit status for an error category.
pub fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "bad_magic" | "version" | "truncated" | "record_kind" | "format" => 4,
        "stream_order" => 5,
        "shape" => 6,
        "analysis" => 7,
        _ => 1,
    }
}

/// JSON error report written to stderr.
pub fn error_report(err: &qpcm::Error) -> serde_json::Value {
    let mut v = json!({ "category": err.category(), "message": err.to_string() });
    if let qpcm::Error::Analysis { profile, .. } = err {
        v["profile"] = json!(profile);
    }
    v
}

/// Parse, run with the requested worker count, and report.
pub fn run_args<I, T>(args: I) -> Result<serde_json::Value, qpcm::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| qpcm::Error::config(e.to_string()))?;
    qpcm::exec::with_workers(cli.workers, || run(&cli))
}

pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match qpcm::exec::with_workers(cli.workers, || run(&cli)) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_report(&err));
            ExitCode::from(exit_code(err.category()))
        }
    }
}
