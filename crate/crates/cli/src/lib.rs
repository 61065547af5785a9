//! Command-line front end: argument parsing, config-file merging and the
//! subcommand drivers.

pub mod args;
pub mod commands;
pub mod config;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::ConfigFile;

/// Inserts config-file defaults right after the subcommand name.
fn merge_config(argv: Vec<String>) -> Result<Vec<String>, cardiaq::Error> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let cfg = ConfigFile::load(path.as_ref())?;
    let Some(sub) = argv.iter().skip(1).position(|a| !a.starts_with('-') && a != &path) else {
        return Ok(argv);
    };
    let at = sub + 2;
    let mut out = argv[..at].to_vec();
    out.extend(cfg.missing_flags(&argv));
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

/// Runs one invocation and returns the process exit code: 0 on success,
/// 2 for usage errors and 1 when the pipeline fails.
pub fn run<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let argv = match merge_config(argv.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Train(a) => commands::train(a),
        Command::Segment(a) => commands::segment(a),
        Command::Quantify(a) => commands::quantify(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Bench(a) => commands::bench(a),
    };
    match outcome {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
