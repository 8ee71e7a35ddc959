//! Command-line driver: each subcommand reads its inputs, runs one stage of
//! the pipeline and writes its artifacts under `--out`.

pub mod args;
pub mod commands;
pub mod config;
pub mod table;

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches};

pub use commands::CliError;

/// Run one invocation and return its exit code: 0 on success, 1 on usage
/// errors, 2 on data errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::merge(argv) {
        Ok(a) => a,
        Err(m) => {
            eprintln!("error: {m}");
            return 1;
        }
    };
    // repeated options: the last one wins, so flags override config entries
    let cmd = args::Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let parsed = cmd
        .try_get_matches_from(&argv)
        .and_then(|m| args::Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {}", describe(&e));
            2
        }
    }
}

/// The error chain joined with `: `, skipping causes whose text the message
/// already carries.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}
