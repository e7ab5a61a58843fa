//! `pet-turtle`: dataset generation, clustering, baselines, evaluation and
//! model selection from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod args;
mod jobs;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{resolve, Cli, Command, FileConfig};
use manifest::RunManifest;

/// Bad flags, flag combinations or config files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(pet_turtle::Error::NonFinite(_)) = cause.downcast_ref::<pet_turtle::Error>() {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_DATA
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("TURTLE_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("TURTLE_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<()> {
    init_threads()?;
    let job = match cli.command {
        Command::Replay(r) => RunManifest::load(&r.manifest)?.job,
        command => {
            let file = match &cli.config {
                Some(path) => FileConfig::load(path)?,
                None => FileConfig::default(),
            };
            resolve(command, &file, cli.timing)?
        }
    };
    let record = job.run()?;
    let path = RunManifest::new(argv, job, record).write()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, argv.into_iter().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
