//! `entsel`: drives the experiment pipeline. One subcommand per stage;
//! every config scalar is overridable with a dotted flag, e.g.
//! `entsel train -c exp.toml --train.lr0 0.01`.

use std::path::PathBuf;
use std::process::ExitCode;

use entsel::config::ExperimentConfig;
use entsel::pipeline::run_command;
use entsel::Error;

const USAGE: &str = "\
usage: entsel <command> [-c CONFIG.toml] [--SECTION.FIELD VALUE]...

commands:
  synth     generate the synthetic corpus splits under <workdir>/corpus
  extract   cache filterbank features and point the manifests at them
  train     train the initial model on the clean train/cv splits
  score     write the NRSE score table for one manifest
  select    pick the lowest-NRSE utterances from the score table
  adapt     fine-tune on the selection plus the original training data
  loop      run the multi-pass selection/adaptation loop
  report    emit correlation tables, per-pass metrics, and SVG plots

options:
  -c, --config PATH      experiment config file (defaults apply without it)
  --SECTION.FIELD VALUE  override one config scalar, e.g. --pass.k0 40
  -h, --help             show this help
  --version              show the version

exit status: 0 on success, 1 on configuration or input errors,
2 on runtime failures. Logs go to stderr, data artifacts to files.";

struct Invocation {
    command: String,
    config: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

enum Parsed {
    Run(Invocation),
    Help,
    Version,
}

fn parse_args(args: &[String]) -> Result<Parsed, Error> {
    let mut command = None;
    let mut config = None;
    let mut overrides = Vec::new();
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "-h" | "--help" | "help" => return Ok(Parsed::Help),
            "--version" => return Ok(Parsed::Version),
            "-c" | "--config" => {
                let path = it
                    .next()
                    .ok_or_else(|| Error::config(format!("{arg} needs a file path")))?;
                config = Some(PathBuf::from(path));
            }
            flag if flag.starts_with("--") => {
                let body = &flag[2..];
                let (key, value) = match body.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => {
                        let value = it
                            .next()
                            .ok_or_else(|| Error::config(format!("{flag} needs a value")))?;
                        (body.to_string(), value.clone())
                    }
                };
                if key.is_empty() {
                    return Err(Error::config(format!("malformed flag {flag:?}")));
                }
                overrides.push((key, value));
            }
            word if command.is_none() => command = Some(word.to_string()),
            extra => {
                return Err(Error::config(format!(
                    "unexpected argument {extra:?} (one command per invocation)"
                )));
            }
        }
    }
    let command = command.ok_or_else(|| Error::config("no command given".to_string()))?;
    Ok(Parsed::Run(Invocation {
        command,
        config,
        overrides,
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let run = match parse_args(&args) {
        Ok(Parsed::Help) => {
            println!("{USAGE}");
            return ExitCode::SUCCESS;
        }
        Ok(Parsed::Version) => {
            println!("entsel {}", env!("CARGO_PKG_VERSION"));
            return ExitCode::SUCCESS;
        }
        Ok(Parsed::Run(run)) => run,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{USAGE}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = ExperimentConfig::load(run.config.as_deref(), &run.overrides)
        .and_then(|cfg| run_command(&run.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
