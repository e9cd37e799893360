//! `ddff`: synthesize light-field datasets, refocus them into focal stacks,
//! train and evaluate the disparity network, and plot the results.
//!
//! ```text
//! ddff <command> [--config <path>] [--key <value>]...
//! ```
//!
//! Overrides use dotted paths into the configuration tree (`--train.epochs
//! 40`); bare keys address the section of the invoked command (`ddff synth
//! --scenes 8`). Values are parsed as JSON where possible, otherwise taken
//! as strings. Exit code 0 means success, 1 a runtime failure (recorded in
//! the run log), 2 an invalid invocation or configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use ddff_cli::commands::{self, Outcome};
use ddff_cli::config::{load_config, Command, Config};
use ddff_cli::manifest::{append_manifest, RunManifest};

const USAGE: &str = "\
usage: ddff <command> [--config <path>] [--key <value>]...

commands:
  synth     render synthetic light-field scenes into a focal-stack dataset
  refocus   turn one stored light field into a focal-stack directory
  train     fit the disparity network on a dataset
  eval      score a checkpoint, the classic baseline, or stored predictions
  predict   run a checkpoint on one stack, writing PFM + PNG
  plot      draw loss curves, bad-pixel curves, and focus-measure figures

options:
  --config <path>   JSON configuration file (defaults apply without one)
  --key <value>     override any configuration field by dotted path
                    (bare keys land in the invoked command's section;
                    `dataset` and `runs_dir` stay at the root)
  -h, --help        show this message

`synth` and `train` require an explicit seed (in the file or via --seed).
Exit codes: 0 success, 1 runtime failure, 2 invalid invocation or config.
";

struct Invocation {
    command: Command,
    config_path: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

/// Parses the raw argument list. `Ok(None)` means help was requested.
fn parse_args(args: &[String]) -> Result<Option<Invocation>, String> {
    if args.iter().any(|a| a == "--help" || a == "-h") {
        return Ok(None);
    }
    let mut it = args.iter().peekable();
    let command = match it.next() {
        Some(word) if !word.starts_with('-') => Command::parse(word)
            .ok_or_else(|| format!("unknown command `{word}`"))?,
        Some(word) => return Err(format!("expected a command, found `{word}`")),
        None => return Err("missing command".to_string()),
    };
    let mut config_path = None;
    let mut overrides = Vec::new();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| format!("expected `--key value`, found `{arg}`"))?;
        if key.is_empty() {
            return Err("empty option name `--`".to_string());
        }
        let value = it
            .next()
            .ok_or_else(|| format!("option `--{key}` is missing a value"))?;
        if key == "config" {
            config_path = Some(PathBuf::from(value));
        } else {
            overrides.push((key.to_string(), value.to_string()));
        }
    }
    Ok(Some(Invocation {
        command,
        config_path,
        overrides,
    }))
}

fn dispatch(command: Command, cfg: &Config) -> anyhow::Result<Outcome> {
    match command {
        Command::Synth => commands::synth::run(cfg),
        Command::Refocus => commands::refocus::run(cfg),
        Command::Train => commands::train::run(cfg),
        Command::Eval => commands::eval::run(cfg),
        Command::Predict => commands::predict::run(cfg),
        Command::Plot => commands::plot::run(cfg),
    }
}

/// Seed to record for a failed run, where no `Outcome` exists.
fn configured_seed(command: Command, cfg: &Config) -> Option<u64> {
    match command {
        Command::Synth => cfg.synth.seed,
        Command::Train => cfg.train.seed,
        _ => None,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let args: Vec<String> = std::env::args().skip(1).collect();
    let inv = match parse_args(&args) {
        Ok(Some(inv)) => inv,
        Ok(None) => {
            print!("{USAGE}");
            return ExitCode::SUCCESS;
        }
        Err(msg) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };

    let (cfg, resolved) = match load_config(
        inv.config_path.as_deref(),
        inv.command,
        &inv.overrides,
    ) {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let mut manifest = RunManifest::new(inv.command.name(), resolved);
    match dispatch(inv.command, &cfg) {
        Ok(outcome) => {
            manifest.seed = outcome.seed;
            manifest.dataset_hash = outcome.dataset_hash;
            manifest.epochs = outcome.epochs;
            manifest.reports = outcome.reports;
            manifest.aggregate = outcome.aggregate;
            manifest.timings = outcome.timings.into_iter().collect();
            for path in &outcome.outputs {
                manifest.record_output(path);
                println!("{}", path.display());
            }
            match append_manifest(&cfg.runs_dir, &manifest) {
                Ok(log_path) => {
                    log::info!("run recorded in {}", log_path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            manifest.status = format!("failed: {e:#}");
            manifest.seed = configured_seed(inv.command, &cfg);
            if let Err(log_err) = append_manifest(&cfg.runs_dir, &manifest) {
                eprintln!("error: could not record the failure: {log_err:#}");
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
