//! `bootner`: train, adapt, bootstrap and evaluate BIO entity taggers.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use config::{RunConfig, KEYS};
use error::CliError;

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("split", "split a labeled file into a seed set and a remainder"),
    ("train", "train a supervised CRF tagger"),
    ("adapt", "adapt an embedding table to raw in-domain text"),
    ("bootstrap", "self-train from a seed set and unlabeled text"),
    ("predict", "tag sentences with a trained model"),
    ("eval", "span micro P/R/F1 between two CoNLL files"),
    ("synth", "write a synthetic labeled corpus"),
    ("sweep", "bootstrap once per threshold and score on dev"),
];

fn cli() -> Command {
    let mut app = Command::new("bootner")
        .about("Self-training CRF entity tagger")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .help("key = value configuration file"),
        );
        if name == "eval" {
            sub = sub
                .arg(Arg::new("gold").value_name("GOLD").help("reference CoNLL file"))
                .arg(Arg::new("pred").value_name("PRED").help("predicted CoNLL file"));
        }
        for k in KEYS {
            let help = match k.default {
                Some(d) => format!("{} [default: {d}]", k.help),
                None => k.help.to_string(),
            };
            sub = sub.arg(
                Arg::new(k.name)
                    .long(k.name)
                    .value_name("VALUE")
                    .help(help)
                    .hide_short_help(true),
            );
        }
        app = app.subcommand(sub);
    }
    app
}

fn run(name: &str, m: &ArgMatches) -> Result<(), CliError> {
    let overrides: Vec<(&'static str, String)> = KEYS
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name, v.clone())))
        .collect();
    let file = m.get_one::<String>("config").map(PathBuf::from);
    let cfg = RunConfig::load(file.as_deref(), &overrides)?;
    match name {
        "split" => commands::split(&cfg),
        "train" => commands::train_cmd(&cfg),
        "adapt" => commands::adapt_cmd(&cfg),
        "bootstrap" => commands::bootstrap(&cfg),
        "predict" => commands::predict(&cfg),
        "eval" => {
            let (gold, pred) = commands::eval_paths(
                m.get_one::<String>("gold").map(PathBuf::from),
                m.get_one::<String>("pred").map(PathBuf::from),
            )?;
            commands::eval(&cfg, &gold, &pred)
        }
        "synth" => commands::synth(&cfg),
        "sweep" => commands::sweep(&cfg),
        other => Err(CliError::Usage(format!("unknown subcommand {other}"))),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bootner {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
