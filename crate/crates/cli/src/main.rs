//! `alseg`: active-learning segmentation experiments from the command line.

mod commands;
mod error;
mod keys;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use error::CliError;
use keys::{flag_name, keys_for, Kind, Settings};

const COMMANDS: [(&str, &str); 6] = [
    ("generate", "Write a synthetic class-conditional dataset with manifests"),
    ("run", "Run replicated active-learning sessions for one or more methods"),
    ("compare", "Aggregate finished sessions into AUC and per-round tables"),
    ("sweep", "Run one session per value of k or lambda and tabulate AUC"),
    ("knn-inspect", "List a training sample's nearest same-class neighbors"),
    ("plot", "Draw mean Dice per round from a per-round comparison CSV"),
];

fn subcommand(name: &'static str, about: &'static str) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("Flat `key = value` file; flags given on the command line take precedence"),
    );
    for key in keys_for(name) {
        let help = if key.default.is_empty() {
            key.help.to_string()
        } else {
            format!("{} [default: {}]", key.help, key.default)
        };
        let mut arg = Arg::new(key.name).long(&*flag_name(key.name).leak()).help(help);
        arg = match key.kind {
            Kind::Value => arg.value_name("VALUE").action(ArgAction::Set),
            Kind::Flag => arg
                .value_name("BOOL")
                .num_args(0..=1)
                .default_missing_value("true")
                .action(ArgAction::Set),
        };
        cmd = cmd.arg(arg);
    }
    cmd
}

fn cli() -> Command {
    let mut root = Command::new("alseg")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Active learning with k-NN label propagation for image segmentation")
        .after_help("Every key can also be set in a --config file. ALSEG_SEED overrides the seed key of the config file; an explicit --seed flag overrides both.\nExit codes: 0 success, 1 runtime error, 2 configuration error.")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .global(true)
                .action(ArgAction::Count)
                .help("Log progress (-v) or debug detail (-vv)"),
        );
    for (name, about) in COMMANDS {
        root = root.subcommand(subcommand(name, about));
    }
    root
}

fn settings(command: &str, matches: &ArgMatches) -> Result<Settings, CliError> {
    let flags: Vec<(String, String)> = keys_for(command)
        .iter()
        .filter_map(|k| matches.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    let config = matches.get_one::<PathBuf>("config").map(PathBuf::as_path);
    Settings::resolve(command, config, std::env::var("ALSEG_SEED").ok(), &flags)
}

fn dispatch(matches: &ArgMatches) -> Result<(), CliError> {
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let s = settings(name, sub)?;
    match name {
        "generate" => commands::generate(&s),
        "run" => commands::run(&s),
        "compare" => commands::compare(&s),
        "sweep" => commands::sweep(&s),
        "knn-inspect" => commands::knn_inspect(&s),
        "plot" => commands::plot(&s),
        other => unreachable!("unhandled subcommand {other}"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match matches.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
