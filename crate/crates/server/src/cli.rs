//! Argument dispatch for the `knobs` binary.

use crate::commands;
use crate::config::{self, Args};
use crate::error::{CliError, CliResult};

pub const SUBCOMMANDS: [&str; 10] = [
    "ingest",
    "synth",
    "train-cfae",
    "train-sae",
    "eval",
    "sweep",
    "map",
    "steer",
    "sweep-steer",
    "serve",
];

pub const USAGE: &str = "usage: knobs <subcommand> [--config FILE] [--key value]...

subcommands:
  ingest       ratings/tags/catalog TSVs -> corpus directory
  synth        planted-concept synthetic corpus directory
  train-cfae   train ELSA or MultVAE on a corpus
  train-sae    train a sparse autoencoder on CFAE embeddings
  eval         Recall@n / nDCG@n report with popularity baseline
  sweep        sparsity/accuracy grid over SAE settings
  map          concept-neuron map, selectivity and overlap reports
  steer        steered top-n for one history
  sweep-steer  relevance vs. segment precision over alpha
  serve        HTTP API over a model snapshot
";

/// Runs one subcommand. `argv` excludes the program name.
pub fn run(argv: &[String]) -> CliResult<()> {
    if argv.first().is_some_and(|a| a == "--help" || a == "-h" || a == "help") {
        print!("{USAGE}");
        return Ok(());
    }
    let args = config::parse_args(argv)?;
    dispatch(&args)
}

fn dispatch(args: &Args) -> CliResult<()> {
    match args.subcommand.as_str() {
        "ingest" => commands::ingest(&config::resolve(args)?),
        "synth" => commands::synth(&config::resolve(args)?),
        "train-cfae" => commands::train_cfae(&config::resolve(args)?).map(drop),
        "train-sae" => commands::train_sae(&config::resolve(args)?).map(drop),
        "eval" => {
            let out = commands::eval_cmd(&config::resolve(args)?)?;
            println!("{}", knobs_core::report::to_stable_json(&out.report));
            Ok(())
        }
        "sweep" => commands::sweep(&config::resolve(args)?).map(drop),
        "map" => commands::map(&config::resolve(args)?).map(drop),
        "steer" => {
            println!("{}", commands::steer(&config::resolve(args)?)?);
            Ok(())
        }
        "sweep-steer" => commands::sweep_steer(&config::resolve(args)?).map(drop),
        "serve" => commands::serve(&config::resolve(args)?),
        other => Err(CliError::usage(format!(
            "unknown subcommand `{other}`; expected one of {}",
            SUBCOMMANDS.join(", ")
        ))),
    }
}
