mod args;
mod commands;
mod failure;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Enhance(a) => commands::enhance(a),
        Command::Degrade(a) => commands::degrade(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Ablate(a) => commands::ablate_cmd(a),
        Command::Info(a) => commands::info(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Init(a) => commands::init(a),
        Command::GenCorpus(a) => commands::gen_corpus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fqpe: {f}");
            f.exit_code()
        }
    }
}
