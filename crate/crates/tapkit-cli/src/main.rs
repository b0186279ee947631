//! tapkit: corpus synthesis, acoustic parameter extraction, estimator and
//! enhancer training, enhancement, and evaluation as one binary.

mod cli;
mod commands;
mod config;

use clap::Parser;

use cli::{Cli, Command};

fn run(cli: &Cli) -> anyhow::Result<()> {
    let file = config::load_file_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(args) => commands::run_synth(args, &file, cli.json),
        Command::Extract(args) => commands::run_extract(args, cli.jobs, cli.json),
        Command::TrainTap(args) => commands::run_train_tap(args, &file, cli.json),
        Command::TrainEnhancer(args) => commands::run_train_enhancer(args, &file, cli.json),
        Command::Enhance(args) => commands::run_enhance(args, &file, cli.jobs, cli.json),
        Command::Eval(args) => commands::run_eval(args, &file, cli.jobs, cli.json),
        Command::Report(args) => commands::run_report(args, cli.json),
        Command::Gradcheck(args) => commands::run_gradcheck(args, cli.json),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        // One line, stable prefix, full cause chain.
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
