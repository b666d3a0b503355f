use clap::Parser;

mod cli;

fn main() -> anyhow::Result<()> {
    cli::dispatch(cli::Cli::parse())
}
