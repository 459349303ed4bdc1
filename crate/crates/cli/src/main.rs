use clap::Parser;

fn main() {
    std::process::exit(spend_cli::cli::run(spend_cli::cli::Cli::parse()));
}
