use clap::Parser;

fn main() {
    std::process::exit(lifelong_cli::run(lifelong_cli::Cli::parse()));
}
