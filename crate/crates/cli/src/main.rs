use clap::Parser;

fn main() {
    let cli = discox_cli::Cli::parse();
    std::process::exit(discox_cli::run(cli));
}
