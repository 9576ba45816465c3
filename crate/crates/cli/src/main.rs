use clap::Parser;

fn main() {
    let cli = etrs_cli::Cli::parse();
    std::process::exit(etrs_cli::run(cli));
}
