use clap::Parser;

fn main() {
    let cli = wzlab::cli::Cli::parse();
    std::process::exit(wzlab::cli::run(cli));
}
