use clap::Parser;

fn main() {
    let cli = kronfisher::cli::Cli::parse();
    std::process::exit(kronfisher::cli::run(cli));
}
