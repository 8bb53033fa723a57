use clap::Parser;

fn main() {
    let cli = estfun::cli::Cli::parse();
    std::process::exit(estfun::cli::dispatch(cli));
}
