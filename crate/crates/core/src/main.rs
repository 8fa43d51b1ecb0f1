use clap::Parser;
use oneshot_daug::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
