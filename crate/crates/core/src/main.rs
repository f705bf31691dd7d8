use clap::Parser;

use reflectsim::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
