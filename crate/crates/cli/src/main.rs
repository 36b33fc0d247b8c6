use clap::Parser;
use twinfeed_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("twinfeed: {e}");
        std::process::exit(e.exit_code());
    }
}
