use clap::Parser;
use retrialq_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("retrialq: {e}");
        std::process::exit(e.exit_code());
    }
}
