use clap::Parser;

use salatt_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = salatt_cli::run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
