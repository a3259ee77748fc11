use clap::Parser;
use exformer_cli::{exit_code, run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
