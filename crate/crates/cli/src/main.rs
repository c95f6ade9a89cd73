use clap::Parser;
use fdmr_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}  {}", o.sha256, o.file);
            }
        }
        Err(e) => {
            eprintln!("fdmr {}: {e}", cli.command.name());
            std::process::exit(e.exit_code());
        }
    }
}
