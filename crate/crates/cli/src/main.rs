use clap::Parser;
use mlsg_cli::{run, Cli, EXIT_CONFIG};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("mlsg: {e}");
        std::process::exit(e.exit_code());
    }
}
