use std::process::ExitCode;

use clap::Parser;
use hysharp_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let failure = serde_json::json!({"exit_code": 2, "error": "usage", "message": e.to_string()});
            eprintln!("{failure}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("{}", serde_json::to_string(&failure).expect("serializable"));
            ExitCode::from(failure.exit_code as u8)
        }
    }
}
