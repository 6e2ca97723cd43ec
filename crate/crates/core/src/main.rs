use std::process::ExitCode;

use clap::Parser;
use mcl_ckf::cli::{export, run_and_export, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_and_export(&cli.command) {
        Ok(outputs) => {
            print!("{}", export::summary_table(&outputs.reports));
            for rep in &outputs.reports {
                for f in rep.filters.iter().filter(|f| f.runs_failed > 0) {
                    eprintln!(
                        "{}/{}: {} of {} runs excluded after numerical failure",
                        rep.scenario, f.name, f.runs_failed, rep.runs
                    );
                }
            }
            for f in &outputs.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
