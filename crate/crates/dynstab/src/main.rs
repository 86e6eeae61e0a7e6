use std::io::Write;

use clap::Parser;

fn main() {
    let cli = dynstab::cli::Cli::parse();
    let out = dynstab::cli::run(&cli);
    let text = serde_json::to_string_pretty(&out.report).expect("report serializes");
    // A closed pipe downstream is not our failure.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    std::process::exit(out.code);
}
