//! Command-line front end: `run` executes a config, `selftest` is the
//! coarse-grid operator check, `report` pretty-prints a finished summary.
//!
//! Exit codes: 0 when every check passed, 1 on failing checks or a
//! mid-run error (partial reports are left in place), 2 when the config
//! or summary cannot be read at all.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use biflow::config::{self, ExperimentConfig, ExperimentKind};
use biflow::report;

#[derive(Parser)]
#[command(name = "biflow", version, about = "clamped bi-harmonic map experiments on the unit 4-ball")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment a config file describes.
    Run { config: PathBuf },
    /// Operator self-test on the coarse grid.
    Selftest,
    /// Print the summary of a finished run directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    biflow::par::init_threads_from_env();
    let code = match Cli::parse().cmd {
        Cmd::Run { config } => cmd_run(&config),
        Cmd::Selftest => cmd_selftest(),
        Cmd::Report { dir } => cmd_report(&dir),
    };
    ExitCode::from(code)
}

/// Prints without panicking when the consumer closes the pipe early.
fn say(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn cmd_run(path: &Path) -> u8 {
    let cfg = match config::parse_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("biflow: {}: {e}", path.display());
            return 2;
        }
    };
    run_and_print(&cfg)
}

fn cmd_selftest() -> u8 {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::OperatorSelftest);
    cfg.grid_n = 9;
    cfg.out_dir = "selftest-out".into();
    run_and_print(&cfg)
}

fn run_and_print(cfg: &ExperimentConfig) -> u8 {
    match report::run_experiment(cfg) {
        Ok(s) => {
            say(&format!(
                "{}report: {}/summary.json",
                report::format_summary(&s),
                cfg.out_dir
            ));
            u8::from(!s.pass)
        }
        Err(e) => {
            eprintln!("biflow: {} failed: {e}", cfg.kind.name());
            1
        }
    }
}

fn cmd_report(dir: &Path) -> u8 {
    let path = dir.join("summary.json");
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("biflow: {}: {e}", path.display());
            return 2;
        }
    };
    let doc: serde_json::Value = match serde_json::from_str(&text) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("biflow: {}: not a summary: {e}", path.display());
            return 2;
        }
    };

    say(&format!("kind    {}", doc["kind"].as_str().unwrap_or("?")));
    say(&format!("version {}", doc["version"].as_str().unwrap_or("?")));
    say(&format!(
        "config  {}",
        doc["config_sha256"].as_str().unwrap_or("?")
    ));
    let empty = Vec::new();
    for c in doc["checks"].as_array().unwrap_or(&empty) {
        let verdict = if c["pass"].as_bool() == Some(true) {
            "PASS"
        } else {
            "FAIL"
        };
        say(&format!(
            "[{verdict}] {:<44} value {:>13}  bound {:>13}",
            c["name"].as_str().unwrap_or("?"),
            c["value"],
            c["bound"]
        ));
    }
    if let Some(consts) = doc["constants"].as_object() {
        for (k, v) in consts {
            say(&format!("  {k} = {v}"));
        }
    }
    match doc["pass"].as_bool() {
        Some(true) => {
            say("overall: pass");
            0
        }
        Some(false) => {
            say("overall: FAIL");
            1
        }
        None => {
            eprintln!("biflow: {}: summary has no verdict", path.display());
            2
        }
    }
}
