//! Driver for the soliton-mediated qubit entanglement simulation: config
//! parsing, subcommand orchestration, CSV output and oracle self-tests.

pub mod checks;
pub mod config;
pub mod manifest;
pub mod run;

pub use config::{parse_config, parse_config_str, render_config, ConfigError, RunConfig};
pub use run::{execute, prepare_output_dir, with_threads, CliError, Command, RunSummary};

/// Runs the quick oracle suite, printing one line per check.
pub fn selftest(out: &mut impl std::io::Write) -> Result<(), CliError> {
    let checks = checks::selftest_checks();
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{status} {}: {}", c.name, c.detail);
    }
    if failed > 0 {
        return Err(CliError::SelftestFailed(failed));
    }
    Ok(())
}
