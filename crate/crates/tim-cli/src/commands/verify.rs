//! `tim verify`: run the invariant battery and print a pass/fail table.

use std::process::ExitCode;

use tim_core::verify::{all_passed, run_battery, VerifyLevel, VerifyOptions};
use tim_core::{Result, TimError};

pub fn run(level: &str, corrupt_db_dt: bool) -> Result<ExitCode> {
    let level = match level {
        "fast" => VerifyLevel::Fast,
        "full" => VerifyLevel::Full,
        other => {
            return Err(TimError::Config(format!("level `{other}` (expected fast or full)")))
        }
    };
    let results = run_battery(&VerifyOptions { level, corrupt_db_dt });
    let name_width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!(
            "{:<width$}  {}  {:>7.2}s  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail,
            width = name_width
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if all_passed(&results) {
        println!("{} checks passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} of {} checks failed: {}", failed.len(), results.len(), failed.join(", "));
        Ok(ExitCode::from(1))
    }
}
