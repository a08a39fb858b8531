use std::path::Path;

use serde::Serialize;

use speckle_core::validation::{run_suite, CriterionOutcome, SuiteOptions, Tier};

use crate::error::{CliError, CliResult};

/// Machine-readable result of one tier.
#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub tier: Tier,
    pub seed: u64,
    pub version: String,
    pub passed: usize,
    pub total: usize,
    pub criteria: Vec<CriterionOutcome>,
}

pub fn validate(tier: Tier, seed: u64, demo_2d: bool, json: &Path) -> CliResult<()> {
    let opts = if demo_2d { SuiteOptions::with_demo() } else { SuiteOptions::default() };
    let criteria = run_suite(tier, seed, &opts);
    for c in &criteria {
        println!("{}  [{:.1}s]", c.line(), c.seconds);
    }
    let passed = criteria.iter().filter(|c| c.passed).count();
    let report = ValidationReport {
        tier,
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        passed,
        total: criteria.len(),
        criteria,
    };
    if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    speckle_core::io::write_json(json, &report)?;
    println!("{passed}/{} criteria passed; report {}", report.total, json.display());
    if passed < report.total {
        return Err(CliError::CriteriaFailed {
            failed: report.total - passed,
            total: report.total,
        });
    }
    Ok(())
}
