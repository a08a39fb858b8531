use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use speckle_core::analytic::RegimeReport;
use speckle_core::estimator::run_experiment;
use speckle_core::io::{self, Provenance};

use crate::error::{CliError, CliResult};
use crate::scenario::Scenario;

pub const RUN_RECORD: &str = "run.json";
pub const STACK_DIR: &str = "stack";

/// `run.json`: the resolved configuration of a simulation.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    length_unit: String,
    dim: usize,
    n: usize,
    dx: f64,
    k0: f64,
    distance: f64,
    nz: usize,
    realizations: usize,
    seed: u64,
    shifts: usize,
    medium: &'a str,
    regime: Option<&'a RegimeReport>,
    warnings: &'a [String],
}

pub fn simulate(scenario_path: &Path, out_dir: &Path) -> CliResult<()> {
    let s = Scenario::load(scenario_path)?;
    for w in &s.warnings {
        warn!("{w}");
    }
    let cfg = s.experiment();
    info!(
        "simulating {} realizations x {} shifts on a {}-point grid",
        cfg.realizations,
        cfg.shifts.len(),
        s.grid.len()
    );
    let mut stack = run_experiment(&cfg)?;
    stack.tag = s.hash.clone();

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let prov = s.provenance();
    io::write_stack(&out_dir.join(STACK_DIR), &stack, &prov)?;
    let record = RunRecord {
        provenance: prov.clone(),
        length_unit: s.unit.to_string(),
        dim: s.grid.dim(),
        n: s.grid.n(),
        dx: s.grid.dx(),
        k0: s.k0,
        distance: s.ell,
        nz: s.nz,
        realizations: cfg.realizations,
        seed: cfg.seed,
        shifts: cfg.shifts.len(),
        medium: match &s.file.medium {
            crate::scenario::MediumSection::Homogeneous {} => "homogeneous",
            crate::scenario::MediumSection::Gaussian { .. } => "gaussian",
            crate::scenario::MediumSection::Tabulated { .. } => "tabulated",
        },
        regime: s.regime.as_ref(),
        warnings: &s.warnings,
    };
    io::write_json(&out_dir.join(RUN_RECORD), &record)?;
    let copy = out_dir.join("scenario.toml");
    fs::copy(scenario_path, &copy).map_err(|e| CliError::io(&copy, e))?;

    if s.file.output.previews {
        let first = &stack.intensities[0];
        if s.grid.dim() == 1 {
            // one row per shift
            let values: Vec<f64> = first.iter().flat_map(|f| f.values.iter().copied()).collect();
            io::write_pgm(&out_dir.join("intensity.pgm"), s.grid.n(), first.len(), &values, &prov)?;
        } else {
            io::write_field_pgm(&out_dir.join("intensity.pgm"), &first[0], &prov)?;
        }
    }
    println!("scenario  {}", s.hash);
    if let Some(r) = &s.regime {
        println!(
            "regime    {:?} (ℓ/ℓ_sca = {:.3}, ρ = {:.4} {})",
            r.classification, r.ell_over_ell_sca, r.rho_speckle, s.unit
        );
    }
    println!("stack     {}", out_dir.join(STACK_DIR).display());
    Ok(())
}
