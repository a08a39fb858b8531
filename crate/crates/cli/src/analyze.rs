use std::fs;
use std::path::PathBuf;

use log::warn;
use serde::Serialize;

use speckle_core::analytic::RegimeReport;
use speckle_core::estimator::{
    analytic_offsets, empirical_covariance, ensemble_covariance, normalized_correlation, pixel_smooth,
    speckle_diagnostics, Flavor, SpeckleDiagnostics,
};
use speckle_core::io::{self, Provenance};

use crate::error::{CliError, CliResult};
use crate::scenario::Scenario;
use crate::simulate::STACK_DIR;

pub const DIAGNOSTICS: &str = "diagnostics.json";
pub const OFFSETS_CSV: &str = "covariance_offsets.csv";
pub const PAIRS_CSV: &str = "covariance_pairs.csv";

pub struct AnalyzeArgs {
    pub scenario: PathBuf,
    pub stack: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
    pub compare_analytic: bool,
    pub realization: usize,
    pub ensemble: bool,
}

#[derive(Debug, Serialize)]
struct Comparison {
    formula: &'static str,
    correlation: f64,
    /// `‖measured - predicted‖₂ / ‖predicted‖₂` over offsets.
    relative_l2: f64,
}

#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    stack_hash: String,
    flavor: Flavor,
    realization: Option<usize>,
    realizations: usize,
    shifts: usize,
    pixel: f64,
    /// Largest `|C_ij - C_ji|` relative to the largest entry.
    asymmetry: f64,
    speckle: Option<SpeckleDiagnostics>,
    speckle_radius_theory: Option<f64>,
    regime: Option<&'a RegimeReport>,
    comparison: Option<Comparison>,
    warnings: Vec<String>,
}

pub fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let s = Scenario::load(&a.scenario)?;
    let stack_dir = a.stack.clone().unwrap_or_else(|| a.out.join(STACK_DIR));
    let expected = (!a.force).then_some(s.hash.as_str());
    let (stack, manifest) = io::read_stack(&stack_dir, expected)?;
    if manifest.provenance.scenario_hash != s.hash {
        warn!("stack hash {} differs from the scenario; continuing because of --force", manifest.provenance.scenario_hash);
    }
    s.grid.ensure_same(&stack.grid)?;
    if a.compare_analytic && s.medium.is_none() {
        return Err(CliError::Usage(
            "--compare-analytic needs a random medium; the scenario is homogeneous".into(),
        ));
    }

    let rho = s.speckle_radius();
    let stack = if s.pixel > 0.0 { pixel_smooth(&stack, s.pixel)? } else { stack };
    let map = if a.ensemble {
        ensemble_covariance(&stack, &s.camera, rho)?
    } else {
        empirical_covariance(&stack, &s.camera, a.realization, rho)?
    };
    let mut warnings = map.warnings.clone();
    let n = map.size();
    let peak = map.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((map.get(i, j) - map.get(j, i)).abs());
        }
    }
    let samples = map.by_offset(&s.grid)?;

    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let prov = s.provenance();
    io::write_covariance_pairs_csv(&a.out.join(PAIRS_CSV), &map, &prov)?;
    io::write_pgm(&a.out.join("covariance.pgm"), n, n, &map.values, &prov)?;

    let mut comparison = None;
    let mut analytic = None;
    if a.compare_analytic {
        let medium = s.medium.as_ref().expect("checked above");
        let predicted = analytic_offsets(&samples, &s.mask(), s.pixel, medium, s.k0, s.ell)?;
        let measured: Vec<f64> = samples.iter().map(|x| x.value).collect();
        let num: f64 = measured.iter().zip(&predicted).map(|(m, p)| (m - p).powi(2)).sum();
        let den: f64 = predicted.iter().map(|p| p * p).sum();
        comparison = Some(Comparison {
            formula: "Z^{rho_o} |V(dr)|^2 (scintillation, self-averaged)",
            correlation: normalized_correlation(&measured, &predicted),
            relative_l2: (num / den).sqrt(),
        });
        if let Some(r) = &s.regime {
            if r.classification == speckle_core::analytic::Regime::SpotDancing {
                warnings.push("the analytic comparison assumes the scintillation regime but the scenario is spot-dancing".into());
            }
        }
        analytic = Some(predicted);
    }
    io::write_offsets_csv_with_analytic(&a.out.join(OFFSETS_CSV), &samples, analytic.as_deref(), &prov)?;

    let speckle = if s.medium.is_some() && stack.realizations() > 0 {
        match speckle_diagnostics(&stack, &s.camera, rho) {
            Ok(d) => Some(d),
            Err(e) => {
                warnings.push(format!("speckle diagnostics unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    for w in &warnings {
        warn!("{w}");
    }
    let diag = Diagnostics {
        provenance: prov,
        stack_hash: manifest.provenance.scenario_hash,
        flavor: map.flavor,
        realization: (!a.ensemble).then_some(a.realization),
        realizations: stack.realizations(),
        shifts: n,
        pixel: s.pixel,
        asymmetry: if peak > 0.0 { asym / peak } else { 0.0 },
        speckle,
        speckle_radius_theory: rho.is_finite().then_some(rho),
        regime: s.regime.as_ref(),
        comparison,
        warnings,
    };
    io::write_json(&a.out.join(DIAGNOSTICS), &diag)?;
    println!("covariance  {} ({} shifts, {:?})", a.out.join(PAIRS_CSV).display(), n, map.flavor);
    println!("offsets     {}", a.out.join(OFFSETS_CSV).display());
    if let Some(c) = &diag.comparison {
        println!("analytic    correlation {:.4}, relative L2 {:.4}", c.correlation, c.relative_l2);
    }
    Ok(())
}

