use std::fs;
use std::path::PathBuf;

use log::warn;
use serde::Serialize;

use speckle_core::estimator::OffsetSample;
use speckle_core::io::{self, Provenance};
use speckle_core::retrieval::{
    modulus_from_offsets, offset_grid, reconstruct_mask, register_and_score, RestartRecord, RetrievalOptions,
};
use speckle_core::Error as CoreError;

use crate::error::{CliError, CliResult};
use crate::scenario::Scenario;

pub const REPORT: &str = "retrieval.json";

pub struct RetrieveArgs {
    pub csv: PathBuf,
    pub scenario: Option<PathBuf>,
    pub truth: bool,
    pub force: bool,
    pub out: Option<PathBuf>,
    pub dim: Option<usize>,
    pub step: Option<f64>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub chains: Option<usize>,
}

/// The symmetry transform that best aligned the reconstruction with the
/// reference mask.
#[derive(Debug, Serialize)]
struct Ambiguity {
    shift_steps: [i64; 2],
    mirrored: bool,
    scale_re: f64,
    scale_im: f64,
}

#[derive(Debug, Serialize)]
struct RetrievalReport {
    #[serde(flatten)]
    provenance: Provenance,
    source: String,
    dim: usize,
    n: usize,
    dx: f64,
    offsets: usize,
    clipped_mass: f64,
    peak: f64,
    options: RetrievalOptions,
    power_residual: f64,
    power_converged: bool,
    power_restarts: Vec<RestartRecord>,
    support_nodes: usize,
    mask_residual: f64,
    mask_converged: bool,
    mask_restarts: Vec<RestartRecord>,
    ambiguity: Option<Ambiguity>,
    registered_error: Option<f64>,
}

/// Smallest positive offset component, the scan step of the data.
fn infer_step(samples: &[OffsetSample]) -> Option<f64> {
    samples
        .iter()
        .flat_map(|s| s.offset)
        .map(f64::abs)
        .filter(|v| *v > 0.0)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
}

pub fn retrieve(a: &RetrieveArgs) -> CliResult<()> {
    let samples = io::read_offsets_csv(&a.csv)?;
    let csv_prov = io::read_csv_provenance(&a.csv)?;
    let scenario = a.scenario.as_deref().map(Scenario::load).transpose()?;
    if let (Some(s), Some(p)) = (&scenario, &csv_prov) {
        if p.scenario_hash != s.hash && !a.force {
            return Err(CliError::Core(CoreError::Precondition(format!(
                "{} was produced by scenario {} but {} was supplied (use --force to override)",
                a.csv.display(),
                p.scenario_hash,
                s.hash
            ))));
        }
    }
    let dim = a
        .dim
        .or(scenario.as_ref().map(|s| s.grid.dim()))
        .unwrap_or(if samples.iter().any(|s| s.offset[1] != 0.0) { 2 } else { 1 });
    let step = a
        .step
        .or_else(|| infer_step(&samples))
        .ok_or_else(|| CliError::Usage(format!("{} holds only the zero offset; pass --step", a.csv.display())))?;

    let mut opts = scenario.as_ref().map(|s| s.file.retrieval.options()).unwrap_or_default();
    if let Some(v) = a.seed {
        opts.seed = v;
    }
    if let Some(v) = a.restarts {
        opts.restarts = v;
    }
    if let Some(v) = a.chains {
        opts.chains = v;
    }

    let grid = offset_grid(&samples, dim, step)?;
    let modulus = modulus_from_offsets(&samples, &grid)?;
    let rec = reconstruct_mask(&modulus, &opts)?;

    let registration = if a.truth {
        let s = scenario.as_ref().expect("clap requires --scenario with --truth");
        let truth = s.shape.sample(grid);
        Some(register_and_score(&rec.mask.object, &truth)?)
    } else {
        None
    };

    let out = a.out.clone().unwrap_or_else(|| a.csv.parent().map(PathBuf::from).unwrap_or_default().join("retrieval"));
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let prov = scenario
        .as_ref()
        .map(|s| s.provenance())
        .or(csv_prov)
        .unwrap_or_else(|| Provenance::new("unknown"));
    let report = RetrievalReport {
        provenance: prov.clone(),
        source: a.csv.display().to_string(),
        dim,
        n: grid.n(),
        dx: step,
        offsets: samples.len(),
        clipped_mass: modulus.clipped_mass,
        peak: modulus.peak,
        options: opts,
        power_residual: rec.power.residual,
        power_converged: rec.power.converged,
        power_restarts: rec.power.restarts.clone(),
        support_nodes: rec.support.iter().filter(|b| **b).count(),
        mask_residual: rec.mask.residual,
        mask_converged: rec.mask.converged,
        mask_restarts: rec.mask.restarts.clone(),
        ambiguity: registration.as_ref().map(|r| Ambiguity {
            shift_steps: r.steps,
            mirrored: r.mirrored,
            scale_re: r.scale.re,
            scale_im: r.scale.im,
        }),
        registered_error: registration.as_ref().map(|r| r.error),
    };
    io::write_json(&out.join(REPORT), &report)?;
    let shown = registration.as_ref().map(|r| &r.aligned).unwrap_or(&rec.mask.object);
    io::write_complex_field(&out.join("mask.bin"), shown)?;
    let amplitude: Vec<f64> = shown.values.iter().map(|v| v.norm()).collect();
    let h = if dim == 2 { grid.n() } else { 1 };
    io::write_pgm(&out.join("mask.pgm"), grid.n(), h, &amplitude, &prov)?;

    println!("report      {}", out.join(REPORT).display());
    println!(
        "residuals   spectrum {:.3e}, mask {:.3e} (clipped mass {:.3e})",
        rec.power.residual, rec.mask.residual, modulus.clipped_mass
    );
    if let Some(e) = report.registered_error {
        println!("registered  L2 error {e:.4}");
    }
    if !rec.mask.converged {
        warn!("artifacts were written but the reconstruction did not reach the residual tolerance");
        return Err(CliError::Core(CoreError::NumericalFailure {
            context: "mask retrieval".into(),
            detail: format!("residual {:.3e} above tolerance {:.1e}", rec.mask.residual, opts.tolerance),
        }));
    }
    Ok(())
}
