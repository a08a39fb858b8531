//! Plain-text summary of the artifacts found in an output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::analyze::DIAGNOSTICS;
use crate::error::{CliError, CliResult};
use crate::retrieve::REPORT as RETRIEVAL;
use crate::simulate::RUN_RECORD;

pub const SUMMARY: &str = "report.md";

fn load(path: &Path) -> CliResult<Option<Value>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| {
        CliError::Core(speckle_core::Error::Format {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    })
}

fn num(v: &Value, key: &str) -> String {
    match v.pointer(key) {
        Some(Value::Number(n)) => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            if x.fract() == 0.0 && x.abs() < 1e12 {
                format!("{x}")
            } else {
                format!("{x:.4e}")
            }
        }
        Some(Value::Null) | None => "n/a".into(),
        Some(other) => other.to_string().trim_matches('"').to_string(),
    }
}

fn warnings(out: &mut String, v: &Value) {
    if let Some(ws) = v.get("warnings").and_then(Value::as_array) {
        for w in ws {
            let _ = writeln!(out, "- warning: {}", w.as_str().unwrap_or_default());
        }
    }
}

/// Build the summary text; `None` when the directory holds no artifacts.
pub fn summarize(dir: &Path) -> CliResult<Option<String>> {
    let mut out = String::new();
    let mut found = false;
    let _ = writeln!(out, "# Run summary: {}\n", dir.display());

    if let Some(run) = load(&dir.join(RUN_RECORD))? {
        found = true;
        let _ = writeln!(out, "## Simulation\n");
        let _ = writeln!(out, "- scenario hash: {}", num(&run, "/scenario_hash"));
        let _ = writeln!(out, "- toolkit version: {}", num(&run, "/version"));
        let _ = writeln!(
            out,
            "- grid: d = {}, n = {}, dx = {} {}",
            num(&run, "/dim"),
            num(&run, "/n"),
            num(&run, "/dx"),
            num(&run, "/length_unit")
        );
        let _ = writeln!(
            out,
            "- medium: {}, distance {}, {} steps, {} realizations x {} shifts, seed {}",
            num(&run, "/medium"),
            num(&run, "/distance"),
            num(&run, "/nz"),
            num(&run, "/realizations"),
            num(&run, "/shifts"),
            num(&run, "/seed")
        );
        if run.get("regime").is_some_and(|r| !r.is_null()) {
            let _ = writeln!(
                out,
                "- regime: {} (l/l_sca = {}, speckle radius {}, enhanced aperture {})",
                num(&run, "/regime/classification"),
                num(&run, "/regime/ell_over_ell_sca"),
                num(&run, "/regime/rho_speckle"),
                num(&run, "/regime/beam_spread")
            );
        }
        warnings(&mut out, &run);
        out.push('\n');
    }

    if let Some(d) = load(&dir.join(DIAGNOSTICS))? {
        found = true;
        let _ = writeln!(out, "## Covariance\n");
        let _ = writeln!(
            out,
            "- flavour: {}, {} shifts, {} realizations, relative asymmetry {}",
            num(&d, "/flavor"),
            num(&d, "/shifts"),
            num(&d, "/realizations"),
            num(&d, "/asymmetry")
        );
        if d.get("speckle").is_some_and(|s| !s.is_null()) {
            let _ = writeln!(
                out,
                "- speckle radius: fitted {}, theory {}; contrast {}",
                num(&d, "/speckle/speckle_radius_fit"),
                num(&d, "/speckle_radius_theory"),
                num(&d, "/speckle/contrast")
            );
        }
        if d.get("comparison").is_some_and(|c| !c.is_null()) {
            let _ = writeln!(
                out,
                "- analytic comparison: correlation {}, relative L2 {}",
                num(&d, "/comparison/correlation"),
                num(&d, "/comparison/relative_l2")
            );
        }
        warnings(&mut out, &d);
        out.push('\n');
    }

    let retrieval = [dir.join(RETRIEVAL), dir.join("retrieval").join(RETRIEVAL)];
    for path in retrieval.iter() {
        if let Some(r) = load(path)? {
            found = true;
            let _ = writeln!(out, "## Retrieval ({})\n", path.display());
            let _ = writeln!(
                out,
                "- spectrum residual {} (converged {}), mask residual {} (converged {})",
                num(&r, "/power_residual"),
                num(&r, "/power_converged"),
                num(&r, "/mask_residual"),
                num(&r, "/mask_converged")
            );
            let _ = writeln!(out, "- clipped negative mass {}", num(&r, "/clipped_mass"));
            if r.get("registered_error").is_some_and(|e| !e.is_null()) {
                let _ = writeln!(
                    out,
                    "- registered L2 error {} (shift {}, mirrored {})",
                    num(&r, "/registered_error"),
                    num(&r, "/ambiguity/shift_steps"),
                    num(&r, "/ambiguity/mirrored")
                );
            }
            out.push('\n');
        }
    }

    let mut validations: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("validation") && n.ends_with(".json"))
        })
        .collect();
    validations.sort();
    for path in validations {
        let Some(v) = load(&path)? else { continue };
        found = true;
        let _ = writeln!(
            out,
            "## Validation, {} tier: {}/{} passed\n",
            num(&v, "/tier"),
            num(&v, "/passed"),
            num(&v, "/total")
        );
        for c in v.get("criteria").and_then(Value::as_array).into_iter().flatten() {
            let verdict = if c.get("passed").and_then(Value::as_bool) == Some(true) { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "- C{:0>2} {}: {verdict}", num(c, "/id"), num(c, "/name"));
        }
        out.push('\n');
    }
    Ok(found.then_some(out))
}

pub fn report(dir: &Path) -> CliResult<()> {
    if !dir.is_dir() {
        return Err(CliError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")));
    }
    let text = summarize(dir)?
        .ok_or_else(|| CliError::Usage(format!("{} holds no run, covariance, retrieval or validation artifacts", dir.display())))?;
    let path = dir.join(SUMMARY);
    fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    print!("{text}");
    Ok(())
}
