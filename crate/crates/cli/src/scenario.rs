//! Scenario files.
//!
//! A scenario is TOML with the sections `[grid]`, `[medium]`, `[mask]`,
//! `[propagation]`, `[camera]`, `[scan]`, `[retrieval]` and `[output]`.
//! Every length is written as `{ value = 0.5, unit = "mm" }` and every
//! wavenumber as `{ value = 10.0, unit = "rad/mm" }`. Quantities are
//! converted to `output.length_unit`, which is also the unit of every
//! artifact. Unknown keys are rejected by the parser. Cross-field checks
//! run before any computation and report all problems at once.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use speckle_core::analytic::{classify_regime, Regime, RegimeInputs, RegimeReport};
use speckle_core::estimator::{Camera, ExperimentConfig};
use speckle_core::grid::{ComplexField, Point, TransverseGrid};
use speckle_core::io::Provenance;
use speckle_core::mask::MaskShape;
use speckle_core::medium::{MediumModel, Table};
use speckle_core::propagator::{PropagationPlan, Splitting};
use speckle_core::retrieval::RetrievalOptions;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    M,
    Cm,
    Mm,
    Um,
    Nm,
}

impl LengthUnit {
    fn meters(self) -> f64 {
        match self {
            LengthUnit::M => 1.0,
            LengthUnit::Cm => 1e-2,
            LengthUnit::Mm => 1e-3,
            LengthUnit::Um => 1e-6,
            LengthUnit::Nm => 1e-9,
        }
    }
}

impl fmt::Display for LengthUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LengthUnit::M => "m",
            LengthUnit::Cm => "cm",
            LengthUnit::Mm => "mm",
            LengthUnit::Um => "um",
            LengthUnit::Nm => "nm",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Length {
    pub value: f64,
    pub unit: LengthUnit,
}

impl Length {
    pub fn in_unit(&self, target: LengthUnit) -> f64 {
        self.value * self.unit.meters() / target.meters()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WavenumberUnit {
    #[serde(rename = "rad/m")]
    PerM,
    #[serde(rename = "rad/cm")]
    PerCm,
    #[serde(rename = "rad/mm")]
    PerMm,
    #[serde(rename = "rad/um")]
    PerUm,
    #[serde(rename = "rad/nm")]
    PerNm,
}

impl WavenumberUnit {
    fn length(self) -> LengthUnit {
        match self {
            WavenumberUnit::PerM => LengthUnit::M,
            WavenumberUnit::PerCm => LengthUnit::Cm,
            WavenumberUnit::PerMm => LengthUnit::Mm,
            WavenumberUnit::PerUm => LengthUnit::Um,
            WavenumberUnit::PerNm => LengthUnit::Nm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wavenumber {
    pub value: f64,
    pub unit: WavenumberUnit,
}

impl Wavenumber {
    pub fn in_unit(&self, target: LengthUnit) -> f64 {
        self.value * target.meters() / self.unit.length().meters()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub dx: Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MediumSection {
    Homogeneous {},
    Gaussian {
        /// Exactly one of `gamma0` and `scattering_mean_free_path`.
        gamma0: Option<Length>,
        scattering_mean_free_path: Option<Length>,
        corr_length: Length,
    },
    /// Two-column CSV `(offset, γ₀)`, both in `table_unit`; the path is
    /// relative to the scenario file.
    Tabulated { table: String, table_unit: LengthUnit },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Gaussian,
    Rectangle,
    DoubleSlit,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSection {
    pub shape: ShapeKind,
    pub radius: Option<Length>,
    pub width: Option<Length>,
    pub height: Option<Length>,
    pub slit_width: Option<Length>,
    pub separation: Option<Length>,
    /// Keep only wavevectors below this fraction of the Nyquist radius.
    pub band_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSection {
    pub wavenumber: Wavenumber,
    pub distance: Length,
    /// Defaults to the smallest admissible step count.
    pub nz: Option<usize>,
    #[serde(default)]
    pub splitting: Splitting,
    pub realizations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub radius: Length,
    pub center_x: Option<Length>,
    pub center_y: Option<Length>,
    /// Gaussian pixel radius `ρo`; zero when absent.
    pub pixel: Option<Length>,
    /// Accept a scintillation configuration whose camera does not cover
    /// many speckle spots.
    #[serde(default)]
    pub allow_partial_averaging: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScanLayout {
    /// Shifts along the first axis.
    #[default]
    Line,
    /// Square lattice of shifts (d = 2 only).
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub half_width: Length,
    pub step: Length,
    #[serde(default)]
    pub layout: ScanLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub hio_iterations: usize,
    pub er_iterations: usize,
    pub cycles: usize,
    pub restarts: usize,
    pub chains: usize,
    pub beta: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Average covariance entries over shift mid-points before retrieval.
    pub average_midpoints: bool,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let o = RetrievalOptions::default();
        Self {
            hio_iterations: o.hio_iterations,
            er_iterations: o.er_iterations,
            cycles: o.cycles,
            restarts: o.restarts,
            chains: o.chains,
            beta: o.beta,
            tolerance: o.tolerance,
            seed: o.seed,
            average_midpoints: true,
        }
    }
}

impl RetrievalSection {
    pub fn options(&self) -> RetrievalOptions {
        RetrievalOptions {
            hio_iterations: self.hio_iterations,
            er_iterations: self.er_iterations,
            cycles: self.cycles,
            restarts: self.restarts,
            beta: self.beta,
            seed: self.seed,
            tolerance: self.tolerance,
            chains: self.chains,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub length_unit: LengthUnit,
    /// Relative to the output root.
    pub directory: String,
    #[serde(default)]
    pub keep_fields: bool,
    #[serde(default = "yes")]
    pub previews: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSection,
    pub medium: MediumSection,
    pub mask: MaskSection,
    pub propagation: PropagationSection,
    pub camera: CameraSection,
    pub scan: ScanSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    pub output: OutputSection,
}

/// A validated scenario with every quantity in `unit`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub hash: String,
    pub unit: LengthUnit,
    pub grid: TransverseGrid,
    pub shape: MaskShape,
    pub band_limit: Option<f64>,
    pub medium: Option<MediumModel>,
    pub k0: f64,
    pub ell: f64,
    pub nz: usize,
    pub camera: Camera,
    pub pixel: f64,
    pub shifts: Vec<Point>,
    pub regime: Option<RegimeReport>,
    pub warnings: Vec<String>,
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn is_multiple(a: f64, of: f64) -> bool {
    let q = a / of;
    (q - q.round()).abs() < 1e-9 * q.abs().max(1.0)
}

/// Problems collected while checking a scenario.
#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn push(&mut self, key: &str, msg: impl fmt::Display) {
        self.0.push(format!("{key}: {msg}"));
    }

    fn require(&mut self, ok: bool, key: &str, msg: impl fmt::Display) -> bool {
        if !ok {
            self.push(key, msg);
        }
        ok
    }
}

fn read_table(path: &Path, scale: f64) -> Result<MediumModel, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let (mut offsets, mut values) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let parsed: Vec<Option<f64>> = rec.iter().map(|s| s.parse().ok()).collect();
        match parsed.as_slice() {
            [Some(o), Some(v)] => {
                offsets.push(o * scale);
                values.push(v * scale);
            }
            [None, None] if i == 0 => {} // header row
            _ => return Err(format!("{}: row {} is not two numbers", path.display(), i + 1)),
        }
    }
    Table::new(offsets, values)
        .and_then(MediumModel::tabulated)
        .map_err(|e| e.to_string())
}

fn hash_scenario(file: &ScenarioFile, extra: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(file).expect("scenario serializes"));
    h.update(extra);
    hex::encode(h.finalize())
}

impl Scenario {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parse and validate; `path` labels messages and anchors relative
    /// table paths.
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let label = path.display().to_string();
        let file: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Scenario {
            path: label.clone(),
            problems: vec![e.to_string().trim().to_string()],
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::resolve(file, base).map_err(|problems| CliError::Scenario { path: label, problems })
    }

    fn resolve(file: ScenarioFile, base: &Path) -> Result<Self, Vec<String>> {
        let mut p = Problems::default();
        let unit = file.output.length_unit;
        let len = |l: &Length| l.in_unit(unit);

        let g = &file.grid;
        p.require(g.dim == 1 || g.dim == 2, "grid.dim", format!("must be 1 or 2, got {}", g.dim));
        p.require(
            g.n >= 8 && g.n.is_power_of_two(),
            "grid.n",
            format!("must be a power of two >= 8, got {}", g.n),
        );
        p.require(positive(g.dx.value), "grid.dx", "must be positive");
        let grid = TransverseGrid::new(g.dim.clamp(1, 2), g.n.max(8).next_power_of_two(), if positive(g.dx.value) { len(&g.dx) } else { 1.0 })
            .map_err(|e| vec![e.to_string()])?;
        let dx = grid.dx();
        let half_box = 0.5 * grid.box_len();

        // medium
        let pr = &file.propagation;
        let k0 = pr.wavenumber.in_unit(unit);
        p.require(positive(k0), "propagation.wavenumber", "must be positive");
        let ell = len(&pr.distance);
        p.require(ell >= 0.0 && ell.is_finite(), "propagation.distance", "must be >= 0");
        p.require(pr.realizations >= 1, "propagation.realizations", "must be at least 1");
        let mut table_bytes = Vec::new();
        let medium = match &file.medium {
            MediumSection::Homogeneous {} => None,
            MediumSection::Gaussian {
                gamma0,
                scattering_mean_free_path,
                corr_length,
            } => {
                let g0 = match (gamma0, scattering_mean_free_path) {
                    (Some(g), None) => Some(len(g)),
                    (None, Some(l)) if positive(k0) => Some(8.0 / (len(l) * k0 * k0)),
                    (None, Some(_)) => None,
                    _ => {
                        p.push("medium.gamma0", "give exactly one of gamma0 and scattering_mean_free_path");
                        None
                    }
                };
                g0.and_then(|g0| match MediumModel::gaussian(g0, len(corr_length)) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        p.push("medium", e);
                        None
                    }
                })
            }
            MediumSection::Tabulated { table, table_unit } => {
                let tpath = base.join(table);
                table_bytes = std::fs::read(&tpath).unwrap_or_default();
                match read_table(&tpath, Length { value: 1.0, unit: *table_unit }.in_unit(unit)) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        p.push("medium.table", e);
                        None
                    }
                }
            }
        };

        // steps
        let nz = match (&medium, pr.nz) {
            (_, Some(0)) => {
                p.push("propagation.nz", "must be at least 1");
                1
            }
            (Some(m), Some(nz)) if positive(k0) => {
                let min = PropagationPlan::min_steps(k0, ell, m);
                p.require(
                    nz >= min,
                    "propagation.nz",
                    format!(
                        "{nz} steps give dz = {:.4e} {unit}, above the bound ℓ_c·min(1, k₀ℓ_c)/4 = {:.4e}; use nz >= {min}",
                        ell / nz as f64,
                        PropagationPlan::max_step(k0, m)
                    ),
                );
                nz
            }
            (Some(m), None) if positive(k0) => PropagationPlan::min_steps(k0, ell, m),
            (_, Some(nz)) => nz,
            (_, None) => 1,
        };

        // mask
        let m = &file.mask;
        let fields: [(&str, Option<Length>); 5] = [
            ("radius", m.radius),
            ("width", m.width),
            ("height", m.height),
            ("slit_width", m.slit_width),
            ("separation", m.separation),
        ];
        let (wanted, optional): (&[&str], &[&str]) = match m.shape {
            ShapeKind::Gaussian | ShapeKind::Disk => (&["radius"], &[]),
            ShapeKind::Rectangle => (&["width"], &["height"]),
            ShapeKind::DoubleSlit => (&["slit_width", "separation"], &["height"]),
        };
        let mut get = |name: &str| -> f64 {
            let v = fields.iter().find(|(k, _)| *k == name).and_then(|(_, v)| *v);
            match v {
                Some(l) if positive(l.value) => len(&l),
                Some(_) => {
                    p.push(&format!("mask.{name}"), "must be positive");
                    1.0
                }
                None if optional.contains(&name) => {
                    if grid.dim() == 2 {
                        p.push(&format!("mask.{name}"), format!("is required for shape {:?} in two dimensions", m.shape));
                    }
                    1.0
                }
                None => {
                    p.push(&format!("mask.{name}"), format!("is required for shape {:?}", m.shape));
                    1.0
                }
            }
        };
        let shape = match m.shape {
            ShapeKind::Gaussian => MaskShape::Gaussian { radius: get("radius") },
            ShapeKind::Disk => MaskShape::Disk { radius: get("radius") },
            ShapeKind::Rectangle => MaskShape::Rectangle {
                width: get("width"),
                height: get("height"),
            },
            ShapeKind::DoubleSlit => MaskShape::DoubleSlit {
                slit_width: get("slit_width"),
                separation: get("separation"),
                height: get("height"),
            },
        };
        for (name, v) in &fields {
            if v.is_some() && !wanted.contains(name) && !optional.contains(name) {
                p.push(&format!("mask.{name}"), format!("is not used by shape {:?}", m.shape));
            }
        }
        if let MaskShape::DoubleSlit { slit_width, separation, .. } = shape {
            p.require(separation > slit_width, "mask.separation", "must exceed mask.slit_width");
        }
        if let Some(b) = m.band_limit {
            p.require(b > 0.0 && b <= 1.0, "mask.band_limit", format!("must lie in (0, 1], got {b}"));
        }

        // scan
        let s = &file.scan;
        let step = len(&s.step);
        let half = len(&s.half_width);
        let mut shifts = Vec::new();
        let step_ok = p.require(positive(step), "scan.step", "must be positive")
            && p.require(is_multiple(step, dx), "scan.step", format!("{step} {unit} is not a multiple of grid.dx = {dx} {unit}"));
        let half_ok = p.require(half >= 0.0 && half.is_finite(), "scan.half_width", "must be >= 0");
        if step_ok
            && half_ok
            && p.require(
                is_multiple(half, step),
                "scan.half_width",
                format!("{half} {unit} is not a multiple of scan.step = {step} {unit}"),
            )
        {
            let k = (half / step).round() as i64;
            let axis: Vec<f64> = (-k..=k).map(|i| i as f64 * step).collect();
            match s.layout {
                ScanLayout::Line => shifts = axis.iter().map(|&x| [x, 0.0]).collect(),
                ScanLayout::Square => {
                    if p.require(grid.dim() == 2, "scan.layout", "square scans need grid.dim = 2") {
                        for &y in &axis {
                            for &x in &axis {
                                shifts.push([x, y]);
                            }
                        }
                    }
                }
            }
        }

        // aperture inside the grid, including the scan excursion
        let (ext_x, ext_y, key_x, key_y) = match shape {
            MaskShape::Gaussian { radius } => (4.0 * radius, 4.0 * radius, "mask.radius", "mask.radius"),
            MaskShape::Disk { radius } => (radius, radius, "mask.radius", "mask.radius"),
            MaskShape::Rectangle { width, height } => (0.5 * width, 0.5 * height, "mask.width", "mask.height"),
            MaskShape::DoubleSlit {
                slit_width,
                separation,
                height,
            } => (0.5 * (separation + slit_width), 0.5 * height, "mask.separation", "mask.height"),
        };
        let reach_y = if s.layout == ScanLayout::Square { half } else { 0.0 };
        let limit = half_box - dx;
        p.require(
            ext_x + half <= limit,
            key_x,
            format!(
                "the aperture reaches {:.4} {unit} from the axis once scan.half_width is added, beyond the grid half-width {limit:.4} {unit}",
                ext_x + half
            ),
        );
        if grid.dim() == 2 {
            p.require(
                ext_y + reach_y <= limit,
                key_y,
                format!("the aperture reaches {:.4} {unit} along the second axis, beyond {limit:.4} {unit}", ext_y + reach_y),
            );
        }

        // camera
        let c = &file.camera;
        let radius = len(&c.radius);
        p.require(positive(radius), "camera.radius", "must be positive");
        let center = [
            c.center_x.map(|l| len(&l)).unwrap_or(0.0),
            c.center_y.map(|l| len(&l)).unwrap_or(0.0),
        ];
        if grid.dim() == 1 && c.center_y.is_some() {
            p.push("camera.center_y", "is not used when grid.dim = 1");
        }
        let pixel = c.pixel.map(|l| len(&l)).unwrap_or(0.0);
        p.require(pixel >= 0.0 && pixel.is_finite(), "camera.pixel", "must be >= 0");
        let camera = Camera { center, radius };
        let rho = match &medium {
            Some(md) if positive(k0) && ell > 0.0 => speckle_core::analytic::speckle_radius(md.gamma_bar2(), k0, ell),
            _ => f64::INFINITY,
        };
        let margin = if rho.is_finite() { 4.0 * rho } else { 0.0 };
        for (c, key) in center.iter().zip(["camera.center_x", "camera.center_y"]).take(grid.dim()) {
            p.require(
                c.abs() + radius + margin <= limit,
                key,
                format!(
                    "camera (centre {c}, radius {radius}) plus a margin of 4ρ = {margin:.4} {unit} leaves the grid half-width {limit:.4} {unit}"
                ),
            );
        }

        // retrieval
        let r = &file.retrieval;
        p.require(r.beta > 0.0 && r.beta <= 1.0, "retrieval.beta", format!("must lie in (0, 1], got {}", r.beta));
        for (key, v) in [
            ("retrieval.cycles", r.cycles),
            ("retrieval.restarts", r.restarts),
            ("retrieval.chains", r.chains),
        ] {
            p.require(v >= 1, key, "must be at least 1");
        }
        p.require(r.hio_iterations + r.er_iterations >= 1, "retrieval.er_iterations", "HIO and ER budgets are both zero");

        p.require(!file.output.directory.trim().is_empty(), "output.directory", "must not be empty");

        if !p.0.is_empty() {
            return Err(p.0);
        }

        let mut warnings = Vec::new();
        if let Some(md) = &medium {
            let plan = PropagationPlan::new(k0, ell, nz, pr.splitting, Some(md.clone())).map_err(|e| vec![e.to_string()])?;
            warnings.extend(plan.warnings(&grid));
        }
        let mut scenario = Self {
            hash: hash_scenario(&file, &table_bytes),
            unit,
            grid,
            shape,
            band_limit: m.band_limit,
            medium,
            k0,
            ell,
            nz,
            camera,
            pixel,
            shifts,
            regime: None,
            warnings,
            file,
        };
        scenario.regime = scenario.classify();
        if let Some(rep) = &scenario.regime {
            // self-averaging condition: the camera must cover many speckle spots
            let scint = matches!(rep.classification, Regime::ScintillationStrong | Regime::ScintillationWeak);
            if scint && !rep.aperture_condition && !scenario.file.camera.allow_partial_averaging {
                return Err(vec![format!(
                    "camera.radius: {radius} {unit} is below 10·sqrt(ρo² + ρ²) = {:.4} {unit}, so one realization will not self-average; enlarge the camera or set camera.allow_partial_averaging = true",
                    10.0 * pixel.hypot(rep.rho_speckle)
                )]);
            }
            scenario.warnings.extend(rep.warnings.iter().cloned());
        }
        Ok(scenario)
    }

    pub fn mask(&self) -> ComplexField {
        match self.band_limit {
            Some(f) => self.shape.sample_band_limited(self.grid, f),
            None => self.shape.sample(self.grid),
        }
    }

    fn classify(&self) -> Option<RegimeReport> {
        let m = self.medium.as_ref()?;
        if self.ell <= 0.0 {
            return None;
        }
        let mut inp = RegimeInputs::new(&self.mask(), m, self.k0, self.ell);
        inp.aperture_radius = self.camera.radius;
        inp.pixel = self.pixel;
        inp.max_shift = self.shifts.iter().map(|r| r[0].hypot(r[1])).fold(0.0, f64::max);
        Some(classify_regime(&inp))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let pr = &self.file.propagation;
        ExperimentConfig {
            mask: self.mask(),
            shifts: self.shifts.clone(),
            k0: self.k0,
            ell: self.ell,
            nz: self.nz,
            splitting: pr.splitting,
            medium: self.medium.clone(),
            camera: self.camera,
            pixel: self.pixel,
            realizations: pr.realizations,
            seed: pr.seed,
            keep_fields: self.file.output.keep_fields,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.hash.clone())
    }

    pub fn output_dir(&self, root: &Path) -> PathBuf {
        root.join(&self.file.output.directory)
    }

    pub fn speckle_radius(&self) -> f64 {
        self.regime.as_ref().map(|r| r.rho_speckle).unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub const MINIMAL: &str = r#"
[grid]
dim = 1
n = 256
dx = { value = 0.1, unit = "mm" }

[medium]
kind = "homogeneous"

[mask]
shape = "double_slit"
slit_width = { value = 0.4, unit = "mm" }
separation = { value = 1.6, unit = "mm" }

[propagation]
wavenumber = { value = 10.0, unit = "rad/mm" }
distance = { value = 2.0, unit = "mm" }
realizations = 1
seed = 7

[camera]
radius = { value = 3.0, unit = "mm" }

[scan]
half_width = { value = 1.0, unit = "mm" }
step = { value = 0.2, unit = "mm" }

[output]
length_unit = "mm"
directory = "run"
"#;

    fn parse(text: &str) -> CliResult<Scenario> {
        Scenario::parse(text, Path::new("test.toml"))
    }

    fn problems(text: &str) -> Vec<String> {
        match parse(text) {
            Err(CliError::Scenario { problems, .. }) => problems,
            other => panic!("expected scenario problems, got {other:?}"),
        }
    }

    #[test]
    fn minimal_scenario_resolves() {
        let s = parse(MINIMAL).unwrap();
        assert_eq!(s.shifts.len(), 11);
        assert!((s.grid.dx() - 0.1).abs() < 1e-15);
        assert_eq!(s.nz, 1);
        assert!(s.regime.is_none());
        assert_eq!(s.hash.len(), 64);
    }

    #[test]
    fn units_convert_to_the_output_unit() {
        let text = MINIMAL.replace(r#"length_unit = "mm""#, r#"length_unit = "um""#);
        let s = parse(&text).unwrap();
        assert!((s.grid.dx() - 100.0).abs() < 1e-9);
        assert!((s.k0 - 0.01).abs() < 1e-15);
        let l = Length { value: 2.5, unit: LengthUnit::Cm };
        assert!((l.in_unit(LengthUnit::Mm) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn hash_tracks_content_not_layout() {
        let a = parse(MINIMAL).unwrap();
        let b = parse(&MINIMAL.replace("dim = 1", "dim    =   1")).unwrap();
        let c = parse(&MINIMAL.replace("seed = 7", "seed = 8")).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let p = problems(&MINIMAL.replace("n = 256", "n = 256\nsize = 3"));
        assert!(p[0].contains("size"), "{p:?}");
        let p = problems(&MINIMAL.replace(r#"unit = "rad/mm""#, r#"unit = "mm""#));
        assert!(!p.is_empty());
    }

    #[test]
    fn aperture_outside_grid_names_the_key() {
        let p = problems(&MINIMAL.replace("value = 1.6", "value = 24.0"));
        assert!(p.iter().any(|m| m.starts_with("mask.separation")), "{p:?}");
    }

    #[test]
    fn all_problems_are_listed() {
        let text = MINIMAL
            .replace("value = 0.2, unit", "value = 0.25, unit")
            .replace("realizations = 1", "realizations = 0")
            .replace("shape = \"double_slit\"", "shape = \"double_slit\"\nradius = { value = 1.0, unit = \"mm\" }");
        let p = problems(&text);
        for key in ["scan.step", "propagation.realizations", "mask.radius"] {
            assert!(p.iter().any(|m| m.starts_with(key)), "{key} missing from {p:?}");
        }
    }

    #[test]
    fn step_bound_is_enforced() {
        let text = MINIMAL.replace(
            r#"kind = "homogeneous""#,
            "kind = \"gaussian\"\ngamma0 = { value = 0.01, unit = \"mm\" }\ncorr_length = { value = 1.0, unit = \"mm\" }",
        );
        let s = parse(&text).unwrap();
        assert_eq!(s.nz, 8);
        let p = problems(&text.replace("realizations = 1", "realizations = 1\nnz = 2"));
        assert!(p.iter().any(|m| m.starts_with("propagation.nz") && m.contains("nz >= 8")), "{p:?}");
    }

    #[test]
    fn mean_free_path_is_an_alternative_to_gamma0() {
        let mk = |line: &str| {
            MINIMAL.replace(
                r#"kind = "homogeneous""#,
                &format!("kind = \"gaussian\"\n{line}\ncorr_length = {{ value = 1.0, unit = \"mm\" }}"),
            )
        };
        let s = parse(&mk(r#"scattering_mean_free_path = { value = 8.0, unit = "mm" }"#)).unwrap();
        assert!((s.medium.unwrap().gamma0_at_zero() - 0.01).abs() < 1e-15);
        let both = mk("gamma0 = { value = 0.01, unit = \"mm\" }\nscattering_mean_free_path = { value = 8.0, unit = \"mm\" }");
        assert!(problems(&both).iter().any(|m| m.starts_with("medium.gamma0")));
    }

    #[test]
    fn small_camera_in_scintillation_is_rejected_unless_allowed() {
        let text = MINIMAL
            .replace(
                r#"kind = "homogeneous""#,
                "kind = \"gaussian\"\ngamma0 = { value = 0.002, unit = \"mm\" }\ncorr_length = { value = 0.2, unit = \"mm\" }",
            );
        let p = problems(&text);
        assert!(p.iter().any(|m| m.starts_with("camera.radius") && m.contains("self-average")), "{p:?}");
        let ok = text.replace("[camera]", "[camera]\nallow_partial_averaging = true");
        assert!(parse(&ok).is_ok());
    }
}
